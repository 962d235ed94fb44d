#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace topro::cli {

// Exit codes: 0 success, 1 usage/config, 2 data validation, 3 backend.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitBackend = 3;

// Runs one `topro` invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace topro::cli
