#include <fcntl.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <nlohmann/json.hpp>

#include "topro/errors.hpp"
#include "topro/scoring.hpp"

namespace topro {

namespace {

using nlohmann::json;

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] {
    struct sigaction action {};
    action.sa_handler = SIG_IGN;
    sigemptyset(&action.sa_mask);
    sigaction(SIGPIPE, &action, nullptr);
  });
}

void write_all(int fd, const std::string& data, const std::string& peer) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    ssize_t n = ::write(fd, data.data() + sent, data.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BackendUnavailable(peer + ": write failed: " +
                               std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

// Buffered line reader over a file descriptor.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  std::string read_line(const std::string& peer) {
    while (true) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      ssize_t n = ::read(fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw BackendUnavailable(peer + ": read failed: " +
                                 std::strerror(errno));
      }
      if (n == 0) throw BackendUnavailable(peer + ": backend closed the stream");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buffer_;
};

class SubprocessTransport final : public LineTransport {
 public:
  explicit SubprocessTransport(std::string command)
      : command_(std::move(command)) {
    ignore_sigpipe();
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) {
      throw BackendUnavailable("pipe: " + std::string(std::strerror(errno)));
    }
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw BackendUnavailable("pipe: " + std::string(std::strerror(errno)));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) {
        ::close(fd);
      }
      throw BackendUnavailable("fork: " + std::string(std::strerror(errno)));
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) {
        ::close(fd);
      }
      ::execl("/bin/sh", "sh", "-c", command_.c_str(),
              static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
    reader_ = std::make_unique<LineReader>(read_fd_);
  }

  ~SubprocessTransport() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  std::string exchange(const std::string& line) override {
    write_all(write_fd_, line + "\n", describe());
    return reader_->read_line(describe());
  }

  std::string describe() const override { return "exec:" + command_; }

 private:
  std::string command_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::unique_ptr<LineReader> reader_;
};

class UnixSocketTransport final : public LineTransport {
 public:
  explicit UnixSocketTransport(std::string path) : path_(std::move(path)) {
    ignore_sigpipe();
    sockaddr_un addr{};
    if (path_.size() >= sizeof(addr.sun_path)) {
      throw BackendUnavailable("socket path too long: " + path_);
    }
    fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) {
      throw BackendUnavailable("socket: " + std::string(std::strerror(errno)));
    }
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path_.c_str(), path_.size() + 1);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const int err = errno;
      ::close(fd_);
      fd_ = -1;
      throw BackendUnavailable("unix:" + path_ + ": " + std::strerror(err));
    }
    reader_ = std::make_unique<LineReader>(fd_);
  }

  ~UnixSocketTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }

  std::string exchange(const std::string& line) override {
    write_all(fd_, line + "\n", describe());
    return reader_->read_line(describe());
  }

  std::string describe() const override { return "unix:" + path_; }

 private:
  std::string path_;
  int fd_ = -1;
  std::unique_ptr<LineReader> reader_;
};

json call(LineTransport& transport, const json& request) {
  const std::string reply = transport.exchange(request.dump());
  json response;
  try {
    response = json::parse(reply);
  } catch (const json::parse_error& e) {
    throw ProtocolError(transport.describe() + ": unparsable reply: " +
                        e.what());
  }
  if (!response.is_object()) {
    throw ProtocolError(transport.describe() + ": reply is not an object");
  }
  if (response.contains("error")) {
    throw BackendError(transport.describe() + ": " +
                       response["error"].dump());
  }
  return response;
}

std::string substitute_mask(std::string text, const std::string& mask) {
  std::size_t pos = 0;
  while ((pos = text.find(kMaskLiteral, pos)) != std::string::npos) {
    text.replace(pos, kMaskLiteral.size(), mask);
    pos += mask.size();
  }
  return text;
}

}  // namespace

std::unique_ptr<LineTransport> open_transport(std::string_view endpoint) {
  if (endpoint.starts_with("exec:")) {
    return std::make_unique<SubprocessTransport>(
        std::string(endpoint.substr(5)));
  }
  if (endpoint.starts_with("unix:")) {
    return std::make_unique<UnixSocketTransport>(
        std::string(endpoint.substr(5)));
  }
  throw UsageError("endpoint '" + std::string(endpoint) +
                   "' must start with exec: or unix:");
}

struct ExternalScorer::Channel {
  std::unique_ptr<LineTransport> transport;
  std::mutex mutex;

  json call(const json& request) {
    std::lock_guard lock(mutex);
    return topro::call(*transport, request);
  }
};

ExternalScorer::ExternalScorer(std::unique_ptr<LineTransport> transport)
    : channel_(std::make_unique<Channel>()) {
  channel_->transport = std::move(transport);
  json info = channel_->call({{"op", "info"}});
  if (!info.contains("mask_token") || !info["mask_token"].is_string() ||
      info["mask_token"].get<std::string>().empty()) {
    throw MaskSymbolMissing();
  }
  mask_token_ = info["mask_token"].get<std::string>();
}

ExternalScorer::~ExternalScorer() = default;

std::string ExternalScorer::backend_name() const {
  return "external:" + channel_->transport->describe();
}

std::vector<MaskDistribution> ExternalScorer::score_batch(
    std::span<const PromptInstance> prompts,
    std::span<const std::string> candidates) const {
  json texts = json::array();
  for (const auto& prompt : prompts) {
    texts.push_back(substitute_mask(prompt.text, mask_token_));
  }
  json response = channel_->call(
      {{"op", "score"},
       {"prompts", texts},
       {"candidates", std::vector<std::string>(candidates.begin(),
                                               candidates.end())}});
  if (!response.contains("log_probs") || !response["log_probs"].is_array() ||
      response["log_probs"].size() != prompts.size()) {
    throw ProtocolError("expected one log_probs row per prompt");
  }
  std::vector<MaskDistribution> out;
  out.reserve(prompts.size());
  for (const auto& row : response["log_probs"]) {
    std::vector<double> scores;
    try {
      scores = row.get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw ProtocolError(std::string("bad log_probs row: ") + e.what());
    }
    out.push_back(softmax_distribution(
        std::vector<std::string>(candidates.begin(), candidates.end()),
        scores));
  }
  return out;
}

std::optional<int> ExternalScorer::vocabulary_probe(
    std::string_view word) const {
  json response = channel_->call(
      {{"op", "probe"}, {"words", json::array({std::string(word)})}});
  if (!response.contains("pieces") || !response["pieces"].is_array() ||
      response["pieces"].size() != 1 || !response["pieces"][0].is_number()) {
    throw ProtocolError("probe reply needs one piece count");
  }
  return response["pieces"][0].get<int>();
}

void ExternalScorer::require_single_piece(
    std::span<const std::string> words) const {
  for (const auto& word : words) {
    const int pieces = vocabulary_probe(word).value_or(1);
    if (pieces != 1) throw MultiPieceCandidate(word, pieces);
  }
}

LossSum ExternalScorer::accumulate_gradient(
    std::span<const PromptInstance> prompts,
    std::span<const std::string> gold_words,
    std::span<const std::string> candidates) {
  json texts = json::array();
  for (const auto& prompt : prompts) {
    texts.push_back(substitute_mask(prompt.text, mask_token_));
  }
  json response = channel_->call(
      {{"op", "accumulate"},
       {"prompts", texts},
       {"targets", std::vector<std::string>(gold_words.begin(),
                                            gold_words.end())},
       {"candidates", std::vector<std::string>(candidates.begin(),
                                               candidates.end())}});
  if (!response.contains("loss") || !response["loss"].is_number()) {
    throw ProtocolError("accumulate reply lacks a numeric loss");
  }
  LossSum sum;
  sum.loss = response["loss"].get<double>();
  sum.clamped = response.value("clamped", std::size_t{0});
  sum.examples = prompts.size();
  return sum;
}

void ExternalScorer::apply_gradient(double learning_rate, double scale) {
  channel_->call(
      {{"op", "apply"}, {"learning_rate", learning_rate}, {"scale", scale}});
}

std::unique_ptr<ExternalScorer> external_scorer_adapter(
    std::string_view endpoint) {
  return std::make_unique<ExternalScorer>(open_transport(endpoint));
}

ExternalGenerator::ExternalGenerator(std::unique_ptr<LineTransport> transport)
    : transport_(std::move(transport)) {}

ExternalGenerator::~ExternalGenerator() = default;

std::string ExternalGenerator::backend_name() const {
  return "external:" + transport_->describe();
}

std::string ExternalGenerator::generate(const std::string& input,
                                        std::size_t max_target_length,
                                        std::size_t beam_width) {
  json response = call(*transport_, {{"op", "generate"},
                                     {"input", input},
                                     {"max_target_length", max_target_length},
                                     {"beam_width", beam_width}});
  if (!response.contains("text") || !response["text"].is_string()) {
    throw ProtocolError("generate reply lacks text");
  }
  return response["text"].get<std::string>();
}

}  // namespace topro
