#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "topro/corpus.hpp"
#include "topro/pvp.hpp"
#include "topro/scoring.hpp"
#include "topro/train.hpp"

namespace topro {

// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

// Whole-file helpers; DataError when unreadable, Error(kData) on write
// failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// {"template": {"name", "mode", "segments": ["{SENTENCE}", " literal", ...]},
//  "verbalizer": {"B-LOC": "location", ...}}
nlohmann::json pvp_to_json(const Pvp& pvp);
Pvp pvp_from_json(const nlohmann::json& j, const TagSet& tagset);

// Keys: epochs, learning_rate, batch_size, grad_acc_steps, max_seq_length,
// max_target_length, num_beam_search, seeds. Missing keys keep `base`;
// unknown keys and wrong types throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j,
                                   const TrainConfig& base = {});
nlohmann::json train_config_to_json(const TrainConfig& config);

// Reference-model options under the optional "tiny" config key.
TinyScorerOptions tiny_options_from_json(const nlohmann::json& j);
nlohmann::json tiny_options_to_json(const TinyScorerOptions& options);

// A trained model as written by `topro train`. Exactly one of the backend
// payloads is populated.
struct ModelArtifact {
  std::string task;
  std::string method;   // "topro" or "vanilla"
  std::string backend;  // "oracle", "tiny" or "external:<endpoint>"
  long long seed = 0;
  int max_seq_length = 128;
  Pvp pvp;
  TinyScorerOptions tiny_options;
  std::vector<double> parameters;  // tiny backends
  GoldMap oracle_gold;             // oracle backend
  double oracle_certainty = 1.0;
};

nlohmann::json model_to_json(const ModelArtifact& model);
ModelArtifact model_from_json(const nlohmann::json& j);

// Rebuilds the masked scorer of a topro model.
std::unique_ptr<Scorer> scorer_from_model(const ModelArtifact& model);
// Rebuilds the token classifier of a vanilla model.
std::unique_ptr<TokenClassifier> classifier_from_model(
    const ModelArtifact& model);

struct DataFingerprint {
  std::string role;  // "train", "dev", "corpus", ...
  std::string path;  // as given on the command line
  std::string sha256;
};

// Everything but `timing` is a pure function of command, config, data and
// seeds, so two runs of the same command serialize identically outside it.
struct RunManifest {
  std::string command;
  nlohmann::json config;  // resolved config snapshot
  std::vector<DataFingerprint> data;
  std::vector<long long> seeds;
  std::vector<std::string> outputs;  // relative to the output directory
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json details = nlohmann::json::object();
  nlohmann::json timing = nlohmann::json::object();
};

nlohmann::json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);

// UTC "YYYY-MM-DDTHH:MM:SSZ" for the current time.
std::string utc_timestamp();

}  // namespace topro
