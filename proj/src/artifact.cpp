#include "topro/artifact.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "topro/errors.hpp"

namespace topro {

using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(),
                 nullptr) != 1) {
    throw Error(ErrorCategory::kData, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCategory::kData, "cannot write '" + path.string() + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.close();
  if (!out) throw Error(ErrorCategory::kData, "write to '" + path.string() + "' failed");
}

json pvp_to_json(const Pvp& pvp) {
  json segments = json::array();
  for (const auto& segment : pvp.prompt_template.segments()) {
    segments.push_back(segment_marker(segment));
  }
  json verbalizer = json::object();
  for (const auto& entry : pvp.verbalizer.entries()) {
    verbalizer[entry.tag] = entry.word;
  }
  return {{"template",
           {{"name", pvp.prompt_template.name()},
            {"mode", template_mode_name(pvp.prompt_template.mode())},
            {"segments", segments}}},
          {"verbalizer", verbalizer}};
}

Pvp pvp_from_json(const json& j, const TagSet& tagset) {
  try {
    const json& t = j.at("template");
    std::vector<Segment> segments;
    for (const auto& s : t.at("segments")) {
      segments.push_back(parse_segment(s.get<std::string>()));
    }
    PromptTemplate tmpl(t.value("name", std::string("custom")),
                        std::move(segments),
                        parse_template_mode(t.value("mode", std::string("masked"))));
    std::map<std::string, std::string> forward;
    for (const auto& [tag, word] : j.at("verbalizer").items()) {
      forward[tag] = word.get<std::string>();
    }
    return Pvp{std::move(tmpl), Verbalizer(tagset, forward)};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("pvp: ") + e.what());
  }
}

namespace {

int positive_int(const json& value, const std::string& key) {
  if (!value.is_number_integer()) {
    throw ConfigError(key + " must be an integer");
  }
  const auto v = value.get<long long>();
  if (v < 1 || v > 1'000'000'000) {
    throw ConfigError(key + " must be >= 1, got " + std::to_string(v));
  }
  return static_cast<int>(v);
}

}  // namespace

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig config = base;
  static const std::set<std::string> known = {
      "epochs",         "learning_rate",     "batch_size",
      "grad_acc_steps", "max_seq_length",    "max_target_length",
      "num_beam_search", "seeds",            "tiny"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "'");
  }
  if (j.contains("epochs")) config.epochs = positive_int(j["epochs"], "epochs");
  if (j.contains("learning_rate")) {
    if (!j["learning_rate"].is_number()) {
      throw ConfigError("learning_rate must be a number");
    }
    config.learning_rate = j["learning_rate"].get<double>();
  }
  if (j.contains("batch_size")) {
    config.batch_size = positive_int(j["batch_size"], "batch_size");
  }
  if (j.contains("grad_acc_steps")) {
    config.grad_accumulation_steps =
        positive_int(j["grad_acc_steps"], "grad_acc_steps");
  }
  if (j.contains("max_seq_length")) {
    config.max_seq_length = positive_int(j["max_seq_length"], "max_seq_length");
  }
  if (j.contains("max_target_length")) {
    config.max_target_length =
        positive_int(j["max_target_length"], "max_target_length");
  }
  if (j.contains("num_beam_search")) {
    config.beam_width = positive_int(j["num_beam_search"], "num_beam_search");
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array()) throw ConfigError("seeds must be a list");
    config.seeds.clear();
    for (const auto& s : j["seeds"]) {
      if (!s.is_number_integer()) throw ConfigError("seeds must be integers");
      config.seeds.push_back(s.get<long long>());
    }
  }
  config.validate();
  return config;
}

json train_config_to_json(const TrainConfig& config) {
  json j = {{"epochs", config.epochs},
            {"learning_rate", config.learning_rate},
            {"batch_size", config.batch_size},
            {"grad_acc_steps", config.grad_accumulation_steps},
            {"max_seq_length", config.max_seq_length},
            {"seeds", config.seeds}};
  if (config.max_target_length) {
    j["max_target_length"] = *config.max_target_length;
  }
  if (config.beam_width) j["num_beam_search"] = *config.beam_width;
  return j;
}

TinyScorerOptions tiny_options_from_json(const json& j) {
  TinyScorerOptions options;
  if (j.is_null()) return options;
  if (!j.is_object()) throw ConfigError("tiny must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "feature_dim") {
      options.feature_dim =
          static_cast<std::size_t>(positive_int(value, "tiny.feature_dim"));
    } else if (key == "context_window") {
      if (!value.is_number_integer() || value.get<long long>() < 0) {
        throw ConfigError("tiny.context_window must be >= 0");
      }
      options.context_window = value.get<std::size_t>();
    } else if (key == "init_scale") {
      if (!value.is_number() || value.get<double>() < 0.0) {
        throw ConfigError("tiny.init_scale must be >= 0");
      }
      options.init_scale = value.get<double>();
    } else {
      throw ConfigError("unknown key 'tiny." + key + "'");
    }
  }
  return options;
}

json tiny_options_to_json(const TinyScorerOptions& options) {
  return {{"feature_dim", options.feature_dim},
          {"context_window", options.context_window},
          {"init_scale", options.init_scale}};
}

json model_to_json(const ModelArtifact& model) {
  json j = {{"task", model.task},
            {"method", model.method},
            {"backend", model.backend},
            {"seed", model.seed},
            {"max_seq_length", model.max_seq_length},
            {"pvp", pvp_to_json(model.pvp)}};
  if (model.backend == "tiny") {
    j["tiny"] = tiny_options_to_json(model.tiny_options);
    j["parameters"] = model.parameters;
  } else if (model.backend == "oracle") {
    json gold = json::array();
    for (const auto& [key, tag] : model.oracle_gold) {
      gold.push_back({key.first, key.second, tag});
    }
    j["oracle"] = {{"certainty", model.oracle_certainty}, {"gold", gold}};
  }
  return j;
}

ModelArtifact model_from_json(const json& j) {
  try {
    ModelArtifact model{
        .task = j.at("task").get<std::string>(),
        .method = j.at("method").get<std::string>(),
        .backend = j.at("backend").get<std::string>(),
        .seed = j.at("seed").get<long long>(),
        .max_seq_length = j.value("max_seq_length", 128),
        .pvp = pvp_from_json(j.at("pvp"),
                             tagset_for(parse_task(j.at("task").get<std::string>()))),
    };
    if (model.backend == "tiny") {
      model.tiny_options = tiny_options_from_json(j.at("tiny"));
      model.parameters = j.at("parameters").get<std::vector<double>>();
    } else if (model.backend == "oracle") {
      const json& oracle = j.at("oracle");
      model.oracle_certainty = oracle.at("certainty").get<double>();
      for (const auto& row : oracle.at("gold")) {
        model.oracle_gold[{row.at(0).get<std::string>(),
                           row.at(1).get<std::size_t>()}] =
            row.at(2).get<std::string>();
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

std::unique_ptr<Scorer> scorer_from_model(const ModelArtifact& model) {
  if (model.method != "topro") {
    throw UsageError("model was trained with method '" + model.method +
                     "', not topro");
  }
  if (model.backend == "oracle") {
    return lookup_oracle_scorer(model.oracle_gold, model.pvp.verbalizer,
                                model.oracle_certainty);
  }
  if (model.backend == "tiny") {
    auto scorer = std::make_unique<TinyScorer>(
        model.pvp.prompt_template, model.pvp.verbalizer, model.tiny_options, 0);
    if (model.parameters.size() != scorer->parameter_count()) {
      throw DataError("model file: expected " +
                      std::to_string(scorer->parameter_count()) +
                      " parameters, found " +
                      std::to_string(model.parameters.size()));
    }
    std::copy(model.parameters.begin(), model.parameters.end(),
              scorer->parameters().begin());
    return scorer;
  }
  if (model.backend.starts_with("external:")) {
    return external_scorer_adapter(model.backend.substr(9));
  }
  throw UsageError("unknown backend '" + model.backend + "'");
}

std::unique_ptr<TokenClassifier> classifier_from_model(
    const ModelArtifact& model) {
  if (model.method != "vanilla" || model.backend != "tiny") {
    throw UsageError("vanilla models need the tiny backend");
  }
  auto classifier = std::make_unique<TinyTokenClassifier>(
      tagset_for(parse_task(model.task)), model.tiny_options, 0);
  if (model.parameters.size() != classifier->parameters().size()) {
    throw DataError("model file: parameter count mismatch");
  }
  std::copy(model.parameters.begin(), model.parameters.end(),
            classifier->parameters().begin());
  return classifier;
}

json manifest_to_json(const RunManifest& manifest) {
  json data = json::array();
  for (const auto& d : manifest.data) {
    data.push_back({{"role", d.role}, {"path", d.path}, {"sha256", d.sha256}});
  }
  return {{"command", manifest.command}, {"config", manifest.config},
          {"data", data},                {"seeds", manifest.seeds},
          {"outputs", manifest.outputs}, {"metrics", manifest.metrics},
          {"details", manifest.details}, {"timing", manifest.timing}};
}

RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest manifest;
    manifest.command = j.at("command").get<std::string>();
    manifest.config = j.at("config");
    for (const auto& d : j.at("data")) {
      manifest.data.push_back({d.at("role").get<std::string>(),
                               d.at("path").get<std::string>(),
                               d.at("sha256").get<std::string>()});
    }
    manifest.seeds = j.at("seeds").get<std::vector<long long>>();
    manifest.outputs = j.at("outputs").get<std::vector<std::string>>();
    manifest.metrics = j.value("metrics", json::object());
    manifest.details = j.value("details", json::object());
    manifest.timing = j.value("timing", json::object());
    return manifest;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace topro
