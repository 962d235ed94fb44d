#include "topro/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <sstream>

#include "topro/artifact.hpp"
#include "topro/corpus.hpp"
#include "topro/decode.hpp"
#include "topro/errors.hpp"
#include "topro/eval.hpp"
#include "topro/pvp.hpp"
#include "topro/scoring.hpp"
#include "topro/train.hpp"

namespace topro::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers

std::vector<long long> parse_seed_list(const std::string& csv) {
  std::vector<long long> seeds;
  std::stringstream stream(csv);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--seeds: '" + item + "' is not an integer");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds must list at least one seed");
  return seeds;
}

void check_method(const std::string& method) {
  std::string lower = method;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "pt" || lower == "prompt-tuning" || lower == "prompt_tuning") {
    throw UsageError(
        "method '" + method +
        "': prompt tuning (PT) is out of scope; use topro or vanilla");
  }
  if (lower != "topro" && lower != "vanilla") {
    throw UsageError("unknown method '" + method + "'; use topro or vanilla");
  }
}

bool is_split_word(const std::string& s) {
  return s == "train" || s == "dev" || s == "test";
}

// "en.train.conll" -> ("en", train); "de-test.tsv" -> ("de", test).
std::pair<std::string, std::optional<SplitName>> infer_language_split(
    const fs::path& path) {
  std::string stem = path.filename().string();
  for (const char* ext : {".conll", ".tsv", ".txt", ".iob2"}) {
    if (stem.ends_with(ext)) stem.resize(stem.size() - std::strlen(ext));
  }
  std::vector<std::string> parts;
  std::string current;
  for (char c : stem) {
    if (c == '.' || c == '-' || c == '_') {
      parts.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  parts.push_back(current);
  std::optional<SplitName> split;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (is_split_word(parts[i])) split = parse_split_name(parts[i]);
  }
  return {parts.front(), split};
}

struct LoadedCorpus {
  std::string path;
  std::string sha256;
  CorpusSplit split;
};

LoadedCorpus load_corpus(const std::string& path, const TagSet& tagset,
                         const std::optional<std::string>& language,
                         SplitName default_split) {
  if (fs::is_directory(path)) {
    throw UsageError("'" + path + "' is a directory; pass CoNLL files");
  }
  const std::string text = read_file(path);
  auto [inferred_language, inferred_split] = infer_language_split(path);
  ParseOptions options;
  options.language = language.value_or(inferred_language);
  options.split = inferred_split.value_or(default_split);
  return {path, sha256_hex(text), parse_conll(text, tagset, options)};
}

json load_json_file(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCategory::kData,
                "cannot create output directory '" + dir.string() + "'");
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Verbalizer words must be single vocabulary pieces of the backend. Results
// are cached under $TOPRO_CACHE_DIR keyed by endpoint and word list.
void check_single_piece(const ExternalScorer& scorer,
                        const std::string& endpoint,
                        const Verbalizer& verbalizer) {
  const std::vector<std::string> words = verbalizer.words();
  const char* cache_dir = std::getenv("TOPRO_CACHE_DIR");
  fs::path marker;
  if (cache_dir && *cache_dir) {
    std::string key = endpoint;
    for (const auto& w : words) key += "\n" + w;
    marker = fs::path(cache_dir) / ("probe-" + sha256_hex(key) + ".ok");
    if (fs::exists(marker)) return;
  }
  scorer.require_single_piece(words);
  if (!marker.empty()) {
    std::error_code ec;
    fs::create_directories(marker.parent_path(), ec);
    if (!ec) write_file(marker, endpoint + "\n");
  }
}

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
  std::string task = "panx";
  std::optional<std::string> language;
  std::string split = "train";
  std::string out;
  std::vector<std::string> paths;
};

int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err) {
  const TagSet& tagset = tagset_for(parse_task(args.task));
  std::vector<std::string> files;
  for (const auto& p : args.paths) {
    if (fs::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file()) found.push_back(entry.path().string());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw EmptyCorpus("directory '" + p + "'");
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  if (files.empty()) throw EmptyCorpus("ingest inputs");
  if (args.language && files.size() > 1) {
    throw UsageError("--language applies to a single input file");
  }

  const SplitName default_split = parse_split_name(args.split);
  std::vector<LoadedCorpus> corpora;
  std::set<std::string> names;
  for (const auto& file : files) {
    LoadedCorpus corpus = load_corpus(file, tagset, args.language, default_split);
    const std::string name = corpus.split.language() + "." +
                             std::string(split_name(corpus.split.name())) +
                             ".conll";
    if (!names.insert(name).second) {
      throw UsageError("two inputs map to " + name);
    }
    for (const auto& sentence : corpus.split.sentences()) {
      for (const auto& v : validate_iob2(sentence)) {
        err << "warning: " << sentence.sentence_id << " token " << v.index
            << ": " << v.tag << " follows '" << v.previous << "'\n";
      }
    }
    corpora.push_back(std::move(corpus));
  }

  const fs::path dir(args.out);
  ensure_directory(dir);
  RunManifest manifest;
  manifest.command = "ingest";
  manifest.config = {{"task", args.task}};
  std::vector<CorpusSplit> splits;
  for (const auto& corpus : corpora) {
    const std::string name = corpus.split.language() + "." +
                             std::string(split_name(corpus.split.name())) +
                             ".conll";
    write_file(dir / name, serialize_conll(corpus.split));
    manifest.outputs.push_back(name);
    manifest.data.push_back({"input", corpus.path, corpus.sha256});
    splits.push_back(corpus.split);
  }
  const StatsReport stats = dataset_stats(splits, tagset);
  json stats_json = {{"task", stats.task}, {"splits", json::array()}};
  for (const auto& s : stats.splits) {
    json histogram = json::object();
    for (const auto& [tag, count] : s.histogram) histogram[tag] = count;
    stats_json["splits"].push_back({{"split", split_name(s.name)},
                                    {"language", s.language},
                                    {"sentences", s.sentences},
                                    {"tokens", s.tokens},
                                    {"unlabeled_tokens", s.unlabeled_tokens},
                                    {"tagset_labels", s.tagset_labels},
                                    {"observed_labels", s.observed_labels},
                                    {"histogram", histogram}});
    out << s.language << ' ' << split_name(s.name) << ": " << s.sentences
        << " sentences, " << s.tokens << " tokens, " << s.observed_labels
        << '/' << s.tagset_labels << " labels observed\n";
  }
  write_file(dir / "stats.json", dump(stats_json));
  manifest.outputs.push_back("stats.json");
  manifest.metrics = stats_json;
  manifest.timing = {{"finished", utc_timestamp()}};
  write_file(dir / "manifest.json", dump(manifest_to_json(manifest)));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string task = "panx";
  std::string method = "topro";
  std::string backend = "tiny";
  std::string train;
  std::string dev;
  std::string seeds;
  std::string pvp;
  std::string language;
  std::string out;
  bool parallel = false;
};

struct SeedOutcome {
  TrainRunRecord record;
  ModelArtifact model;
  SeedMetrics metrics;
};

Pvp resolve_pvp(const std::string& pvp_path, Task task) {
  if (pvp_path.empty()) return builtin_pvp(task);
  Pvp pvp = pvp_from_json(load_json_file(pvp_path), tagset_for(task));
  if (pvp.prompt_template.mode() != TemplateMode::kMasked) {
    throw UsageError("--pvp must describe a masked template");
  }
  return pvp;
}

double topro_f1(const Scorer& scorer, const CorpusSplit& split, const Pvp& pvp,
                int max_seq_length, const TagSet& tagset) {
  std::vector<PredictionRecord> records;
  for (const auto& sentence : split.sentences()) {
    records.push_back(predict_tags(
        scorer, sentence, pvp.prompt_template, pvp.verbalizer,
        DecodeOptions{static_cast<std::size_t>(max_seq_length)}));
  }
  return corpus_f1(records, tagset);
}

double vanilla_f1(const TokenClassifier& classifier, const CorpusSplit& split) {
  std::vector<PredictionRecord> records;
  for (const auto& sentence : split.sentences()) {
    records.push_back(predict_tags_vanilla(classifier, sentence));
  }
  return corpus_f1(records, classifier.tagset());
}

SeedOutcome train_one_seed(const TrainArgs& args, Task task, const Pvp& pvp,
                           const TrainConfig& config,
                           const TinyScorerOptions& tiny,
                           const CorpusSplit& train_split,
                           const CorpusSplit* dev_split, long long seed) {
  const TagSet& tagset = tagset_for(task);
  SeedOutcome outcome{.record = {},
                      .model = ModelArtifact{.task = std::string(task_name(task)),
                                             .method = args.method,
                                             .backend = args.backend,
                                             .seed = seed,
                                             .max_seq_length = config.max_seq_length,
                                             .pvp = pvp,
                                             .tiny_options = tiny},
                      .metrics = {}};
  ModelArtifact& model = outcome.model;
  const auto useed = static_cast<std::uint64_t>(seed);

  if (args.method == "vanilla") {
    if (args.backend != "tiny") {
      throw UsageError("vanilla fine-tuning supports the tiny backend only");
    }
    TinyTokenClassifier classifier(tagset, tiny, useed);
    outcome.record =
        vanilla_finetune(classifier, train_split, config, seed, dev_split);
    model.parameters.assign(classifier.parameters().begin(),
                            classifier.parameters().end());
    outcome.metrics["train_f1"] = vanilla_f1(classifier, train_split);
    if (dev_split) outcome.metrics["dev_f1"] = vanilla_f1(classifier, *dev_split);
  } else if (args.backend == "tiny") {
    TinyScorer scorer(pvp.prompt_template, pvp.verbalizer, tiny, useed);
    outcome.record = topro_finetune(scorer, train_split, pvp, config, seed, dev_split);
    model.parameters.assign(scorer.parameters().begin(),
                            scorer.parameters().end());
    outcome.metrics["train_f1"] =
        topro_f1(scorer, train_split, pvp, config.max_seq_length, tagset);
    if (dev_split) {
      outcome.metrics["dev_f1"] =
          topro_f1(scorer, *dev_split, pvp, config.max_seq_length, tagset);
    }
  } else if (args.backend == "oracle") {
    // Nothing to fit: the oracle memorizes the training labels.
    model.oracle_gold = gold_map_from(train_split.sentences());
    OracleScorer scorer(model.oracle_gold, pvp.verbalizer, 1.0);
    const auto prompts = training_prompts(scorer, train_split,
                                          pvp.prompt_template,
                                          config.max_seq_length);
    const LossSum loss = compute_topro_loss(scorer, prompts, pvp.verbalizer);
    outcome.record.seed = seed;
    outcome.record.examples_per_epoch = prompts.size();
    outcome.record.clamped = loss.clamped * static_cast<std::size_t>(config.epochs);
    outcome.record.epoch_mean_loss.assign(
        static_cast<std::size_t>(config.epochs),
        loss.loss / static_cast<double>(prompts.size()));
    outcome.metrics["train_f1"] =
        topro_f1(scorer, train_split, pvp, config.max_seq_length, tagset);
    if (dev_split) {
      outcome.metrics["dev_f1"] =
          topro_f1(scorer, *dev_split, pvp, config.max_seq_length, tagset);
    }
  } else if (args.backend.starts_with("external:")) {
    const std::string endpoint = args.backend.substr(9);
    auto scorer = external_scorer_adapter(endpoint);
    check_single_piece(*scorer, endpoint, pvp.verbalizer);
    outcome.record =
        topro_finetune(*scorer, train_split, pvp, config, seed, dev_split);
    outcome.metrics["train_f1"] =
        topro_f1(*scorer, train_split, pvp, config.max_seq_length, tagset);
    if (dev_split) {
      outcome.metrics["dev_f1"] =
          topro_f1(*scorer, *dev_split, pvp, config.max_seq_length, tagset);
    }
  } else {
    throw UsageError("unknown backend '" + args.backend +
                     "'; use oracle, tiny or external:ENDPOINT");
  }
  outcome.metrics["final_epoch_loss"] = outcome.record.epoch_mean_loss.back();
  return outcome;
}

json run_json(const SeedOutcome& o, const std::string& model_path) {
  return {{"seed", o.record.seed},
          {"model", model_path},
          {"epoch_mean_loss", o.record.epoch_mean_loss},
          {"dev_mean_loss", o.record.dev_mean_loss},
          {"examples_per_epoch", o.record.examples_per_epoch},
          {"updates", o.record.updates},
          {"clamped", o.record.clamped},
          {"metrics", o.metrics}};
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  check_method(args.method);
  const Task task = parse_task(args.task);
  const TagSet& tagset = tagset_for(task);

  json config_json = json::object();
  if (!args.config.empty()) config_json = load_json_file(args.config);
  TrainConfig config = train_config_from_json(config_json);
  const TinyScorerOptions tiny =
      tiny_options_from_json(config_json.value("tiny", json()));
  if (!args.seeds.empty()) config.seeds = parse_seed_list(args.seeds);
  config.validate();

  const Pvp pvp = resolve_pvp(args.pvp, task);
  const std::optional<std::string> language =
      args.language.empty() ? std::nullopt : std::optional(args.language);
  const LoadedCorpus train = load_corpus(args.train, tagset, language, SplitName::kTrain);
  if (!train.split.fully_labeled()) {
    throw MissingTags(train.split.sentences().front().sentence_id);
  }
  std::optional<LoadedCorpus> dev;
  if (!args.dev.empty()) {
    dev = load_corpus(args.dev, tagset, language, SplitName::kDev);
  }

  const fs::path dir(args.out);
  ensure_directory(dir);
  const std::string started = utc_timestamp();

  std::vector<std::optional<SeedOutcome>> outcomes(config.seeds.size());
  std::mutex mutex;
  // External backends are stateful processes; seeds share nothing only with
  // the in-process reference scorers.
  const bool parallel = args.parallel && !args.backend.starts_with("external:");
  const SeedAggregate aggregate = run_with_seeds(
      [&](long long seed) {
        SeedOutcome outcome = train_one_seed(args, task, pvp, config, tiny,
                                             train.split,
                                             dev ? &dev->split : nullptr, seed);
        SeedMetrics metrics = outcome.metrics;
        const auto pos = static_cast<std::size_t>(
            std::find(config.seeds.begin(), config.seeds.end(), seed) -
            config.seeds.begin());
        std::lock_guard lock(mutex);
        outcomes[pos] = std::move(outcome);
        return metrics;
      },
      config, parallel);

  json resolved = train_config_to_json(config);
  if (args.backend == "tiny") resolved["tiny"] = tiny_options_to_json(tiny);

  RunManifest manifest;
  manifest.command = "train";
  manifest.config = resolved;
  manifest.seeds = config.seeds;
  manifest.data.push_back({"train", train.path, train.sha256});
  if (dev) manifest.data.push_back({"dev", dev->path, dev->sha256});
  manifest.details = {{"task", args.task},
                      {"method", args.method},
                      {"backend", args.backend},
                      {"pvp", pvp_to_json(pvp)},
                      {"runs", json::array()}};
  json wall = json::object();
  for (const auto& outcome : outcomes) {
    const SeedOutcome& o = *outcome;
    const std::string seed_dir = "seed-" + std::to_string(o.record.seed);
    const std::string model_path = seed_dir + "/model.json";
    ensure_directory(dir / seed_dir);
    write_file(dir / model_path, dump(model_to_json(o.model)));

    RunManifest per_seed = manifest;
    per_seed.seeds = {o.record.seed};
    per_seed.outputs = {model_path};
    per_seed.metrics = o.metrics;
    per_seed.details["runs"] = json::array({run_json(o, model_path)});
    per_seed.timing = {{"wall_seconds", o.record.wall_seconds}};
    write_file(dir / seed_dir / "manifest.json", dump(manifest_to_json(per_seed)));

    manifest.outputs.push_back(model_path);
    manifest.outputs.push_back(seed_dir + "/manifest.json");
    manifest.details["runs"].push_back(run_json(o, model_path));
    wall[std::to_string(o.record.seed)] = o.record.wall_seconds;
  }
  json summary = json::object();
  for (const auto& [name, s] : aggregate.summary) {
    summary[name] = {{"mean", s.mean}, {"stddev", s.stddev}};
  }
  manifest.metrics = summary;
  manifest.timing = {{"started", started},
                     {"finished", utc_timestamp()},
                     {"wall_seconds", wall}};
  write_file(dir / "manifest.json", dump(manifest_to_json(manifest)));

  for (const auto& [name, s] : aggregate.summary) {
    out << name << ": mean " << s.mean << " stddev " << s.stddev << '\n';
  }
  for (const auto& outcome : outcomes) {
    if (outcome->record.clamped > 0) {
      err << "warning: seed " << outcome->record.seed << ": "
          << outcome->record.clamped
          << " probabilities were floored inside the loss\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string model;
  std::optional<long long> seed;
  std::vector<std::string> corpora;
  std::string language;
  std::string pvp;
  std::string out;
};

fs::path resolve_model_path(const std::string& model,
                            const std::optional<long long>& seed) {
  const fs::path path(model);
  if (!fs::is_directory(path)) return path;
  if (fs::exists(path / "model.json")) return path / "model.json";
  const fs::path manifest_path = path / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw DataError("'" + model + "' holds neither model.json nor manifest.json");
  }
  const RunManifest manifest = manifest_from_json(load_json_file(manifest_path));
  const json& runs = manifest.details.value("runs", json::array());
  for (const auto& run : runs) {
    if (!seed || run.at("seed").get<long long>() == *seed) {
      return path / run.at("model").get<std::string>();
    }
  }
  throw DataError("manifest '" + manifest_path.string() + "' has no run" +
                  (seed ? " for seed " + std::to_string(*seed) : std::string()));
}

int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream&) {
  const fs::path model_path = resolve_model_path(args.model, args.seed);
  const std::string model_text = read_file(model_path);
  json model_json;
  try {
    model_json = json::parse(model_text);
  } catch (const json::parse_error& e) {
    throw DataError("'" + model_path.string() + "': " + e.what());
  }
  const ModelArtifact model = model_from_json(model_json);
  const Task task = parse_task(model.task);
  const TagSet& tagset = tagset_for(task);
  if (!args.pvp.empty()) {
    const Pvp requested = pvp_from_json(load_json_file(args.pvp), tagset);
    if (!(requested == model.pvp)) {
      throw UsageError(
          "PVP mismatch: predictions must use the pattern and verbalizer the "
          "model was trained with");
    }
  }

  std::unique_ptr<Scorer> scorer;
  std::unique_ptr<TokenClassifier> classifier;
  if (model.method == "vanilla") {
    classifier = classifier_from_model(model);
  } else {
    scorer = scorer_from_model(model);
  }

  const std::optional<std::string> language =
      args.language.empty() ? std::nullopt : std::optional(args.language);
  std::vector<PredictionRecord> records;
  for (const auto& path : args.corpora) {
    const LoadedCorpus corpus = load_corpus(path, tagset, language, SplitName::kTest);
    for (const auto& sentence : corpus.split.sentences()) {
      if (classifier) {
        records.push_back(predict_tags_vanilla(*classifier, sentence));
      } else {
        records.push_back(predict_tags(
            *scorer, sentence, model.pvp.prompt_template, model.pvp.verbalizer,
            DecodeOptions{static_cast<std::size_t>(model.max_seq_length)}));
      }
    }
  }

  std::ostringstream tsv;
  write_predictions_tsv(tsv, records,
                        {{"task", model.task},
                         {"method", model.method},
                         {"backend", model.backend},
                         {"seed", std::to_string(model.seed)},
                         {"model_sha256", sha256_hex(model_text)}});
  write_file(args.out, tsv.str());
  out << "wrote " << records.size() << " sentences to " << args.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::vector<std::string> predictions;
  std::string pivot = "en";
  std::string task;
  std::string out;
  std::size_t top_k = 10;
  bool exclude_fallback = false;
};

struct MethodRuns {
  std::string method;
  std::string backend;
  std::vector<long long> seeds;
  std::vector<std::map<std::string, double>> per_file;
  std::vector<PredictionRecord> first_records;
};

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err) {
  std::vector<MethodRuns> methods;
  std::optional<std::string> task = args.task.empty()
                                        ? std::nullopt
                                        : std::optional(args.task);
  const F1Options options{args.exclude_fallback};
  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.config = {{"pivot", args.pivot},
                     {"f1_includes_fallback", !args.exclude_fallback},
                     {"top_k", args.top_k}};

  for (const auto& path : args.predictions) {
    const std::string text = read_file(path);
    manifest.data.push_back({"predictions", path, sha256_hex(text)});
    PredictionFile file = read_predictions_tsv(text);
    const std::string file_task =
        file.metadata.count("task") ? file.metadata["task"] : task.value_or("");
    if (file_task.empty()) {
      throw UsageError("'" + path + "' names no task; pass --task");
    }
    if (task && *task != file_task) {
      throw DataError("'" + path + "' is a " + file_task + " file, expected " + *task);
    }
    task = file_task;
    const std::string method = file.metadata.count("method")
                                   ? file.metadata["method"]
                                   : fs::path(path).stem().string();
    auto it = std::find_if(methods.begin(), methods.end(),
                           [&](const MethodRuns& m) { return m.method == method; });
    if (it == methods.end()) {
      methods.push_back({method, file.metadata["backend"], {}, {}, file.records});
      it = std::prev(methods.end());
    }
    if (file.metadata.count("seed")) {
      try {
        it->seeds.push_back(std::stoll(file.metadata["seed"]));
      } catch (const std::exception&) {
        throw DataError("'" + path + "': bad seed metadata");
      }
    }
    it->per_file.push_back(
        per_language_f1(file.records, tagset_for(parse_task(*task)), options));
  }
  if (methods.empty()) throw EmptyCorpus("prediction files");
  const TagSet& tagset = tagset_for(parse_task(*task));

  std::vector<MetricsDocument> documents;
  for (const auto& m : methods) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& table : m.per_file) {
      for (const auto& [language, f1] : table) values[language].push_back(f1);
    }
    std::map<std::string, double> means;
    std::map<std::string, double> stddevs;
    for (const auto& [language, v] : values) {
      if (v.size() != m.per_file.size()) {
        throw LanguageSetMismatch("runs of method '" + m.method +
                                  "' cover different languages");
      }
      const MetricSummary s = summarize(v);
      means[language] = s.mean;
      stddevs[language] = s.stddev;
    }
    EvalReport report = aggregate_languages(means, args.pivot, *task, m.method);
    if (!report.pivot_present) {
      err << "warning: pivot '" << args.pivot << "' not among the languages of '"
          << m.method << "'; averaging over all languages\n";
    }
    report.f1_includes_fallback = !args.exclude_fallback;
    if (m.per_file.size() > 1) report.seed_stddev = stddevs;
    documents.push_back({report, m.backend, m.seeds, {}});
  }

  std::map<std::string, std::map<std::string, double>> deltas;
  for (std::size_t i = 1; i < documents.size(); ++i) {
    deltas[documents[0].report.method + "-" + documents[i].report.method] =
        delta_table(documents[0].report, documents[i].report);
  }
  if (!documents.empty()) documents[0].deltas = deltas;

  json reports = json::array();
  for (const auto& d : documents) reports.push_back(metrics_json(d));
  const json metrics = {{"reports", reports}};

  for (const auto& d : documents) {
    for (const auto& [language, f1] : d.report.per_language) {
      out << d.report.method << '\t' << language << '\t' << f1 * 100.0 << '\n';
    }
    out << d.report.method << "\tavg\t" << d.report.average_excluding_pivot * 100.0
        << '\n';
  }

  if (args.out.empty()) {
    out << dump(metrics);
    return kExitOk;
  }
  const fs::path dir(args.out);
  ensure_directory(dir);
  write_file(dir / "metrics.json", dump(metrics));
  manifest.outputs.push_back("metrics.json");
  if (!deltas.empty()) {
    write_file(dir / "deltas.tsv", render_delta_tsv(deltas));
    manifest.outputs.push_back("deltas.tsv");

    // Error cases compare the first run of the first two methods.
    std::vector<LabeledSentence> corpus;
    for (const auto& r : methods[0].first_records) {
      if (r.gold_tags) corpus.push_back({r.sentence_id, r.language, r.tokens, r.gold_tags});
    }
    const auto cases = export_error_cases(methods[0].first_records,
                                          methods[1].first_records, corpus,
                                          args.top_k, tagset);
    write_file(dir / "error_cases.json",
               dump(error_cases_json(cases, methods[0].method, methods[1].method)));
    write_file(dir / "error_cases.txt",
               render_error_cases(cases, methods[0].method, methods[1].method));
    manifest.outputs.push_back("error_cases.json");
    manifest.outputs.push_back("error_cases.txt");
  }
  manifest.metrics = metrics;
  manifest.timing = {{"finished", utc_timestamp()}};
  write_file(dir / "manifest.json", dump(manifest_to_json(manifest)));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// icl

struct IclArgs {
  std::string backend;
  std::vector<std::string> corpora;
  std::string task = "panx";
  std::string format = "icl";
  std::string language;
  std::string config;
  std::string pivot = "en";
  std::string out;
};

std::unique_ptr<Generator> make_generator(const IclArgs& args,
                                          GenerativeFormat format,
                                          std::span<const LabeledSentence> sentences) {
  if (args.backend == "empty") return std::make_unique<ConstantGenerator>("");
  if (args.backend == "oracle") {
    // Echoes the gold label in the spelling the prompt format asks for.
    const Verbalizer icl = builtin_icl_verbalizer();
    std::vector<std::string> replies;
    for (const auto& sentence : sentences) {
      if (!sentence.tags) throw MissingTags(sentence.sentence_id);
      for (const auto& tag : *sentence.tags) {
        replies.push_back(format == GenerativeFormat::kIcl ? icl.word_for(tag)
                                                           : tag);
      }
    }
    return std::make_unique<ScriptedGenerator>(std::move(replies));
  }
  if (args.backend.starts_with("external:")) {
    return std::make_unique<ExternalGenerator>(open_transport(args.backend.substr(9)));
  }
  throw UsageError("icl backend must be oracle, empty or external:ENDPOINT");
}

int cmd_icl(const IclArgs& args, std::ostream& out, std::ostream& err) {
  const Task task = parse_task(args.task);
  const TagSet& tagset = tagset_for(task);
  GenerativeFormat format;
  if (args.format == "icl") {
    format = GenerativeFormat::kIcl;
  } else if (args.format == "seq2seq") {
    format = GenerativeFormat::kSeq2SeqTopro;
  } else {
    throw UsageError("--format must be icl or seq2seq");
  }
  GenerationConfig generation;
  json config_json = json::object();
  if (!args.config.empty()) {
    config_json = load_json_file(args.config);
    const TrainConfig config = train_config_from_json(config_json);
    if (config.max_target_length) {
      generation.max_target_length = static_cast<std::size_t>(*config.max_target_length);
    }
    if (config.beam_width) {
      generation.beam_width = static_cast<std::size_t>(*config.beam_width);
    }
  }

  RunManifest manifest;
  manifest.command = "icl";
  manifest.config = {{"task", args.task},
                     {"format", args.format},
                     {"backend", args.backend},
                     {"max_target_length", generation.max_target_length},
                     {"num_beam_search", generation.beam_width}};
  const std::optional<std::string> language =
      args.language.empty() ? std::nullopt : std::optional(args.language);
  std::vector<LabeledSentence> sentences;
  for (const auto& path : args.corpora) {
    LoadedCorpus corpus = load_corpus(path, tagset, language, SplitName::kTest);
    manifest.data.push_back({"corpus", corpus.path, corpus.sha256});
    const auto& s = corpus.split.sentences();
    sentences.insert(sentences.end(), s.begin(), s.end());
  }
  auto generator = make_generator(args, format, sentences);

  std::vector<PredictionRecord> records;
  for (const auto& sentence : sentences) {
    records.push_back(
        predict_tags_generative(*generator, sentence, format, task, generation));
  }

  const fs::path dir(args.out);
  ensure_directory(dir);
  std::ostringstream tsv;
  write_predictions_tsv(tsv, records,
                        {{"task", args.task},
                         {"method", args.format},
                         {"backend", args.backend}});
  write_file(dir / "predictions.tsv", tsv.str());
  manifest.outputs.push_back("predictions.tsv");

  const bool labeled = std::all_of(records.begin(), records.end(),
                                   [](const PredictionRecord& r) { return r.gold_tags.has_value(); });
  if (labeled) {
    std::size_t fallback = 0;
    std::size_t total = 0;
    for (const auto& r : records) {
      total += r.predicted_tags.size();
      fallback += static_cast<std::size_t>(
          std::count(r.predicted_tags.begin(), r.predicted_tags.end(), tagset.fallback()));
    }
    EvalReport report;
    const auto per_language = per_language_f1(records, tagset);
    try {
      report = aggregate_languages(per_language, args.pivot, args.task, args.format);
    } catch (const NoTargetLanguages&) {
      // Evaluating only the pivot is fine here; report its score as the mean.
      report.task = args.task;
      report.method = args.format;
      report.pivot = args.pivot;
      report.per_language = per_language;
      report.average_excluding_pivot = per_language.begin()->second;
    }
    const json metrics = metrics_json({report, args.backend, {}, {}});
    write_file(dir / "metrics.json", dump(metrics));
    manifest.outputs.push_back("metrics.json");
    manifest.metrics = metrics;
    manifest.metrics["fallback_fraction"] =
        total ? static_cast<double>(fallback) / static_cast<double>(total) : 0.0;
    for (const auto& [lang, f1] : report.per_language) {
      out << lang << '\t' << f1 * 100.0 << '\n';
    }
    out << "avg\t" << report.average_excluding_pivot * 100.0 << '\n';
  } else {
    err << "warning: corpus is unlabeled; wrote predictions only\n";
  }
  manifest.timing = {{"finished", utc_timestamp()}};
  write_file(dir / "manifest.json", dump(manifest_to_json(manifest)));
  return kExitOk;
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kUsage:
      return kExitUsage;
    case ErrorCategory::kData:
      return kExitData;
    case ErrorCategory::kBackend:
      return kExitBackend;
  }
  return kExitBackend;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Token-level prompt decomposition for sequence labeling", "topro"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "validate CoNLL files into a corpus directory");
  ingest_cmd->add_option("--task", ingest.task, "panx or udpos")->capture_default_str();
  ingest_cmd->add_option("--language", ingest.language, "language code (default: from file name)");
  ingest_cmd->add_option("--split", ingest.split, "split when the file name has none")
      ->capture_default_str();
  ingest_cmd->add_option("--out", ingest.out, "output directory")->required();
  ingest_cmd->add_option("paths", ingest.paths, "CoNLL files or directories")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "fine-tune one model per seed");
  train_cmd->add_option("--config", train.config, "JSON config file");
  train_cmd->add_option("--task", train.task, "panx or udpos")->capture_default_str();
  train_cmd->add_option("--method", train.method, "topro or vanilla")->capture_default_str();
  train_cmd->add_option("--backend", train.backend, "oracle, tiny or external:ENDPOINT")
      ->capture_default_str();
  train_cmd->add_option("--train", train.train, "training CoNLL file")->required();
  train_cmd->add_option("--dev", train.dev, "dev CoNLL file");
  train_cmd->add_option("--seeds", train.seeds, "comma-separated seeds (overrides config)");
  train_cmd->add_option("--pvp", train.pvp, "PVP JSON (default: built-in)");
  train_cmd->add_option("--language", train.language, "language of the training file");
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_flag("--parallel", train.parallel, "train seeds concurrently");

  PredictArgs predict;
  long long predict_seed = 0;
  auto* predict_cmd = app.add_subcommand("predict", "tag a corpus with a trained model");
  predict_cmd->add_option("--model", predict.model, "model directory or model.json")
      ->required();
  auto* seed_opt = predict_cmd->add_option("--seed", predict_seed, "run to use from a multi-seed model");
  predict_cmd->add_option("--corpus", predict.corpora, "CoNLL file (repeatable)")->required();
  predict_cmd->add_option("--language", predict.language, "language of the corpus files");
  predict_cmd->add_option("--pvp", predict.pvp, "expected PVP; refused unless it matches the model");
  predict_cmd->add_option("--out", predict.out, "predictions TSV")->required();

  EvaluateArgs evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score prediction files");
  evaluate_cmd->add_option("predictions", evaluate.predictions, "predictions TSV files")
      ->required();
  evaluate_cmd->add_option("--pivot", evaluate.pivot, "language left out of the average")
      ->capture_default_str();
  evaluate_cmd->add_option("--task", evaluate.task, "panx or udpos (default: from files)");
  evaluate_cmd->add_option("--out", evaluate.out, "output directory (default: print JSON)");
  evaluate_cmd->add_option("--top-k", evaluate.top_k, "error cases to export")
      ->capture_default_str();
  evaluate_cmd->add_flag("--exclude-fallback", evaluate.exclude_fallback,
                         "leave the O/X class out of weighted F1");

  IclArgs icl;
  auto* icl_cmd = app.add_subcommand("icl", "zero-shot prompting of a generative backend");
  icl_cmd->add_option("--backend", icl.backend, "oracle, empty or external:ENDPOINT")
      ->required();
  icl_cmd->add_option("--corpus", icl.corpora, "CoNLL file (repeatable)")->required();
  icl_cmd->add_option("--task", icl.task, "panx or udpos")->capture_default_str();
  icl_cmd->add_option("--format", icl.format, "icl or seq2seq")->capture_default_str();
  icl_cmd->add_option("--language", icl.language, "language of the corpus files");
  icl_cmd->add_option("--config", icl.config, "JSON config (max_target_length, num_beam_search)");
  icl_cmd->add_option("--pivot", icl.pivot, "language left out of the average")
      ->capture_default_str();
  icl_cmd->add_option("--out", icl.out, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(ingest, out, err);
    if (*train_cmd) return cmd_train(train, out, err);
    if (*predict_cmd) {
      if (seed_opt->count() > 0) predict.seed = predict_seed;
      return cmd_predict(predict, out, err);
    }
    if (*evaluate_cmd) return cmd_evaluate(evaluate, out, err);
    if (*icl_cmd) return cmd_icl(icl, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitBackend;
  }
  return kExitUsage;
}

}  // namespace topro::cli
