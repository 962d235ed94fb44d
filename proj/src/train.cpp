#include "topro/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>

#include "topro/errors.hpp"
#include "topro/rng.hpp"

namespace topro {

void TrainConfig::validate() const {
  auto positive = [](int value, const char* name) {
    if (value < 1) {
      throw ConfigError(std::string(name) + " must be >= 1, got " +
                        std::to_string(value));
    }
  };
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  positive(grad_accumulation_steps, "grad_acc_steps");
  positive(max_seq_length, "max_seq_length");
  if (max_target_length) positive(*max_target_length, "max_target_length");
  if (beam_width) positive(*beam_width, "num_beam_search");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
}

TrainConfig TrainConfig::encoder_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::seq2seq_defaults() {
  TrainConfig config;
  config.epochs = 10;
  config.learning_rate = 3e-5;
  config.batch_size = 24;
  config.grad_accumulation_steps = 4;
  config.max_seq_length = 128;
  config.max_target_length = 150;
  config.beam_width = 3;
  return config;
}

std::vector<std::string> gold_words(std::span<const PromptInstance> prompts,
                                    const Verbalizer& verbalizer) {
  std::vector<std::string> words;
  words.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    if (!prompt.gold_tag) throw MissingTags(prompt.sentence_id);
    words.push_back(verbalizer.word_for(*prompt.gold_tag));
  }
  return words;
}

LossSum compute_topro_loss(const Scorer& scorer,
                           std::span<const PromptInstance> batch,
                           const Verbalizer& verbalizer) {
  const std::vector<std::string> golds = gold_words(batch, verbalizer);
  const std::vector<std::string> candidates = verbalizer.words();
  const auto distributions = scorer.score_batch(batch, candidates);
  LossSum sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double p = distributions[i].probability(golds[i]);
    if (p < kProbabilityFloor) ++sum.clamped;
    sum.loss += -std::log(std::max(p, kProbabilityFloor));
    ++sum.examples;
  }
  return sum;
}

std::vector<PromptInstance> training_prompts(const Scorer& scorer,
                                             const CorpusSplit& split,
                                             const PromptTemplate& tmpl,
                                             int max_seq_length) {
  const UnitCounter counter = [&scorer](std::string_view text) {
    return scorer.count_units(text);
  };
  std::vector<PromptInstance> prompts;
  for (const auto& sentence : split.sentences()) {
    if (!sentence.tags) throw MissingTags(sentence.sentence_id);
    auto rendered = decompose_fitted(
        tmpl, sentence, static_cast<std::size_t>(max_seq_length), counter);
    std::move(rendered.begin(), rendered.end(), std::back_inserter(prompts));
  }
  return prompts;
}

namespace {

// Shared epoch/batch/accumulation loop. `step(begin, end)` accumulates the
// gradient of examples order[begin, end) and returns their loss; `apply(n)`
// performs one update averaged over n examples.
template <typename StepFn, typename ApplyFn, typename DevFn>
TrainRunRecord run_loop(std::size_t example_count, const TrainConfig& config,
                        long long seed, StepFn step, ApplyFn apply,
                        DevFn dev_loss) {
  config.validate();
  if (example_count == 0) throw EmptyCorpus("training split");
  const auto started = std::chrono::steady_clock::now();

  TrainRunRecord record;
  record.seed = seed;
  record.examples_per_epoch = example_count;

  Rng rng(static_cast<std::uint64_t>(seed));
  std::vector<std::size_t> order(example_count);
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const auto window = static_cast<std::size_t>(config.grad_accumulation_steps);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches_in_window = 0;
    std::size_t examples_in_window = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < example_count; begin += batch_size) {
      const std::size_t end = std::min(begin + batch_size, example_count);
      LossSum loss = step(order, begin, end);
      if (!std::isfinite(loss.loss)) throw NonFiniteLoss(epoch + 1, batch_index);
      epoch_loss += loss.loss;
      record.clamped += loss.clamped;
      examples_in_window += end - begin;
      ++batches_in_window;
      ++batch_index;
      const bool last = end == example_count;
      if (batches_in_window == window || last) {
        apply(examples_in_window);
        ++record.updates;
        batches_in_window = 0;
        examples_in_window = 0;
      }
    }
    record.epoch_mean_loss.push_back(epoch_loss /
                                     static_cast<double>(example_count));
    if (auto dev = dev_loss()) record.dev_mean_loss.push_back(*dev);
  }
  record.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - started)
                            .count();
  return record;
}

}  // namespace

TrainRunRecord topro_finetune(TrainableScorer& scorer,
                              const CorpusSplit& train_split, const Pvp& pvp,
                              const TrainConfig& config, long long seed,
                              const CorpusSplit* dev_split) {
  config.validate();
  const std::vector<PromptInstance> prompts = training_prompts(
      scorer, train_split, pvp.prompt_template, config.max_seq_length);
  const std::vector<std::string> golds = gold_words(prompts, pvp.verbalizer);
  const std::vector<std::string> candidates = pvp.verbalizer.words();

  std::vector<PromptInstance> dev_prompts;
  if (dev_split) {
    dev_prompts = training_prompts(scorer, *dev_split, pvp.prompt_template,
                                   config.max_seq_length);
  }

  std::vector<PromptInstance> batch_prompts;
  std::vector<std::string> batch_golds;
  scorer.clear_gradient();
  return run_loop(
      prompts.size(), config, seed,
      [&](const std::vector<std::size_t>& order, std::size_t begin,
          std::size_t end) {
        batch_prompts.clear();
        batch_golds.clear();
        for (std::size_t i = begin; i < end; ++i) {
          batch_prompts.push_back(prompts[order[i]]);
          batch_golds.push_back(golds[order[i]]);
        }
        return scorer.accumulate_gradient(batch_prompts, batch_golds,
                                          candidates);
      },
      [&](std::size_t n) {
        scorer.apply_gradient(config.learning_rate,
                              1.0 / static_cast<double>(n));
      },
      [&]() -> std::optional<double> {
        if (dev_prompts.empty()) return std::nullopt;
        LossSum dev = compute_topro_loss(scorer, dev_prompts, pvp.verbalizer);
        return dev.loss / static_cast<double>(dev.examples);
      });
}

TrainRunRecord vanilla_finetune(TokenClassifier& classifier,
                                const CorpusSplit& train_split,
                                const TrainConfig& config, long long seed,
                                const CorpusSplit* dev_split) {
  config.validate();
  const TagSet& tagset = classifier.tagset();
  auto examples_of = [&](const CorpusSplit& split) {
    std::vector<TokenClassifier::Example> examples;
    for (const auto& sentence : split.sentences()) {
      if (!sentence.tags) throw MissingTags(sentence.sentence_id);
      for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
        auto gold = tagset.index_of((*sentence.tags)[i]);
        if (!gold) throw UnknownTag(0, (*sentence.tags)[i]);
        examples.push_back({&sentence.tokens, i, *gold});
      }
    }
    return examples;
  };
  const auto examples = examples_of(train_split);
  std::vector<TokenClassifier::Example> dev_examples;
  if (dev_split) dev_examples = examples_of(*dev_split);

  std::vector<TokenClassifier::Example> batch;
  classifier.clear_gradient();
  return run_loop(
      examples.size(), config, seed,
      [&](const std::vector<std::size_t>& order, std::size_t begin,
          std::size_t end) {
        batch.clear();
        for (std::size_t i = begin; i < end; ++i) {
          batch.push_back(examples[order[i]]);
        }
        return classifier.accumulate_gradient(batch);
      },
      [&](std::size_t n) {
        classifier.apply_gradient(config.learning_rate,
                                  1.0 / static_cast<double>(n));
      },
      [&]() -> std::optional<double> {
        if (dev_examples.empty()) return std::nullopt;
        double total = 0.0;
        for (const auto& example : dev_examples) {
          const auto p = classifier.predict_proba(*example.tokens,
                                                  example.index);
          total += -std::log(std::max(p[example.gold], kProbabilityFloor));
        }
        return total / static_cast<double>(dev_examples.size());
      });
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary summary;
  if (values.empty()) return summary;
  if (std::all_of(values.begin(), values.end(),
                  [&](double v) { return v == values.front(); })) {
    summary.mean = values.front();
    return summary;
  }
  const double n = static_cast<double>(values.size());
  summary.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - summary.mean) * (v - summary.mean);
    summary.stddev = std::sqrt(ss / (n - 1.0));
  }
  return summary;
}

SeedAggregate run_with_seeds(
    const std::function<SeedMetrics(long long seed)>& run,
    const TrainConfig& config, bool parallel) {
  if (config.seeds.empty()) throw ConfigError("seeds must not be empty");
  SeedAggregate aggregate;
  aggregate.seeds = config.seeds;

  auto guarded = [&run](long long seed) {
    try {
      return run(seed);
    } catch (const Error& e) {
      throw SeedFailure(seed, e);
    } catch (const std::exception& e) {
      throw SeedFailure(seed, BackendError(e.what()));
    }
  };

  if (parallel) {
    std::vector<std::future<SeedMetrics>> jobs;
    for (long long seed : config.seeds) {
      jobs.push_back(std::async(std::launch::async, guarded, seed));
    }
    // get() in seed order so the reported failure is deterministic.
    for (auto& job : jobs) aggregate.per_seed.push_back(job.get());
  } else {
    for (long long seed : config.seeds) {
      aggregate.per_seed.push_back(guarded(seed));
    }
  }

  const SeedMetrics& first = aggregate.per_seed.front();
  for (const auto& [name, unused] : first) {
    std::vector<double> values;
    for (std::size_t s = 0; s < aggregate.per_seed.size(); ++s) {
      auto it = aggregate.per_seed[s].find(name);
      if (it == aggregate.per_seed[s].end()) {
        throw UsageError("seed " + std::to_string(aggregate.seeds[s]) +
                         " did not report metric '" + name + "'");
      }
      values.push_back(it->second);
    }
    aggregate.summary[name] = summarize(values);
  }
  return aggregate;
}

}  // namespace topro
