#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topro/corpus.hpp"
#include "topro/pvp.hpp"
#include "topro/scoring.hpp"

namespace topro {

// Hyperparameters. The config file spells some keys differently
// (grad_acc_steps, num_beam_search).
struct TrainConfig {
  int epochs = 5;
  double learning_rate = 1e-5;
  int batch_size = 8;
  int grad_accumulation_steps = 4;
  int max_seq_length = 128;
  std::optional<int> max_target_length;
  std::optional<int> beam_width;
  std::vector<long long> seeds = {10, 42, 421, 510, 1218};

  // Throws ConfigError on non-positive counts, learning_rate <= 0 or an
  // empty seed list.
  void validate() const;

  // Encoder settings (mBERT, XLM-R).
  static TrainConfig encoder_defaults();
  // Text-to-text settings (mT5).
  static TrainConfig seq2seq_defaults();

  bool operator==(const TrainConfig&) const = default;
};

struct TrainRunRecord {
  long long seed = 0;
  std::vector<double> epoch_mean_loss;
  // Mean dev loss after each epoch; empty when no dev split was given.
  std::vector<double> dev_mean_loss;
  std::size_t examples_per_epoch = 0;
  std::size_t updates = 0;
  std::size_t clamped = 0;
  double wall_seconds = 0.0;
};

// Sum over the batch of -ln p(V(gold)), with p floored at kProbabilityFloor;
// `clamped` counts floored tokens. Every prompt needs a gold tag.
LossSum compute_topro_loss(const Scorer& scorer,
                           std::span<const PromptInstance> batch,
                           const Verbalizer& verbalizer);

// Gold verbalizer words of labelled prompts, in order.
std::vector<std::string> gold_words(std::span<const PromptInstance> prompts,
                                    const Verbalizer& verbalizer);

// Decomposes every labelled sentence with the template, truncating context to
// the scorer's max_seq_length units.
std::vector<PromptInstance> training_prompts(const Scorer& scorer,
                                             const CorpusSplit& split,
                                             const PromptTemplate& tmpl,
                                             int max_seq_length);

// Prompt-level fine-tuning. The prompt stream is reshuffled every epoch from
// `seed`; gradients of grad_accumulation_steps consecutive batches are
// averaged into one update.
TrainRunRecord topro_finetune(TrainableScorer& scorer,
                              const CorpusSplit& train_split, const Pvp& pvp,
                              const TrainConfig& config, long long seed,
                              const CorpusSplit* dev_split = nullptr);

// Same loop over (token, tag) pairs with a prompt-free token classifier.
TrainRunRecord vanilla_finetune(TokenClassifier& classifier,
                                const CorpusSplit& train_split,
                                const TrainConfig& config, long long seed,
                                const CorpusSplit* dev_split = nullptr);

using SeedMetrics = std::map<std::string, double>;

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one seed
};

struct SeedAggregate {
  std::vector<long long> seeds;
  std::vector<SeedMetrics> per_seed;
  std::map<std::string, MetricSummary> summary;
};

MetricSummary summarize(std::span<const double> values);

// Runs `run` once per config seed (concurrently when `parallel`). The first
// failing seed, in seed order, aborts the aggregate with SeedFailure.
SeedAggregate run_with_seeds(
    const std::function<SeedMetrics(long long seed)>& run,
    const TrainConfig& config, bool parallel = false);

}  // namespace topro
