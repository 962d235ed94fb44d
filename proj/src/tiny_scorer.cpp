#include <algorithm>

#include "topro/errors.hpp"
#include "topro/rng.hpp"
#include "topro/scoring.hpp"

namespace topro {

namespace {

std::vector<std::string> split_spaces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(' ', start);
    if (end == std::string_view::npos) end = text.size();
    if (end > start) out.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

void init_weights(std::span<double> weights, double scale,
                  std::uint64_t seed) {
  if (scale == 0.0) return;
  Rng rng(seed);
  for (auto& w : weights) w = scale * rng.normal();
}

FeatureOptions feature_options(const TinyScorerOptions& options) {
  return FeatureOptions{options.feature_dim, options.context_window};
}

}  // namespace

TinyScorer::TinyScorer(PromptTemplate prompt_template, Verbalizer verbalizer,
                       TinyScorerOptions options, std::uint64_t seed)
    : template_(std::move(prompt_template)),
      verbalizer_(std::move(verbalizer)),
      options_(options),
      model_(verbalizer_.size(), options.feature_dim) {
  if (options_.feature_dim < 1) throw UsageError("feature_dim must be >= 1");
  if (template_.mode() != TemplateMode::kMasked) {
    throw UsageError("tiny scorer needs a masked template");
  }
  init_weights(model_.parameters(), options_.init_scale, seed);
  accumulated_.assign(model_.parameters().size(), 0.0);
}

SparseFeatures TinyScorer::features(const PromptInstance& prompt) const {
  auto slots = locate_slots(template_, prompt.text);
  if (!slots) {
    throw UsageError("prompt for '" + prompt.sentence_id + "'#" +
                     std::to_string(prompt.token_index) +
                     " was not rendered from template '" + template_.name() +
                     "'");
  }
  const std::vector<std::string> context = split_spaces(slots->sentence);
  std::optional<std::size_t> position;
  auto it = std::find(context.begin(), context.end(), slots->token);
  if (it != context.end()) {
    position = static_cast<std::size_t>(it - context.begin());
  }
  return token_features(slots->token, context, position,
                        feature_options(options_));
}

std::vector<std::size_t> TinyScorer::rows_for(
    std::span<const std::string> candidates) const {
  std::vector<std::size_t> rows;
  rows.reserve(candidates.size());
  const auto& entries = verbalizer_.entries();
  for (const auto& word : candidates) {
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const VerbalizerEntry& e) {
                             return e.word == word;
                           });
    if (it == entries.end()) throw UnknownCandidate(word);
    rows.push_back(static_cast<std::size_t>(it - entries.begin()));
  }
  return rows;
}

std::vector<MaskDistribution> TinyScorer::score_batch(
    std::span<const PromptInstance> prompts,
    std::span<const std::string> candidates) const {
  const auto rows = rows_for(candidates);
  std::vector<MaskDistribution> out;
  out.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    MaskDistribution dist;
    dist.candidates.assign(candidates.begin(), candidates.end());
    dist.probabilities = model_.probabilities(features(prompt), rows);
    out.push_back(std::move(dist));
  }
  return out;
}

std::optional<int> TinyScorer::vocabulary_probe(std::string_view word) const {
  return static_cast<int>(std::max<std::size_t>(count_words(word), 1));
}

LossSum TinyScorer::loss_and_gradient(std::span<const PromptInstance> prompts,
                                      std::span<const std::string> gold_words,
                                      std::span<const std::string> candidates,
                                      std::span<double> gradient) const {
  if (prompts.size() != gold_words.size()) {
    throw UsageError("prompt/gold batch size mismatch");
  }
  if (!gradient.empty() && gradient.size() != parameter_count()) {
    throw UsageError("gradient buffer has the wrong size");
  }
  const auto rows = rows_for(candidates);
  LossSum total;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto gold = std::find(candidates.begin(), candidates.end(), gold_words[i]);
    if (gold == candidates.end()) throw UnknownCandidate(gold_words[i]);
    auto example = model_.loss(
        features(prompts[i]), rows,
        static_cast<std::size_t>(gold - candidates.begin()),
        kProbabilityFloor, gradient);
    total.loss += example.loss;
    total.clamped += example.clamped ? 1 : 0;
    ++total.examples;
  }
  return total;
}

LossSum TinyScorer::accumulate_gradient(
    std::span<const PromptInstance> prompts,
    std::span<const std::string> gold_words,
    std::span<const std::string> candidates) {
  return loss_and_gradient(prompts, gold_words, candidates, accumulated_);
}

void TinyScorer::apply_gradient(double learning_rate, double scale) {
  auto weights = model_.parameters();
  const double step = learning_rate * scale;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] -= step * accumulated_[i];
  }
  clear_gradient();
}

void TinyScorer::clear_gradient() {
  std::fill(accumulated_.begin(), accumulated_.end(), 0.0);
}

std::unique_ptr<TinyScorer> tiny_trainable_scorer(
    std::size_t feature_dim, const PromptTemplate& prompt_template,
    const Verbalizer& verbalizer, std::uint64_t rng_seed) {
  TinyScorerOptions options;
  options.feature_dim = feature_dim;
  return std::make_unique<TinyScorer>(prompt_template, verbalizer, options,
                                      rng_seed);
}

TinyTokenClassifier::TinyTokenClassifier(TagSet tagset,
                                         TinyScorerOptions options,
                                         std::uint64_t seed)
    : tagset_(std::move(tagset)),
      options_(options),
      model_(tagset_.size(), options.feature_dim) {
  if (options_.feature_dim < 1) throw UsageError("feature_dim must be >= 1");
  init_weights(model_.parameters(), options_.init_scale, seed);
  accumulated_.assign(model_.parameters().size(), 0.0);
  for (std::size_t i = 0; i < tagset_.size(); ++i) all_rows_.push_back(i);
}

SparseFeatures TinyTokenClassifier::features(
    std::span<const std::string> tokens, std::size_t index) const {
  if (index >= tokens.size()) throw IndexOutOfRange(index, tokens.size());
  return token_features(tokens[index], tokens, index,
                        feature_options(options_));
}

std::vector<double> TinyTokenClassifier::predict_proba(
    std::span<const std::string> tokens, std::size_t index) const {
  return model_.probabilities(features(tokens, index), all_rows_);
}

LossSum TinyTokenClassifier::loss_and_gradient(
    std::span<const Example> batch, std::span<double> gradient) const {
  LossSum total;
  for (const auto& example : batch) {
    auto result = model_.loss(features(*example.tokens, example.index),
                              all_rows_, example.gold, kProbabilityFloor,
                              gradient);
    total.loss += result.loss;
    total.clamped += result.clamped ? 1 : 0;
    ++total.examples;
  }
  return total;
}

LossSum TinyTokenClassifier::accumulate_gradient(
    std::span<const Example> batch) {
  return loss_and_gradient(batch, accumulated_);
}

void TinyTokenClassifier::apply_gradient(double learning_rate, double scale) {
  auto weights = model_.parameters();
  const double step = learning_rate * scale;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] -= step * accumulated_[i];
  }
  clear_gradient();
}

void TinyTokenClassifier::clear_gradient() {
  std::fill(accumulated_.begin(), accumulated_.end(), 0.0);
}

}  // namespace topro
