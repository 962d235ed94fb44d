#include <algorithm>
#include <cmath>
#include <numeric>

#include "topro/errors.hpp"
#include "topro/scoring.hpp"

namespace topro {

double MaskDistribution::probability(std::string_view word) const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] == word) return probabilities[i];
  }
  throw UnknownCandidate(std::string(word));
}

double MaskDistribution::sum() const {
  return std::accumulate(probabilities.begin(), probabilities.end(), 0.0);
}

MaskDistribution softmax_distribution(std::vector<std::string> candidates,
                                      std::span<const double> log_scores) {
  if (candidates.size() != log_scores.size()) {
    throw ProtocolError("expected " + std::to_string(candidates.size()) +
                        " scores, got " + std::to_string(log_scores.size()));
  }
  MaskDistribution out;
  out.candidates = std::move(candidates);
  out.probabilities.resize(log_scores.size());
  if (log_scores.empty()) return out;
  double max_score = -INFINITY;
  for (double s : log_scores) {
    if (std::isnan(s)) throw ProtocolError("NaN log-probability");
    max_score = std::max(max_score, s);
  }
  if (!std::isfinite(max_score)) {
    throw ProtocolError("no candidate has a finite log-probability");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < log_scores.size(); ++i) {
    out.probabilities[i] = std::exp(log_scores[i] - max_score);
    total += out.probabilities[i];
  }
  for (auto& p : out.probabilities) p /= total;
  return out;
}

MaskDistribution Scorer::score_mask(
    const PromptInstance& prompt,
    std::span<const std::string> candidates) const {
  auto batch = score_batch(std::span(&prompt, 1), candidates);
  return std::move(batch.front());
}

LossSum TrainableScorer::train_step(std::span<const PromptInstance> prompts,
                                    std::span<const std::string> gold_words,
                                    std::span<const std::string> candidates,
                                    double learning_rate) {
  clear_gradient();
  LossSum loss = accumulate_gradient(prompts, gold_words, candidates);
  if (!prompts.empty()) {
    apply_gradient(learning_rate, 1.0 / static_cast<double>(prompts.size()));
  }
  return loss;
}

std::string ScriptedGenerator::generate(const std::string&, std::size_t,
                                        std::size_t) {
  if (next_ >= replies_.size()) {
    throw BackendError("scripted generator exhausted after " +
                       std::to_string(replies_.size()) + " replies");
  }
  return replies_[next_++];
}

GoldMap gold_map_from(std::span<const LabeledSentence> sentences) {
  GoldMap gold;
  for (const auto& sentence : sentences) {
    if (!sentence.tags) continue;
    for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
      gold[{sentence.sentence_id, i}] = (*sentence.tags)[i];
    }
  }
  return gold;
}

OracleScorer::OracleScorer(GoldMap gold, Verbalizer verbalizer,
                           double certainty)
    : gold_(std::move(gold)),
      verbalizer_(std::move(verbalizer)),
      certainty_(certainty) {
  if (!(certainty_ > 0.0 && certainty_ <= 1.0)) {
    throw UsageError("oracle certainty must be in (0, 1], got " +
                     std::to_string(certainty_));
  }
}

std::vector<MaskDistribution> OracleScorer::score_batch(
    std::span<const PromptInstance> prompts,
    std::span<const std::string> candidates) const {
  const std::size_t k = candidates.size();
  if (k == 0) throw UsageError("oracle scorer needs at least one candidate");
  if (k > 1 && certainty_ <= 1.0 / static_cast<double>(k)) {
    throw UsageError("oracle certainty " + std::to_string(certainty_) +
                     " must exceed 1/" + std::to_string(k));
  }
  std::vector<MaskDistribution> out;
  out.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    MaskDistribution dist;
    dist.candidates.assign(candidates.begin(), candidates.end());
    auto it = gold_.find({prompt.sentence_id, prompt.token_index});
    if (it == gold_.end()) {
      dist.probabilities.assign(k, 1.0 / static_cast<double>(k));
    } else {
      const std::string& word = verbalizer_.word_for(it->second);
      auto pos = std::find(candidates.begin(), candidates.end(), word);
      if (pos == candidates.end()) throw UnknownCandidate(word);
      const double rest =
          k > 1 ? (1.0 - certainty_) / static_cast<double>(k - 1) : 0.0;
      dist.probabilities.assign(k, rest);
      dist.probabilities[static_cast<std::size_t>(pos - candidates.begin())] =
          k > 1 ? certainty_ : 1.0;
    }
    out.push_back(std::move(dist));
  }
  return out;
}

std::unique_ptr<OracleScorer> lookup_oracle_scorer(GoldMap gold,
                                                   Verbalizer verbalizer,
                                                   double certainty) {
  return std::make_unique<OracleScorer>(std::move(gold), std::move(verbalizer),
                                        certainty);
}

}  // namespace topro
