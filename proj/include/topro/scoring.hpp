#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "topro/features.hpp"
#include "topro/pvp.hpp"

namespace topro {

// Floor applied to probabilities inside -log(.) so the loss stays finite.
inline constexpr double kProbabilityFloor = 1e-12;

// p(.) over the candidate words of one mask position, renormalized so the
// candidates sum to one.
struct MaskDistribution {
  std::vector<std::string> candidates;
  std::vector<double> probabilities;

  // Throws UnknownCandidate for words outside the candidate set.
  double probability(std::string_view word) const;
  double sum() const;
};

// Normalizes log-scores over the candidates with a max-shifted softmax.
MaskDistribution softmax_distribution(std::vector<std::string> candidates,
                                      std::span<const double> log_scores);

// Summed cross-entropy of a batch plus the number of floored probabilities.
struct LossSum {
  double loss = 0.0;
  std::size_t clamped = 0;
  std::size_t examples = 0;

  LossSum& operator+=(const LossSum& other) {
    loss += other.loss;
    clamped += other.clamped;
    examples += other.examples;
    return *this;
  }
};

// The masked LM M(prompt, theta). score_batch must be deterministic for fixed
// parameters and independent of candidate order; concurrent const calls are
// safe unless an adapter documents otherwise.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual std::string backend_name() const = 0;

  virtual std::vector<MaskDistribution> score_batch(
      std::span<const PromptInstance> prompts,
      std::span<const std::string> candidates) const = 0;

  MaskDistribution score_mask(const PromptInstance& prompt,
                              std::span<const std::string> candidates) const;

  // Number of vocabulary pieces `word` splits into, when the backend knows.
  virtual std::optional<int> vocabulary_probe(std::string_view word) const {
    (void)word;
    return std::nullopt;
  }

  // Length of `text` in backend units (max_seq_length is measured in these).
  virtual std::size_t count_units(std::string_view text) const {
    return count_words(text);
  }
};

// A scorer whose parameters can be updated. Gradients accumulate across
// calls until apply_gradient; a single writer must own it while training.
class TrainableScorer : public Scorer {
 public:
  // Adds d/dtheta of sum_i -log p(gold_words[i] | prompts[i]) to the
  // accumulator and returns the (floored) loss.
  virtual LossSum accumulate_gradient(
      std::span<const PromptInstance> prompts,
      std::span<const std::string> gold_words,
      std::span<const std::string> candidates) = 0;

  // theta -= learning_rate * scale * accumulated; clears the accumulator.
  virtual void apply_gradient(double learning_rate, double scale) = 0;

  virtual void clear_gradient() = 0;

  // One batch, one update, gradient averaged over the batch.
  LossSum train_step(std::span<const PromptInstance> prompts,
                     std::span<const std::string> gold_words,
                     std::span<const std::string> candidates,
                     double learning_rate);
};

// Free-text generation backend (seq2seq or instruction-tuned LLM).
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string backend_name() const = 0;
  virtual std::string generate(const std::string& input,
                               std::size_t max_target_length,
                               std::size_t beam_width) = 0;
};

// Replies with a fixed script, one entry per call, in order.
class ScriptedGenerator final : public Generator {
 public:
  explicit ScriptedGenerator(std::vector<std::string> replies)
      : replies_(std::move(replies)) {}

  std::string backend_name() const override { return "scripted"; }
  std::string generate(const std::string& input, std::size_t max_target_length,
                       std::size_t beam_width) override;

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

// Always replies with the same text (empty by default).
class ConstantGenerator final : public Generator {
 public:
  explicit ConstantGenerator(std::string reply = "")
      : reply_(std::move(reply)) {}

  std::string backend_name() const override { return "constant"; }
  std::string generate(const std::string&, std::size_t,
                       std::size_t) override {
    return reply_;
  }

 private:
  std::string reply_;
};

// ---------------------------------------------------------------------------
// Lookup oracle

using GoldKey = std::pair<std::string, std::size_t>;  // (sentence_id, index)
using GoldMap = std::map<GoldKey, std::string>;

GoldMap gold_map_from(std::span<const LabeledSentence> sentences);

// Puts `certainty` on the gold tag's word and spreads the rest uniformly;
// prompts missing from the map get the uniform distribution.
class OracleScorer final : public Scorer {
 public:
  OracleScorer(GoldMap gold, Verbalizer verbalizer, double certainty = 1.0);

  std::string backend_name() const override { return "oracle"; }
  std::vector<MaskDistribution> score_batch(
      std::span<const PromptInstance> prompts,
      std::span<const std::string> candidates) const override;
  std::optional<int> vocabulary_probe(std::string_view) const override {
    return 1;
  }

  const GoldMap& gold() const { return gold_; }
  double certainty() const { return certainty_; }

 private:
  GoldMap gold_;
  Verbalizer verbalizer_;
  double certainty_;
};

std::unique_ptr<OracleScorer> lookup_oracle_scorer(GoldMap gold,
                                                   Verbalizer verbalizer,
                                                   double certainty);

// ---------------------------------------------------------------------------
// Tiny trainable reference scorer

struct TinyScorerOptions {
  std::size_t feature_dim = 1024;
  std::size_t context_window = 1;
  // Std-dev of the seeded Gaussian initialization; 0 gives zero weights.
  double init_scale = 0.01;
};

// Linear-softmax over hashed features of the prompt's target token and its
// neighbours. The target and sentence are recovered from the prompt text via
// the template, so identical prompts always get identical scores. One weight
// row per verbalizer word.
class TinyScorer final : public TrainableScorer {
 public:
  TinyScorer(PromptTemplate prompt_template, Verbalizer verbalizer,
             TinyScorerOptions options, std::uint64_t seed);

  std::string backend_name() const override { return "tiny"; }

  std::vector<MaskDistribution> score_batch(
      std::span<const PromptInstance> prompts,
      std::span<const std::string> candidates) const override;

  std::optional<int> vocabulary_probe(std::string_view word) const override;

  LossSum accumulate_gradient(std::span<const PromptInstance> prompts,
                              std::span<const std::string> gold_words,
                              std::span<const std::string> candidates) override;
  void apply_gradient(double learning_rate, double scale) override;
  void clear_gradient() override;

  // Summed loss of the batch; adds its gradient into `gradient` when that
  // span is non-empty (size must equal parameter_count()).
  LossSum loss_and_gradient(std::span<const PromptInstance> prompts,
                            std::span<const std::string> gold_words,
                            std::span<const std::string> candidates,
                            std::span<double> gradient) const;

  std::span<double> parameters() { return model_.parameters(); }
  std::span<const double> parameters() const { return model_.parameters(); }
  std::size_t parameter_count() const { return model_.parameters().size(); }

  const PromptTemplate& prompt_template() const { return template_; }
  const Verbalizer& verbalizer() const { return verbalizer_; }
  const TinyScorerOptions& options() const { return options_; }

  SparseFeatures features(const PromptInstance& prompt) const;

 private:
  std::vector<std::size_t> rows_for(
      std::span<const std::string> candidates) const;

  PromptTemplate template_;
  Verbalizer verbalizer_;
  TinyScorerOptions options_;
  LinearSoftmax model_;
  std::vector<double> accumulated_;
};

std::unique_ptr<TinyScorer> tiny_trainable_scorer(
    std::size_t feature_dim, const PromptTemplate& prompt_template,
    const Verbalizer& verbalizer, std::uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Vanilla token classifier (no prompt): the same feature stack with one
// softmax row per tag, read directly off the token sequence.

class TokenClassifier {
 public:
  virtual ~TokenClassifier() = default;
  virtual std::string backend_name() const = 0;
  virtual const TagSet& tagset() const = 0;

  // Probabilities over tagset() labels, canonical order.
  virtual std::vector<double> predict_proba(
      std::span<const std::string> tokens, std::size_t index) const = 0;

  struct Example {
    const std::vector<std::string>* tokens;
    std::size_t index;
    std::size_t gold;  // index into tagset()
  };

  virtual LossSum accumulate_gradient(std::span<const Example> batch) = 0;
  virtual void apply_gradient(double learning_rate, double scale) = 0;
  virtual void clear_gradient() = 0;
};

class TinyTokenClassifier final : public TokenClassifier {
 public:
  TinyTokenClassifier(TagSet tagset, TinyScorerOptions options,
                      std::uint64_t seed);

  std::string backend_name() const override { return "tiny"; }
  const TagSet& tagset() const override { return tagset_; }

  std::vector<double> predict_proba(std::span<const std::string> tokens,
                                    std::size_t index) const override;

  LossSum accumulate_gradient(std::span<const Example> batch) override;
  void apply_gradient(double learning_rate, double scale) override;
  void clear_gradient() override;

  LossSum loss_and_gradient(std::span<const Example> batch,
                            std::span<double> gradient) const;

  std::span<double> parameters() { return model_.parameters(); }
  std::span<const double> parameters() const { return model_.parameters(); }
  const TinyScorerOptions& options() const { return options_; }

 private:
  SparseFeatures features(std::span<const std::string> tokens,
                          std::size_t index) const;

  TagSet tagset_;
  TinyScorerOptions options_;
  LinearSoftmax model_;
  std::vector<std::size_t> all_rows_;
  std::vector<double> accumulated_;
};

// ---------------------------------------------------------------------------
// Out-of-process backends.
//
// Line-delimited JSON, one request line answered by one response line:
//   {"op":"info"}                               -> {"mask_token": "<mask>"}
//   {"op":"score","prompts":[..],"candidates":[..]}
//                                               -> {"log_probs": [[..],..]}
//   {"op":"probe","words":[..]}                 -> {"pieces": [..]}
//   {"op":"accumulate","prompts":[..],"targets":[..],"candidates":[..]}
//                                               -> {"loss": x, "clamped": n}
//   {"op":"apply","learning_rate":x,"scale":y}  -> {}
//   {"op":"generate","input":s,"max_target_length":n,"beam_width":k}
//                                               -> {"text": s}
// Any response may instead be {"error": "..."}.

class LineTransport {
 public:
  virtual ~LineTransport() = default;
  // Sends one line (no embedded newlines) and returns the reply line.
  virtual std::string exchange(const std::string& line) = 0;
  virtual std::string describe() const = 0;
};

// "exec:<shell command>" talks to a child process over stdin/stdout;
// "unix:<path>" connects to a Unix domain socket. Throws BackendUnavailable.
std::unique_ptr<LineTransport> open_transport(std::string_view endpoint);

// In-process transport for tests and embedding.
class CallbackTransport final : public LineTransport {
 public:
  explicit CallbackTransport(std::function<std::string(const std::string&)> fn)
      : fn_(std::move(fn)) {}
  std::string exchange(const std::string& line) override { return fn_(line); }
  std::string describe() const override { return "callback"; }

 private:
  std::function<std::string(const std::string&)> fn_;
};

// Scorer backed by an external masked LM. Calls are serialized on the
// transport, so concurrent use is safe but not parallel.
class ExternalScorer final : public TrainableScorer {
 public:
  // Performs the info handshake; throws MaskSymbolMissing when the backend
  // advertises no mask token.
  explicit ExternalScorer(std::unique_ptr<LineTransport> transport);
  ~ExternalScorer() override;

  std::string backend_name() const override;
  const std::string& mask_token() const { return mask_token_; }

  std::vector<MaskDistribution> score_batch(
      std::span<const PromptInstance> prompts,
      std::span<const std::string> candidates) const override;

  std::optional<int> vocabulary_probe(std::string_view word) const override;

  // Throws MultiPieceCandidate for the first word that is not one piece.
  void require_single_piece(std::span<const std::string> words) const;

  LossSum accumulate_gradient(std::span<const PromptInstance> prompts,
                              std::span<const std::string> gold_words,
                              std::span<const std::string> candidates) override;
  void apply_gradient(double learning_rate, double scale) override;
  void clear_gradient() override {}

 private:
  struct Channel;
  std::unique_ptr<Channel> channel_;
  std::string mask_token_;
};

std::unique_ptr<ExternalScorer> external_scorer_adapter(
    std::string_view endpoint);

class ExternalGenerator final : public Generator {
 public:
  explicit ExternalGenerator(std::unique_ptr<LineTransport> transport);
  ~ExternalGenerator() override;

  std::string backend_name() const override;
  std::string generate(const std::string& input, std::size_t max_target_length,
                       std::size_t beam_width) override;

 private:
  std::unique_ptr<LineTransport> transport_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradientCheckReport {
  std::size_t coordinates = 0;
  std::size_t worst_coordinate = 0;
  double worst_relative_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, kGradientCheckFloor); the floor
// keeps coordinates whose true gradient is ~0 from dividing noise by noise.
inline constexpr double kGradientCheckFloor = 1e-3;

// Compares `analytic` with central differences of `loss` around the current
// `parameters` (restored afterwards). Throws GradientMismatch carrying the
// worst coordinate when its relative error exceeds `tolerance`.
GradientCheckReport finite_difference_gradient_check(
    std::span<double> parameters, const std::function<double()>& loss,
    std::span<const double> analytic, double epsilon, double tolerance);

GradientCheckReport finite_difference_gradient_check(
    TinyScorer& scorer, std::span<const PromptInstance> prompts,
    std::span<const std::string> gold_words,
    std::span<const std::string> candidates, double epsilon,
    double tolerance);

}  // namespace topro
