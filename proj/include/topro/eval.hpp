#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topro/corpus.hpp"
#include "topro/decode.hpp"

namespace topro {

struct ClassScore {
  std::string label;
  std::size_t support = 0;     // gold occurrences
  std::size_t predicted = 0;   // predicted occurrences
  std::size_t true_positive = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct F1Options {
  // Drop the catch-all class ("O"/"X") from both the weights and the sum.
  bool exclude_fallback = false;
};

// Per-class counts in canonical tag order. Throws LengthMismatch, or
// UnknownTag (line 0) for tags outside `tagset`.
std::vector<ClassScore> per_class_scores(std::span<const std::string> gold,
                                         std::span<const std::string> predicted,
                                         const TagSet& tagset);

// Sum over classes of (support_c / N) * F1_c, token level. Returns 0 when no
// class has support.
double weighted_f1(std::span<const std::string> gold,
                   std::span<const std::string> predicted, const TagSet& tagset,
                   const F1Options& options = {});

double sentence_f1(std::span<const std::string> gold,
                   std::span<const std::string> predicted,
                   const TagSet& tagset);

// Weighted F1 over the concatenated tokens of `records` (all must carry gold).
double corpus_f1(std::span<const PredictionRecord> records,
                 const TagSet& tagset, const F1Options& options = {});

// Corpus F1 per language code.
std::map<std::string, double> per_language_f1(
    std::span<const PredictionRecord> records, const TagSet& tagset,
    const F1Options& options = {});

struct EvalReport {
  std::string task;
  std::string method;
  std::map<std::string, double> per_language;
  std::string pivot;
  // False when the pivot was not evaluated; the mean then covers every
  // language.
  bool pivot_present = true;
  double average_excluding_pivot = 0.0;
  std::optional<std::map<std::string, double>> seed_stddev;
  bool f1_includes_fallback = true;
};

// Throws NoTargetLanguages when the pivot is the only language (or the map
// is empty).
EvalReport aggregate_languages(std::map<std::string, double> per_language,
                               const std::string& pivot,
                               std::string task = "",
                               std::string method = "");

// (a - b) * 100 per key. Throws LanguageSetMismatch unless both maps have
// the same keys.
std::map<std::string, double> delta_table(const std::map<std::string, double>& a,
                                          const std::map<std::string, double>& b);

// Per-language deltas plus an "avg" row for the pivot-excluding means.
std::map<std::string, double> delta_table(const EvalReport& a,
                                          const EvalReport& b);

struct ErrorCase {
  std::string sentence_id;
  std::string language;
  std::vector<std::string> tokens;
  std::vector<std::string> gold;
  std::vector<std::string> predicted_a;
  std::vector<std::string> predicted_b;
  double f1_a = 0.0;
  double f1_b = 0.0;
  double gap() const { return f1_a - f1_b; }
};

// The k sentences with the largest |f1_a - f1_b|; ties keep corpus order.
// Sentences are matched by id; ids missing from either side are skipped.
std::vector<ErrorCase> export_error_cases(
    std::span<const PredictionRecord> predictions_a,
    std::span<const PredictionRecord> predictions_b,
    std::span<const LabeledSentence> corpus, std::size_t k,
    const TagSet& tagset);

nlohmann::json error_cases_json(std::span<const ErrorCase> cases,
                                const std::string& label_a,
                                const std::string& label_b);

// Aligned rows "True", label_a, label_b with per-sentence F1 in brackets.
std::string render_error_cases(std::span<const ErrorCase> cases,
                               const std::string& label_a,
                               const std::string& label_b);

struct MetricsDocument {
  EvalReport report;
  std::string backend;
  std::vector<long long> seeds;
  // Method-pair label ("topro-vanilla") -> delta table.
  std::map<std::string, std::map<std::string, double>> deltas;
};

nlohmann::json metrics_json(const MetricsDocument& document);

// Language rows, one column per method pair, values to 2 decimals.
std::string render_delta_tsv(
    const std::map<std::string, std::map<std::string, double>>& deltas);

}  // namespace topro
