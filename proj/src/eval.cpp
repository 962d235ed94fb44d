#include "topro/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "topro/errors.hpp"

namespace topro {

std::vector<ClassScore> per_class_scores(std::span<const std::string> gold,
                                         std::span<const std::string> predicted,
                                         const TagSet& tagset) {
  if (gold.size() != predicted.size()) {
    throw LengthMismatch(gold.size(), predicted.size());
  }
  std::vector<ClassScore> scores(tagset.size());
  for (std::size_t c = 0; c < tagset.size(); ++c) {
    scores[c].label = tagset.label(c);
  }
  auto index = [&tagset](const std::string& tag) {
    auto i = tagset.index_of(tag);
    if (!i) throw UnknownTag(0, tag);
    return *i;
  };
  for (std::size_t t = 0; t < gold.size(); ++t) {
    const std::size_t g = index(gold[t]);
    const std::size_t p = index(predicted[t]);
    ++scores[g].support;
    ++scores[p].predicted;
    if (g == p) ++scores[g].true_positive;
  }
  for (auto& s : scores) {
    if (s.predicted > 0) {
      s.precision = static_cast<double>(s.true_positive) /
                    static_cast<double>(s.predicted);
    }
    if (s.support > 0) {
      s.recall = static_cast<double>(s.true_positive) /
                 static_cast<double>(s.support);
    }
    if (s.precision + s.recall > 0.0) {
      s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    }
  }
  return scores;
}

double weighted_f1(std::span<const std::string> gold,
                   std::span<const std::string> predicted, const TagSet& tagset,
                   const F1Options& options) {
  const auto scores = per_class_scores(gold, predicted, tagset);
  std::size_t total = 0;
  for (const auto& s : scores) {
    if (options.exclude_fallback && s.label == tagset.fallback()) continue;
    total += s.support;
  }
  if (total == 0) return 0.0;
  double sum = 0.0;
  for (const auto& s : scores) {
    if (options.exclude_fallback && s.label == tagset.fallback()) continue;
    sum += static_cast<double>(s.support) * s.f1;
  }
  // Dividing once keeps a perfect prediction at exactly 1.0.
  return sum / static_cast<double>(total);
}

double sentence_f1(std::span<const std::string> gold,
                   std::span<const std::string> predicted,
                   const TagSet& tagset) {
  return weighted_f1(gold, predicted, tagset);
}

namespace {

void concatenate(const PredictionRecord& record, std::vector<std::string>& gold,
                 std::vector<std::string>& predicted) {
  if (!record.gold_tags) throw MissingTags(record.sentence_id);
  if (record.gold_tags->size() != record.predicted_tags.size()) {
    throw LengthMismatch(record.gold_tags->size(),
                         record.predicted_tags.size());
  }
  gold.insert(gold.end(), record.gold_tags->begin(), record.gold_tags->end());
  predicted.insert(predicted.end(), record.predicted_tags.begin(),
                   record.predicted_tags.end());
}

}  // namespace

double corpus_f1(std::span<const PredictionRecord> records,
                 const TagSet& tagset, const F1Options& options) {
  std::vector<std::string> gold;
  std::vector<std::string> predicted;
  for (const auto& record : records) concatenate(record, gold, predicted);
  return weighted_f1(gold, predicted, tagset, options);
}

std::map<std::string, double> per_language_f1(
    std::span<const PredictionRecord> records, const TagSet& tagset,
    const F1Options& options) {
  std::map<std::string, std::pair<std::vector<std::string>,
                                  std::vector<std::string>>>
      by_language;
  for (const auto& record : records) {
    auto& [gold, predicted] = by_language[record.language];
    concatenate(record, gold, predicted);
  }
  std::map<std::string, double> out;
  for (const auto& [language, pair] : by_language) {
    out[language] = weighted_f1(pair.first, pair.second, tagset, options);
  }
  return out;
}

EvalReport aggregate_languages(std::map<std::string, double> per_language,
                               const std::string& pivot, std::string task,
                               std::string method) {
  EvalReport report;
  report.task = std::move(task);
  report.method = std::move(method);
  report.pivot = pivot;
  report.pivot_present = per_language.count(pivot) > 0;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [language, f1] : per_language) {
    if (language == pivot) continue;
    sum += f1;
    ++n;
  }
  if (n == 0) throw NoTargetLanguages(pivot);
  report.average_excluding_pivot = sum / static_cast<double>(n);
  report.per_language = std::move(per_language);
  return report;
}

std::map<std::string, double> delta_table(
    const std::map<std::string, double>& a,
    const std::map<std::string, double>& b) {
  std::map<std::string, double> out;
  for (const auto& [language, value] : a) {
    auto other = b.find(language);
    if (other == b.end()) {
      throw LanguageSetMismatch("'" + language + "' missing from the second report");
    }
    out[language] = (value - other->second) * 100.0;
  }
  for (const auto& [language, value] : b) {
    if (!a.count(language)) {
      throw LanguageSetMismatch("'" + language + "' missing from the first report");
    }
  }
  return out;
}

std::map<std::string, double> delta_table(const EvalReport& a,
                                          const EvalReport& b) {
  auto out = delta_table(a.per_language, b.per_language);
  out["avg"] = (a.average_excluding_pivot - b.average_excluding_pivot) * 100.0;
  return out;
}

std::vector<ErrorCase> export_error_cases(
    std::span<const PredictionRecord> predictions_a,
    std::span<const PredictionRecord> predictions_b,
    std::span<const LabeledSentence> corpus, std::size_t k,
    const TagSet& tagset) {
  std::map<std::string, const PredictionRecord*> by_id_a;
  std::map<std::string, const PredictionRecord*> by_id_b;
  for (const auto& r : predictions_a) by_id_a[r.sentence_id] = &r;
  for (const auto& r : predictions_b) by_id_b[r.sentence_id] = &r;

  std::vector<ErrorCase> cases;
  for (const auto& sentence : corpus) {
    if (!sentence.tags) continue;
    auto a = by_id_a.find(sentence.sentence_id);
    auto b = by_id_b.find(sentence.sentence_id);
    if (a == by_id_a.end() || b == by_id_b.end()) continue;
    ErrorCase c;
    c.sentence_id = sentence.sentence_id;
    c.language = sentence.language;
    c.tokens = sentence.tokens;
    c.gold = *sentence.tags;
    c.predicted_a = a->second->predicted_tags;
    c.predicted_b = b->second->predicted_tags;
    c.f1_a = sentence_f1(c.gold, c.predicted_a, tagset);
    c.f1_b = sentence_f1(c.gold, c.predicted_b, tagset);
    cases.push_back(std::move(c));
  }
  std::stable_sort(cases.begin(), cases.end(),
                   [](const ErrorCase& x, const ErrorCase& y) {
                     return std::abs(x.gap()) > std::abs(y.gap());
                   });
  if (cases.size() > k) cases.resize(k);
  return cases;
}

nlohmann::json error_cases_json(std::span<const ErrorCase> cases,
                                const std::string& label_a,
                                const std::string& label_b) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cases) {
    out.push_back({{"sentence_id", c.sentence_id},
                   {"language", c.language},
                   {"tokens", c.tokens},
                   {"gold", c.gold},
                   {label_a, {{"tags", c.predicted_a}, {"f1", c.f1_a}}},
                   {label_b, {{"tags", c.predicted_b}, {"f1", c.f1_b}}},
                   {"gap", c.gap()}});
  }
  return out;
}

namespace {

std::string two_decimals(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  // Avoid "-0.00" in tables.
  if (std::string(buf) == "-0.00") return "0.00";
  return buf;
}

}  // namespace

std::string render_error_cases(std::span<const ErrorCase> cases,
                               const std::string& label_a,
                               const std::string& label_b) {
  std::ostringstream out;
  const std::size_t label_width =
      std::max({std::string("True").size(), label_a.size(), label_b.size()});
  auto pad = [](const std::string& s, std::size_t width) {
    return s + std::string(width > s.size() ? width - s.size() : 0, ' ');
  };
  for (const auto& c : cases) {
    out << c.sentence_id << " (" << c.language << ")\n";
    std::vector<std::size_t> widths(c.tokens.size());
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
      widths[i] = std::max({c.tokens[i].size(), c.gold[i].size(),
                            c.predicted_a[i].size(), c.predicted_b[i].size()});
    }
    auto row = [&](const std::string& label,
                   const std::vector<std::string>& cells,
                   const std::string& suffix) {
      std::string line = pad(label, label_width);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        line += "  " + pad(cells[i], widths[i]);
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out << line << suffix << '\n';
    };
    row("", c.tokens, "");
    row("True", c.gold, "");
    row(label_a, c.predicted_a, "  (" + two_decimals(c.f1_a) + " F1)");
    row(label_b, c.predicted_b, "  (" + two_decimals(c.f1_b) + " F1)");
    out << '\n';
  }
  return out.str();
}

nlohmann::json metrics_json(const MetricsDocument& document) {
  const EvalReport& r = document.report;
  nlohmann::json out = {
      {"task", r.task},
      {"method", r.method},
      {"backend", document.backend},
      {"seeds", document.seeds},
      {"per_language", r.per_language},
      {"pivot", r.pivot},
      {"pivot_present", r.pivot_present},
      {"avg_excluding_pivot", r.average_excluding_pivot},
      {"f1_includes_fallback", r.f1_includes_fallback},
  };
  if (r.seed_stddev) out["seed_stddev"] = *r.seed_stddev;
  if (!document.deltas.empty()) out["deltas"] = document.deltas;
  return out;
}

std::string render_delta_tsv(
    const std::map<std::string, std::map<std::string, double>>& deltas) {
  std::set<std::string> languages;
  for (const auto& [pair, table] : deltas) {
    for (const auto& [language, value] : table) languages.insert(language);
  }
  // "avg" goes last.
  std::vector<std::string> rows;
  for (const auto& language : languages) {
    if (language != "avg") rows.push_back(language);
  }
  if (languages.count("avg")) rows.push_back("avg");

  std::ostringstream out;
  out << "language";
  for (const auto& [pair, table] : deltas) out << '\t' << pair;
  out << '\n';
  for (const auto& language : rows) {
    out << language;
    for (const auto& [pair, table] : deltas) {
      auto it = table.find(language);
      out << '\t' << (it == table.end() ? "-" : two_decimals(it->second));
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace topro
