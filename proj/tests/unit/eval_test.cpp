#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <sstream>

#include "f1_oracle.hpp"
#include "synthetic.hpp"
#include "topro/errors.hpp"
#include "topro/eval.hpp"

namespace topro {
namespace {

std::vector<std::string> upper(const std::string& lower_tags) {
  std::istringstream in(lower_tags);
  std::vector<std::string> out;
  for (std::string t; in >> t;) {
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    out.push_back(t);
  }
  return out;
}

TEST(WeightedF1, SmallExample) {
  const TagSet tags("ab", {"A", "B"}, TagScheme::kPlain);
  const std::vector<std::string> gold{"A", "A", "B", "B"};
  const std::vector<std::string> pred{"A", "B", "B", "B"};
  EXPECT_NEAR(weighted_f1(gold, pred, tags), 0.7333333333333334, 1e-12);
  const auto scores = per_class_scores(gold, pred, tags);
  EXPECT_EQ(scores[0].support, 2u);
  EXPECT_EQ(scores[1].predicted, 3u);
  EXPECT_NEAR(scores[1].precision, 2.0 / 3.0, 1e-12);
}

TEST(WeightedF1, EdgeCases) {
  const TagSet& t = panx_tagset();
  const std::vector<std::string> none;
  EXPECT_EQ(weighted_f1(none, none, t), 0.0);
  const std::vector<std::string> all_o(5, "O");
  EXPECT_EQ(weighted_f1(all_o, all_o, t), 1.0);
  const std::vector<std::string> all_per(5, "B-PER");
  EXPECT_EQ(weighted_f1(all_o, all_per, t), 0.0);
  const std::vector<std::string> short_pred(4, "O");
  EXPECT_THROW(weighted_f1(all_o, short_pred, t), LengthMismatch);
  const std::vector<std::string> bad{"O", "O", "O", "O", "MISC"};
  EXPECT_THROW(weighted_f1(all_o, bad, t), UnknownTag);
}

TEST(WeightedF1, ExcludingFallbackDropsTheClass) {
  const TagSet& t = panx_tagset();
  const std::vector<std::string> gold{"O", "O", "B-PER", "B-LOC"};
  const std::vector<std::string> pred{"B-PER", "O", "B-PER", "O"};
  EXPECT_NEAR(weighted_f1(gold, pred, t, {.exclude_fallback = true}),
              0.5 * (2.0 / 3.0) + 0.5 * 0.0, 1e-12);
  EXPECT_NEAR(weighted_f1(gold, pred, t), testing::brute_force_weighted_f1(gold, pred), 1e-12);
}

TEST(WeightedF1, AgreesWithBruteForceOracle) {
  Rng rng(2024);
  for (Task task : {Task::kPanx, Task::kUdpos}) {
    const auto& labels = tagset_for(task).labels();
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t n = rng.uniform_index(40);
      // Restricting to a few labels exercises empty and absent classes.
      const std::size_t used = 1 + rng.uniform_index(labels.size());
      std::vector<std::string> gold(n), pred(n);
      for (std::size_t i = 0; i < n; ++i) {
        gold[i] = labels[rng.uniform_index(used)];
        pred[i] = rng.uniform01() < 0.6 ? gold[i] : labels[rng.uniform_index(labels.size())];
      }
      EXPECT_NEAR(weighted_f1(gold, pred, tagset_for(task)),
                  testing::brute_force_weighted_f1(gold, pred), 1e-9);
    }
  }
}

TEST(SentenceF1, ErrorAnalysisCases) {
  const TagSet& t = udpos_tagset();
  // zh
  const auto zh_gold = upper(
      "propn noun verb verb propn propn verb part adj adv num noun part propn part noun part punct");
  EXPECT_NEAR(sentence_f1(zh_gold, upper("propn punct punct punct punct propn punct punct punct "
                                         "punct num num punct noun noun punct punct punct"), t),
              0.193732, 1e-6);
  EXPECT_NEAR(sentence_f1(zh_gold, upper("propn propn aux verb propn propn propn propn adj adv "
                                         "num noun adp noun noun propn noun punct"), t),
              0.474387, 1e-6);
  // de
  const auto de_gold = upper("punct pron verb pron punct sconj pron pron adp noun part verb verb "
                             "punct punct verb pron adp det adj noun punct");
  EXPECT_DOUBLE_EQ(sentence_f1(de_gold, de_gold, t), 1.0);
  auto de_topro = de_gold;
  de_topro[8] = "PART";
  EXPECT_NEAR(sentence_f1(de_gold, de_topro, t), 0.954545, 1e-6);
  // nl
  const auto nl_gold = upper("punct pron verb det noun adj adp noun punct punct verb propn adp "
                             "det noun adp det adj noun punct");
  auto nl_pred = nl_gold;
  nl_pred[5] = "VERB";
  EXPECT_NEAR(sentence_f1(nl_gold, nl_pred, t), 0.946667, 1e-6);
}

TEST(CorpusF1, OraclePredictionsScoreOne) {
  const auto sentences =
      testing::multilingual_corpus(5, 60, {"en", "de", "zh"}, panx_tagset());
  std::vector<PredictionRecord> records;
  for (const auto& s : sentences) {
    records.push_back({s.sentence_id, s.language, s.tokens, s.tags, *s.tags, std::nullopt});
  }
  EXPECT_EQ(corpus_f1(records, panx_tagset()), 1.0);
  for (const auto& [language, f1] : per_language_f1(records, panx_tagset())) {
    EXPECT_EQ(f1, 1.0) << language;
  }
  records[0].gold_tags.reset();
  EXPECT_THROW(corpus_f1(records, panx_tagset()), MissingTags);
}

TEST(Aggregate, ExcludesThePivot) {
  const auto report = aggregate_languages({{"en", 0.9}, {"de", 0.8}, {"zh", 0.6}}, "en",
                                          "panx", "topro");
  EXPECT_NEAR(report.average_excluding_pivot, 0.7, 1e-12);
  EXPECT_TRUE(report.pivot_present);
  EXPECT_THROW(aggregate_languages({{"en", 0.9}}, "en", "panx", "topro"), NoTargetLanguages);
  const auto no_pivot = aggregate_languages({{"de", 0.8}, {"zh", 0.6}}, "en", "panx", "topro");
  EXPECT_FALSE(no_pivot.pivot_present);
  EXPECT_NEAR(no_pivot.average_excluding_pivot, 0.7, 1e-12);
}

TEST(Aggregate, ReproducesTheIclBaselineAverages) {
  const std::map<std::string, std::pair<double, double>> table = {
      {"en", {14.81, 17.48}},
      {"af", {9.71, 15.97}},
      {"ar", {20.63, 19.37}},
      {"az", {10.00, 17.25}},
      {"bg", {11.66, 20.23}},
      {"bn", {23.27, 26.68}},
      {"de", {10.96, 15.32}},
      {"el", {8.70, 14.11}},
      {"es", {17.20, 20.70}},
      {"et", {12.16, 18.12}},
      {"eu", {11.26, 17.86}},
      {"fa", {19.51, 20.08}},
      {"fi", {11.77, 19.19}},
      {"fr", {20.55, 20.11}},
      {"gu", {6.09, 13.33}},
      {"he", {10.01, 16.85}},
      {"hi", {17.98, 23.10}},
      {"hu", {11.57, 17.57}},
      {"id", {16.85, 21.13}},
      {"it", {16.50, 17.74}},
      {"ja", {7.58, 4.79}},
      {"jv", {13.66, 18.11}},
      {"ka", {8.11, 18.23}},
      {"kk", {9.95, 18.90}},
      {"ko", {11.32, 19.10}},
      {"lt", {13.48, 17.81}},
      {"ml", {13.37, 22.53}},
      {"mr", {14.53, 19.92}},
      {"ms", {22.08, 19.10}},
      {"my", {3.37, 18.59}},
      {"nl", {14.80, 17.70}},
      {"pa", {12.74, 17.14}},
      {"pl", {14.04, 17.89}},
      {"pt", {19.35, 20.46}},
      {"qu", {16.50, 17.49}},
      {"ro", {21.19, 20.18}},
      {"ru", {12.48, 18.36}},
      {"sw", {17.02, 23.72}},
      {"ta", {13.06, 19.52}},
      {"te", {11.82, 17.15}},
      {"th", {7.65, 0.57}},
      {"tl", {25.10, 22.20}},
      {"tr", {13.62, 19.53}},
      {"uk", {11.74, 19.69}},
      {"ur", {18.63, 22.24}},
      {"vi", {16.86, 17.05}},
      {"yo", {19.73, 22.21}},
      {"zh", {6.86, 5.25}},
  };
  ASSERT_EQ(table.size(), 48u);
  std::map<std::string, double> bloomz, mt0;
  for (const auto& [language, scores] : table) {
    bloomz[language] = scores.first;
    mt0[language] = scores.second;
  }
  const auto a = aggregate_languages(bloomz, "en", "panx", "icl");
  const auto b = aggregate_languages(mt0, "en", "panx", "icl");
  EXPECT_NEAR(a.average_excluding_pivot, 13.98, 0.005);
  EXPECT_NEAR(b.average_excluding_pivot, 18.09, 0.005);
}

TEST(DeltaTable, OverviewGaps) {
  const std::map<std::string, double> topro{{"mbert-panx", 0.8191}, {"mt5-panx", 0.9282}};
  const std::map<std::string, double> vanilla{{"mbert-panx", 0.6273}, {"mt5-panx", 0.6419}};
  const auto d = delta_table(topro, vanilla);
  EXPECT_NEAR(d.at("mbert-panx"), 19.18, 1e-9);
  EXPECT_NEAR(d.at("mt5-panx"), 28.63, 1e-9);
  const auto pt = delta_table(std::map<std::string, double>{{"mbert-panx", 0.8191}},
                              std::map<std::string, double>{{"mbert-panx", 0.5676}});
  EXPECT_NEAR(pt.at("mbert-panx"), 25.15, 1e-9);
}

TEST(DeltaTable, AntisymmetricAndChecksLanguages) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, double> a, b;
    for (const char* language : {"de", "en", "ja", "zh"}) {
      a[language] = rng.uniform01();
      b[language] = rng.uniform01();
    }
    const auto ab = delta_table(a, b);
    const auto ba = delta_table(b, a);
    for (const auto& [language, value] : ab) EXPECT_DOUBLE_EQ(value, -ba.at(language));
  }
  EXPECT_THROW(delta_table(std::map<std::string, double>{{"de", 0.1}},
                           std::map<std::string, double>{{"fr", 0.1}}),
               LanguageSetMismatch);
}

TEST(DeltaTable, ReportsAddAnAverageRow) {
  const auto a = aggregate_languages({{"en", 0.9}, {"de", 0.8}, {"zh", 0.6}}, "en", "panx", "topro");
  const auto b = aggregate_languages({{"en", 0.9}, {"de", 0.5}, {"zh", 0.5}}, "en", "panx", "vanilla");
  const auto d = delta_table(a, b);
  EXPECT_NEAR(d.at("avg"), 20.0, 1e-9);
  EXPECT_NEAR(d.at("en"), 0.0, 1e-12);
  const std::string tsv = render_delta_tsv({{"topro-vanilla", d}});
  EXPECT_EQ(tsv, "language\ttopro-vanilla\nde\t30.00\nen\t0.00\nzh\t10.00\navg\t20.00\n");
}

TEST(ErrorCases, RankedByGapAndClampedToK) {
  const TagSet& t = udpos_tagset();
  std::vector<LabeledSentence> corpus;
  std::vector<PredictionRecord> a, b;
  const std::vector<std::vector<std::string>> gold = {
      {"NOUN", "VERB"}, {"NOUN", "VERB", "ADJ"}, {"DET", "NOUN"}};
  const std::vector<std::vector<std::string>> pred_a = {
      {"NOUN", "VERB"}, {"NOUN", "VERB", "ADJ"}, {"DET", "NOUN"}};
  const std::vector<std::vector<std::string>> pred_b = {
      {"NOUN", "NOUN"}, {"X", "X", "X"}, {"DET", "NOUN"}};
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::string id = "de-" + std::to_string(i);
    std::vector<std::string> tokens(gold[i].size(), "w");
    corpus.push_back({id, "de", tokens, gold[i]});
    a.push_back({id, "de", tokens, gold[i], pred_a[i], std::nullopt});
    b.push_back({id, "de", tokens, gold[i], pred_b[i], std::nullopt});
  }
  const auto cases = export_error_cases(a, b, corpus, 2, t);
  ASSERT_EQ(cases.size(), 2u);
  EXPECT_EQ(cases[0].sentence_id, "de-1");
  EXPECT_EQ(cases[1].sentence_id, "de-0");
  EXPECT_DOUBLE_EQ(cases[0].gap(), 1.0);
  EXPECT_EQ(export_error_cases(a, b, corpus, 10, t).size(), 3u);
  const std::string text = render_error_cases(cases, "ToPro", "Vanilla");
  EXPECT_NE(text.find("(1.00 F1)"), std::string::npos);
  EXPECT_NE(text.find("(0.00 F1)"), std::string::npos);
  const auto j = error_cases_json(cases, "topro", "vanilla");
  EXPECT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["vanilla"]["tags"][0], "X");
}

TEST(MetricsJson, CarriesFallbackFlagAndAverage) {
  MetricsDocument doc{aggregate_languages({{"en", 1.0}, {"de", 0.5}}, "en", "panx", "topro"),
                      "tiny", {42}, {}};
  const auto j = metrics_json(doc);
  EXPECT_EQ(j["avg_excluding_pivot"], 0.5);
  EXPECT_EQ(j["f1_includes_fallback"], true);
  EXPECT_EQ(j["pivot"], "en");
}

}  // namespace
}  // namespace topro
