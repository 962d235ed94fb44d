#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "synthetic.hpp"
#include "topro/errors.hpp"
#include "topro/scoring.hpp"
#include "topro/train.hpp"

namespace topro {
namespace {

const std::string kFake = FAKE_BACKEND_PATH;

std::vector<PromptInstance> prompts_for(const std::vector<LabeledSentence>& sentences,
                                        const PromptTemplate& tmpl) {
  std::vector<PromptInstance> out;
  for (const auto& s : sentences) {
    auto p = decompose(tmpl, s);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

TEST(Softmax, KnownValues) {
  const std::vector<double> scores{-1.0, -2.0};
  const auto d = softmax_distribution({"a", "b"}, scores);
  EXPECT_NEAR(d.probabilities[0], 0.73105858, 1e-8);
  EXPECT_NEAR(d.probabilities[1], 0.26894142, 1e-8);
  EXPECT_NEAR(d.probability("b"), 0.26894142, 1e-8);
  EXPECT_THROW(d.probability("c"), UnknownCandidate);
}

TEST(Softmax, LargeScoresStayFinite) {
  const std::vector<double> scores{1000.0, 999.0, -1000.0};
  const auto d = softmax_distribution({"a", "b", "c"}, scores);
  EXPECT_NEAR(d.sum(), 1.0, 1e-12);
  for (double p : d.probabilities) EXPECT_TRUE(std::isfinite(p));
}

TEST(OracleScorer, PutsCertaintyOnGold) {
  const Pvp pvp = builtin_pvp(Task::kPanx);
  const LabeledSentence s{"en-0", "en", {"Paris", "is"},
                          std::vector<std::string>{"B-LOC", "O"}};
  OracleScorer oracle(gold_map_from(std::span(&s, 1)), pvp.verbalizer, 0.7);
  const auto words = pvp.verbalizer.words();
  const auto prompts = decompose(pvp.prompt_template, s);
  const auto d = oracle.score_batch(prompts, words);
  EXPECT_NEAR(d[0].probability("location"), 0.7, 1e-12);
  EXPECT_NEAR(d[0].probability("other"), 0.05, 1e-12);
  EXPECT_NEAR(d[1].probability("other"), 0.7, 1e-12);
  for (const auto& dist : d) EXPECT_NEAR(dist.sum(), 1.0, 1e-12);
  // Unknown prompts get the uniform distribution.
  PromptInstance stranger{"zz", 0, "x", std::nullopt};
  EXPECT_NEAR(oracle.score_mask(stranger, words).probability("name"), 1.0 / 7.0, 1e-12);
}

TEST(OracleScorer, DistributionsSumToOneInAnyCandidateOrder) {
  const Pvp pvp = builtin_pvp(Task::kUdpos);
  Rng rng(3);
  const auto sentences = testing::random_sentences(rng, 20, 1, 10, udpos_tagset(), "en");
  OracleScorer oracle(gold_map_from(sentences), pvp.verbalizer, 0.9);
  const auto prompts = prompts_for(sentences, pvp.prompt_template);
  auto words = pvp.verbalizer.words();
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(words);
    const auto d = oracle.score_batch(prompts, words);
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_NEAR(d[i].sum(), 1.0, 1e-9);
      EXPECT_NEAR(d[i].probability(pvp.verbalizer.word_for(*prompts[i].gold_tag)), 0.9, 1e-12);
    }
  }
}

TEST(OracleScorer, GoldWordOutsideCandidatesIsAnError) {
  const Pvp pvp = builtin_pvp(Task::kPanx);
  const LabeledSentence s{"en-0", "en", {"Paris"}, std::vector<std::string>{"B-LOC"}};
  OracleScorer oracle(gold_map_from(std::span(&s, 1)), pvp.verbalizer, 0.9);
  const std::vector<std::string> words{"person", "other"};
  EXPECT_THROW(oracle.score_batch(decompose(pvp.prompt_template, s), words), UnknownCandidate);
}

TEST(TinyScorer, CandidateOrderDoesNotChangeProbabilities) {
  const Pvp pvp = builtin_pvp(Task::kPanx);
  TinyScorer scorer(pvp.prompt_template, pvp.verbalizer, {.feature_dim = 64, .init_scale = 0.5}, 9);
  const LabeledSentence s{"a", "en", {"Anna", "lives", "in", "Rome"}, std::nullopt};
  auto words = pvp.verbalizer.words();
  const auto forward = scorer.score_mask(render_prompt(pvp.prompt_template, s, 3), words);
  std::reverse(words.begin(), words.end());
  const auto backward = scorer.score_mask(render_prompt(pvp.prompt_template, s, 3), words);
  for (const auto& w : words) {
    EXPECT_NEAR(forward.probability(w), backward.probability(w), 1e-12);
  }
}

TEST(TinyScorer, SameSeedSameWeights) {
  const Pvp pvp = builtin_pvp(Task::kPanx);
  TinyScorer a(pvp.prompt_template, pvp.verbalizer, {}, 42);
  TinyScorer b(pvp.prompt_template, pvp.verbalizer, {}, 42);
  TinyScorer c(pvp.prompt_template, pvp.verbalizer, {}, 43);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
  EXPECT_EQ(a.parameter_count(), 7u * 1024u);
}

TEST(TinyScorer, IdenticalPromptsScoreIdentically) {
  const Pvp pvp = builtin_pvp(Task::kUdpos);
  TinyScorer scorer(pvp.prompt_template, pvp.verbalizer, {.init_scale = 1.0}, 1);
  const LabeledSentence s{"a", "en", {"zu", "Teilnahme", "zu"}, std::nullopt};
  const auto prompts = decompose(pvp.prompt_template, s);
  const auto d = scorer.score_batch(prompts, pvp.verbalizer.words());
  EXPECT_EQ(d[0].probabilities, d[2].probabilities);
}

TEST(GradientCheck, TinyScorerAnalyticGradientMatches) {
  for (Task task : {Task::kPanx, Task::kUdpos}) {
    const Pvp pvp = builtin_pvp(task);
    TinyScorer scorer(pvp.prompt_template, pvp.verbalizer,
                      {.feature_dim = 32, .context_window = 1, .init_scale = 0.3}, 5);
    Rng rng(17);
    const auto sentences = testing::random_sentences(rng, 4, 1, 6, tagset_for(task), "en");
    const auto prompts = prompts_for(sentences, pvp.prompt_template);
    const auto gold = gold_words(prompts, pvp.verbalizer);
    const auto report = finite_difference_gradient_check(
        scorer, prompts, gold, pvp.verbalizer.words(), 1e-5, 1e-4);
    EXPECT_EQ(report.coordinates, scorer.parameter_count());
    EXPECT_LE(report.worst_relative_error, 1e-4);
  }
}

TEST(GradientCheck, DetectsAWrongGradient) {
  std::vector<double> theta{0.3, -0.7};
  auto loss = [&] { return theta[0] * theta[0] + 3.0 * theta[1]; };
  const std::vector<double> right{0.6, 3.0};
  EXPECT_NO_THROW(finite_difference_gradient_check(theta, loss, right, 1e-6, 1e-6));
  const std::vector<double> wrong{0.6, 2.0};
  EXPECT_THROW(finite_difference_gradient_check(theta, loss, wrong, 1e-6, 1e-6),
               GradientMismatch);
  EXPECT_DOUBLE_EQ(theta[0], 0.3);
  EXPECT_DOUBLE_EQ(theta[1], -0.7);
}

TEST(TinyTokenClassifier, ProbabilitiesCoverTheTagSet) {
  TinyTokenClassifier classifier(panx_tagset(), {.init_scale = 1.0}, 3);
  const std::vector<std::string> tokens{"Anna", "lives"};
  const auto p = classifier.predict_proba(tokens, 1);
  ASSERT_EQ(p.size(), 7u);
  double sum = 0.0;
  for (double v : p) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(TinyTokenClassifier, GradientMatchesFiniteDifferences) {
  TinyTokenClassifier classifier(panx_tagset(), {.feature_dim = 16, .init_scale = 0.3}, 3);
  const std::vector<std::string> tokens{"Anna", "lives", "in", "Rome"};
  const std::vector<TokenClassifier::Example> batch{
      {&tokens, 0, 2}, {&tokens, 3, 0}, {&tokens, 1, 6}};
  std::vector<double> analytic(classifier.parameters().size(), 0.0);
  classifier.loss_and_gradient(batch, analytic);
  const auto report = finite_difference_gradient_check(
      classifier.parameters(),
      [&] { return classifier.loss_and_gradient(batch, {}).loss; }, analytic, 1e-5,
      1e-4);
  EXPECT_LE(report.worst_relative_error, 1e-4);
}

// External adapter

std::string reply_for(const std::string& line) {
  const auto request = nlohmann::json::parse(line);
  const std::string op = request.value("op", "");
  if (op == "info") return R"({"mask_token":"<mask>"})";
  if (op == "score") {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : request["prompts"]) {
      EXPECT_EQ(p.get<std::string>().find("[MASK]"), std::string::npos);
      std::vector<double> row;
      for (std::size_t j = 0; j < request["candidates"].size(); ++j) {
        row.push_back(-static_cast<double>(j));
      }
      rows.push_back(row);
    }
    return nlohmann::json{{"log_probs", rows}}.dump();
  }
  return R"({"error":"unsupported"})";
}

TEST(ExternalScorer, CallbackTransportRoundTrip) {
  ExternalScorer scorer(std::make_unique<CallbackTransport>(reply_for));
  EXPECT_EQ(scorer.mask_token(), "<mask>");
  const std::vector<std::string> words{"a", "b"};
  const auto d = scorer.score_mask({"s", 0, "x [MASK].", std::nullopt}, words);
  EXPECT_NEAR(d.probability("a"), 0.73105858, 1e-8);
  EXPECT_THROW(scorer.vocabulary_probe("a"), BackendError);
}

TEST(ExternalScorer, MissingMaskTokenIsRejected) {
  auto no_mask = [](const std::string&) { return std::string("{}"); };
  EXPECT_THROW(ExternalScorer(std::make_unique<CallbackTransport>(no_mask)),
               MaskSymbolMissing);
  EXPECT_THROW(external_scorer_adapter("exec:" + kFake + " --no-mask"), MaskSymbolMissing);
}

TEST(ExternalScorer, ExecBackendSubstitutesMask) {
  auto scorer = external_scorer_adapter("exec:" + kFake + " --mask '<mask>'");
  const Pvp pvp = builtin_pvp(Task::kPanx);
  const LabeledSentence s{"a", "en", {"a", "location", "here"}, std::nullopt};
  const auto d = scorer->score_batch(decompose(pvp.prompt_template, s),
                                     pvp.verbalizer.words());
  ASSERT_EQ(d.size(), 3u);
  // "location" occurs in the sentence and "name" inside "named".
  const double e = std::exp(1.0);
  EXPECT_NEAR(d[0].probability("location"), e / (2.0 * e + 5.0), 1e-9);
  EXPECT_NEAR(d[0].probability("name"), e / (2.0 * e + 5.0), 1e-9);
  EXPECT_NEAR(d[0].probability("person"), 1.0 / (2.0 * e + 5.0), 1e-9);
}

TEST(ExternalScorer, ProbeReportsMultiPieceWords) {
  auto scorer = external_scorer_adapter("exec:" + kFake + " --pieces organization=3");
  EXPECT_EQ(scorer->vocabulary_probe("location"), 1);
  EXPECT_EQ(scorer->vocabulary_probe("organization"), 3);
  const auto words = builtin_pvp(Task::kPanx).verbalizer.words();
  EXPECT_THROW(scorer->require_single_piece(words), MultiPieceCandidate);
}

TEST(ExternalScorer, GarbageRepliesAreProtocolErrors) {
  EXPECT_THROW(external_scorer_adapter("exec:" + kFake + " --garbage"), ProtocolError);
}

TEST(ExternalScorer, DeadBackendIsUnavailable) {
  auto scorer = external_scorer_adapter("exec:" + kFake + " --exit-after 1");
  const std::vector<std::string> words{"a"};
  EXPECT_THROW(scorer->score_mask({"s", 0, "x [MASK]", std::nullopt}, words),
               BackendUnavailable);
  EXPECT_THROW(external_scorer_adapter("unix:/nonexistent/topro.sock"), BackendUnavailable);
  EXPECT_THROW(external_scorer_adapter("http://x"), UsageError);
}

TEST(ExternalScorer, AccumulateReturnsBackendLoss) {
  auto scorer = external_scorer_adapter("exec:" + kFake);
  const std::vector<PromptInstance> prompts{{"s", 0, "the other [MASK]", "O"}};
  const std::vector<std::string> gold{"other"};
  const std::vector<std::string> words{"other", "thing"};
  const LossSum loss = scorer->accumulate_gradient(prompts, gold, words);
  EXPECT_NEAR(loss.loss, std::log(std::exp(1.0) + 1.0) - 1.0, 1e-9);
  EXPECT_EQ(loss.examples, 1u);
  EXPECT_NO_THROW(scorer->apply_gradient(0.1, 1.0));
}

TEST(ExternalGenerator, ReturnsBackendText) {
  ExternalGenerator generator(open_transport("exec:" + kFake + " --reply person"));
  EXPECT_EQ(generator.generate("Sentence: x", 150, 3), "person");
}

}  // namespace
}  // namespace topro
