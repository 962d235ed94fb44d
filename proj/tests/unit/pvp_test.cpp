#include <gtest/gtest.h>

#include "synthetic.hpp"
#include "topro/errors.hpp"
#include "topro/pvp.hpp"
#include "topro/rng.hpp"

namespace topro {
namespace {

LabeledSentence sentence(std::vector<std::string> tokens,
                         std::optional<std::vector<std::string>> tags = std::nullopt) {
  return {"s0", "en", std::move(tokens), std::move(tags)};
}

std::size_t occurrences(const std::string& text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

TEST(RenderPrompt, UdposTemplate) {
  const auto p = render_prompt(builtin_masked_template(Task::kUdpos),
                               sentence({"Works", "as", "stated", "!"}), 0);
  EXPECT_EQ(p.text, "Works as stated ! The pos tag of Works is a kind of: [MASK].");
  EXPECT_EQ(p.token_index, 0u);
  EXPECT_FALSE(p.gold_tag);
}

TEST(RenderPrompt, PanxTemplate) {
  const auto p = render_prompt(builtin_masked_template(Task::kPanx),
                               sentence({"Works", "as", "stated", "!"}), 3);
  EXPECT_EQ(p.text, "Works as stated ! The named entity of ! is a kind of: [MASK].");
}

TEST(RenderPrompt, IndexOutOfRange) {
  EXPECT_THROW(render_prompt(builtin_masked_template(Task::kPanx),
                             sentence({"a", "b"}), 2),
               IndexOutOfRange);
}

TEST(Decompose, OnePromptPerToken) {
  const auto tmpl = builtin_masked_template(Task::kUdpos);
  EXPECT_EQ(decompose(tmpl, sentence({"Works", "as", "stated", "!"})).size(), 4u);
  EXPECT_EQ(decompose(tmpl, sentence({"Hello"})).size(), 1u);
}

TEST(Decompose, RepeatedTokensGiveIdenticalPrompts) {
  const auto prompts = decompose(builtin_masked_template(Task::kUdpos),
                                 sentence({"zu", "Teilnahme", "zu"}));
  EXPECT_EQ(prompts[0].text, prompts[2].text);
  EXPECT_NE(prompts[0].text, prompts[1].text);
}

TEST(Decompose, CopiesGoldTags) {
  const auto prompts = decompose(builtin_masked_template(Task::kPanx),
                                 sentence({"Paris", "is"}, std::vector<std::string>{"B-LOC", "O"}));
  EXPECT_EQ(prompts[0].gold_tag, "B-LOC");
  EXPECT_EQ(prompts[1].gold_tag, "O");
}

TEST(Decompose, RandomSentencesSatisfyTheDecompositionLaw) {
  Rng rng(11);
  for (Task task : {Task::kPanx, Task::kUdpos}) {
    const auto tmpl = builtin_masked_template(task);
    for (const auto& s : testing::random_sentences(rng, 200, 1, 40, tagset_for(task), "en")) {
      const auto prompts = decompose(tmpl, s);
      ASSERT_EQ(prompts.size(), s.tokens.size());
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        EXPECT_EQ(occurrences(prompts[i].text, kMaskLiteral), 1u);
        EXPECT_TRUE(prompts[i].text.starts_with(s.text()));
        EXPECT_EQ(prompts[i].token_index, i);
        EXPECT_EQ(prompts[i].text, render_prompt(tmpl, s, i).text);
      }
    }
  }
}

TEST(BuiltinPvp, PanxEntries) {
  const Pvp pvp = builtin_pvp(Task::kPanx);
  EXPECT_EQ(pvp.verbalizer.word_for("B-ORG"), "organization");
  EXPECT_EQ(pvp.verbalizer.word_for("I-ORG"), "body");
  EXPECT_EQ(pvp.verbalizer.word_for("B-LOC"), "location");
  EXPECT_EQ(pvp.verbalizer.word_for("O"), "other");
  EXPECT_EQ(pvp.verbalizer.size(), 7u);
}

TEST(BuiltinPvp, UdposEntries) {
  const Pvp pvp = builtin_pvp("udpos");
  EXPECT_EQ(pvp.verbalizer.word_for("NOUN"), "thing");
  EXPECT_EQ(pvp.verbalizer.word_for("SCONJ"), "condition");
  EXPECT_EQ(pvp.verbalizer.word_for("ADJ"), "modification");
  EXPECT_EQ(pvp.verbalizer.word_for("X"), "other");
  EXPECT_EQ(pvp.verbalizer.size(), 17u);
}

TEST(BuiltinPvp, UnknownTask) {
  EXPECT_THROW(builtin_pvp("srl"), UnknownTask);
}

TEST(Verbalizer, IsBijective) {
  for (Task task : {Task::kPanx, Task::kUdpos}) {
    const Pvp pvp = builtin_pvp(task);
    std::set<std::string> words;
    for (const auto& tag : tagset_for(task).labels()) {
      const auto& word = pvp.verbalizer.word_for(tag);
      EXPECT_EQ(pvp.verbalizer.tag_for(word), tag);
      words.insert(word);
    }
    EXPECT_EQ(words.size(), tagset_for(task).size());
  }
}

TEST(Verbalizer, RejectsBrokenMaps) {
  std::map<std::string, std::string> forward = {
      {"B-LOC", "location"}, {"I-LOC", "place"}, {"B-ORG", "organization"},
      {"I-ORG", "body"},     {"B-PER", "person"}, {"I-PER", "name"}};
  EXPECT_THROW(Verbalizer(panx_tagset(), forward), InvalidVerbalizer);  // no O
  forward["O"] = "name";
  EXPECT_THROW(Verbalizer(panx_tagset(), forward), InvalidVerbalizer);  // not injective
  forward["O"] = "two words";
  EXPECT_THROW(Verbalizer(panx_tagset(), forward), InvalidVerbalizer);
  forward["O"] = "other";
  forward["B-MISC"] = "misc";
  EXPECT_THROW(Verbalizer(panx_tagset(), forward), InvalidVerbalizer);
}

TEST(Verbalizer, UnknownWordThrows) {
  EXPECT_THROW(builtin_pvp(Task::kPanx).verbalizer.tag_for("banana"),
               UnknownCandidate);
  EXPECT_FALSE(builtin_pvp(Task::kPanx).verbalizer.find_tag("banana"));
}

TEST(PromptTemplate, InvariantsPerMode) {
  using S = Segment;
  EXPECT_THROW(PromptTemplate("t", {S::sentence(), S::token(), S::mask(), S::literal(" "), S::mask()},
                              TemplateMode::kMasked),
               InvalidTemplate);
  EXPECT_THROW(PromptTemplate("t", {S::sentence(), S::literal(" "), S::mask()},
                              TemplateMode::kMasked),
               InvalidTemplate);
  EXPECT_THROW(PromptTemplate("t", {S::sentence(), S::literal(" "), S::token(), S::literal(" "), S::mask()},
                              TemplateMode::kSeq2Seq),
               InvalidTemplate);
  EXPECT_NO_THROW(PromptTemplate("t", {S::sentence(), S::literal(" "), S::token(), S::literal(" is:")},
                                 TemplateMode::kSeq2Seq));
}

TEST(ParseSegment, MarkersAndLiterals) {
  EXPECT_EQ(parse_segment("{SENTENCE}").kind, Segment::Kind::kSentence);
  EXPECT_EQ(parse_segment("{TOKEN}").kind, Segment::Kind::kToken);
  EXPECT_EQ(parse_segment("{MASK}").kind, Segment::Kind::kMask);
  EXPECT_EQ(parse_segment(" is a kind of: ").kind, Segment::Kind::kLiteral);
  const PromptTemplate tmpl = builtin_masked_template(Task::kPanx);
  for (const auto& s : tmpl.segments()) {
    EXPECT_EQ(parse_segment(segment_marker(s)), s);
  }
}

TEST(Seq2Seq, ToproInputAndTarget) {
  const auto s = sentence({"On", "the", "other", "hand", ",", "it", "looks", "pretty", "cool", "."},
                          std::vector<std::string>{"ADP", "DET", "ADJ", "NOUN", "PUNCT", "PRON",
                                                   "VERB", "ADV", "ADJ", "PUNCT"});
  const auto ex = render_seq2seq_topro(s, 0, Task::kUdpos);
  EXPECT_EQ(ex.input, "On the other hand , it looks pretty cool . The pos tag of On is:");
  EXPECT_EQ(ex.target, "ADP");

  auto unlabeled = s;
  unlabeled.tags.reset();
  const auto inference = render_seq2seq_topro(unlabeled, 0, Task::kUdpos);
  EXPECT_EQ(inference.input, ex.input);
  EXPECT_FALSE(inference.target);
}

TEST(Seq2Seq, ToproTargetIsTagString) {
  const auto ex = render_seq2seq_topro(
      sentence({"Paris", "is", "big"}, std::vector<std::string>{"B-LOC", "O", "O"}), 0,
      Task::kPanx);
  EXPECT_EQ(ex.target, "B-LOC");
  EXPECT_EQ(ex.input, "Paris is big The named entity of Paris is:");
}

TEST(Seq2Seq, VanillaTarget) {
  const auto s = sentence({"On", "the", "other", "hand"},
                          std::vector<std::string>{"ADP", "DET", "ADJ", "NOUN"});
  const auto ex = render_seq2seq_vanilla(s, Task::kUdpos);
  EXPECT_EQ(ex.input, "POS tagging: On the other hand");
  EXPECT_TRUE(ex.target->starts_with("ADP: On $$ DET: the $$ ADJ: other"));
  EXPECT_EQ(render_seq2seq_vanilla(sentence({"Hi"}, std::vector<std::string>{"INTJ"}),
                                   Task::kUdpos)
                .target,
            "INTJ: Hi");
  EXPECT_THROW(render_seq2seq_vanilla(sentence({"Hi"}), Task::kUdpos), MissingTags);
}

TEST(Icl, PromptLayout) {
  const std::string prompt =
      render_icl_prompt(sentence({"Paris", "is", "big"}), 0, builtin_icl_verbalizer());
  EXPECT_EQ(prompt,
            "Named entity type: location organisation person place body name other\n"
            "Sentence: Paris is big\n"
            "Named entity type of Paris in the sentence is");
  EXPECT_EQ(occurrences(prompt, kMaskLiteral), 0u);
  for (const auto& w : builtin_pvp(Task::kPanx).verbalizer.words()) {
    if (w != "organization") EXPECT_NE(prompt.find(w), std::string::npos) << w;
  }
  EXPECT_THROW(render_icl_prompt(sentence({"Paris"}), 1, builtin_icl_verbalizer()),
               IndexOutOfRange);
}

TEST(ValidateVerbalizer, Violations) {
  const Pvp pvp = builtin_pvp(Task::kPanx);
  EXPECT_TRUE(validate_verbalizer(pvp.verbalizer, [](std::string_view) { return 1; }).empty());
  const auto multi = validate_verbalizer(pvp.verbalizer, [](std::string_view w) {
    return w == "organization" ? 3 : 1;
  });
  EXPECT_EQ(multi, (std::vector<VerbalizerViolation>{
                       {VerbalizerViolation::Kind::kMultiPiece, "organization", 3}}));
  const std::vector<VerbalizerEntry> forward = {{"O", "other"}, {"X", "other"}};
  const auto dup = validate_verbalizer(forward, [](std::string_view) { return 1; });
  EXPECT_EQ(dup, (std::vector<VerbalizerViolation>{
                     {VerbalizerViolation::Kind::kDuplicate, "other", 1}}));
}

TEST(FittedPrompts, DropsFarContextFirstAndKeepsTemplate) {
  const auto tmpl = builtin_masked_template(Task::kPanx);
  const auto s = sentence({"a", "b", "c", "d", "e", "f", "g"});
  // Template literals are 9 words plus the target; budget leaves 3 context words.
  const auto p = render_prompt_fitted(tmpl, s, 1, 13, count_words);
  EXPECT_EQ(p.text, "a b c The named entity of b is a kind of: [MASK].");
  EXPECT_LE(count_words(p.text), 13u);
  const auto unlimited = render_prompt_fitted(tmpl, s, 1, 1000, count_words);
  EXPECT_EQ(unlimited.text, render_prompt(tmpl, s, 1).text);
  // Impossible budget keeps the target token itself.
  const auto tight = render_prompt_fitted(tmpl, s, 6, 1, count_words);
  EXPECT_EQ(tight.text, "g The named entity of g is a kind of: [MASK].");
}

TEST(LocateSlots, RecoversSentenceAndTokenFromRenderedPrompts) {
  Rng rng(5);
  for (Task task : {Task::kPanx, Task::kUdpos}) {
    const auto tmpl = builtin_masked_template(task);
    for (const auto& s : testing::random_sentences(rng, 50, 1, 20, tagset_for(task), "en")) {
      for (const auto& p : decompose(tmpl, s)) {
        const auto slots = locate_slots(tmpl, p.text);
        ASSERT_TRUE(slots);
        EXPECT_EQ(slots->sentence, s.text());
        EXPECT_EQ(slots->token, s.tokens[p.token_index]);
      }
    }
  }
  EXPECT_FALSE(locate_slots(builtin_masked_template(Task::kPanx), "no template here"));
}

TEST(LocateSlots, TokensContainingTemplateWords) {
  const auto tmpl = builtin_masked_template(Task::kPanx);
  const auto s = sentence({"is", "a", "kind", "of:", "is"});
  for (const auto& p : decompose(tmpl, s)) {
    const auto slots = locate_slots(tmpl, p.text);
    ASSERT_TRUE(slots);
    EXPECT_EQ(slots->token, s.tokens[p.token_index]);
    EXPECT_EQ(slots->sentence, s.text());
  }
}

}  // namespace
}  // namespace topro
