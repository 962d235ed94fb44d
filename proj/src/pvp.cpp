#include "topro/pvp.hpp"

#include <algorithm>
#include <cctype>

#include "topro/errors.hpp"

namespace topro {

std::string_view template_mode_name(TemplateMode mode) {
  switch (mode) {
    case TemplateMode::kMasked:
      return "masked";
    case TemplateMode::kSeq2Seq:
      return "seq2seq";
    case TemplateMode::kIcl:
      return "icl";
  }
  return "masked";
}

TemplateMode parse_template_mode(std::string_view name) {
  if (name == "masked") return TemplateMode::kMasked;
  if (name == "seq2seq") return TemplateMode::kSeq2Seq;
  if (name == "icl") return TemplateMode::kIcl;
  throw InvalidTemplate("unknown mode '" + std::string(name) + "'");
}

Segment parse_segment(std::string_view marker_or_literal) {
  if (marker_or_literal == "{SENTENCE}") return Segment::sentence();
  if (marker_or_literal == "{TOKEN}") return Segment::token();
  if (marker_or_literal == "{MASK}") return Segment::mask();
  return Segment::literal(std::string(marker_or_literal));
}

std::string segment_marker(const Segment& segment) {
  switch (segment.kind) {
    case Segment::Kind::kSentence:
      return "{SENTENCE}";
    case Segment::Kind::kToken:
      return "{TOKEN}";
    case Segment::Kind::kMask:
      return "{MASK}";
    case Segment::Kind::kLiteral:
      return segment.text;
  }
  return segment.text;
}

PromptTemplate::PromptTemplate(std::string name, std::vector<Segment> segments,
                               TemplateMode mode)
    : name_(std::move(name)), segments_(std::move(segments)), mode_(mode) {
  auto count = [this](Segment::Kind kind) {
    return std::count_if(segments_.begin(), segments_.end(),
                         [kind](const Segment& s) { return s.kind == kind; });
  };
  const auto sentences = count(Segment::Kind::kSentence);
  const auto tokens = count(Segment::Kind::kToken);
  const auto masks = count(Segment::Kind::kMask);
  if (sentences != 1 || tokens != 1) {
    throw InvalidTemplate("template '" + name_ +
                          "' needs exactly one {SENTENCE} and one {TOKEN}");
  }
  if (mode_ == TemplateMode::kMasked && masks != 1) {
    throw InvalidTemplate("masked template '" + name_ +
                          "' needs exactly one {MASK}");
  }
  if (mode_ != TemplateMode::kMasked && masks != 0) {
    throw InvalidTemplate(std::string(template_mode_name(mode_)) +
                          " template '" + name_ + "' must not contain {MASK}");
  }
  for (std::size_t i = 1; i < segments_.size(); ++i) {
    const bool both_slots = segments_[i].kind != Segment::Kind::kLiteral &&
                            segments_[i - 1].kind != Segment::Kind::kLiteral;
    if (both_slots) {
      throw InvalidTemplate("template '" + name_ +
                            "' has adjacent placeholders without a literal");
    }
  }
}

namespace {

bool has_whitespace(std::string_view word) {
  return std::any_of(word.begin(), word.end(), [](unsigned char c) {
    return std::isspace(c) != 0;
  });
}

}  // namespace

Verbalizer::Verbalizer(const TagSet& tagset,
                       const std::map<std::string, std::string>& forward) {
  for (const auto& [tag, word] : forward) {
    if (!tagset.contains(tag)) {
      throw InvalidVerbalizer("tag '" + tag + "' is not in the " +
                              tagset.task_name() + " tag set");
    }
  }
  for (const auto& tag : tagset.labels()) {
    auto it = forward.find(tag);
    if (it == forward.end()) {
      throw InvalidVerbalizer("no word for tag '" + tag + "'");
    }
    const std::string& word = it->second;
    if (word.empty() || has_whitespace(word)) {
      throw InvalidVerbalizer("word for tag '" + tag +
                              "' must be non-empty without whitespace");
    }
    if (!by_word_.emplace(word, entries_.size()).second) {
      throw InvalidVerbalizer("word '" + word +
                              "' is used by more than one tag");
    }
    by_tag_.emplace(tag, entries_.size());
    entries_.push_back({tag, word});
  }
}

std::vector<std::string> Verbalizer::words() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& entry : entries_) out.push_back(entry.word);
  return out;
}

const std::string& Verbalizer::word_for(std::string_view tag) const {
  auto it = by_tag_.find(tag);
  if (it == by_tag_.end()) {
    throw InvalidVerbalizer("no word for tag '" + std::string(tag) + "'");
  }
  return entries_[it->second].word;
}

const std::string& Verbalizer::tag_for(std::string_view word) const {
  auto it = by_word_.find(word);
  if (it == by_word_.end()) throw UnknownCandidate(std::string(word));
  return entries_[it->second].tag;
}

std::optional<std::string> Verbalizer::find_tag(std::string_view word) const {
  auto it = by_word_.find(word);
  if (it == by_word_.end()) return std::nullopt;
  return entries_[it->second].tag;
}

namespace {

std::string join_range(const std::vector<std::string>& tokens, std::size_t lo,
                       std::size_t hi) {
  std::string out;
  for (std::size_t i = lo; i < hi; ++i) {
    if (i > lo) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string fill(const PromptTemplate& prompt_template,
                 std::string_view sentence_text, std::string_view token) {
  std::string out;
  for (const auto& segment : prompt_template.segments()) {
    switch (segment.kind) {
      case Segment::Kind::kLiteral:
        out += segment.text;
        break;
      case Segment::Kind::kSentence:
        out += sentence_text;
        break;
      case Segment::Kind::kToken:
        out += token;
        break;
      case Segment::Kind::kMask:
        out += kMaskLiteral;
        break;
    }
  }
  return out;
}

PromptInstance make_instance(const LabeledSentence& sentence,
                             std::size_t token_index, std::string text) {
  PromptInstance instance;
  instance.sentence_id = sentence.sentence_id;
  instance.token_index = token_index;
  instance.text = std::move(text);
  if (sentence.tags) instance.gold_tag = (*sentence.tags)[token_index];
  return instance;
}

}  // namespace

PromptInstance render_prompt(const PromptTemplate& prompt_template,
                             const LabeledSentence& sentence,
                             std::size_t token_index) {
  if (token_index >= sentence.tokens.size()) {
    throw IndexOutOfRange(token_index, sentence.tokens.size());
  }
  return make_instance(
      sentence, token_index,
      fill(prompt_template, sentence.text(), sentence.tokens[token_index]));
}

std::vector<PromptInstance> decompose(const PromptTemplate& prompt_template,
                                      const LabeledSentence& sentence) {
  std::vector<PromptInstance> prompts;
  prompts.reserve(sentence.tokens.size());
  const std::string text = sentence.text();
  for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
    prompts.push_back(make_instance(
        sentence, i, fill(prompt_template, text, sentence.tokens[i])));
  }
  return prompts;
}

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

PromptInstance render_prompt_fitted(const PromptTemplate& prompt_template,
                                    const LabeledSentence& sentence,
                                    std::size_t token_index,
                                    std::size_t max_units,
                                    const UnitCounter& count_units) {
  if (token_index >= sentence.tokens.size()) {
    throw IndexOutOfRange(token_index, sentence.tokens.size());
  }
  const auto& tokens = sentence.tokens;
  const std::string& target = tokens[token_index];
  std::size_t lo = 0;
  std::size_t hi = tokens.size();
  std::string text = fill(prompt_template, join_range(tokens, lo, hi), target);
  while (count_units(text) > max_units && hi - lo > 1) {
    const std::size_t left = token_index - lo;
    const std::size_t right = hi - 1 - token_index;
    if (right >= left) {
      --hi;
    } else {
      ++lo;
    }
    text = fill(prompt_template, join_range(tokens, lo, hi), target);
  }
  return make_instance(sentence, token_index, std::move(text));
}

std::vector<PromptInstance> decompose_fitted(
    const PromptTemplate& prompt_template, const LabeledSentence& sentence,
    std::size_t max_units, const UnitCounter& count_units) {
  std::vector<PromptInstance> prompts;
  prompts.reserve(sentence.tokens.size());
  for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
    prompts.push_back(render_prompt_fitted(prompt_template, sentence, i,
                                           max_units, count_units));
  }
  return prompts;
}

std::optional<PromptSlots> locate_slots(const PromptTemplate& prompt_template,
                                        std::string_view text) {
  const auto& segments = prompt_template.segments();
  PromptSlots slots;
  // Right edge of the not-yet-matched region.
  std::size_t end = text.size();
  // Right edge of the slot waiting for its left boundary.
  std::optional<std::size_t> open_slot_end;
  std::optional<Segment::Kind> open_slot;

  auto close_slot = [&](std::size_t begin) {
    if (!open_slot) return true;
    if (begin > *open_slot_end) return false;
    std::string value(text.substr(begin, *open_slot_end - begin));
    if (value.empty()) return false;
    if (*open_slot == Segment::Kind::kSentence) {
      slots.sentence = std::move(value);
    } else {
      slots.token = std::move(value);
    }
    open_slot.reset();
    return true;
  };

  for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
    if (it->kind == Segment::Kind::kSentence ||
        it->kind == Segment::Kind::kToken) {
      open_slot = it->kind;
      open_slot_end = end;
      continue;
    }
    const std::string_view literal = it->kind == Segment::Kind::kMask
                                         ? kMaskLiteral
                                         : std::string_view(it->text);
    std::size_t pos;
    if (open_slot) {
      // Leave at least one character for the slot on the right.
      if (end < literal.size() + 1) return std::nullopt;
      pos = text.rfind(literal, end - literal.size() - 1);
      if (pos == std::string_view::npos) return std::nullopt;
    } else {
      if (end < literal.size()) return std::nullopt;
      pos = end - literal.size();
      if (text.substr(pos, literal.size()) != literal) return std::nullopt;
    }
    if (!close_slot(pos + literal.size())) return std::nullopt;
    end = pos;
  }
  if (open_slot) {
    if (!close_slot(0)) return std::nullopt;
  } else if (end != 0) {
    return std::nullopt;
  }
  return slots;
}

namespace {

std::string_view topic_phrase(Task task) {
  return task == Task::kPanx ? " The named entity of " : " The pos tag of ";
}

std::map<std::string, std::string> panx_words() {
  return {{"B-LOC", "location"},     {"I-LOC", "place"},
          {"B-ORG", "organization"}, {"I-ORG", "body"},
          {"B-PER", "person"},       {"I-PER", "name"},
          {"O", "other"}};
}

std::map<std::string, std::string> udpos_words() {
  return {{"ADJ", "modification"}, {"ADP", "position"},   {"ADV", "verbal"},
          {"AUX", "auxiliar"},     {"CCONJ", "link"},     {"DET", "determine"},
          {"INTJ", "mode"},        {"NOUN", "thing"},     {"NUM", "number"},
          {"PART", "functional"},  {"PRON", "reference"}, {"PROPN", "name"},
          {"PUNCT", "punct"},      {"SCONJ", "condition"}, {"SYM", "symbol"},
          {"VERB", "verb"},        {"X", "other"}};
}

}  // namespace

PromptTemplate builtin_masked_template(Task task) {
  return PromptTemplate(
      std::string(task_name(task)) + "-topro",
      {Segment::sentence(), Segment::literal(std::string(topic_phrase(task))),
       Segment::token(), Segment::literal(" is a kind of: "), Segment::mask(),
       Segment::literal(".")},
      TemplateMode::kMasked);
}

PromptTemplate builtin_seq2seq_template(Task task) {
  return PromptTemplate(
      std::string(task_name(task)) + "-topro-seq2seq",
      {Segment::sentence(), Segment::literal(std::string(topic_phrase(task))),
       Segment::token(), Segment::literal(" is:")},
      TemplateMode::kSeq2Seq);
}

PromptTemplate builtin_icl_template() {
  return PromptTemplate(
      "panx-icl",
      {Segment::literal("Sentence: "), Segment::sentence(),
       Segment::literal("\nNamed entity type of "), Segment::token(),
       Segment::literal(" in the sentence is")},
      TemplateMode::kIcl);
}

Verbalizer builtin_icl_verbalizer() {
  auto words = panx_words();
  words["B-ORG"] = "organisation";
  return Verbalizer(panx_tagset(), words);
}

Pvp builtin_pvp(Task task) {
  const TagSet& tagset = tagset_for(task);
  return Pvp{builtin_masked_template(task),
             Verbalizer(tagset,
                        task == Task::kPanx ? panx_words() : udpos_words())};
}

Pvp builtin_pvp(std::string_view task) { return builtin_pvp(parse_task(task)); }

Seq2SeqExample render_seq2seq_topro(const LabeledSentence& sentence,
                                    std::size_t token_index, Task task) {
  PromptInstance prompt =
      render_prompt(builtin_seq2seq_template(task), sentence, token_index);
  return Seq2SeqExample{std::move(prompt.text), std::move(prompt.gold_tag)};
}

Seq2SeqExample render_seq2seq_vanilla(const LabeledSentence& sentence,
                                      Task task) {
  if (!sentence.tags) throw MissingTags(sentence.sentence_id);
  Seq2SeqExample example;
  example.input = std::string(task == Task::kPanx ? "NER tagging: "
                                                  : "POS tagging: ") +
                  sentence.text();
  std::string target;
  for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
    if (i > 0) target += " $$ ";
    target += (*sentence.tags)[i];
    target += ": ";
    target += sentence.tokens[i];
  }
  example.target = std::move(target);
  return example;
}

std::string render_icl_prompt(const LabeledSentence& sentence,
                              std::size_t token_index,
                              const Verbalizer& verbalizer) {
  std::string candidates = "Named entity type:";
  for (const auto& entry : verbalizer.entries()) {
    candidates += ' ';
    candidates += entry.word;
  }
  PromptInstance body =
      render_prompt(builtin_icl_template(), sentence, token_index);
  return candidates + "\n" + body.text;
}

std::vector<VerbalizerViolation> validate_verbalizer(
    std::span<const VerbalizerEntry> forward, const VocabularyProbe& probe) {
  std::vector<VerbalizerViolation> violations;
  std::map<std::string, int> uses;
  for (const auto& entry : forward) ++uses[entry.word];
  std::map<std::string, bool> reported;
  for (const auto& entry : forward) {
    const int pieces = probe(entry.word);
    if (pieces != 1 && !reported[entry.word]) {
      violations.push_back(
          {VerbalizerViolation::Kind::kMultiPiece, entry.word, pieces});
    }
    reported[entry.word] = true;
  }
  for (const auto& [word, count] : uses) {
    if (count > 1) {
      violations.push_back({VerbalizerViolation::Kind::kDuplicate, word, 1});
    }
  }
  return violations;
}

std::vector<VerbalizerViolation> validate_verbalizer(
    const Verbalizer& verbalizer, const VocabularyProbe& probe) {
  return validate_verbalizer(std::span(verbalizer.entries()), probe);
}

}  // namespace topro
