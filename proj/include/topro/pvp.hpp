#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "topro/corpus.hpp"

namespace topro {

// Placeholder written into masked prompts. Backend adapters swap in their own
// mask symbol.
inline constexpr std::string_view kMaskLiteral = "[MASK]";

enum class TemplateMode { kMasked, kSeq2Seq, kIcl };

std::string_view template_mode_name(TemplateMode mode);
TemplateMode parse_template_mode(std::string_view name);

struct Segment {
  enum class Kind { kLiteral, kSentence, kToken, kMask };

  Kind kind = Kind::kLiteral;
  std::string text;  // literals only

  static Segment literal(std::string text) {
    return {Kind::kLiteral, std::move(text)};
  }
  static Segment sentence() { return {Kind::kSentence, {}}; }
  static Segment token() { return {Kind::kToken, {}}; }
  static Segment mask() { return {Kind::kMask, {}}; }

  bool operator==(const Segment&) const = default;
};

// "{SENTENCE}", "{TOKEN}" and "{MASK}" become placeholders; anything else is
// a literal.
Segment parse_segment(std::string_view marker_or_literal);
std::string segment_marker(const Segment& segment);

class PromptTemplate {
 public:
  // Throws InvalidTemplate when the placeholder counts do not fit `mode`.
  PromptTemplate(std::string name, std::vector<Segment> segments,
                 TemplateMode mode);

  const std::string& name() const { return name_; }
  const std::vector<Segment>& segments() const { return segments_; }
  TemplateMode mode() const { return mode_; }

  bool operator==(const PromptTemplate&) const = default;

 private:
  std::string name_;
  std::vector<Segment> segments_;
  TemplateMode mode_;
};

struct VerbalizerEntry {
  std::string tag;
  std::string word;

  bool operator==(const VerbalizerEntry&) const = default;
};

// Bijective tag <-> word mapping, stored in canonical tag order.
class Verbalizer {
 public:
  // `forward` must cover every label of `tagset` exactly once with distinct,
  // non-empty, whitespace-free words. Throws InvalidVerbalizer otherwise.
  Verbalizer(const TagSet& tagset,
             const std::map<std::string, std::string>& forward);

  const std::vector<VerbalizerEntry>& entries() const { return entries_; }
  std::vector<std::string> words() const;
  std::size_t size() const { return entries_.size(); }

  const std::string& word_for(std::string_view tag) const;
  const std::string& tag_for(std::string_view word) const;
  std::optional<std::string> find_tag(std::string_view word) const;

  bool operator==(const Verbalizer& other) const {
    return entries_ == other.entries_;
  }

 private:
  std::vector<VerbalizerEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> by_tag_;
  std::map<std::string, std::size_t, std::less<>> by_word_;
};

struct Pvp {
  PromptTemplate prompt_template;
  Verbalizer verbalizer;

  bool operator==(const Pvp&) const = default;
};

struct PromptInstance {
  std::string sentence_id;
  std::size_t token_index = 0;
  std::string text;
  std::optional<std::string> gold_tag;
};

PromptInstance render_prompt(const PromptTemplate& prompt_template,
                             const LabeledSentence& sentence,
                             std::size_t token_index);

// One prompt per token, in token order.
std::vector<PromptInstance> decompose(const PromptTemplate& prompt_template,
                                      const LabeledSentence& sentence);

using UnitCounter = std::function<std::size_t(std::string_view)>;

// Whitespace-delimited word count.
std::size_t count_words(std::string_view text);

// Like render_prompt, but drops sentence-context tokens from whichever end is
// farther from the target until the prompt is at most `max_units` long. The
// template text and the target token itself are never dropped, so the result
// can still exceed the budget.
PromptInstance render_prompt_fitted(const PromptTemplate& prompt_template,
                                    const LabeledSentence& sentence,
                                    std::size_t token_index,
                                    std::size_t max_units,
                                    const UnitCounter& count_units);

std::vector<PromptInstance> decompose_fitted(
    const PromptTemplate& prompt_template, const LabeledSentence& sentence,
    std::size_t max_units, const UnitCounter& count_units);

// Text filling the SENTENCE and TOKEN slots of a rendered prompt.
struct PromptSlots {
  std::string sentence;
  std::string token;
};

// Recovers slot contents by anchoring the template literals right to left.
// Returns nullopt when `text` was not rendered from `prompt_template`.
std::optional<PromptSlots> locate_slots(const PromptTemplate& prompt_template,
                                        std::string_view text);

Pvp builtin_pvp(Task task);
Pvp builtin_pvp(std::string_view task);

// Masked templates ending "is a kind of: [MASK]."
PromptTemplate builtin_masked_template(Task task);
// Seq2seq ToPro inputs ending "is:".
PromptTemplate builtin_seq2seq_template(Task task);
PromptTemplate builtin_icl_template();
// Verbalizer behind the ICL candidate line (British "organisation").
Verbalizer builtin_icl_verbalizer();

struct Seq2SeqExample {
  std::string input;
  std::optional<std::string> target;
};

Seq2SeqExample render_seq2seq_topro(const LabeledSentence& sentence,
                                    std::size_t token_index, Task task);

Seq2SeqExample render_seq2seq_vanilla(const LabeledSentence& sentence,
                                      Task task);

std::string render_icl_prompt(const LabeledSentence& sentence,
                              std::size_t token_index,
                              const Verbalizer& verbalizer);

struct VerbalizerViolation {
  enum class Kind { kMultiPiece, kDuplicate };

  Kind kind = Kind::kMultiPiece;
  std::string word;
  int pieces = 1;

  bool operator==(const VerbalizerViolation&) const = default;
};

using VocabularyProbe = std::function<int(std::string_view)>;

std::vector<VerbalizerViolation> validate_verbalizer(
    std::span<const VerbalizerEntry> forward, const VocabularyProbe& probe);

std::vector<VerbalizerViolation> validate_verbalizer(
    const Verbalizer& verbalizer, const VocabularyProbe& probe);

}  // namespace topro
