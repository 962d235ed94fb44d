#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "topro/corpus.hpp"
#include "topro/pvp.hpp"
#include "topro/scoring.hpp"

namespace topro {

struct PredictionRecord {
  std::string sentence_id;
  std::string language;
  std::vector<std::string> tokens;
  std::optional<std::vector<std::string>> gold_tags;
  std::vector<std::string> predicted_tags;
  // Probability of the chosen word per token (masked scoring only).
  std::optional<std::vector<double>> probabilities;
};

struct DecodeOptions {
  // Truncate prompt context to this many scorer units; nullopt keeps the
  // full sentence.
  std::optional<std::size_t> max_seq_length;
};

// Tag whose verbalizer word has the highest probability; exact ties go to the
// earliest tag in the verbalizer's canonical order.
std::string argmax_tag(const MaskDistribution& distribution,
                       const Verbalizer& verbalizer);

// Masked-mode ToPro decoding of one sentence.
PredictionRecord predict_tags(const Scorer& scorer,
                              const LabeledSentence& sentence,
                              const PromptTemplate& prompt_template,
                              const Verbalizer& verbalizer,
                              const DecodeOptions& options = {});

// Vanilla baseline decoding: argmax of the classifier's tag distribution.
PredictionRecord predict_tags_vanilla(const TokenClassifier& classifier,
                                      const LabeledSentence& sentence);

// Spellings seen in generated answers that differ from verbalizer words.
const std::map<std::string, std::string, std::less<>>& generation_aliases();

// Maps a free-text answer to a tag: the first whitespace-delimited word of
// the trimmed text (outer punctuation stripped) is matched case-insensitively
// against tag names, then against verbalizer words (after aliasing). Anything
// else maps to tagset.fallback().
std::string parse_generated_label(std::string_view generated_text,
                                  const TagSet& tagset,
                                  const Verbalizer* verbalizer = nullptr);

enum class GenerativeFormat {
  kSeq2SeqTopro,  // "<sentence> The pos tag of <token> is:"
  kIcl,           // three-line instruction prompt, PAN-X only
};

struct GenerationConfig {
  std::size_t max_target_length = 150;
  std::size_t beam_width = 3;
};

PredictionRecord predict_tags_generative(Generator& generator,
                                         const LabeledSentence& sentence,
                                         GenerativeFormat format, Task task,
                                         const GenerationConfig& config = {});

// Predictions TSV: sentence_id, token_index, token, gold_tag|-, predicted_tag,
// chosen_probability|-; blank line between sentences. Metadata travels in
// "# key=value" comment lines; "# language=<code>" precedes each run of
// sentences in one language.
using PredictionMetadata = std::map<std::string, std::string>;

void write_predictions_tsv(std::ostream& out,
                           std::span<const PredictionRecord> records,
                           const PredictionMetadata& metadata = {});

struct PredictionFile {
  PredictionMetadata metadata;
  std::vector<PredictionRecord> records;
};

// Throws DataError on malformed rows.
PredictionFile read_predictions_tsv(std::string_view text);

}  // namespace topro
