#include "topro/decode.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <ostream>

#include "topro/errors.hpp"

namespace topro {

std::string argmax_tag(const MaskDistribution& distribution,
                       const Verbalizer& verbalizer) {
  const VerbalizerEntry* best = nullptr;
  double best_p = -1.0;
  for (const auto& entry : verbalizer.entries()) {
    const double p = distribution.probability(entry.word);
    if (p > best_p) {
      best = &entry;
      best_p = p;
    }
  }
  return best->tag;
}

namespace {

PredictionRecord record_for(const LabeledSentence& sentence) {
  PredictionRecord record;
  record.sentence_id = sentence.sentence_id;
  record.language = sentence.language;
  record.tokens = sentence.tokens;
  record.gold_tags = sentence.tags;
  return record;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

PredictionRecord predict_tags(const Scorer& scorer,
                              const LabeledSentence& sentence,
                              const PromptTemplate& prompt_template,
                              const Verbalizer& verbalizer,
                              const DecodeOptions& options) {
  if (prompt_template.mode() != TemplateMode::kMasked) {
    throw UsageError("predict_tags needs a masked template");
  }
  std::vector<PromptInstance> prompts;
  if (options.max_seq_length) {
    prompts = decompose_fitted(
        prompt_template, sentence, *options.max_seq_length,
        [&scorer](std::string_view text) { return scorer.count_units(text); });
  } else {
    prompts = decompose(prompt_template, sentence);
  }
  const std::vector<std::string> candidates = verbalizer.words();
  const auto distributions = scorer.score_batch(prompts, candidates);

  PredictionRecord record = record_for(sentence);
  record.probabilities.emplace();
  for (const auto& dist : distributions) {
    std::string tag = argmax_tag(dist, verbalizer);
    record.probabilities->push_back(
        dist.probability(verbalizer.word_for(tag)));
    record.predicted_tags.push_back(std::move(tag));
  }
  return record;
}

PredictionRecord predict_tags_vanilla(const TokenClassifier& classifier,
                                      const LabeledSentence& sentence) {
  PredictionRecord record = record_for(sentence);
  record.probabilities.emplace();
  const TagSet& tagset = classifier.tagset();
  for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
    const auto p = classifier.predict_proba(sentence.tokens, i);
    const auto best = static_cast<std::size_t>(
        std::max_element(p.begin(), p.end()) - p.begin());
    record.predicted_tags.push_back(tagset.label(best));
    record.probabilities->push_back(p[best]);
  }
  return record;
}

const std::map<std::string, std::string, std::less<>>& generation_aliases() {
  static const std::map<std::string, std::string, std::less<>> aliases = {
      {"organisation", "organization"},
  };
  return aliases;
}

std::string parse_generated_label(std::string_view generated_text,
                                  const TagSet& tagset,
                                  const Verbalizer* verbalizer) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t begin = 0;
  while (begin < generated_text.size() &&
         is_space(static_cast<unsigned char>(generated_text[begin]))) {
    ++begin;
  }
  std::size_t end = begin;
  while (end < generated_text.size() &&
         !is_space(static_cast<unsigned char>(generated_text[end]))) {
    ++end;
  }
  std::string_view word = generated_text.substr(begin, end - begin);
  constexpr std::string_view kOuterPunct = ".,;:!?\"'()[]`";
  while (!word.empty() && kOuterPunct.find(word.front()) != std::string_view::npos) {
    word.remove_prefix(1);
  }
  while (!word.empty() && kOuterPunct.find(word.back()) != std::string_view::npos) {
    word.remove_suffix(1);
  }
  if (word.empty()) return tagset.fallback();

  const std::string lower = lowercase(word);
  for (const auto& label : tagset.labels()) {
    if (lowercase(label) == lower) return label;
  }
  if (verbalizer) {
    std::string key = lower;
    if (auto alias = generation_aliases().find(key);
        alias != generation_aliases().end()) {
      key = alias->second;
    }
    for (const auto& entry : verbalizer->entries()) {
      if (lowercase(entry.word) == key) return entry.tag;
    }
  }
  return tagset.fallback();
}

PredictionRecord predict_tags_generative(Generator& generator,
                                         const LabeledSentence& sentence,
                                         GenerativeFormat format, Task task,
                                         const GenerationConfig& config) {
  if (format == GenerativeFormat::kIcl && task != Task::kPanx) {
    throw UsageError("the ICL prompt is defined for panx only");
  }
  const TagSet& tagset = tagset_for(task);
  const Pvp pvp = builtin_pvp(task);
  const Verbalizer icl_verbalizer = builtin_icl_verbalizer();
  PredictionRecord record = record_for(sentence);
  for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
    const std::string input =
        format == GenerativeFormat::kIcl
            ? render_icl_prompt(sentence, i, icl_verbalizer)
            : render_seq2seq_topro(sentence, i, task).input;
    const std::string answer =
        generator.generate(input, config.max_target_length, config.beam_width);
    record.predicted_tags.push_back(
        parse_generated_label(answer, tagset, &pvp.verbalizer));
  }
  return record;
}

namespace {

std::string format_probability(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", p);
  return buf;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

void write_predictions_tsv(std::ostream& out,
                           std::span<const PredictionRecord> records,
                           const PredictionMetadata& metadata) {
  for (const auto& [key, value] : metadata) {
    if (key == "language") continue;
    out << "# " << key << '=' << value << '\n';
  }
  std::optional<std::string> language;
  for (const auto& record : records) {
    if (record.predicted_tags.size() != record.tokens.size()) {
      throw LengthMismatch(record.tokens.size(), record.predicted_tags.size());
    }
    if (!language || *language != record.language) {
      language = record.language;
      out << "# language=" << record.language << '\n';
    }
    for (std::size_t i = 0; i < record.tokens.size(); ++i) {
      out << record.sentence_id << '\t' << i << '\t' << record.tokens[i] << '\t'
          << (record.gold_tags ? (*record.gold_tags)[i] : std::string("-"))
          << '\t' << record.predicted_tags[i] << '\t'
          << (record.probabilities
                  ? format_probability((*record.probabilities)[i])
                  : std::string("-"))
          << '\n';
    }
    out << '\n';
  }
}

PredictionFile read_predictions_tsv(std::string_view text) {
  PredictionFile file;
  std::string language = "und";
  PredictionRecord current;
  bool has_gold = true;
  bool has_prob = true;

  auto flush = [&] {
    if (current.tokens.empty()) return;
    if (!has_gold) current.gold_tags.reset();
    if (!has_prob) current.probabilities.reset();
    file.records.push_back(std::move(current));
    current = PredictionRecord{};
    has_gold = true;
    has_prob = true;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.front() == '#') {
      std::string_view body = line.substr(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      std::string key(body.substr(0, eq));
      std::string value(body.substr(eq + 1));
      if (key == "language") {
        flush();
        language = value;
      } else {
        file.metadata[key] = value;
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 6) {
      throw DataError("predictions line " + std::to_string(line_no) +
                      ": expected 6 tab-separated fields");
    }
    std::size_t index = 0;
    auto [ptr, ec] = std::from_chars(fields[1].data(),
                                     fields[1].data() + fields[1].size(), index);
    if (ec != std::errc() || ptr != fields[1].data() + fields[1].size()) {
      throw DataError("predictions line " + std::to_string(line_no) +
                      ": bad token index");
    }
    if (!current.tokens.empty() && current.sentence_id != fields[0]) flush();
    if (current.tokens.empty()) {
      current.sentence_id = std::string(fields[0]);
      current.language = language;
      current.gold_tags.emplace();
      current.probabilities.emplace();
    }
    if (index != current.tokens.size()) {
      throw DataError("predictions line " + std::to_string(line_no) +
                      ": token index " + std::to_string(index) +
                      " out of sequence");
    }
    current.tokens.emplace_back(fields[2]);
    if (fields[3] == "-") {
      has_gold = false;
    } else {
      current.gold_tags->emplace_back(fields[3]);
    }
    current.predicted_tags.emplace_back(fields[4]);
    if (fields[5] == "-") {
      has_prob = false;
    } else {
      try {
        current.probabilities->push_back(std::stod(std::string(fields[5])));
      } catch (const std::exception&) {
        throw DataError("predictions line " + std::to_string(line_no) +
                        ": bad probability");
      }
    }
  }
  flush();
  for (const auto& record : file.records) {
    if (record.gold_tags && record.gold_tags->size() != record.tokens.size()) {
      throw DataError("sentence '" + record.sentence_id +
                      "' mixes gold and missing tags");
    }
  }
  return file;
}

}  // namespace topro
