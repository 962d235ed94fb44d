#include "topro/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "topro/errors.hpp"

namespace topro {

Task parse_task(std::string_view name) {
  if (name == "panx") return Task::kPanx;
  if (name == "udpos") return Task::kUdpos;
  throw UnknownTask(std::string(name));
}

std::string_view task_name(Task task) {
  return task == Task::kPanx ? "panx" : "udpos";
}

TagSet::TagSet(std::string task_name, std::vector<std::string> labels,
               TagScheme scheme)
    : task_name_(std::move(task_name)),
      labels_(std::move(labels)),
      scheme_(scheme) {
  if (labels_.empty()) throw InvalidTagSet("no labels");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const std::string& label = labels_[i];
    if (label.empty()) throw InvalidTagSet("empty label");
    if (!index_.emplace(label, i).second) {
      throw InvalidTagSet("duplicate label '" + label + "'");
    }
    if (scheme_ == TagScheme::kIob2 && label != "O") {
      const bool prefixed = label.size() > 2 &&
                            (label[0] == 'B' || label[0] == 'I') &&
                            label[1] == '-';
      if (!prefixed) {
        throw InvalidTagSet("iob2 label '" + label +
                            "' must be O, B-* or I-*");
      }
    }
  }
  if (scheme_ == TagScheme::kIob2) {
    if (!contains("O")) throw InvalidTagSet("iob2 tag set lacks 'O'");
    fallback_ = "O";
  } else {
    fallback_ = contains("X") ? "X" : labels_.back();
  }
}

bool TagSet::contains(std::string_view tag) const {
  return index_.find(tag) != index_.end();
}

std::optional<std::size_t> TagSet::index_of(std::string_view tag) const {
  auto it = index_.find(tag);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const TagSet& panx_tagset() {
  static const TagSet tagset(
      "panx", {"B-LOC", "B-ORG", "B-PER", "I-LOC", "I-ORG", "I-PER", "O"},
      TagScheme::kIob2);
  return tagset;
}

const TagSet& udpos_tagset() {
  static const TagSet tagset(
      "udpos",
      {"ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
       "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"},
      TagScheme::kPlain);
  return tagset;
}

const TagSet& tagset_for(Task task) {
  return task == Task::kPanx ? panx_tagset() : udpos_tagset();
}

std::string LabeledSentence::text() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

void validate_sentence(const LabeledSentence& sentence, const TagSet& tagset) {
  if (sentence.tokens.empty()) {
    throw InvalidSentence("sentence '" + sentence.sentence_id +
                          "' has no tokens");
  }
  for (const auto& token : sentence.tokens) {
    if (token.empty()) {
      throw InvalidSentence("sentence '" + sentence.sentence_id +
                            "' has an empty token");
    }
  }
  if (!sentence.tags) return;
  if (sentence.tags->size() != sentence.tokens.size()) {
    throw InvalidSentence("sentence '" + sentence.sentence_id + "' has " +
                          std::to_string(sentence.tokens.size()) +
                          " tokens but " +
                          std::to_string(sentence.tags->size()) + " tags");
  }
  for (const auto& tag : *sentence.tags) {
    if (!tagset.contains(tag)) throw UnknownTag(0, tag);
  }
}

SplitName parse_split_name(std::string_view name) {
  if (name == "train") return SplitName::kTrain;
  if (name == "dev") return SplitName::kDev;
  if (name == "test") return SplitName::kTest;
  throw UsageError("unknown split '" + std::string(name) +
                   "' (expected train, dev or test)");
}

std::string_view split_name(SplitName name) {
  switch (name) {
    case SplitName::kTrain:
      return "train";
    case SplitName::kDev:
      return "dev";
    case SplitName::kTest:
      return "test";
  }
  return "train";
}

CorpusSplit::CorpusSplit(SplitName name, std::string language,
                         std::vector<LabeledSentence> sentences)
    : name_(name),
      language_(std::move(language)),
      sentences_(std::move(sentences)) {
  for (const auto& sentence : sentences_) {
    if (sentence.language != language_) {
      throw InvalidSentence("sentence '" + sentence.sentence_id +
                            "' has language '" + sentence.language +
                            "' in a '" + language_ + "' split");
    }
  }
}

std::size_t CorpusSplit::token_count() const {
  std::size_t total = 0;
  for (const auto& sentence : sentences_) total += sentence.tokens.size();
  return total;
}

bool CorpusSplit::fully_labeled() const {
  return std::all_of(sentences_.begin(), sentences_.end(),
                     [](const LabeledSentence& s) { return s.labeled(); });
}

namespace {

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

CorpusSplit parse_conll(std::string_view text, const TagSet& tagset,
                        const ParseOptions& options) {
  const std::string prefix =
      options.id_prefix.value_or(options.language + "-" +
                                 std::string(split_name(options.split)) + "-");
  std::vector<LabeledSentence> sentences;

  LabeledSentence current;
  std::vector<std::string> current_tags;
  // Whether the sentence under construction carries tags; fixed by its first
  // token line.
  std::optional<bool> current_labeled;

  auto flush = [&] {
    if (current.tokens.empty()) return;
    current.sentence_id = prefix + std::to_string(sentences.size());
    current.language = options.language;
    if (*current_labeled) current.tags = std::move(current_tags);
    sentences.push_back(std::move(current));
    current = LabeledSentence{};
    current_tags.clear();
    current_labeled.reset();
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
    if (line.front() == '#' && line.find('\t') == std::string_view::npos) {
      continue;
    }

    auto fields = split_tabs(line);
    if (fields.size() > 2 || fields[0].empty()) throw RaggedLine(line_no);
    const bool has_tag = fields.size() == 2;
    if (current_labeled && *current_labeled != has_tag) {
      throw RaggedLine(line_no);
    }
    current_labeled = has_tag;
    current.tokens.emplace_back(fields[0]);
    if (has_tag) {
      if (!tagset.contains(fields[1])) {
        throw UnknownTag(line_no, std::string(fields[1]));
      }
      current_tags.emplace_back(fields[1]);
    }
  }
  flush();

  if (sentences.empty()) throw EmptyCorpus();
  return CorpusSplit(options.split, options.language, std::move(sentences));
}

std::string serialize_conll(const CorpusSplit& split) {
  std::string out;
  for (const auto& sentence : split.sentences()) {
    for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
      out += sentence.tokens[i];
      if (sentence.tags) {
        out += '\t';
        out += (*sentence.tags)[i];
      }
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

StatsReport dataset_stats(std::span<const CorpusSplit> splits,
                          const TagSet& tagset) {
  StatsReport report;
  report.task = tagset.task_name();
  for (const auto& split : splits) {
    SplitStats stats;
    stats.name = split.name();
    stats.language = split.language();
    stats.sentences = split.size();
    stats.tagset_labels = tagset.size();
    std::vector<std::size_t> counts(tagset.size(), 0);
    for (const auto& sentence : split.sentences()) {
      stats.tokens += sentence.tokens.size();
      if (!sentence.tags) {
        stats.unlabeled_tokens += sentence.tokens.size();
        continue;
      }
      for (const auto& tag : *sentence.tags) {
        if (auto idx = tagset.index_of(tag)) ++counts[*idx];
      }
    }
    for (std::size_t i = 0; i < tagset.size(); ++i) {
      stats.histogram.emplace_back(tagset.label(i), counts[i]);
      if (counts[i] > 0) ++stats.observed_labels;
    }
    report.splits.push_back(std::move(stats));
  }
  return report;
}

std::vector<Iob2Violation> validate_iob2(const LabeledSentence& sentence) {
  std::vector<Iob2Violation> violations;
  if (!sentence.tags) return violations;
  const auto& tags = *sentence.tags;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    if (tag.size() < 2 || tag.compare(0, 2, "I-") != 0) continue;
    const std::string_view type = std::string_view(tag).substr(2);
    bool ok = false;
    if (i > 0) {
      const std::string& prev = tags[i - 1];
      ok = prev.size() > 2 && (prev[0] == 'B' || prev[0] == 'I') &&
           prev[1] == '-' && std::string_view(prev).substr(2) == type;
    }
    if (!ok) violations.push_back({i, tag, i > 0 ? tags[i - 1] : ""});
  }
  return violations;
}

}  // namespace topro
