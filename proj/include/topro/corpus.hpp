#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace topro {

enum class Task { kPanx, kUdpos };

Task parse_task(std::string_view name);
std::string_view task_name(Task task);

enum class TagScheme { kIob2, kPlain };

// An ordered, duplicate-free label set. The order is canonical: downstream
// argmax ties resolve to the earliest label.
class TagSet {
 public:
  TagSet(std::string task_name, std::vector<std::string> labels,
         TagScheme scheme);

  const std::string& task_name() const { return task_name_; }
  const std::vector<std::string>& labels() const { return labels_; }
  TagScheme scheme() const { return scheme_; }
  std::size_t size() const { return labels_.size(); }

  bool contains(std::string_view tag) const;
  // Position of `tag` in canonical order, or nullopt.
  std::optional<std::size_t> index_of(std::string_view tag) const;
  const std::string& label(std::size_t index) const { return labels_[index]; }

  // Catch-all class used when nothing else applies ("O" for IOB2, "X" for
  // UPOS).
  const std::string& fallback() const { return fallback_; }

  bool operator==(const TagSet& other) const {
    return task_name_ == other.task_name_ && labels_ == other.labels_ &&
           scheme_ == other.scheme_;
  }

 private:
  std::string task_name_;
  std::vector<std::string> labels_;
  TagScheme scheme_;
  std::string fallback_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// WikiANN-style NER tags in the order of the dataset's tag table.
const TagSet& panx_tagset();
// The 17 Universal POS tags.
const TagSet& udpos_tagset();
const TagSet& tagset_for(Task task);

struct LabeledSentence {
  std::string sentence_id;
  std::string language;
  std::vector<std::string> tokens;
  std::optional<std::vector<std::string>> tags;

  bool labeled() const { return tags.has_value(); }
  // Tokens joined by single spaces.
  std::string text() const;
};

// Throws InvalidSentence / UnknownTag when the sentence breaks its invariants.
void validate_sentence(const LabeledSentence& sentence, const TagSet& tagset);

enum class SplitName { kTrain, kDev, kTest };

SplitName parse_split_name(std::string_view name);
std::string_view split_name(SplitName name);

class CorpusSplit {
 public:
  CorpusSplit(SplitName name, std::string language,
              std::vector<LabeledSentence> sentences);

  SplitName name() const { return name_; }
  const std::string& language() const { return language_; }
  const std::vector<LabeledSentence>& sentences() const { return sentences_; }
  std::size_t size() const { return sentences_.size(); }
  std::size_t token_count() const;
  bool fully_labeled() const;

 private:
  SplitName name_;
  std::string language_;
  std::vector<LabeledSentence> sentences_;
};

struct ParseOptions {
  std::string language = "en";
  SplitName split = SplitName::kTrain;
  // Sentence ids are "<id_prefix><n>"; defaults to "<language>-<split>-".
  std::optional<std::string> id_prefix;
};

// One `token<TAB>tag` (or bare `token`) per line, blank line between
// sentences. Lines starting with '#' that contain no tab are comments.
CorpusSplit parse_conll(std::string_view text, const TagSet& tagset,
                        const ParseOptions& options = {});

std::string serialize_conll(const CorpusSplit& split);

struct SplitStats {
  SplitName name = SplitName::kTrain;
  std::string language;
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t unlabeled_tokens = 0;
  std::size_t tagset_labels = 0;
  std::size_t observed_labels = 0;
  // Canonical tag order; zero-count labels included.
  std::vector<std::pair<std::string, std::size_t>> histogram;
};

struct StatsReport {
  std::string task;
  std::vector<SplitStats> splits;
};

StatsReport dataset_stats(std::span<const CorpusSplit> splits,
                          const TagSet& tagset);

struct Iob2Violation {
  std::size_t index = 0;
  std::string tag;
  // Tag at index - 1, or empty at sentence start.
  std::string previous;

  bool operator==(const Iob2Violation&) const = default;
};

// Flags every "I-X" that follows neither "B-X" nor "I-X". Untagged sentences
// have no violations.
std::vector<Iob2Violation> validate_iob2(const LabeledSentence& sentence);

}  // namespace topro
