#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace topro {

// Coarse failure class. The CLI maps each onto a stable exit code.
enum class ErrorCategory {
  kUsage = 1,    // bad flags, bad config, out-of-scope requests
  kData = 2,     // corpus or prediction-file validation failures
  kBackend = 3,  // scorer / generator / transport failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what)
      : Error(ErrorCategory::kUsage, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::kUsage, "config: " + what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ErrorCategory::kData, what) {}
};

class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what)
      : Error(ErrorCategory::kBackend, what) {}
};

// corpus

class UnknownTag : public DataError {
 public:
  UnknownTag(std::size_t line_no, const std::string& tag)
      : DataError("UnknownTag: line " + std::to_string(line_no) + ": '" + tag +
                  "'"),
        line_no_(line_no),
        tag_(tag) {}

  std::size_t line_no() const { return line_no_; }
  const std::string& tag() const { return tag_; }

 private:
  std::size_t line_no_;
  std::string tag_;
};

class RaggedLine : public DataError {
 public:
  explicit RaggedLine(std::size_t line_no)
      : DataError("RaggedLine: line " + std::to_string(line_no) +
                  " does not have 1 or 2 tab-separated fields"),
        line_no_(line_no) {}

  std::size_t line_no() const { return line_no_; }

 private:
  std::size_t line_no_;
};

class EmptyCorpus : public DataError {
 public:
  explicit EmptyCorpus(const std::string& where = "")
      : DataError(where.empty() ? "EmptyCorpus: no sentences parsed"
                                : "EmptyCorpus: no sentences parsed from " +
                                      where) {}
};

class InvalidTagSet : public DataError {
 public:
  explicit InvalidTagSet(const std::string& what)
      : DataError("InvalidTagSet: " + what) {}
};

class InvalidSentence : public DataError {
 public:
  explicit InvalidSentence(const std::string& what)
      : DataError("InvalidSentence: " + what) {}
};

// pvp

class IndexOutOfRange : public UsageError {
 public:
  IndexOutOfRange(std::size_t index, std::size_t size)
      : UsageError("IndexOutOfRange: token index " + std::to_string(index) +
                   " for sentence of " + std::to_string(size) + " tokens") {}
};

class UnknownTask : public UsageError {
 public:
  explicit UnknownTask(const std::string& task)
      : UsageError("UnknownTask: '" + task + "' (supported: panx, udpos)") {}
};

class MissingTags : public DataError {
 public:
  explicit MissingTags(const std::string& sentence_id)
      : DataError("MissingTags: sentence '" + sentence_id +
                  "' has no gold tags") {}
};

class InvalidTemplate : public ConfigError {
 public:
  explicit InvalidTemplate(const std::string& what)
      : ConfigError("InvalidTemplate: " + what) {}
};

class InvalidVerbalizer : public ConfigError {
 public:
  explicit InvalidVerbalizer(const std::string& what)
      : ConfigError("InvalidVerbalizer: " + what) {}
};

// scoring

class UnknownCandidate : public BackendError {
 public:
  explicit UnknownCandidate(const std::string& word)
      : BackendError("UnknownCandidate: '" + word + "'") {}
};

class BackendUnavailable : public BackendError {
 public:
  explicit BackendUnavailable(const std::string& what)
      : BackendError("BackendUnavailable: " + what) {}
};

class MaskSymbolMissing : public BackendError {
 public:
  MaskSymbolMissing()
      : BackendError("MaskSymbolMissing: backend advertises no mask token") {}
};

class MultiPieceCandidate : public BackendError {
 public:
  MultiPieceCandidate(const std::string& word, int pieces)
      : BackendError("MultiPieceCandidate: '" + word + "' splits into " +
                     std::to_string(pieces) + " pieces") {}
};

class ProtocolError : public BackendError {
 public:
  explicit ProtocolError(const std::string& what)
      : BackendError("ProtocolError: " + what) {}
};

class GradientMismatch : public Error {
 public:
  GradientMismatch(std::size_t coordinate, double analytic, double numeric,
                   double relative_error)
      : Error(ErrorCategory::kBackend,
              "GradientMismatch: coordinate " + std::to_string(coordinate) +
                  " analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric) +
                  " rel_err=" + std::to_string(relative_error)) {}
};

// train

class NonFiniteLoss : public BackendError {
 public:
  NonFiniteLoss(int epoch, std::size_t batch)
      : BackendError("NonFiniteLoss: epoch " + std::to_string(epoch) +
                     " batch " + std::to_string(batch)) {}
};

class SeedFailure : public Error {
 public:
  SeedFailure(long long seed, const Error& cause)
      : Error(cause.category(),
              "seed " + std::to_string(seed) + " failed: " + cause.what()),
        seed_(seed) {}

  long long seed() const { return seed_; }

 private:
  long long seed_;
};

// eval

class LengthMismatch : public DataError {
 public:
  LengthMismatch(std::size_t gold, std::size_t predicted)
      : DataError("LengthMismatch: " + std::to_string(gold) + " gold vs " +
                  std::to_string(predicted) + " predicted tags") {}
};

class NoTargetLanguages : public DataError {
 public:
  explicit NoTargetLanguages(const std::string& pivot)
      : DataError("NoTargetLanguages: only the pivot '" + pivot +
                  "' was evaluated") {}
};

class LanguageSetMismatch : public DataError {
 public:
  explicit LanguageSetMismatch(const std::string& what)
      : DataError("LanguageSetMismatch: " + what) {}
};

}  // namespace topro
