#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace topro {

// 64-bit FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a64(std::string_view bytes);

using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

struct FeatureOptions {
  std::size_t dim = 1024;
  // Neighbours on each side of the target that contribute features.
  std::size_t context_window = 1;
};

// Hashed indicator features of a target token and its neighbours: bias,
// lowercase surface, 2/3-char suffixes, word shape, and "L<k>:"/"R<k>:"
// neighbour surfaces. `position` is the target's index in `context`; when
// absent only target-intrinsic features fire. Colliding features are summed.
SparseFeatures token_features(std::string_view target,
                              std::span<const std::string> context,
                              std::optional<std::size_t> position,
                              const FeatureOptions& options);

// Row-major weight matrix mapping sparse features to one logit per row.
class LinearSoftmax {
 public:
  LinearSoftmax(std::size_t rows, std::size_t dim);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }

  std::span<double> parameters() { return weights_; }
  std::span<const double> parameters() const { return weights_; }

  double logit(std::size_t row, const SparseFeatures& x) const;

  // Softmax over the given rows.
  std::vector<double> probabilities(const SparseFeatures& x,
                                    std::span<const std::size_t> rows) const;

  // -log max(p[gold], floor) over the given rows; when `gradient` is non-null
  // its derivative w.r.t. the weights is added to it. Returns whether the
  // floor was hit (the derivative is zero there).
  struct ExampleLoss {
    double loss = 0.0;
    bool clamped = false;
  };
  ExampleLoss loss(const SparseFeatures& x, std::span<const std::size_t> rows,
                   std::size_t gold_position, double floor,
                   std::span<double> gradient) const;

 private:
  std::size_t rows_;
  std::size_t dim_;
  std::vector<double> weights_;
};

}  // namespace topro
