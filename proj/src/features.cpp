#include "topro/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace topro {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

// Coarse character classes: X upper, x lower, d digit, p other ASCII,
// u non-ASCII byte. Runs collapse to one symbol.
std::string shape(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    char cls;
    if (c >= 0x80) {
      cls = 'u';
    } else if (std::isupper(c)) {
      cls = 'X';
    } else if (std::islower(c)) {
      cls = 'x';
    } else if (std::isdigit(c)) {
      cls = 'd';
    } else {
      cls = 'p';
    }
    if (out.empty() || out.back() != cls) out += cls;
  }
  return out;
}

void add(SparseFeatures& features, std::string_view key, std::size_t dim) {
  features.emplace_back(static_cast<std::uint32_t>(fnv1a64(key) % dim), 1.0);
}

}  // namespace

SparseFeatures token_features(std::string_view target,
                              std::span<const std::string> context,
                              std::optional<std::size_t> position,
                              const FeatureOptions& options) {
  SparseFeatures features;
  const std::size_t dim = options.dim;
  const std::string lower = lowercase(target);
  add(features, "bias", dim);
  add(features, "w:" + lower, dim);
  if (lower.size() >= 2) add(features, "s2:" + lower.substr(lower.size() - 2), dim);
  if (lower.size() >= 3) add(features, "s3:" + lower.substr(lower.size() - 3), dim);
  add(features, "shape:" + shape(target), dim);

  if (position && *position < context.size()) {
    for (std::size_t k = 1; k <= options.context_window; ++k) {
      const std::string tag = std::to_string(k) + ":";
      if (*position >= k) {
        add(features, "L" + tag + lowercase(context[*position - k]), dim);
      } else {
        add(features, "L" + tag + "<s>", dim);
      }
      if (*position + k < context.size()) {
        add(features, "R" + tag + lowercase(context[*position + k]), dim);
      } else {
        add(features, "R" + tag + "</s>", dim);
      }
    }
  }

  // Merge collisions so each index appears once.
  std::sort(features.begin(), features.end());
  SparseFeatures merged;
  for (const auto& [index, value] : features) {
    if (!merged.empty() && merged.back().first == index) {
      merged.back().second += value;
    } else {
      merged.emplace_back(index, value);
    }
  }
  return merged;
}

LinearSoftmax::LinearSoftmax(std::size_t rows, std::size_t dim)
    : rows_(rows), dim_(dim), weights_(rows * dim, 0.0) {}

double LinearSoftmax::logit(std::size_t row, const SparseFeatures& x) const {
  const double* w = weights_.data() + row * dim_;
  double z = 0.0;
  for (const auto& [index, value] : x) z += w[index] * value;
  return z;
}

std::vector<double> LinearSoftmax::probabilities(
    const SparseFeatures& x, std::span<const std::size_t> rows) const {
  std::vector<double> p(rows.size());
  double max_logit = -INFINITY;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    p[k] = logit(rows[k], x);
    max_logit = std::max(max_logit, p[k]);
  }
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(v - max_logit);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

LinearSoftmax::ExampleLoss LinearSoftmax::loss(
    const SparseFeatures& x, std::span<const std::size_t> rows,
    std::size_t gold_position, double floor,
    std::span<double> gradient) const {
  const std::vector<double> p = probabilities(x, rows);
  ExampleLoss result;
  const double p_gold = p[gold_position];
  result.clamped = p_gold < floor;
  result.loss = -std::log(std::max(p_gold, floor));
  if (gradient.empty() || result.clamped) return result;
  // d(-log p_g)/dz_k = p_k - [k == g]
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double dz = p[k] - (k == gold_position ? 1.0 : 0.0);
    double* g = gradient.data() + rows[k] * dim_;
    for (const auto& [index, value] : x) g[index] += dz * value;
  }
  return result;
}

}  // namespace topro
