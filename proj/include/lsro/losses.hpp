#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsro/tensor.hpp"

namespace lsro {

enum class LabelKind { one_hot, lsr, lsro_uniform };

/// Z of the mixed loss: 0 for a real training sample, 1 for a generated one.
enum class SourceFlag : std::uint8_t { real = 0, generated = 1 };

inline int z_value(SourceFlag z) { return z == SourceFlag::generated ? 1 : 0; }

// Correctly rounded sum of a sequence of doubles (Shewchuk partials).
inline double exact_sum(std::span<const double> values) {
  std::vector<double> partials;
  for (double x : values) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  double hi = 0.0;
  while (!partials.empty()) {
    const double x = hi;
    const double y = partials.back();
    partials.pop_back();
    hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) {
      // Round-half-even correction against the next partial.
      if (!partials.empty() && ((lo < 0.0 && partials.back() < 0.0) ||
                                (lo > 0.0 && partials.back() > 0.0))) {
        const double twice = lo * 2.0;
        const double candidate = hi + twice;
        if (twice == candidate - hi) hi = candidate;
      }
      break;
    }
  }
  return hi;
}

struct LabelDistribution {
  std::vector<double> probs;
  LabelKind kind = LabelKind::one_hot;

  std::size_t size() const { return probs.size(); }
  double total() const { return exact_sum(probs); }
};

inline void check_class(std::size_t y, std::size_t num_classes, const char* what) {
  if (num_classes < 2) {
    throw std::invalid_argument(std::string(what) + ": need at least 2 classes, got " +
                                std::to_string(num_classes));
  }
  if (y >= num_classes) {
    throw std::out_of_range(std::string(what) + ": class " + std::to_string(y) +
                            " outside [0, " + std::to_string(num_classes) + ")");
  }
}

inline LabelDistribution one_hot(std::size_t y, std::size_t num_classes) {
  check_class(y, num_classes, "one_hot");
  LabelDistribution d{std::vector<double>(num_classes, 0.0), LabelKind::one_hot};
  d.probs[y] = 1.0;
  return d;
}

/// Smoothed target: eps/K on every class plus 1-eps on the ground truth.
/// The ground-truth entry is 1 - (K-1)*eps/K rounded once, so the entries
/// sum to exactly 1 under correctly rounded summation.
inline LabelDistribution lsr_distribution(std::size_t y, std::size_t num_classes, double eps) {
  check_class(y, num_classes, "lsr_distribution");
  if (!(eps >= 0.0 && eps <= 1.0)) {
    throw std::invalid_argument("lsr_distribution: epsilon must lie in [0,1], got " +
                                std::to_string(eps));
  }
  const double off = eps / static_cast<double>(num_classes);
  LabelDistribution d{std::vector<double>(num_classes, off), LabelKind::lsr};
  d.probs[y] = std::fma(-static_cast<double>(num_classes - 1), off, 1.0);
  return d;
}

/// Uniform target over all K training classes for an outlier sample.
inline LabelDistribution lsro_distribution(std::size_t num_classes) {
  if (num_classes < 2) {
    throw std::invalid_argument("lsro_distribution: need at least 2 classes, got " +
                                std::to_string(num_classes));
  }
  // The last entry absorbs the rounding of 1/K so the row sums to exactly 1.
  const double share = 1.0 / static_cast<double>(num_classes);
  std::vector<double> probs(num_classes, share);
  probs.back() = std::fma(-static_cast<double>(num_classes - 1), share, 1.0);
  return {std::move(probs), LabelKind::lsro_uniform};
}

// Target for a generated sample under the extra-class strategy: one-hot at
// index K over K+1 classes.
inline LabelDistribution all_in_one_label(std::size_t num_classes) {
  if (num_classes < 2) {
    throw std::invalid_argument("all_in_one_label: need at least 2 classes, got " +
                                std::to_string(num_classes));
  }
  return one_hot(num_classes, num_classes + 1);
}

inline double guarded_log(double p) { return std::log(std::max(p, kLogFloor)); }

inline double cross_entropy(std::span<const double> p, const LabelDistribution& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("cross_entropy: prediction has " + std::to_string(p.size()) +
                                " entries, target has " + std::to_string(q.size()));
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) acc += q.probs[k] * guarded_log(p[k]);
  return -acc;
}

/// Mixed loss over real (Z=0, label y) and generated (Z=1, no label)
/// samples: -(1-Z) log p(y) - (Z/K) sum_k log p(k).
inline double lsro_loss(std::span<const double> p, std::optional<std::size_t> y, SourceFlag z,
                        std::size_t num_classes) {
  if (p.size() != num_classes) {
    throw std::invalid_argument("lsro_loss: prediction has " + std::to_string(p.size()) +
                                " entries, expected " + std::to_string(num_classes));
  }
  if (z == SourceFlag::real) {
    if (!y) throw std::invalid_argument("lsro_loss: real sample (Z=0) requires a label");
    check_class(*y, num_classes, "lsro_loss");
    return -guarded_log(p[*y]);
  }
  if (y) throw std::invalid_argument("lsro_loss: generated sample (Z=1) must not carry a label");
  if (num_classes < 2) throw std::invalid_argument("lsro_loss: need at least 2 classes");
  double acc = 0.0;
  for (double pk : p) acc += guarded_log(pk);
  return -acc / static_cast<double>(num_classes);
}

inline double lsr_loss(std::span<const double> p, std::size_t y, std::size_t num_classes,
                       double eps) {
  check_class(y, num_classes, "lsr_loss");
  if (!(eps >= 0.0 && eps <= 1.0)) {
    throw std::invalid_argument("lsr_loss: epsilon must lie in [0,1], got " + std::to_string(eps));
  }
  if (p.size() != num_classes) {
    throw std::invalid_argument("lsr_loss: prediction has " + std::to_string(p.size()) +
                                " entries, expected " + std::to_string(num_classes));
  }
  double all = 0.0;
  for (double pk : p) all += guarded_log(pk);
  return -(1.0 - eps) * guarded_log(p[y]) - (eps / static_cast<double>(num_classes)) * all;
}

// argmax with ties to the smallest index.
inline std::size_t pseudo_label(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("pseudo_label: empty prediction");
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (p[k] > p[best]) best = k;
  }
  return best;
}

/// Batch loss -(1/N) sum_i sum_k T[i,k] log P[i,k] through the autodiff
/// engine. Per-sample weights are folded into the rows of `targets`.
inline Tensor weighted_cross_entropy(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape()) {
    throw std::invalid_argument("weighted_cross_entropy: probs " + shape_str(probs.shape()) +
                                " vs targets " + shape_str(targets.shape()));
  }
  return scale(sum(mul(targets, safe_log(probs))), -1.0 / static_cast<double>(probs.rows()));
}

}  // namespace lsro
