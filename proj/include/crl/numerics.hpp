#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "crl/error.hpp"

namespace crl {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::Dimension,
            "matrix storage of " + std::to_string(data_.size()) + " values for " + std::to_string(rows_) + "x" +
                std::to_string(cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector& data() noexcept { return data_; }
  const Vector& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Dimension, "dot of lengths " + std::to_string(a.size()) + " and " +
                                                          std::to_string(b.size()));
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// Stable softmax: the maximum is subtracted before exponentiation.
inline Vector softmax(std::span<const double> logits) {
  require(logits.size() >= 2, ErrorKind::Dimension, "softmax needs at least 2 logits");
  require(all_finite(logits), ErrorKind::InvalidInput, "softmax of non-finite logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

/// log-softmax, finite even where softmax underflows to zero.
inline Vector log_softmax(std::span<const double> logits) {
  require(logits.size() >= 2, ErrorKind::Dimension, "log_softmax needs at least 2 logits");
  require(all_finite(logits), ErrorKind::InvalidInput, "log_softmax of non-finite logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double g : logits) total += std::exp(g - top);
  const double log_z = top + std::log(total);
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

/// Scale factor 1 + tau * ||v||_2 used by logit and feature normalization.
inline double normalization_scale(std::span<const double> v, double tau) { return 1.0 + tau * l2_norm(v); }

/// softmax(g / (1 + tau ||g||_2)). With tau = 0 the scale is exactly 1 and the
/// result is bitwise equal to softmax(g).
inline Vector normalized_softmax(std::span<const double> logits, double tau) {
  require(tau >= 0.0 && std::isfinite(tau), ErrorKind::InvalidParameter, "normalization factor must be >= 0");
  require(all_finite(logits), ErrorKind::InvalidInput, "normalized_softmax of non-finite logits");
  const double scale = normalization_scale(logits, tau);
  Vector scaled(logits.begin(), logits.end());
  for (double& g : scaled) g /= scale;
  return softmax(scaled);
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return std::max(h, 0.0);
}

inline double euclid_sq(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Dimension,
          "euclid_sq of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Mann-Whitney AUC: P(member score > non-member score) + P(tie) / 2.
/// Runs in O(n log n) via midranks of the pooled sample.
inline double auc(std::span<const double> member_scores, std::span<const double> nonmember_scores) {
  require(!member_scores.empty() && !nonmember_scores.empty(), ErrorKind::InvalidInput,
          "auc needs non-empty member and non-member score lists");
  require(all_finite(member_scores) && all_finite(nonmember_scores), ErrorKind::InvalidInput,
          "auc of non-finite scores");
  struct Entry {
    double score;
    bool member;
  };
  std::vector<Entry> pooled;
  pooled.reserve(member_scores.size() + nonmember_scores.size());
  for (double s : member_scores) pooled.push_back({s, true});
  for (double s : nonmember_scores) pooled.push_back({s, false});
  std::sort(pooled.begin(), pooled.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Sum of (1-based) midranks of the members.
  double member_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    std::size_t members_in_run = 0;
    while (j < pooled.size() && pooled[j].score == pooled[i].score) {
      members_in_run += pooled[j].member ? 1 : 0;
      ++j;
    }
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    member_rank_sum += midrank * static_cast<double>(members_in_run);
    i = j;
  }
  const double m = static_cast<double>(member_scores.size());
  const double n = static_cast<double>(nonmember_scores.size());
  const double u = member_rank_sum - m * (m + 1.0) / 2.0;
  return std::clamp(u / (m * n), 0.0, 1.0);
}

/// Largest minus second-largest probability.
inline double distance_to_boundary(std::span<const double> p) {
  require(p.size() >= 2, ErrorKind::Dimension, "distance_to_boundary needs at least 2 classes");
  double first = -1.0;
  double second = -1.0;
  for (double v : p) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return std::clamp(first - second, 0.0, 1.0);
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace crl
