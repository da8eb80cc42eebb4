#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crl/error.hpp"
#include "crl/numerics.hpp"

namespace crl {

/// Which case of a relaxed loss fired for a mini-batch.
enum class Branch { Plain, Reflect, Soft };

inline const char* to_string(Branch b) {
  switch (b) {
    case Branch::Plain: return "plain";
    case Branch::Reflect: return "reflect";
    case Branch::Soft: return "soft";
  }
  return "?";
}

/// Value of a mini-batch loss plus its analytic gradients. Gradients that a
/// loss does not produce stay std::nullopt / empty.
struct LossResult {
  double loss = 0.0;
  std::optional<Matrix> grad_logits;
  std::optional<Matrix> grad_features;
  std::map<std::size_t, Vector> grad_centers;  // class index -> d loss / d c_i
  Branch branch = Branch::Plain;
};

/// Learnable class centers living in feature space, one row per class.
struct CenterBank {
  Matrix centers;
  double center_lr = 0.001;

  std::size_t num_classes() const noexcept { return centers.rows(); }
  std::size_t dim() const noexcept { return centers.cols(); }
  bool empty() const noexcept { return centers.empty(); }

  /// c_i <- c_i - center_lr * grad_i for every class with a gradient entry.
  void apply(const std::map<std::size_t, Vector>& grads) {
    for (const auto& [cls, g] : grads) {
      auto row = centers.row(cls);
      for (std::size_t k = 0; k < row.size(); ++k) row[k] -= center_lr * g[k];
    }
  }
};

struct RelaxConfig {
  double alpha_rce = 1.0;
  double alpha_rcl = 0.5;
  double tau_rce = 0.1;
  double tau_rcl = 0.1;
  double lambda = 1.0;

  void validate() const {
    auto check = [](double v, const char* name) {
      require(v >= 0.0 && std::isfinite(v), ErrorKind::Config, std::string("relax.") + name + " must be >= 0");
    };
    check(alpha_rce, "alpha_rce");
    check(alpha_rcl, "alpha_rcl");
    check(tau_rce, "tau_rce");
    check(tau_rcl, "tau_rcl");
    check(lambda, "lambda");
  }
};

namespace detail {

inline void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  require(labels.size() == batch, ErrorKind::Dimension,
          std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch));
  require(batch > 0, ErrorKind::InvalidInput, "empty batch");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < classes, ErrorKind::Label,
            "label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
}

// Backward of v -> v / (1 + tau ||v||): given dL/d(normalized v), returns dL/dv.
inline Vector normalize_backward(std::span<const double> v, double tau, std::span<const double> upstream) {
  const double norm = l2_norm(v);
  const double scale = 1.0 + tau * norm;
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = upstream[i] / scale;
  if (tau > 0.0 && norm > 0.0) {
    const double k = tau * dot(upstream, v) / (norm * scale * scale);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] -= k * v[i];
  }
  return out;
}

inline Vector normalize(std::span<const double> v, double tau) {
  const double scale = normalization_scale(v, tau);
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= scale;
  return out;
}

// Mean over rows of -sum_i t_i ln softmax(g / (1 + tau ||g||))_i, where the
// per-row target t (summing to 1) comes from target_fn and is held constant.
template <typename TargetFn>
LossResult normalized_cross_entropy(const Matrix& logits, std::span<const int> labels, double tau,
                                    TargetFn&& target_fn) {
  require(tau >= 0.0 && std::isfinite(tau), ErrorKind::InvalidParameter, "normalization factor must be >= 0");
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  check_labels(labels, batch, classes);
  const double inv_b = 1.0 / static_cast<double>(batch);

  LossResult out;
  out.grad_logits = Matrix(batch, classes);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto g = logits.row(r);
    const Vector h = normalize(g, tau);
    const Vector log_p = log_softmax(h);
    const Vector target = target_fn(g, labels[r]);
    Vector upstream(classes);
    for (std::size_t i = 0; i < classes; ++i) {
      if (target[i] != 0.0) out.loss -= target[i] * log_p[i] * inv_b;
      upstream[i] = std::exp(log_p[i]) - target[i];
    }
    const Vector grad = normalize_backward(g, tau, upstream);
    auto dst = out.grad_logits->row(r);
    for (std::size_t i = 0; i < classes; ++i) dst[i] = grad[i] * inv_b;
  }
  return out;
}

inline Vector one_hot(std::size_t classes, int y) {
  Vector t(classes, 0.0);
  t[static_cast<std::size_t>(y)] = 1.0;
  return t;
}

inline double mean_loss_sign(double loss, double alpha) { return loss < alpha ? -1.0 : 1.0; }

// |L - alpha| with the gradient multiplied by sign(L - alpha).
inline LossResult reflect(LossResult r, double alpha) {
  const double sign = mean_loss_sign(r.loss, alpha);
  r.loss = std::abs(r.loss - alpha);
  if (sign < 0.0) {
    if (r.grad_logits)
      for (double& v : r.grad_logits->data()) v = -v;
    if (r.grad_features)
      for (double& v : r.grad_features->data()) v = -v;
    for (auto& [cls, g] : r.grad_centers)
      for (double& v : g) v = -v;
  }
  r.branch = Branch::Reflect;
  return r;
}

}  // namespace detail

/// Mean cross-entropy; grad_logits = (p - onehot) / B.
inline LossResult ce_loss(const Matrix& logits, std::span<const int> labels) {
  const std::size_t classes = logits.cols();
  return detail::normalized_cross_entropy(logits, labels, 0.0, [classes](std::span<const double>, int y) {
    return detail::one_hot(classes, y);
  });
}

/// Keeps p_y and spreads 1 - p_y evenly over the other classes.
inline Vector soft_target(std::span<const double> p, int y) {
  require(p.size() >= 2, ErrorKind::Config, "soft targets need at least 2 classes");
  require(y >= 0 && static_cast<std::size_t>(y) < p.size(), ErrorKind::Label, "label out of range");
  const double py = p[static_cast<std::size_t>(y)];
  Vector t(p.size(), (1.0 - py) / static_cast<double>(p.size() - 1));
  t[static_cast<std::size_t>(y)] = py;
  return t;
}

/// Cross-entropy against the logit-normalized probabilities.
inline LossResult lce_loss(const Matrix& logits, std::span<const int> labels, double tau_rce) {
  const std::size_t classes = logits.cols();
  return detail::normalized_cross_entropy(logits, labels, tau_rce, [classes](std::span<const double>, int y) {
    return detail::one_hot(classes, y);
  });
}

/// Soft cross-entropy: targets built from the plain softmax (gradient-stopped),
/// log-probabilities from the normalized softmax.
inline LossResult sce_loss(const Matrix& logits, std::span<const int> labels, double tau_rce) {
  return detail::normalized_cross_entropy(logits, labels, tau_rce, [](std::span<const double> g, int y) {
    return soft_target(softmax(g), y);
  });
}

/// RelaxLoss: threshold test first, then epoch parity.
inline LossResult relax_loss(const Matrix& logits, std::span<const int> labels, double alpha_rce, int epoch) {
  require(epoch >= 1, ErrorKind::InvalidParameter, "epochs are 1-based");
  LossResult ce = ce_loss(logits, labels);
  if (ce.loss > alpha_rce) {
    ce.branch = Branch::Plain;
    return ce;
  }
  if (epoch % 2 == 0) return detail::reflect(std::move(ce), alpha_rce);
  LossResult soft = sce_loss(logits, labels, 0.0);
  soft.branch = Branch::Soft;
  return soft;
}

/// ImpRelaxLoss: epoch parity first, then the threshold test, on the
/// logit-normalized cross-entropy.
inline LossResult imp_relax_loss(const Matrix& logits, std::span<const int> labels, double alpha_rce, double tau_rce,
                                 int epoch) {
  require(epoch >= 1, ErrorKind::InvalidParameter, "epochs are 1-based");
  LossResult lce = lce_loss(logits, labels, tau_rce);
  if (epoch % 2 == 0) return detail::reflect(std::move(lce), alpha_rce);
  if (lce.loss > alpha_rce) {
    lce.branch = Branch::Plain;
    return lce;
  }
  LossResult soft = sce_loss(logits, labels, tau_rce);
  soft.branch = Branch::Soft;
  return soft;
}

/// sum_j ||q_j - c_{y_j}||^2 / 2B, with gradients for features and touched centers.
inline LossResult center_loss(const Matrix& features, const CenterBank& bank, std::span<const int> labels) {
  const std::size_t batch = features.rows();
  const std::size_t dim = features.cols();
  require(bank.dim() == dim, ErrorKind::Dimension,
          "features have " + std::to_string(dim) + " dims, centers have " + std::to_string(bank.dim()));
  detail::check_labels(labels, batch, bank.num_classes());
  const double inv_b = 1.0 / static_cast<double>(batch);

  LossResult out;
  out.grad_features = Matrix(batch, dim);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto q = features.row(r);
    const auto cls = static_cast<std::size_t>(labels[r]);
    const auto c = bank.centers.row(cls);
    out.loss += 0.5 * euclid_sq(q, c) * inv_b;
    auto gq = out.grad_features->row(r);
    Vector& gc = out.grad_centers.try_emplace(cls, dim, 0.0).first->second;
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = (q[k] - c[k]) * inv_b;
      gq[k] = d;
      gc[k] -= d;
    }
  }
  return out;
}

/// Relaxed center loss on normalized features and centers. The mini-batch
/// picks one scenario: even epoch -> REFLECT |L_ct - alpha|; L_ct > alpha ->
/// PLAIN; otherwise SOFT, which weights the pull to the center by p_y and the
/// pull to the origin by 1 - p_y. probs are the plain softmax outputs and are
/// treated as constants.
inline LossResult relaxed_center_loss(const Matrix& features, const CenterBank& bank, const Matrix& probs,
                                      std::span<const int> labels, double alpha_rcl, double tau_rcl, int epoch) {
  require(epoch >= 1, ErrorKind::InvalidParameter, "epochs are 1-based");
  require(tau_rcl >= 0.0 && std::isfinite(tau_rcl), ErrorKind::InvalidParameter, "tau_rcl must be >= 0");
  const std::size_t batch = features.rows();
  const std::size_t dim = features.cols();
  require(bank.dim() == dim, ErrorKind::Dimension,
          "features have " + std::to_string(dim) + " dims, centers have " + std::to_string(bank.dim()));
  detail::check_labels(labels, batch, bank.num_classes());
  require(probs.rows() == batch && probs.cols() == bank.num_classes(), ErrorKind::InvalidInput,
          "probability matrix shape does not match batch x classes");
  for (std::size_t r = 0; r < batch; ++r) {
    const auto p = probs.row(r);
    double total = 0.0;
    for (double v : p) {
      require(v >= 0.0 && v <= 1.0, ErrorKind::InvalidInput, "probabilities must lie in [0,1]");
      total += v;
    }
    require(std::abs(total - 1.0) <= 1e-9, ErrorKind::InvalidInput, "probability rows must sum to 1");
  }
  const double inv_b = 1.0 / static_cast<double>(batch);

  std::vector<Vector> q_norm(batch);
  std::vector<Vector> c_norm(batch);
  double l_ct = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    q_norm[r] = detail::normalize(features.row(r), tau_rcl);
    c_norm[r] = detail::normalize(bank.centers.row(static_cast<std::size_t>(labels[r])), tau_rcl);
    l_ct += 0.5 * euclid_sq(q_norm[r], c_norm[r]) * inv_b;
  }

  Branch branch;
  double value;
  if (epoch % 2 == 0) {
    branch = Branch::Reflect;
    value = std::abs(l_ct - alpha_rcl);
  } else if (l_ct > alpha_rcl) {
    branch = Branch::Plain;
    value = l_ct;
  } else {
    branch = Branch::Soft;
    value = 0.0;
  }
  const double sign = branch == Branch::Reflect ? detail::mean_loss_sign(l_ct, alpha_rcl) : 1.0;

  LossResult out;
  out.branch = branch;
  out.grad_features = Matrix(batch, dim);
  Vector gq(dim);
  Vector gc(dim);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto cls = static_cast<std::size_t>(labels[r]);
    // Weights on the center term and on the origin term of this sample.
    double w_center = sign;
    double w_origin = 0.0;
    if (branch == Branch::Soft) {
      w_center = probs(r, cls);
      w_origin = 1.0 - w_center;
      value += 0.5 * (w_center * euclid_sq(q_norm[r], c_norm[r]) + w_origin * dot(q_norm[r], q_norm[r])) * inv_b;
    }
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = q_norm[r][k] - c_norm[r][k];
      gq[k] = (w_center * diff + w_origin * q_norm[r][k]) * inv_b;
      gc[k] = -w_center * diff * inv_b;
    }
    const Vector dq = detail::normalize_backward(features.row(r), tau_rcl, gq);
    std::copy(dq.begin(), dq.end(), out.grad_features->row(r).begin());
    const Vector dc = detail::normalize_backward(bank.centers.row(cls), tau_rcl, gc);
    Vector& acc = out.grad_centers.try_emplace(cls, dim, 0.0).first->second;
    for (std::size_t k = 0; k < dim; ++k) acc[k] += dc[k];
  }
  out.loss = value;
  return out;
}

/// L = L_rce + lambda * L_rcl. Center gradients are those of L_rcl itself,
/// not scaled by lambda: the center update uses grad L_rcl.
inline LossResult crl_total(const LossResult& rce, const LossResult& rcl, double lambda) {
  LossResult out;
  out.loss = rce.loss + lambda * rcl.loss;
  out.branch = rce.branch;
  auto combine = [lambda](const std::optional<Matrix>& a, const std::optional<Matrix>& b) -> std::optional<Matrix> {
    if (!a && !b) return std::nullopt;
    if (a && b)
      require(a->rows() == b->rows() && a->cols() == b->cols(), ErrorKind::Dimension,
              "cannot combine gradients of different shapes");
    Matrix m = a ? *a : Matrix(b->rows(), b->cols());
    if (b)
      for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] += lambda * b->data()[k];
    return m;
  };
  out.grad_logits = combine(rce.grad_logits, rcl.grad_logits);
  out.grad_features = combine(rce.grad_features, rcl.grad_features);
  out.grad_centers = rcl.grad_centers;
  return out;
}

/// Cross-entropy against (1 - eps) onehot + eps / C.
inline LossResult label_smoothing_loss(const Matrix& logits, std::span<const int> labels, double eps) {
  require(eps >= 0.0 && eps < 1.0, ErrorKind::Config, "label smoothing eps must be in [0,1)");
  const std::size_t classes = logits.cols();
  return detail::normalized_cross_entropy(logits, labels, 0.0, [classes, eps](std::span<const double>, int y) {
    Vector t(classes, eps / static_cast<double>(classes));
    t[static_cast<std::size_t>(y)] += 1.0 - eps;
    return t;
  });
}

/// L_ce - beta * H(p), averaged over the batch.
inline LossResult confidence_penalty_loss(const Matrix& logits, std::span<const int> labels, double beta) {
  require(beta >= 0.0 && std::isfinite(beta), ErrorKind::Config, "confidence penalty beta must be >= 0");
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  detail::check_labels(labels, batch, classes);
  const double inv_b = 1.0 / static_cast<double>(batch);

  LossResult out;
  out.grad_logits = Matrix(batch, classes);
  for (std::size_t r = 0; r < batch; ++r) {
    const Vector log_p = log_softmax(logits.row(r));
    Vector p(classes);
    double h = 0.0;
    for (std::size_t i = 0; i < classes; ++i) {
      p[i] = std::exp(log_p[i]);
      h -= p[i] * log_p[i];
    }
    const auto y = static_cast<std::size_t>(labels[r]);
    out.loss += (-log_p[y] - beta * h) * inv_b;
    auto g = out.grad_logits->row(r);
    for (std::size_t i = 0; i < classes; ++i)
      g[i] = (p[i] - (i == y ? 1.0 : 0.0) + beta * p[i] * (log_p[i] + h)) * inv_b;
  }
  return out;
}

}  // namespace crl
