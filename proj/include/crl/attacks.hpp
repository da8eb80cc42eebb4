#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "crl/data.hpp"
#include "crl/error.hpp"
#include "crl/losses.hpp"
#include "crl/model.hpp"
#include "crl/numerics.hpp"
#include "crl/trainer.hpp"

namespace crl {

// Membership scores are oriented so that higher means "more member-like".

inline double entropy_score(std::span<const double> p) { return -entropy(p); }

/// Negated modified entropy:
///   Mentr = -(1 - p_y) ln p_y - sum_{i != y} p_i ln(1 - p_i)
/// with log arguments clamped to >= 1e-12.
inline double m_entropy_score(std::span<const double> p, int y) {
  require(y >= 0 && static_cast<std::size_t>(y) < p.size(), ErrorKind::Label, "label out of range");
  constexpr double kFloor = 1e-12;
  double mentr = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i == static_cast<std::size_t>(y))
      mentr -= (1.0 - p[i]) * std::log(std::max(p[i], kFloor));
    else
      mentr -= p[i] * std::log(std::max(1.0 - p[i], kFloor));
  }
  return -mentr;
}

/// -|| d CE(f(x), y) / dx ||_2 for every row of x.
inline Vector grad_x_l2_scores(const ModelParams& params, const Matrix& x, std::span<const int> labels) {
  const ForwardTrace trace = forward(params, x);
  // Per-sample CE gradient (no 1/B averaging).
  LossResult ce = ce_loss(trace.logits, labels);
  const double batch = static_cast<double>(x.rows());
  for (double& v : ce.grad_logits->data()) v *= batch;
  const GradSet grads = backward(params, trace, ce.grad_logits, std::nullopt, true);
  Vector scores(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) scores[r] = -l2_norm(grads.input->row(r));
  return scores;
}

inline double grad_x_l2_score(const ModelParams& params, std::span<const double> x, int y) {
  const Matrix row(1, x.size(), Vector(x.begin(), x.end()));
  const int label[] = {y};
  return grad_x_l2_scores(params, row, label)[0];
}

struct MembershipScoreSet {
  Vector scores;
  std::vector<int> labels;
  std::vector<bool> is_member;

  std::size_t size() const noexcept { return scores.size(); }

  void validate() const {
    require(scores.size() == labels.size() && scores.size() == is_member.size(), ErrorKind::InvalidInput,
            "score set fields have different lengths");
    require(!scores.empty(), ErrorKind::InvalidInput, "empty score set");
    require(all_finite(scores), ErrorKind::InvalidInput, "non-finite membership score");
  }
};

/// (TPR + TNR) / 2 of the rule "member iff score >= threshold".
inline double balanced_accuracy(const MembershipScoreSet& set, std::span<const std::size_t> rows, double threshold) {
  std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t r : rows) {
    const bool predicted = set.scores[r] >= threshold;
    if (set.is_member[r]) {
      ++pos;
      tp += predicted ? 1 : 0;
    } else {
      ++neg;
      tn += predicted ? 0 : 1;
    }
  }
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

namespace detail {

// Candidate thresholds: below the minimum, every midpoint between consecutive
// distinct scores, and above the maximum. Returns the first (smallest)
// candidate with the best balanced accuracy, via a single sorted sweep.
inline double best_threshold(const MembershipScoreSet& set, std::span<const std::size_t> rows) {
  std::vector<std::size_t> sorted(rows.begin(), rows.end());
  std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });
  std::size_t pos = 0;
  for (std::size_t r : sorted) pos += set.is_member[r] ? 1 : 0;
  const std::size_t neg = sorted.size() - pos;
  const double lo = set.scores[sorted.front()];
  const double hi = set.scores[sorted.back()];

  // Threshold below everything: all predicted members.
  std::size_t tp = pos;
  std::size_t tn = 0;
  auto score_of = [&](std::size_t tp_, std::size_t tn_) {
    return 0.5 * (static_cast<double>(tp_) / static_cast<double>(pos) +
                  static_cast<double>(tn_) / static_cast<double>(neg));
  };
  double best = score_of(tp, tn);
  double best_t = lo - 1.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double v = set.scores[sorted[i]];
    std::size_t j = i;
    while (j < sorted.size() && set.scores[sorted[j]] == v) {
      if (set.is_member[sorted[j]])
        --tp;
      else
        ++tn;
      ++j;
    }
    const double t = j < sorted.size() ? 0.5 * (v + set.scores[sorted[j]]) : hi + 1.0;
    const double acc = score_of(tp, tn);
    if (acc > best) {
      best = acc;
      best_t = t;
    }
    i = j;
  }
  return best_t;
}

inline bool has_both_groups(const MembershipScoreSet& set, std::span<const std::size_t> rows) {
  bool member = false, nonmember = false;
  for (std::size_t r : rows) (set.is_member[r] ? member : nonmember) = true;
  return member && nonmember;
}

}  // namespace detail

/// One threshold per class maximizing balanced membership accuracy over that
/// class's samples. Classes lacking members or non-members use the threshold
/// fitted on the whole set.
inline Vector per_class_thresholds(const MembershipScoreSet& set, std::size_t num_classes) {
  set.validate();
  std::vector<std::size_t> all(set.size());
  std::iota(all.begin(), all.end(), 0);
  require(detail::has_both_groups(set, all), ErrorKind::InvalidInput,
          "threshold fitting needs both members and non-members");
  const double global = detail::best_threshold(set, all);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t r = 0; r < set.size(); ++r) {
    require(set.labels[r] >= 0 && static_cast<std::size_t>(set.labels[r]) < num_classes, ErrorKind::Label,
            "label out of range in score set");
    by_class[static_cast<std::size_t>(set.labels[r])].push_back(r);
  }
  Vector thresholds(num_classes, global);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (detail::has_both_groups(set, by_class[c])) thresholds[c] = detail::best_threshold(set, by_class[c]);
  return thresholds;
}

/// Fraction of samples whose membership is predicted correctly by the
/// threshold of their class.
inline double thresholded_accuracy(const MembershipScoreSet& set, std::span<const double> thresholds) {
  set.validate();
  std::size_t correct = 0;
  for (std::size_t r = 0; r < set.size(); ++r) {
    const bool predicted = set.scores[r] >= thresholds[static_cast<std::size_t>(set.labels[r])];
    correct += predicted == set.is_member[r] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

struct Histogram {
  Vector edges;  // bins + 1 edges
  std::vector<std::size_t> member_counts;
  std::vector<std::size_t> nonmember_counts;

  std::size_t bins() const noexcept { return member_counts.size(); }
};

/// Equal-width bins over [lo, hi]; values outside are clamped into the end
/// bins, so counts always sum to the sample counts.
inline Histogram make_histogram(std::span<const double> members, std::span<const double> nonmembers,
                                std::size_t bins, double lo, double hi) {
  require(bins >= 1, ErrorKind::Config, "histogram needs at least one bin");
  if (!(hi > lo)) hi = lo + 1.0;
  Histogram h{Vector(bins + 1), std::vector<std::size_t>(bins, 0), std::vector<std::size_t>(bins, 0)};
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  auto bin_of = [&](double v) {
    const double f = (v - lo) / (hi - lo) * static_cast<double>(bins);
    if (!(f > 0.0)) return std::size_t{0};
    return std::min(bins - 1, static_cast<std::size_t>(f));
  };
  for (double v : members) ++h.member_counts[bin_of(v)];
  for (double v : nonmembers) ++h.nonmember_counts[bin_of(v)];
  return h;
}

/// sum_b min(member share, non-member share); 1 means identical histograms.
inline double histogram_intersection(const Histogram& h) {
  double m_total = 0.0, n_total = 0.0;
  for (std::size_t b = 0; b < h.bins(); ++b) {
    m_total += static_cast<double>(h.member_counts[b]);
    n_total += static_cast<double>(h.nonmember_counts[b]);
  }
  if (m_total == 0.0 || n_total == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t b = 0; b < h.bins(); ++b)
    s += std::min(static_cast<double>(h.member_counts[b]) / m_total, static_cast<double>(h.nonmember_counts[b]) / n_total);
  return s;
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin_left,bin_right,member_count,nonmember_count\n";
  out.precision(17);
  for (std::size_t b = 0; b < h.bins(); ++b)
    out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.member_counts[b] << ',' << h.nonmember_counts[b] << '\n';
}

// ---------------------------------------------------------------------------
// Shadow-model NN attack

struct AttackTrainConfig {
  int epochs = 50;
  double lr = 0.01;
  double momentum = 0.0;
  std::size_t batch_size = 256;
  double dropout = 0.5;
};

/// MLP 2C -> 128 -> 64 -> 1 on [p || onehot(y)], sigmoid output.
struct AttackModel {
  ModelParams mlp;
  std::size_t num_classes = 0;
};

inline constexpr std::size_t kAttackHidden1 = 128;
inline constexpr std::size_t kAttackHidden2 = 64;

inline AttackModel init_attack_model(std::size_t num_classes, std::uint64_t seed) {
  return {init_model({2 * num_classes, kAttackHidden1, kAttackHidden2, 1}, seed), num_classes};
}

inline void write_attack_features(std::span<const double> p, int y, std::span<double> out) {
  const std::size_t c = p.size();
  std::copy(p.begin(), p.end(), out.begin());
  std::fill(out.begin() + static_cast<std::ptrdiff_t>(c), out.end(), 0.0);
  out[c + static_cast<std::size_t>(y)] = 1.0;
}

/// Attack-model inputs for a batch of probability rows.
inline Matrix attack_features(const Matrix& probs, std::span<const int> labels) {
  Matrix out(probs.rows(), 2 * probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) write_attack_features(probs.row(r), labels[r], out.row(r));
  return out;
}

inline double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// Binary cross-entropy training on (features, membership) with dropout active.
inline AttackModel train_attack_model(const Matrix& features, const std::vector<int>& membership,
                                      std::size_t num_classes, const AttackTrainConfig& cfg, std::uint64_t seed) {
  require(features.rows() == membership.size() && features.rows() > 0, ErrorKind::InvalidInput,
          "attack training set is empty or mismatched");
  require(features.cols() == 2 * num_classes, ErrorKind::Dimension, "attack features must have 2C columns");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.lr > 0.0, ErrorKind::Config, "invalid attack training config");
  AttackModel model = init_attack_model(num_classes, seed);
  std::mt19937_64 dropout_rng(seed ^ 0xD1B54A32D192ED03ULL);
  SgdOptimizer optimizer(cfg.momentum);
  const std::size_t n = features.rows();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, seed, epoch);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      Matrix x(stop - start, features.cols());
      for (std::size_t i = start; i < stop; ++i) {
        const auto src = features.row(order[i]);
        std::copy(src.begin(), src.end(), x.row(i - start).begin());
      }
      const ForwardTrace trace = forward(model.mlp, x, {cfg.dropout, &dropout_rng});
      Matrix grad(stop - start, 1);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i)
        grad(i - start, 0) = (sigmoid(trace.logits(i - start, 0)) - membership[order[i]]) * inv_b;
      optimizer.step(model.mlp, backward(model.mlp, trace, grad, std::nullopt), cfg.lr);
    }
  }
  return model;
}

/// Membership probabilities, dropout disabled.
inline Vector nn_attack_scores(const AttackModel& model, const Matrix& probs, std::span<const int> labels) {
  const Matrix logits = predict_logits(model.mlp, attack_features(probs, labels));
  Vector out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = sigmoid(logits(r, 0));
  return out;
}

inline double nn_attack_score(const AttackModel& model, std::span<const double> p, int y) {
  const Matrix probs(1, p.size(), Vector(p.begin(), p.end()));
  const int label[] = {y};
  return nn_attack_scores(model, probs, label)[0];
}

/// A shadow model together with the shadow-pool indices it was trained on.
struct ShadowRun {
  ModelParams model;
  TrainTestIndices split;
};

/// Adaptive shadows: same defense and config as the target; shadow i trains
/// on plan.shadows[i] with model seed cfg.seed + i + 1. Runs concurrently.
inline std::vector<ShadowRun> train_shadow_models(const Dataset& data, const SplitPlan& plan,
                                                  const std::vector<std::size_t>& layer_sizes,
                                                  const TrainingConfig& cfg) {
  std::vector<std::future<ShadowRun>> jobs;
  for (std::size_t i = 0; i < plan.shadows.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      TrainingConfig shadow_cfg = cfg;
      shadow_cfg.seed = cfg.seed + i + 1;
      const Dataset train_set = data.subset(plan.shadows[i].train);
      return ShadowRun{train(shadow_cfg, layer_sizes, train_set).params, plan.shadows[i]};
    }));
  }
  std::vector<ShadowRun> runs;
  for (auto& job : jobs) runs.push_back(job.get());
  return runs;
}

/// Builds [p || onehot(y)] examples from every shadow's train (member) and
/// test (non-member) samples and fits the attack MLP.
inline AttackModel nn_attack_train(const Dataset& data, std::span<const ShadowRun> shadows,
                                   const AttackTrainConfig& cfg, std::uint64_t attack_seed) {
  require(!shadows.empty(), ErrorKind::InvalidInput, "NN attack needs at least one shadow model");
  std::size_t total = 0;
  for (const auto& s : shadows) total += s.split.train.size() + s.split.test.size();
  Matrix features(total, 2 * data.num_classes);
  std::vector<int> membership;
  membership.reserve(total);
  std::size_t row = 0;
  for (const auto& s : shadows) {
    for (int member = 1; member >= 0; --member) {
      const auto& idx = member ? s.split.train : s.split.test;
      const Dataset part = data.subset(idx);
      const Matrix f = attack_features(predict_proba(s.model, part.x), part.y);
      std::copy(f.data().begin(), f.data().end(),
                features.data().begin() + static_cast<std::ptrdiff_t>(row * features.cols()));
      row += part.size();
      membership.insert(membership.end(), part.size(), member);
    }
  }
  return train_attack_model(features, membership, data.num_classes, cfg, attack_seed);
}

// ---------------------------------------------------------------------------
// Suite

enum class AttackKind { NN, Entropy, MEntropy, GradX };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::NN: return "nn";
    case AttackKind::Entropy: return "entropy";
    case AttackKind::MEntropy: return "m_entropy";
    case AttackKind::GradX: return "grad_x_l2";
  }
  return "?";
}

inline AttackKind attack_from_string(const std::string& name) {
  for (AttackKind k : {AttackKind::NN, AttackKind::Entropy, AttackKind::MEntropy, AttackKind::GradX})
    if (name == to_string(k)) return k;
  fail(ErrorKind::Config, "unknown attack '" + name + "'");
}

struct AttackOptions {
  std::vector<AttackKind> attacks{AttackKind::NN, AttackKind::Entropy, AttackKind::MEntropy, AttackKind::GradX};
  std::size_t histogram_bins = 20;
  std::uint64_t attack_seed = 0;
  AttackTrainConfig nn;
};

struct AttackReport {
  std::string name;
  double auc = 0.5;
  Vector per_class_thresholds;
  double thresholded_accuracy = 0.5;
  Histogram histogram;
  Vector member_scores;
  Vector nonmember_scores;
};

struct SuiteResult {
  std::vector<AttackReport> reports;
  Histogram boundary;  // distance to decision boundary, members vs non-members

  const AttackReport& report(const std::string& name) const {
    for (const auto& r : reports)
      if (r.name == name) return r;
    fail(ErrorKind::InvalidInput, "no report for attack '" + name + "'");
  }
};

namespace detail {

inline Vector score_samples(AttackKind kind, const ModelParams& model, const Dataset& part,
                            const AttackModel* attack) {
  if (kind == AttackKind::GradX) return grad_x_l2_scores(model, part.x, part.y);
  const Matrix probs = predict_proba(model, part.x);
  if (kind == AttackKind::NN) return nn_attack_scores(*attack, probs, part.y);
  Vector out(part.size());
  for (std::size_t r = 0; r < part.size(); ++r)
    out[r] = kind == AttackKind::Entropy ? entropy_score(probs.row(r)) : m_entropy_score(probs.row(r), part.y[r]);
  return out;
}

inline void append_scores(MembershipScoreSet& set, const Vector& scores, const Dataset& part, bool member) {
  set.scores.insert(set.scores.end(), scores.begin(), scores.end());
  set.labels.insert(set.labels.end(), part.y.begin(), part.y.end());
  set.is_member.insert(set.is_member.end(), part.size(), member);
}

}  // namespace detail

/// Runs every requested attack against the target. AUC pools the target's
/// train (member) and test (non-member) scores over all classes. Per-class
/// thresholds are fitted on those same target scores; shadows only train the
/// NN attack model.
inline SuiteResult run_attack_suite(const ModelParams& target, const Dataset& data, const SplitPlan& plan,
                                    std::span<const ShadowRun> shadows, const AttackOptions& opts) {
  const Dataset members = data.subset(plan.target.train);
  const Dataset nonmembers = data.subset(plan.target.test);
  require(members.size() > 0 && nonmembers.size() > 0, ErrorKind::InvalidInput, "target split is empty");

  SuiteResult result;
  for (AttackKind kind : opts.attacks) {
    std::optional<AttackModel> attack;
    if (kind == AttackKind::NN) attack = nn_attack_train(data, shadows, opts.nn, opts.attack_seed);
    const AttackModel* attack_ptr = attack ? &*attack : nullptr;

    AttackReport report;
    report.name = to_string(kind);
    report.member_scores = detail::score_samples(kind, target, members, attack_ptr);
    report.nonmember_scores = detail::score_samples(kind, target, nonmembers, attack_ptr);
    report.auc = auc(report.member_scores, report.nonmember_scores);

    MembershipScoreSet target_set;
    detail::append_scores(target_set, report.member_scores, members, true);
    detail::append_scores(target_set, report.nonmember_scores, nonmembers, false);

    report.per_class_thresholds = per_class_thresholds(target_set, data.num_classes);
    report.thresholded_accuracy = thresholded_accuracy(target_set, report.per_class_thresholds);

    const auto [lo_m, hi_m] = std::minmax_element(report.member_scores.begin(), report.member_scores.end());
    const auto [lo_n, hi_n] = std::minmax_element(report.nonmember_scores.begin(), report.nonmember_scores.end());
    report.histogram = make_histogram(report.member_scores, report.nonmember_scores, opts.histogram_bins,
                                      std::min(*lo_m, *lo_n), std::max(*hi_m, *hi_n));
    result.reports.push_back(std::move(report));
  }

  auto boundary = [&](const Dataset& part) {
    const Matrix probs = predict_proba(target, part.x);
    Vector d(part.size());
    for (std::size_t r = 0; r < part.size(); ++r) d[r] = distance_to_boundary(probs.row(r));
    return d;
  };
  result.boundary = make_histogram(boundary(members), boundary(nonmembers), opts.histogram_bins, 0.0, 1.0);
  return result;
}

}  // namespace crl
