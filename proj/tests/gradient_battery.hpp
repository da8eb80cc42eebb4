#pragma once

// Finite-difference checks of every loss, shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "crl/losses.hpp"
#include "oracle.hpp"

namespace crl::oracle {

struct GradCheckOutcome {
  std::string name;
  int draws = 0;
  double worst_rel_error = 0.0;
  double worst_value_error = 0.0;
  bool branch_tags_ok = true;
};

namespace battery {

constexpr std::size_t kBatch = 6;
constexpr std::size_t kClasses = 4;
constexpr std::size_t kDim = 5;
constexpr double kStep = 1e-5;

struct Draw {
  Matrix logits;
  Matrix features;
  Matrix centers;
  Matrix probs;
  std::vector<int> labels;
};

inline Draw make_draw(std::mt19937_64& rng) {
  Draw d;
  d.logits = random_matrix(kBatch, kClasses, rng, 1.5);
  d.features = random_matrix(kBatch, kDim, rng, 1.0);
  d.centers = random_matrix(kClasses, kDim, rng, 1.0);
  d.probs = softmax_rows(random_matrix(kBatch, kClasses, rng, 1.0));
  d.labels = random_labels(kBatch, kClasses, rng);
  return d;
}

inline void record(GradCheckOutcome& out, double rel, double value_err, bool tag_ok) {
  out.worst_rel_error = std::max(out.worst_rel_error, rel);
  out.worst_value_error = std::max(out.worst_value_error, value_err);
  out.branch_tags_ok = out.branch_tags_ok && tag_ok;
  ++out.draws;
}

inline double logit_rel(const LossResult& r, const Matrix& at, const std::function<double(const Matrix&)>& f) {
  const Vector fd = central_diff([&](const Vector& v) { return f(as_matrix(v, at.rows(), at.cols())); }, at.data(), kStep);
  return rel_error(r.grad_logits->data(), fd);
}

inline double feature_rel(const LossResult& r, const Matrix& at, const std::function<double(const Matrix&)>& f) {
  const Vector fd = central_diff([&](const Vector& v) { return f(as_matrix(v, at.rows(), at.cols())); }, at.data(), kStep);
  return rel_error(r.grad_features->data(), fd);
}

inline double center_rel(const LossResult& r, const Matrix& at, const std::function<double(const Matrix&)>& f) {
  const Vector fd = central_diff([&](const Vector& v) { return f(as_matrix(v, at.rows(), at.cols())); }, at.data(), kStep);
  return rel_error(dense_center_grad(r, at.rows(), at.cols()), fd);
}

// Threshold placed well away from the loss so no perturbation flips the branch.
inline double alpha_below(double l) { return 0.5 * l; }
inline double alpha_above(double l) { return 1.5 * l + 0.05; }

}  // namespace battery

/// Runs `draws` random draws for every loss and branch.
inline std::vector<GradCheckOutcome> run_gradient_battery(int draws, std::uint64_t seed = 2024) {
  using namespace battery;
  std::vector<GradCheckOutcome> out;
  auto outcome = [&out](const std::string& name) -> GradCheckOutcome& {
    for (auto& o : out)
      if (o.name == name) return o;
    out.push_back({name});
    return out.back();
  };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> epoch_half(1, 50);

  for (int k = 0; k < draws; ++k) {
    const Draw d = make_draw(rng);
    const auto& y = d.labels;
    const int odd = 2 * epoch_half(rng) - 1;
    const int even = 2 * epoch_half(rng);

    {
      const LossResult r = ce_loss(d.logits, y);
      auto f = [&](const Matrix& g) { return ce(g, y); };
      record(outcome("ce"), logit_rel(r, d.logits, f), std::abs(r.loss - f(d.logits)), true);
    }
    {
      const double tau = 0.1 + unit(rng);
      const LossResult r = lce_loss(d.logits, y, tau);
      auto f = [&](const Matrix& g) { return target_ce(g, one_hot_targets(y, kClasses), tau); };
      record(outcome("lce"), logit_rel(r, d.logits, f), std::abs(r.loss - f(d.logits)), true);
    }
    {
      const double tau = 0.1 + unit(rng);
      const Matrix frozen = soft_targets(d.logits, y);
      const LossResult r = sce_loss(d.logits, y, tau);
      auto f = [&](const Matrix& g) { return target_ce(g, frozen, tau); };
      record(outcome("sce"), logit_rel(r, d.logits, f), std::abs(r.loss - f(d.logits)), true);
    }

    // RelaxLoss, one draw per branch.
    {
      const double l = ce(d.logits, y);
      const Matrix frozen = soft_targets(d.logits, y);
      const struct {
        const char* name;
        double alpha;
        int epoch;
        Branch expect;
      } cases[] = {{"relax/plain", alpha_below(l), k % 2 ? odd : even, Branch::Plain},
                   {"relax/reflect", alpha_above(l), even, Branch::Reflect},
                   {"relax/soft", alpha_above(l), odd, Branch::Soft}};
      for (const auto& c : cases) {
        const LossResult r = relax_loss(d.logits, y, c.alpha, c.epoch);
        auto f = [&](const Matrix& g) { return relax(g, y, c.alpha, c.epoch, frozen); };
        record(outcome(c.name), logit_rel(r, d.logits, f), std::abs(r.loss - f(d.logits)), r.branch == c.expect);
      }
    }
    // ImpRelaxLoss.
    {
      const double tau = 0.05 + 0.5 * unit(rng);
      const double l = target_ce(d.logits, one_hot_targets(y, kClasses), tau);
      const Matrix frozen = soft_targets(d.logits, y);
      const struct {
        const char* name;
        double alpha;
        int epoch;
        Branch expect;
      } cases[] = {{"imp_relax/plain", alpha_below(l), odd, Branch::Plain},
                   {"imp_relax/reflect", k % 2 ? alpha_above(l) : alpha_below(l), even, Branch::Reflect},
                   {"imp_relax/soft", alpha_above(l), odd, Branch::Soft}};
      for (const auto& c : cases) {
        const LossResult r = imp_relax_loss(d.logits, y, c.alpha, tau, c.epoch);
        auto f = [&](const Matrix& g) { return imp_relax(g, y, c.alpha, tau, c.epoch, frozen); };
        record(outcome(c.name), logit_rel(r, d.logits, f), std::abs(r.loss - f(d.logits)), r.branch == c.expect);
      }
    }
    // Center loss.
    {
      const CenterBank bank{d.centers, 0.001};
      const LossResult r = center_loss(d.features, bank, y);
      const double rel = std::max(
          feature_rel(r, d.features, [&](const Matrix& q) { return center(q, d.centers, y); }),
          center_rel(r, d.centers, [&](const Matrix& c) { return center(d.features, c, y); }));
      record(outcome("center"), rel, std::abs(r.loss - center(d.features, d.centers, y)), true);
    }
    // Relaxed center loss.
    {
      const double tau = 0.05 + 0.5 * unit(rng);
      const double l = center_normalized(d.features, d.centers, y, tau);
      const CenterBank bank{d.centers, 0.001};
      const struct {
        const char* name;
        double alpha;
        int epoch;
        Branch expect;
      } cases[] = {{"relaxed_center/plain", alpha_below(l), odd, Branch::Plain},
                   {"relaxed_center/reflect", k % 2 ? alpha_above(l) : alpha_below(l), even, Branch::Reflect},
                   {"relaxed_center/soft", alpha_above(l), odd, Branch::Soft}};
      for (const auto& c : cases) {
        const LossResult r = relaxed_center_loss(d.features, bank, d.probs, y, c.alpha, tau, c.epoch);
        auto fq = [&](const Matrix& q) { return relaxed_center(q, d.centers, d.probs, y, c.alpha, tau, c.epoch); };
        auto fc = [&](const Matrix& cm) { return relaxed_center(d.features, cm, d.probs, y, c.alpha, tau, c.epoch); };
        const double rel = std::max(feature_rel(r, d.features, fq), center_rel(r, d.centers, fc));
        record(outcome(c.name), rel, std::abs(r.loss - fq(d.features)), r.branch == c.expect);
      }
    }
    {
      const double eps = 0.5 * unit(rng);
      const LossResult r = label_smoothing_loss(d.logits, y, eps);
      auto f = [&](const Matrix& g) { return target_ce(g, smoothed_targets(y, kClasses, eps), 0.0); };
      record(outcome("label_smoothing"), logit_rel(r, d.logits, f), std::abs(r.loss - f(d.logits)), true);
    }
    {
      const double beta = unit(rng);
      const LossResult r = confidence_penalty_loss(d.logits, y, beta);
      auto f = [&](const Matrix& g) { return confidence_penalty(g, y, beta); };
      record(outcome("confidence_penalty"), logit_rel(r, d.logits, f), std::abs(r.loss - f(d.logits)), true);
    }
    // Joint CRL objective: logits and features are independent inputs here.
    {
      const double tau_rce = 0.05 + 0.5 * unit(rng);
      const double tau_rcl = 0.05 + 0.5 * unit(rng);
      const double lambda = 2.0 * unit(rng);
      const int epoch = k % 2 ? odd : even;
      const double l_rce = target_ce(d.logits, one_hot_targets(y, kClasses), tau_rce);
      const double l_rcl = center_normalized(d.features, d.centers, y, tau_rcl);
      const double a_rce = k % 3 == 0 ? alpha_below(l_rce) : alpha_above(l_rce);
      const double a_rcl = k % 4 < 2 ? alpha_below(l_rcl) : alpha_above(l_rcl);
      const Matrix frozen = soft_targets(d.logits, y);
      const CenterBank bank{d.centers, 0.001};
      const LossResult rce = imp_relax_loss(d.logits, y, a_rce, tau_rce, epoch);
      const LossResult rcl = relaxed_center_loss(d.features, bank, d.probs, y, a_rcl, tau_rcl, epoch);
      const LossResult total = crl_total(rce, rcl, lambda);
      auto f_logits = [&](const Matrix& g) {
        return imp_relax(g, y, a_rce, tau_rce, epoch, frozen) +
               lambda * relaxed_center(d.features, d.centers, d.probs, y, a_rcl, tau_rcl, epoch);
      };
      auto f_features = [&](const Matrix& q) {
        return imp_relax(d.logits, y, a_rce, tau_rce, epoch, frozen) +
               lambda * relaxed_center(q, d.centers, d.probs, y, a_rcl, tau_rcl, epoch);
      };
      auto f_centers = [&](const Matrix& c) {
        return relaxed_center(d.features, c, d.probs, y, a_rcl, tau_rcl, epoch);
      };
      const double rel = std::max({logit_rel(total, d.logits, f_logits), feature_rel(total, d.features, f_features),
                                   center_rel(total, d.centers, f_centers)});
      record(outcome("crl_total"), rel, std::abs(total.loss - f_logits(d.logits)), true);
    }
  }
  return out;
}

}  // namespace crl::oracle
