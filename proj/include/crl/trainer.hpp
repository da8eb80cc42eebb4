#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
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

namespace crl {

enum class Defense { CE, RelaxLoss, ImpRelaxLoss, RelaxedCenter, CRL, LabelSmoothing, ConfidencePenalty };

inline const char* to_string(Defense d) {
  switch (d) {
    case Defense::CE: return "ce";
    case Defense::RelaxLoss: return "relax";
    case Defense::ImpRelaxLoss: return "imp_relax";
    case Defense::RelaxedCenter: return "relaxed_center";
    case Defense::CRL: return "crl";
    case Defense::LabelSmoothing: return "label_smoothing";
    case Defense::ConfidencePenalty: return "confidence_penalty";
  }
  return "?";
}

inline Defense defense_from_string(const std::string& name) {
  for (Defense d : {Defense::CE, Defense::RelaxLoss, Defense::ImpRelaxLoss, Defense::RelaxedCenter, Defense::CRL,
                    Defense::LabelSmoothing, Defense::ConfidencePenalty})
    if (name == to_string(d)) return d;
  fail(ErrorKind::Config, "unknown defense '" + name + "'");
}

inline bool uses_centers(Defense d) { return d == Defense::RelaxedCenter || d == Defense::CRL; }

struct TrainingConfig {
  Defense defense = Defense::CE;
  int epochs = 200;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double center_lr = 0.001;
  /// Initial centers are scale * |N(0,1)| (or signed N(0,1) when
  /// nonnegative_centers is off); features are post-ReLU.
  double center_init_scale = 1.0;
  bool nonnegative_centers = true;
  double momentum = 0.0;
  double weight_decay = 0.0;
  /// Multiply lr by lr_decay_factor every lr_decay_every epochs (0 = off).
  int lr_decay_every = 0;
  double lr_decay_factor = 0.1;
  RelaxConfig relax;
  double smoothing_eps = 0.1;
  double penalty_beta = 0.1;
  std::optional<int> early_stop_epoch;
  std::uint64_t seed = 0;
  int eval_every = 1;

  void validate() const {
    require(epochs >= 1, ErrorKind::Config, "training.epochs must be >= 1");
    require(batch_size >= 1, ErrorKind::Config, "training.batch_size must be >= 1");
    require(lr > 0.0 && std::isfinite(lr), ErrorKind::Config, "training.lr must be > 0");
    if (uses_centers(defense))
      require(center_lr > 0.0 && std::isfinite(center_lr), ErrorKind::Config, "training.center_lr must be > 0");
    require(center_init_scale >= 0.0 && std::isfinite(center_init_scale), ErrorKind::Config,
            "training.center_init_scale must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config, "training.momentum must be in [0,1)");
    require(weight_decay >= 0.0, ErrorKind::Config, "training.weight_decay must be >= 0");
    require(lr_decay_every >= 0, ErrorKind::Config, "training.lr_decay_every must be >= 0");
    require(lr_decay_factor > 0.0, ErrorKind::Config, "training.lr_decay_factor must be > 0");
    relax.validate();
    require(smoothing_eps >= 0.0 && smoothing_eps < 1.0, ErrorKind::Config, "training.smoothing_eps must be in [0,1)");
    require(penalty_beta >= 0.0, ErrorKind::Config, "training.penalty_beta must be >= 0");
    if (early_stop_epoch) require(*early_stop_epoch >= 1, ErrorKind::Config, "training.early_stop_epoch must be >= 1");
    require(eval_every >= 1, ErrorKind::Config, "training.eval_every must be >= 1");
  }
};

using BranchCounts = std::array<std::size_t, 3>;  // indexed by Branch

struct EpochRecord {
  int epoch = 0;
  double loss_rce = 0.0;
  double loss_rcl = 0.0;
  double loss_total = 0.0;
  BranchCounts rce_branches{};
  BranchCounts rcl_branches{};
  std::optional<double> train_acc;
  std::optional<double> test_acc;
};

struct TrainResult {
  ModelParams params;
  CenterBank centers;
  std::vector<EpochRecord> history;
};

/// Argmax accuracy, ties resolved toward the lowest class index.
inline double evaluate_accuracy(const ModelParams& params, const Dataset& ds) {
  require(ds.size() > 0, ErrorKind::InvalidInput, "accuracy of an empty dataset");
  const Matrix logits = predict_logits(params, ds.x);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < ds.size(); ++r)
    if (argmax(logits.row(r)) == static_cast<std::size_t>(ds.y[r])) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Batch order of an epoch: a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(epoch) * 0x9E3779B97F4A7C15ULL));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Centers ~ scale * N(0, 1), folded to |.| when nonnegative; seeded from the training seed.
inline CenterBank init_centers(std::size_t classes, std::size_t dim, std::uint64_t seed, double center_lr,
                               double scale = 1.0, bool nonnegative = true) {
  CenterBank bank{Matrix(classes, dim), center_lr};
  std::mt19937_64 rng(seed ^ 0xC3A5C85C97CB3127ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : bank.centers.data()) v = scale * normal(rng);
  if (nonnegative)
    for (double& v : bank.centers.data()) v = std::abs(v);
  return bank;
}

/// Per-batch losses of one training step.
struct StepLosses {
  LossResult rce;
  std::optional<LossResult> rcl;
  LossResult total;
};

/// The defense objective for one mini-batch given its forward trace.
inline StepLosses defense_losses(const TrainingConfig& cfg, const ForwardTrace& trace, const CenterBank& centers,
                                 std::span<const int> labels, int epoch) {
  const RelaxConfig& rc = cfg.relax;
  StepLosses out;
  switch (cfg.defense) {
    case Defense::CE: out.rce = ce_loss(trace.logits, labels); break;
    case Defense::RelaxLoss: out.rce = relax_loss(trace.logits, labels, rc.alpha_rce, epoch); break;
    case Defense::ImpRelaxLoss: out.rce = imp_relax_loss(trace.logits, labels, rc.alpha_rce, rc.tau_rce, epoch); break;
    case Defense::LabelSmoothing: out.rce = label_smoothing_loss(trace.logits, labels, cfg.smoothing_eps); break;
    case Defense::ConfidencePenalty: out.rce = confidence_penalty_loss(trace.logits, labels, cfg.penalty_beta); break;
    case Defense::RelaxedCenter:
    case Defense::CRL: {
      // The ablation without normalization runs both components with tau = 0.
      const bool normalized = cfg.defense == Defense::CRL;
      const double tau_rce = normalized ? rc.tau_rce : 0.0;
      const double tau_rcl = normalized ? rc.tau_rcl : 0.0;
      Matrix probs = trace.logits;
      for (std::size_t r = 0; r < probs.rows(); ++r) {
        const Vector p = softmax(trace.logits.row(r));
        std::copy(p.begin(), p.end(), probs.row(r).begin());
      }
      out.rcl = relaxed_center_loss(trace.features(), centers, probs, labels, rc.alpha_rcl, tau_rcl, epoch);
      out.rce = imp_relax_loss(trace.logits, labels, rc.alpha_rce, tau_rce, epoch);
      break;
    }
  }
  out.total = out.rcl ? crl_total(out.rce, *out.rcl, rc.lambda) : out.rce;
  return out;
}

/// Called after every optimizer step with (epoch, batch index, parameters).
using StepHook = std::function<void(int, std::size_t, const ModelParams&)>;

/// Mini-batch training of one model under the configured defense. Within a
/// batch the centers are updated first, then the model, both from gradients of
/// the same forward pass.
inline TrainResult train(const TrainingConfig& cfg, const std::vector<std::size_t>& layer_sizes,
                         const Dataset& train_set, const Dataset* test_set = nullptr,
                         const StepHook& on_step = {}) {
  cfg.validate();
  train_set.validate();
  require(!layer_sizes.empty() && layer_sizes.front() == train_set.dim(), ErrorKind::Config,
          "model input width does not match the dataset dimension");
  require(layer_sizes.back() == train_set.num_classes, ErrorKind::Config,
          "model output width " + std::to_string(layer_sizes.back()) + " does not match " +
              std::to_string(train_set.num_classes) + " classes");
  if (test_set)
    require(test_set->dim() == train_set.dim() && test_set->num_classes == train_set.num_classes, ErrorKind::Config,
            "test set does not match the training set shape");

  TrainResult result;
  result.params = init_model(layer_sizes, cfg.seed);
  if (uses_centers(cfg.defense))
    result.centers = init_centers(train_set.num_classes, result.params.feature_dim(), cfg.seed, cfg.center_lr,
                                  cfg.center_init_scale, cfg.nonnegative_centers);

  SgdOptimizer optimizer(cfg.momentum, cfg.weight_decay);
  const int last_epoch = cfg.early_stop_epoch ? std::min(cfg.epochs, *cfg.early_stop_epoch) : cfg.epochs;
  const std::size_t n = train_set.size();
  double lr = cfg.lr;

  for (int epoch = 1; epoch <= last_epoch; ++epoch) {
    if (cfg.lr_decay_every > 0 && epoch > 1 && (epoch - 1) % cfg.lr_decay_every == 0) lr *= cfg.lr_decay_factor;
    const auto order = epoch_order(n, cfg.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const Dataset batch = train_set.subset(std::span(order).subspan(start, stop - start));
      const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);

      StepLosses losses;
      GradSet grads;
      try {
        const ForwardTrace trace = forward(result.params, batch.x);
        losses = defense_losses(cfg, trace, result.centers, batch.y, epoch);
        require(std::isfinite(losses.total.loss), ErrorKind::Divergence, "non-finite loss");
        grads = backward(result.params, trace, losses.total.grad_logits, losses.total.grad_features);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Divergence) fail(ErrorKind::Divergence, e.message() + " at " + where);
        throw;
      }

      if (losses.rcl) result.centers.apply(losses.rcl->grad_centers);
      optimizer.step(result.params, grads, lr);
      if (on_step) on_step(epoch, batch_index, result.params);

      const double w = static_cast<double>(stop - start) / static_cast<double>(n);
      rec.loss_rce += w * losses.rce.loss;
      rec.loss_total += w * losses.total.loss;
      ++rec.rce_branches[static_cast<std::size_t>(losses.rce.branch)];
      if (losses.rcl) {
        rec.loss_rcl += w * losses.rcl->loss;
        ++rec.rcl_branches[static_cast<std::size_t>(losses.rcl->branch)];
      }
    }
    if (epoch % cfg.eval_every == 0 || epoch == last_epoch) {
      rec.train_acc = evaluate_accuracy(result.params, train_set);
      if (test_set && test_set->size() > 0) rec.test_acc = evaluate_accuracy(result.params, *test_set);
    }
    result.history.push_back(rec);
  }
  return result;
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,loss_rce,loss_rcl,loss_total,rce_plain,rce_reflect,rce_soft,rcl_plain,rcl_reflect,rcl_soft,"
         "train_acc,test_acc\n";
  out.precision(17);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.loss_rce << ',' << r.loss_rcl << ',' << r.loss_total;
    for (auto c : r.rce_branches) out << ',' << c;
    for (auto c : r.rcl_branches) out << ',' << c;
    out << ',';
    if (r.train_acc) out << *r.train_acc;
    out << ',';
    if (r.test_acc) out << *r.test_acc;
    out << '\n';
  }
}

}  // namespace crl
