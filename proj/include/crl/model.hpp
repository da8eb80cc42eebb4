#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "crl/error.hpp"
#include "crl/numerics.hpp"

namespace crl {

/// Affine layer y = x W + b with W stored (fan_in x fan_out).
struct DenseLayer {
  Matrix weight;
  Vector bias;

  std::size_t fan_in() const noexcept { return weight.rows(); }
  std::size_t fan_out() const noexcept { return weight.cols(); }

  bool operator==(const DenseLayer&) const = default;
};

/// MLP split into a ReLU encoder (producing the feature vector q) and a linear
/// classifier head (producing the logits g).
struct ModelParams {
  std::vector<DenseLayer> encoder;
  DenseLayer classifier;

  std::size_t input_dim() const { return encoder.front().fan_in(); }
  std::size_t feature_dim() const { return classifier.fan_in(); }
  std::size_t num_classes() const { return classifier.fan_out(); }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> sizes{input_dim()};
    for (const auto& layer : encoder) sizes.push_back(layer.fan_out());
    sizes.push_back(num_classes());
    return sizes;
  }

  std::size_t parameter_count() const {
    std::size_t n = classifier.weight.size() + classifier.bias.size();
    for (const auto& layer : encoder) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  bool operator==(const ModelParams&) const = default;
};

/// Everything backward needs. activations[0] is the input batch and
/// activations.back() is the feature matrix q.
struct ForwardTrace {
  std::vector<Matrix> pre_activations;
  std::vector<Matrix> activations;
  std::vector<Matrix> dropout_masks;  // empty unless dropout was applied
  Matrix logits;

  const Matrix& features() const { return activations.back(); }
  std::size_t batch_size() const { return logits.rows(); }
};

struct GradSet {
  std::vector<DenseLayer> encoder;
  DenseLayer classifier;
  std::optional<Matrix> input;
};

/// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)) (He-style fan-in scaling),
/// biases zero. layer_sizes = {input, hidden..., classes}.
inline ModelParams init_model(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed) {
  require(layer_sizes.size() >= 3, ErrorKind::Config,
          "model needs at least 3 layer sizes (input, hidden..., classes), got " + std::to_string(layer_sizes.size()));
  for (std::size_t s : layer_sizes) require(s >= 1, ErrorKind::Config, "layer sizes must be positive");

  std::mt19937_64 rng(seed);
  auto make_layer = [&rng](std::size_t fan_in, std::size_t fan_out) {
    DenseLayer layer{Matrix(fan_in, fan_out), Vector(fan_out, 0.0)};
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weight.data()) w = dist(rng);
    return layer;
  };

  ModelParams params;
  for (std::size_t i = 0; i + 2 < layer_sizes.size(); ++i)
    params.encoder.push_back(make_layer(layer_sizes[i], layer_sizes[i + 1]));
  params.classifier = make_layer(layer_sizes[layer_sizes.size() - 2], layer_sizes.back());
  return params;
}

namespace detail {

inline Matrix affine(const Matrix& x, const DenseLayer& layer) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.fan_in();
  const std::size_t out = layer.fan_out();
  Matrix y(batch, out);
  for (std::size_t b = 0; b < batch; ++b) {
    auto yr = y.row(b);
    std::copy(layer.bias.begin(), layer.bias.end(), yr.begin());
    const auto xr = x.row(b);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const auto wr = layer.weight.row(i);
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
    }
  }
  return y;
}

// Accumulates dW = x^T dy, db = sum_rows dy and returns dx = dy W^T when asked.
inline void affine_backward(const Matrix& x, const DenseLayer& layer, const Matrix& grad_out, DenseLayer& grad,
                            Matrix* grad_in) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.fan_in();
  const std::size_t out = layer.fan_out();
  grad.weight = Matrix(in, out);
  grad.bias.assign(out, 0.0);
  if (grad_in) *grad_in = Matrix(batch, in);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto xr = x.row(b);
    const auto gr = grad_out.row(b);
    for (std::size_t o = 0; o < out; ++o) grad.bias[o] += gr[o];
    for (std::size_t i = 0; i < in; ++i) {
      auto wg = grad.weight.row(i);
      const auto w = layer.weight.row(i);
      const double xi = xr[i];
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        wg[o] += xi * gr[o];
        acc += gr[o] * w[o];
      }
      if (grad_in) (*grad_in)(b, i) = acc;
    }
  }
}

}  // namespace detail

/// Inverted dropout on the post-ReLU activations of every encoder layer.
/// Only the attack model trains with it.
struct DropoutSpec {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

inline ForwardTrace forward(const ModelParams& params, const Matrix& x, DropoutSpec dropout = {}) {
  require(!params.encoder.empty(), ErrorKind::Config, "model has no encoder layers");
  require(x.cols() == params.input_dim(), ErrorKind::Dimension,
          "input has " + std::to_string(x.cols()) + " columns, model expects " + std::to_string(params.input_dim()));
  const bool use_dropout = dropout.rate > 0.0 && dropout.rng != nullptr;
  require(dropout.rate >= 0.0 && dropout.rate < 1.0, ErrorKind::InvalidParameter, "dropout rate must be in [0,1)");

  ForwardTrace trace;
  trace.activations.push_back(x);
  for (const auto& layer : params.encoder) {
    Matrix z = detail::affine(trace.activations.back(), layer);
    Matrix a = z;
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    if (use_dropout) {
      Matrix mask(a.rows(), a.cols());
      std::bernoulli_distribution keep(1.0 - dropout.rate);
      const double scale = 1.0 / (1.0 - dropout.rate);
      for (std::size_t k = 0; k < mask.size(); ++k) {
        mask.data()[k] = keep(*dropout.rng) ? scale : 0.0;
        a.data()[k] *= mask.data()[k];
      }
      trace.dropout_masks.push_back(std::move(mask));
    }
    trace.pre_activations.push_back(std::move(z));
    trace.activations.push_back(std::move(a));
  }
  trace.logits = detail::affine(trace.activations.back(), params.classifier);
  require(all_finite(trace.logits.data()), ErrorKind::Divergence, "non-finite logits in forward pass");
  return trace;
}

/// Chain rule through the classifier and encoder. grad_features is injected at
/// the classifier input, so it only reaches encoder parameters.
inline GradSet backward(const ModelParams& params, const ForwardTrace& trace, const std::optional<Matrix>& grad_logits,
                        const std::optional<Matrix>& grad_features, bool want_input_grad = false) {
  const std::size_t batch = trace.batch_size();
  const Matrix& features = trace.features();
  if (grad_logits)
    require(grad_logits->rows() == batch && grad_logits->cols() == params.num_classes(), ErrorKind::Dimension,
            "grad_logits shape does not match the trace");
  if (grad_features)
    require(grad_features->rows() == batch && grad_features->cols() == params.feature_dim(), ErrorKind::Dimension,
            "grad_features shape does not match the trace");

  GradSet grads;
  Matrix upstream(batch, params.feature_dim());
  if (grad_logits) {
    detail::affine_backward(features, params.classifier, *grad_logits, grads.classifier, &upstream);
  } else {
    grads.classifier = {Matrix(params.feature_dim(), params.num_classes()), Vector(params.num_classes(), 0.0)};
  }
  if (grad_features)
    for (std::size_t k = 0; k < upstream.size(); ++k) upstream.data()[k] += grad_features->data()[k];

  grads.encoder.resize(params.encoder.size());
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    const Matrix& z = trace.pre_activations[l];
    for (std::size_t k = 0; k < upstream.size(); ++k) {
      double g = z.data()[k] > 0.0 ? upstream.data()[k] : 0.0;
      if (!trace.dropout_masks.empty()) g *= trace.dropout_masks[l].data()[k];
      upstream.data()[k] = g;
    }
    const bool need_input = l > 0 || want_input_grad;
    Matrix below;
    detail::affine_backward(trace.activations[l], params.encoder[l], upstream, grads.encoder[l],
                            need_input ? &below : nullptr);
    upstream = std::move(below);
  }
  if (want_input_grad) grads.input = std::move(upstream);
  return grads;
}

/// Applies fn(param_values, grad_values) to every parameter tensor in
/// declaration order (encoder W, b per layer, then classifier W, b).
template <typename Fn>
void for_each_tensor(ModelParams& params, const GradSet& grads, Fn&& fn) {
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    fn(params.encoder[l].weight.data(), grads.encoder[l].weight.data());
    fn(params.encoder[l].bias, grads.encoder[l].bias);
  }
  fn(params.classifier.weight.data(), grads.classifier.weight.data());
  fn(params.classifier.bias, grads.classifier.bias);
}

/// Plain SGD: theta <- theta - lr * grad.
inline void sgd_step(ModelParams& params, const GradSet& grads, double lr) {
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::Config, "learning rate must be > 0");
  for_each_tensor(params, grads, [lr](Vector& w, const Vector& g) {
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
  });
}

/// SGD with optional heavy-ball momentum and L2 weight decay. With both at
/// zero each step is identical to sgd_step.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum = 0.0, double weight_decay = 0.0) : momentum_(momentum), weight_decay_(weight_decay) {
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config, "momentum must be in [0,1)");
    require(weight_decay >= 0.0, ErrorKind::Config, "weight decay must be >= 0");
  }

  void step(ModelParams& params, const GradSet& grads, double lr) {
    if (momentum_ == 0.0 && weight_decay_ == 0.0) {
      sgd_step(params, grads, lr);
      return;
    }
    require(lr > 0.0 && std::isfinite(lr), ErrorKind::Config, "learning rate must be > 0");
    std::size_t slot = 0;
    for_each_tensor(params, grads, [&](Vector& w, const Vector& g) {
      if (velocity_.size() <= slot) velocity_.emplace_back(w.size(), 0.0);
      Vector& v = velocity_[slot++];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double d = g[k] + weight_decay_ * w[k];
        v[k] = momentum_ * v[k] + d;
        w[k] -= lr * v[k];
      }
    });
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Vector> velocity_;
};

/// Logits for a batch with no trace kept around.
inline Matrix predict_logits(const ModelParams& params, const Matrix& x) { return forward(params, x).logits; }

inline Matrix predict_proba(const ModelParams& params, const Matrix& x) {
  Matrix logits = predict_logits(params, x);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const Vector p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), logits.row(r).begin());
  }
  return logits;
}

}  // namespace crl
