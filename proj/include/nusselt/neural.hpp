#pragma once

/// Shallow fully connected regressors with analytic reverse-mode gradients,
/// trained by Levenberg-Marquardt or first-order methods with early stopping.
///
/// Parameters live in one flat vector. Layer l stores its weight matrix
/// (out x in, row-major) followed by its bias vector.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nusselt/dataset.hpp"
#include "nusselt/numerics.hpp"

namespace nusselt {

struct NonPositiveTarget : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Activation { Sigmoid, Purelin, Relu };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Purelin: return "purelin";
    case Activation::Relu: return "relu";
  }
  return "unknown";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "sigmoid" || s == "logsig") return Activation::Sigmoid;
  if (s == "purelin" || s == "linear") return Activation::Purelin;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Purelin: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

/// Derivative expressed through the pre-activation and output.
inline double activate_deriv(Activation a, double pre, double post) {
  switch (a) {
    case Activation::Sigmoid: return post * (1.0 - post);
    case Activation::Purelin: return 1.0;
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

struct MlpTopology {
  std::size_t inputs = kInputCount;
  std::vector<std::size_t> hidden;
  Activation hidden_activation = Activation::Sigmoid;
  Activation output_activation = Activation::Purelin;

  std::size_t layer_count() const { return hidden.size() + 1; }
  std::size_t fan_in(std::size_t l) const { return l == 0 ? inputs : hidden[l - 1]; }
  std::size_t fan_out(std::size_t l) const { return l < hidden.size() ? hidden[l] : 1; }
  Activation activation(std::size_t l) const {
    return l < hidden.size() ? hidden_activation : output_activation;
  }

  std::size_t parameter_count() const {
    std::size_t p = 0;
    for (std::size_t l = 0; l < layer_count(); ++l) p += fan_out(l) * (fan_in(l) + 1);
    return p;
  }

  void validate() const {
    if (inputs < 1) throw std::invalid_argument("MlpTopology: need at least one input");
    for (std::size_t w : hidden)
      if (w < 1) throw std::invalid_argument("MlpTopology: hidden widths must be >= 1");
  }

  friend bool operator==(const MlpTopology&, const MlpTopology&) = default;
};

struct MlpModel {
  MlpTopology topology;
  Vector params;
  std::optional<NormalizationParams> normalizer;

  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < l; ++k) off += topology.fan_out(k) * (topology.fan_in(k) + 1);
    return off;
  }
  std::size_t bias_offset(std::size_t l) const {
    return weight_offset(l) + topology.fan_out(l) * topology.fan_in(l);
  }
  double weight(std::size_t l, std::size_t o, std::size_t i) const {
    return params[weight_offset(l) + o * topology.fan_in(l) + i];
  }
  double bias(std::size_t l, std::size_t o) const { return params[bias_offset(l) + o]; }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

enum class InitScheme { Uniform01, HeUniform };

/// Draws the parameters of layers [first_layer, end) from `rng`, layer by
/// layer, weights before biases. Uniform01 draws everything from U(0,1);
/// HeUniform draws weights from U(-sqrt(6/fan_in), sqrt(6/fan_in)) and
/// zeroes biases.
inline void init_layers(MlpModel& m, std::size_t first_layer, RandomStream& rng,
                        InitScheme scheme = InitScheme::Uniform01) {
  for (std::size_t l = first_layer; l < m.topology.layer_count(); ++l) {
    const std::size_t in = m.topology.fan_in(l), out = m.topology.fan_out(l);
    const std::size_t w0 = m.weight_offset(l), b0 = m.bias_offset(l);
    if (scheme == InitScheme::Uniform01) {
      for (std::size_t k = 0; k < out * in; ++k) m.params[w0 + k] = rng.uniform();
      for (std::size_t k = 0; k < out; ++k) m.params[b0 + k] = rng.uniform();
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(in));
      for (std::size_t k = 0; k < out * in; ++k) m.params[w0 + k] = rng.uniform(-limit, limit);
      for (std::size_t k = 0; k < out; ++k) m.params[b0 + k] = 0.0;
    }
  }
}

inline MlpModel init_mlp(const MlpTopology& topo, std::uint64_t seed,
                         InitScheme scheme = InitScheme::Uniform01) {
  topo.validate();
  MlpModel m{topo, Vector(topo.parameter_count(), 0.0), std::nullopt};
  RandomStream rng(seed);
  init_layers(m, 0, rng, scheme);
  return m;
}

// ---------------------------------------------------------------------------
// Forward and backward passes
// ---------------------------------------------------------------------------

/// Per-layer pre-activations and outputs of one forward pass; post[0] is the
/// input itself.
struct ForwardTrace {
  std::vector<Vector> pre;
  std::vector<Vector> post;
};

inline void forward_trace(const MlpModel& m, std::span<const double> x, ForwardTrace& t) {
  const auto& topo = m.topology;
  if (x.size() != topo.inputs) throw std::invalid_argument("forward: input dimension mismatch");
  const std::size_t layers = topo.layer_count();
  t.pre.resize(layers);
  t.post.resize(layers + 1);
  t.post[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = topo.fan_in(l), out = topo.fan_out(l);
    const double* w = m.params.data() + m.weight_offset(l);
    const double* b = m.params.data() + m.bias_offset(l);
    const Activation act = topo.activation(l);
    auto& pre = t.pre[l];
    auto& post = t.post[l + 1];
    pre.resize(out);
    post.resize(out);
    const Vector& a = t.post[l];
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * a[i];
      pre[o] = s;
      post[o] = activate(act, s);
    }
  }
}

inline double forward(const MlpModel& m, std::span<const double> x) {
  ForwardTrace t;
  forward_trace(m, x, t);
  return t.post.back()[0];
}

/// Prediction on a raw data point through the captured normalizer.
inline double predict(const MlpModel& m, const DataPoint& p) {
  if (!m.normalizer) throw std::logic_error("predict: model has no normalizer");
  return forward(m, m.normalizer->inputs(p));
}

/// Accumulates d_out * d(output)/d(params) into `grad`. `extra_last_hidden`,
/// when non-empty, is an additional loss gradient with respect to the last
/// hidden layer's outputs (used by side heads reading that layer).
inline void backward(const MlpModel& m, const ForwardTrace& t, double d_out, std::span<double> grad,
                     std::span<const double> extra_last_hidden = {}) {
  const auto& topo = m.topology;
  const std::size_t layers = topo.layer_count();
  Vector delta{d_out * activate_deriv(topo.output_activation, t.pre[layers - 1][0],
                                      t.post[layers][0])};
  Vector next;
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = topo.fan_in(l), out = topo.fan_out(l);
    const std::size_t w0 = m.weight_offset(l), b0 = m.bias_offset(l);
    const Vector& a = t.post[l];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      double* gw = grad.data() + w0 + o * in;
      for (std::size_t i = 0; i < in; ++i) gw[i] += d * a[i];
      grad[b0 + o] += d;
    }
    if (l == 0) break;
    next.assign(in, 0.0);
    const double* w = m.params.data() + w0;
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      for (std::size_t i = 0; i < in; ++i) next[i] += d * w[o * in + i];
    }
    if (l == layers - 1 && !extra_last_hidden.empty())
      for (std::size_t i = 0; i < in; ++i) next[i] += extra_last_hidden[i];
    const Activation act = topo.activation(l - 1);
    for (std::size_t i = 0; i < in; ++i)
      next[i] *= activate_deriv(act, t.pre[l - 1][i], t.post[l][i]);
    delta.swap(next);
  }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class LossKind { Mse, Mape, SmoothMape };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::Mse: return "mse";
    case LossKind::Mape: return "mape";
    case LossKind::SmoothMape: return "mape-smooth";
  }
  return "unknown";
}

inline LossKind loss_kind_from_string(std::string_view s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "mape") return LossKind::Mape;
  if (s == "mape-smooth" || s == "smooth-mape") return LossKind::SmoothMape;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "'");
}

inline constexpr double kSmoothMapeDelta = 1e-12;

struct LossTerm {
  double value = 0.0;
  double d_pred = 0.0;
};

/// One sample's contribution (before averaging) and its derivative with
/// respect to the prediction. Smooth MAPE replaces |r| by sqrt(r^2 + 1e-12).
inline LossTerm loss_term(LossKind kind, double pred, double target) {
  const double diff = pred - target;
  switch (kind) {
    case LossKind::Mse: return {diff * diff, 2.0 * diff};
    case LossKind::Mape: {
      const double r = diff / target;
      return {std::abs(r), (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) / std::abs(target)};
    }
    case LossKind::SmoothMape: {
      const double r = diff / target;
      const double s = std::sqrt(r * r + kSmoothMapeDelta);
      return {s, r / s / target};
    }
  }
  return {};
}

inline void require_positive_targets(std::span<const double> targets) {
  for (double y : targets)
    if (!(y > 0.0)) throw NonPositiveTarget("relative loss needs targets > 0");
}

struct GradientResult {
  double loss = 0.0;
  Vector grad;
};

/// Mean loss over the rows in `rows` (all rows when empty) and its exact
/// gradient.
inline GradientResult gradient(const MlpModel& m, const Matrix& inputs,
                               std::span<const double> targets, LossKind kind,
                               std::span<const std::size_t> rows = {}) {
  if (kind != LossKind::Mse) require_positive_targets(targets);
  GradientResult out{0.0, Vector(m.params.size(), 0.0)};
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(inputs.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    rows = all;
  }
  if (rows.empty()) throw std::invalid_argument("gradient: empty batch");
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  ForwardTrace t;
  for (std::size_t r : rows) {
    forward_trace(m, inputs.row(r), t);
    const auto term = loss_term(kind, t.post.back()[0], targets[r]);
    out.loss += term.value * inv_n;
    backward(m, t, term.d_pred * inv_n, out.grad);
  }
  return out;
}

/// Relative residuals (pred - y)/y and their Jacobian, one row per sample.
struct ResidualJacobian {
  Vector residuals;
  Matrix jacobian;
};

inline ResidualJacobian relative_jacobian(const MlpModel& m, const Matrix& inputs,
                                          std::span<const double> targets,
                                          std::span<const std::size_t> rows) {
  require_positive_targets(targets);
  ResidualJacobian rj{Vector(rows.size()), Matrix(rows.size(), m.params.size())};
  ForwardTrace t;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    forward_trace(m, inputs.row(r), t);
    rj.residuals[k] = (t.post.back()[0] - targets[r]) / targets[r];
    backward(m, t, 1.0 / targets[r], rj.jacobian.row(k));
  }
  return rj;
}

inline double mean_abs_relative_error(const MlpModel& m, const Matrix& inputs,
                                      std::span<const double> targets,
                                      std::span<const std::size_t> rows) {
  double s = 0.0;
  ForwardTrace t;
  for (std::size_t r : rows) {
    forward_trace(m, inputs.row(r), t);
    s += std::abs((t.post.back()[0] - targets[r]) / targets[r]);
  }
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainMethod { Lm, Sgd, Adam, Rmsprop };

inline std::string_view to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::Lm: return "lm";
    case TrainMethod::Sgd: return "sgd";
    case TrainMethod::Adam: return "adam";
    case TrainMethod::Rmsprop: return "rmsprop";
  }
  return "unknown";
}

inline TrainMethod train_method_from_string(std::string_view s) {
  if (s == "lm") return TrainMethod::Lm;
  if (s == "sgd") return TrainMethod::Sgd;
  if (s == "adam") return TrainMethod::Adam;
  if (s == "rmsprop") return TrainMethod::Rmsprop;
  throw std::invalid_argument("unknown training method '" + std::string(s) + "'");
}

struct TrainConfig {
  TrainMethod method = TrainMethod::Lm;
  LossKind loss = LossKind::SmoothMape;  // first-order methods only
  double learning_rate = 0.01;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  double lm_damping = 1e-3;
  double lm_factor = 10.0;
  double lm_damping_max = 1e10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rms_decay = 0.9;
  double adam_epsilon = 1e-8;
  std::vector<std::uint8_t> frozen;  // optional per-parameter freeze mask

  void validate() const {
    if (method != TrainMethod::Lm && !(learning_rate > 0.0))
      throw std::invalid_argument("TrainConfig: learning rate must be > 0");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw std::invalid_argument("TrainConfig: validation fraction must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  }
};

/// Result of one training run. Traces start with the initial parameters at
/// index 0; `epochs` counts completed epochs.
struct TrainOutcome {
  Vector params;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  Vector train_trace;
  Vector val_trace;
  bool nonfinite_loss = false;
};

struct TrainResult {
  MlpModel model;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  Vector train_trace;
  Vector val_trace;
  bool nonfinite_loss = false;
};

struct ValidationSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Carves round(fraction * n) validation rows (at least one when the
/// fraction is positive), always leaving one training row.
inline ValidationSplit split_validation(std::size_t n, double fraction, RandomStream rng) {
  if (n < 1) throw std::invalid_argument("train: empty training set");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t n_val = 0;
  if (fraction > 0.0 && n >= 2) {
    n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  }
  rng.shuffle(perm);
  ValidationSplit s;
  s.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

namespace detail {

/// Tracks the best validation loss and decides when to stop.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, bool enabled) : patience_(patience), enabled_(enabled) {}

  /// Returns true when training should stop.
  bool observe(std::size_t epoch, double val_loss, std::span<const double> params) {
    if (!enabled_) {
      best_epoch_ = epoch;
      best_params_.assign(params.begin(), params.end());
      return false;
    }
    if (val_loss < best_loss_ || best_params_.empty()) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      best_params_.assign(params.begin(), params.end());
      wait_ = 0;
      return false;
    }
    return ++wait_ >= patience_;
  }

  const Vector& best_params() const { return best_params_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  bool enabled_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t wait_ = 0;
  Vector best_params_;
};

}  // namespace detail

/// Callbacks describing a differentiable training problem over a flat
/// parameter vector.
struct FirstOrderProblem {
  /// Mean loss over `batch` (indices into the training rows) and its
  /// gradient, written into `grad` (pre-zeroed).
  std::function<double(std::span<const double>, std::span<const std::size_t>, std::span<double>)>
      batch_gradient;
  /// Loss over all training rows.
  std::function<double(std::span<const double>)> train_loss;
  /// Early-stopping metric on the validation rows.
  std::function<double(std::span<const double>)> val_loss;
};

/// Mini-batch SGD / Adam / RMSprop with early stopping. Re-runs with equal
/// inputs are bit-identical.
inline TrainOutcome first_order_train(Vector params, std::span<const std::size_t> train_rows,
                                      bool has_validation, const FirstOrderProblem& problem,
                                      const TrainConfig& cfg, RandomStream shuffle_rng) {
  TrainOutcome out;
  detail::EarlyStopping stopper(cfg.patience, has_validation);
  out.train_trace.push_back(problem.train_loss(params));
  out.val_trace.push_back(has_validation ? problem.val_loss(params) : out.train_trace.back());
  stopper.observe(0, out.val_trace.back(), params);

  const std::size_t p = params.size();
  Vector m1(p, 0.0), m2(p, 0.0), grad(p);
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    bool bad = false;
    for (std::size_t start = 0; start < order.size() && !bad; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = problem.batch_gradient(
          params, std::span<const std::size_t>(order.data() + start, end - start), grad);
      if (!std::isfinite(loss)) {
        bad = true;
        break;
      }
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t k = 0; k < p; ++k) {
        if (!cfg.frozen.empty() && cfg.frozen[k]) continue;
        const double g = grad[k];
        switch (cfg.method) {
          case TrainMethod::Adam: {
            m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g;
            m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g * g;
            params[k] -= cfg.learning_rate * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + cfg.adam_epsilon);
            break;
          }
          case TrainMethod::Rmsprop: {
            m2[k] = cfg.rms_decay * m2[k] + (1.0 - cfg.rms_decay) * g * g;
            params[k] -= cfg.learning_rate * g / (std::sqrt(m2[k]) + cfg.adam_epsilon);
            break;
          }
          default: params[k] -= cfg.learning_rate * g;
        }
      }
    }
    const double tl = bad ? std::numeric_limits<double>::quiet_NaN() : problem.train_loss(params);
    if (!std::isfinite(tl)) {
      out.nonfinite_loss = true;
      break;
    }
    out.epochs = epoch;
    out.train_trace.push_back(tl);
    const double vl = has_validation ? problem.val_loss(params) : tl;
    out.val_trace.push_back(vl);
    if (!std::isfinite(vl)) {
      out.nonfinite_loss = true;
      break;
    }
    if (stopper.observe(epoch, vl, params)) break;
  }
  out.params = stopper.best_params();
  out.best_epoch = stopper.best_epoch();
  return out;
}

namespace detail {

/// Solves (J'J + mu I) d = -J'r, through the smaller of the parameter-space
/// and sample-space systems.
inline Vector lm_step(const Matrix& jac, std::span<const double> res, double mu) {
  const std::size_t n = jac.rows(), p = jac.cols();
  if (p <= n) {
    Matrix a(p, p);
    Vector g(p, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      auto jr = jac.row(r);
      for (std::size_t i = 0; i < p; ++i) {
        const double ji = jr[i];
        if (ji == 0.0) continue;
        g[i] += ji * res[r];
        for (std::size_t k = 0; k <= i; ++k) a(i, k) += ji * jr[k];
      }
    }
    for (std::size_t i = 0; i < p; ++i) {
      a(i, i) += mu;
      for (std::size_t k = 0; k < i; ++k) a(k, i) = a(i, k);
    }
    Vector d = cholesky_solve(cholesky(a), g);
    for (double& v : d) v = -v;
    return d;
  }
  // (J'J + mu I)^-1 J' = J' (J J' + mu I)^-1
  Matrix a(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t s = 0; s <= r; ++s) {
      const double v = dot(jac.row(r), jac.row(s));
      a(r, s) = v;
      a(s, r) = v;
    }
  for (std::size_t r = 0; r < n; ++r) a(r, r) += mu;
  const Vector z = cholesky_solve(cholesky(a), res);
  Vector d(p, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto jr = jac.row(r);
    for (std::size_t i = 0; i < p; ++i) d[i] -= jr[i] * z[r];
  }
  return d;
}

}  // namespace detail

/// Levenberg-Marquardt on relative residuals (pred - y)/y. One epoch is one
/// accepted step; a rejected trial raises the damping by lm_factor without
/// touching the parameters. Training ends early once the damping exceeds
/// lm_damping_max.
inline TrainOutcome lm_train(MlpModel model, const Matrix& inputs, std::span<const double> targets,
                             std::span<const std::size_t> train_rows,
                             std::span<const std::size_t> val_rows, const TrainConfig& cfg) {
  TrainOutcome out;
  const bool has_val = !val_rows.empty();
  detail::EarlyStopping stopper(cfg.patience, has_val);
  auto sse_of = [&](const MlpModel& mm) {
    double s = 0.0;
    ForwardTrace t;
    for (std::size_t r : train_rows) {
      forward_trace(mm, inputs.row(r), t);
      const double e = (t.post.back()[0] - targets[r]) / targets[r];
      s += e * e;
    }
    return s;
  };
  const double inv_n = 1.0 / static_cast<double>(train_rows.size());
  double sse = sse_of(model);
  out.train_trace.push_back(sse * inv_n);
  out.val_trace.push_back(has_val ? mean_abs_relative_error(model, inputs, targets, val_rows)
                                  : sse * inv_n);
  if (!std::isfinite(sse)) {
    out.nonfinite_loss = true;
    out.params = model.params;
    return out;
  }
  stopper.observe(0, out.val_trace.back(), model.params);

  double mu = cfg.lm_damping;
  MlpModel trial = model;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto rj = relative_jacobian(model, inputs, targets, train_rows);
    if (!cfg.frozen.empty())
      for (std::size_t r = 0; r < rj.jacobian.rows(); ++r)
        for (std::size_t k = 0; k < rj.jacobian.cols(); ++k)
          if (cfg.frozen[k]) rj.jacobian(r, k) = 0.0;
    bool accepted = false;
    while (mu <= cfg.lm_damping_max) {
      Vector d;
      try {
        d = detail::lm_step(rj.jacobian, rj.residuals, mu);
      } catch (const NotPositiveDefinite&) {
        mu *= cfg.lm_factor;
        continue;
      }
      for (std::size_t k = 0; k < d.size(); ++k) trial.params[k] = model.params[k] + d[k];
      const double trial_sse = sse_of(trial);
      if (std::isfinite(trial_sse) && trial_sse < sse) {
        model.params.swap(trial.params);
        sse = trial_sse;
        mu = std::max(mu / cfg.lm_factor, 1e-20);
        accepted = true;
        break;
      }
      mu *= cfg.lm_factor;
    }
    if (!accepted) break;
    out.epochs = epoch;
    out.train_trace.push_back(sse * inv_n);
    const double vl =
        has_val ? mean_abs_relative_error(model, inputs, targets, val_rows) : sse * inv_n;
    out.val_trace.push_back(vl);
    if (!std::isfinite(vl)) {
      out.nonfinite_loss = true;
      break;
    }
    if (stopper.observe(epoch, vl, model.params)) break;
  }
  out.params = stopper.best_params();
  out.best_epoch = stopper.best_epoch();
  return out;
}

/// Trains `init` on normalized `inputs`. The validation rows are carved with
/// a child stream of cfg.seed; mini-batch order uses another.
inline TrainResult train(const MlpModel& init, const Matrix& inputs, std::span<const double> targets,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (inputs.rows() != targets.size()) throw std::invalid_argument("train: input/target mismatch");
  if (inputs.rows() < 2) throw std::invalid_argument("train: need at least two samples");
  if (!cfg.frozen.empty() && cfg.frozen.size() != init.params.size())
    throw std::invalid_argument("train: freeze mask size mismatch");
  const RandomStream root(cfg.seed);
  const auto split = split_validation(inputs.rows(), cfg.validation_fraction, root.child(1));

  TrainResult res;
  res.model = init;
  if (cfg.max_epochs == 0) {
    res.train_trace.push_back(0.0);
    return res;
  }

  TrainOutcome out;
  if (cfg.method == TrainMethod::Lm) {
    out = lm_train(init, inputs, targets, split.train, split.val, cfg);
  } else {
    if (cfg.loss != LossKind::Mse) require_positive_targets(targets);
    MlpModel work = init;
    FirstOrderProblem prob;
    prob.batch_gradient = [&](std::span<const double> p, std::span<const std::size_t> batch,
                              std::span<double> grad) {
      std::copy(p.begin(), p.end(), work.params.begin());
      const auto g = gradient(work, inputs, targets, cfg.loss, batch);
      std::copy(g.grad.begin(), g.grad.end(), grad.begin());
      return g.loss;
    };
    prob.train_loss = [&](std::span<const double> p) {
      std::copy(p.begin(), p.end(), work.params.begin());
      const double inv_n = 1.0 / static_cast<double>(split.train.size());
      double s = 0.0;
      for (std::size_t r : split.train)
        s += loss_term(cfg.loss, forward(work, inputs.row(r)), targets[r]).value * inv_n;
      return s;
    };
    prob.val_loss = [&](std::span<const double> p) {
      std::copy(p.begin(), p.end(), work.params.begin());
      return mean_abs_relative_error(work, inputs, targets, split.val);
    };
    out = first_order_train(init.params, split.train, !split.val.empty(), prob, cfg, root.child(2));
  }
  res.model.params = std::move(out.params);
  res.epochs = out.epochs;
  res.best_epoch = out.best_epoch;
  res.train_trace = std::move(out.train_trace);
  res.val_trace = std::move(out.val_trace);
  res.nonfinite_loss = out.nonfinite_loss;
  return res;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const NormalizationParams& n) {
  return {{"min", n.min}, {"max", n.max}};
}

inline NormalizationParams normalizer_from_json(const nlohmann::json& j) {
  NormalizationParams n;
  n.min = j.at("min").get<std::array<double, kFieldCount>>();
  n.max = j.at("max").get<std::array<double, kFieldCount>>();
  return n;
}

inline nlohmann::json to_json(const MlpTopology& t) {
  return {{"inputs", t.inputs},
          {"hidden", t.hidden},
          {"hidden_activation", std::string(to_string(t.hidden_activation))},
          {"output_activation", std::string(to_string(t.output_activation))}};
}

inline MlpTopology topology_from_json(const nlohmann::json& j) {
  MlpTopology t;
  t.inputs = j.value("inputs", t.inputs);
  t.hidden = j.value("hidden", t.hidden);
  if (j.contains("hidden_activation"))
    t.hidden_activation = activation_from_string(j.at("hidden_activation").get<std::string>());
  if (j.contains("output_activation"))
    t.output_activation = activation_from_string(j.at("output_activation").get<std::string>());
  t.validate();
  return t;
}

inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json j = {{"family", "nn"}, {"topology", to_json(m.topology)}};
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < m.topology.layer_count(); ++l) {
    const auto w0 = static_cast<std::ptrdiff_t>(m.weight_offset(l));
    const auto b0 = static_cast<std::ptrdiff_t>(m.bias_offset(l));
    const auto b1 = b0 + static_cast<std::ptrdiff_t>(m.topology.fan_out(l));
    layers.push_back({{"weights", Vector(m.params.begin() + w0, m.params.begin() + b0)},
                      {"bias", Vector(m.params.begin() + b0, m.params.begin() + b1)}});
  }
  j["layers"] = std::move(layers);
  if (m.normalizer) j["normalizer"] = to_json(*m.normalizer);
  return j;
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  MlpModel m;
  m.topology = topology_from_json(j.at("topology"));
  m.params.reserve(m.topology.parameter_count());
  const auto& layers = j.at("layers");
  if (layers.size() != m.topology.layer_count())
    throw std::invalid_argument("mlp_from_json: layer count mismatch");
  for (const auto& layer : layers) {
    const auto w = layer.at("weights").get<Vector>();
    const auto b = layer.at("bias").get<Vector>();
    m.params.insert(m.params.end(), w.begin(), w.end());
    m.params.insert(m.params.end(), b.begin(), b.end());
  }
  if (m.params.size() != m.topology.parameter_count())
    throw std::invalid_argument("mlp_from_json: parameter count mismatch");
  if (j.contains("normalizer")) m.normalizer = normalizer_from_json(j.at("normalizer"));
  return m;
}

}  // namespace nusselt
