#pragma once

/// Self-supervised physics-informed network. A ReLU trunk feeds two heads
/// that both read the last hidden layer:
///
///   prediction head: one ReLU neuron, the Nusselt estimate (unnormalized)
///   pc head:         one sigmoid neuron, the physics coefficient in (0,1)
///
/// Literal loss:  MAPE(pred, y) + MSE(physics_norm, pc)
/// Weighted loss: MAPE(pred, y) + mean(pc) * MAPE(pred, physics)
///
/// physics_norm is the correlation's prediction min-max scaled with bounds
/// frozen from the training set.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nusselt/dataset.hpp"
#include "nusselt/neural.hpp"
#include "nusselt/physics.hpp"

namespace nusselt {

struct NonPositiveLabel : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PinnLossMode { Literal, Weighted };

inline std::string_view to_string(PinnLossMode m) {
  return m == PinnLossMode::Literal ? "literal" : "weighted";
}

inline PinnLossMode pinn_loss_mode_from_string(std::string_view s) {
  if (s == "literal") return PinnLossMode::Literal;
  if (s == "weighted") return PinnLossMode::Weighted;
  throw std::invalid_argument("unknown PINN loss mode '" + std::string(s) + "'");
}

struct PinnModel {
  MlpModel net;   // trunk + prediction head
  Vector pc_head;  // weights over the last hidden layer, then bias
  double physics_min = 0.0;
  double physics_max = 1.0;
  PhysicsParams physics;
  PinnLossMode mode = PinnLossMode::Literal;

  double normalize_physics(double v) const {
    return (v - physics_min) / (physics_max - physics_min);
  }
};

struct PinnOutput {
  double prediction = 0.0;
  double pc = 0.0;
};

inline MlpTopology pinn_topology(const std::vector<std::size_t>& widths,
                                 std::size_t inputs = kInputCount) {
  MlpTopology t;
  t.inputs = inputs;
  t.hidden = widths;
  t.hidden_activation = Activation::Relu;
  t.output_activation = Activation::Relu;
  return t;
}

/// Initializes trunk and prediction head with the He-uniform scheme from
/// `seed`, the prediction-head bias at `output_bias`, and the pc head from
/// an independent child stream so the trunk draws match a plain network
/// initialized with the same seed.
inline PinnModel init_pinn(const std::vector<std::size_t>& widths, std::uint64_t seed,
                           double output_bias = 0.0, std::size_t inputs = kInputCount) {
  if (widths.empty()) throw std::invalid_argument("init_pinn: need at least one hidden layer");
  PinnModel m;
  m.net = init_mlp(pinn_topology(widths, inputs), seed, InitScheme::HeUniform);
  m.net.params[m.net.bias_offset(m.net.topology.layer_count() - 1)] = output_bias;
  const std::size_t last = widths.back();
  m.pc_head.assign(last + 1, 0.0);
  RandomStream rng = RandomStream(seed).child(0x9C);
  const double limit = std::sqrt(6.0 / static_cast<double>(last));
  for (std::size_t i = 0; i < last; ++i) m.pc_head[i] = rng.uniform(-limit, limit);
  return m;
}

namespace detail {

inline double pc_from_hidden(std::span<const double> head, std::span<const double> hidden) {
  double s = head[hidden.size()];
  for (std::size_t i = 0; i < hidden.size(); ++i) s += head[i] * hidden[i];
  return sigmoid(s);
}

inline const Vector& last_hidden(const ForwardTrace& t) { return t.post[t.post.size() - 2]; }

}  // namespace detail

inline PinnOutput pinn_forward(const PinnModel& m, std::span<const double> x) {
  ForwardTrace t;
  forward_trace(m.net, x, t);
  return {t.post.back()[0], detail::pc_from_hidden(m.pc_head, detail::last_hidden(t))};
}

/// Physics predictions for a set of points, raw and normalized.
struct PhysicsTargets {
  Vector raw;
  Vector normalized;
};

inline PhysicsTargets physics_targets(const PinnModel& m, const Dataset& ds) {
  PhysicsTargets pt;
  for (const auto& p : ds.points) {
    const double v = nu_ave_hat(p.alpha, p.l_over_d, p.pe, m.physics);
    pt.raw.push_back(v);
    pt.normalized.push_back(m.normalize_physics(v));
  }
  return pt;
}

/// Reported composite loss with exact MAPE terms.
inline double pinn_loss(std::span<const double> predictions, std::span<const double> pcs,
                        std::span<const double> labels, const PhysicsTargets& physics,
                        PinnLossMode mode) {
  const std::size_t n = labels.size();
  if (n == 0 || predictions.size() != n || pcs.size() != n ||
      (mode == PinnLossMode::Literal && physics.normalized.size() != n) ||
      (mode == PinnLossMode::Weighted && physics.raw.size() != n))
    throw std::invalid_argument("pinn_loss: length mismatch");
  double mape = 0.0, second = 0.0, pc_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(labels[i] > 0.0)) throw NonPositiveLabel("pinn_loss: labels must be > 0");
    mape += std::abs((labels[i] - predictions[i]) / labels[i]);
    if (mode == PinnLossMode::Literal) {
      const double d = physics.normalized[i] - pcs[i];
      second += d * d;
    } else {
      second += std::abs((physics.raw[i] - predictions[i]) / physics.raw[i]);
      pc_mean += pcs[i];
    }
  }
  const double nd = static_cast<double>(n);
  if (mode == PinnLossMode::Literal) return mape / nd + second / nd;
  return mape / nd + (pc_mean / nd) * (second / nd);
}

/// Differentiable training objective over `rows`. MAPE terms use the smooth
/// form sqrt(r^2 + 1e-12); `physics_weight` scales the second term (0 turns
/// the model into a plain ReLU regressor). Returns the loss and fills
/// `grad` (net parameters first, then the pc head).
inline double pinn_objective(const PinnModel& m, const Matrix& inputs, std::span<const double> labels,
                             const PhysicsTargets& physics, std::span<const std::size_t> rows,
                             double physics_weight, std::span<double> grad) {
  const std::size_t np = m.net.params.size();
  const std::size_t last = m.pc_head.size() - 1;
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  ForwardTrace t;
  double data = 0.0, phys = 0.0;
  Vector extra(last);

  // Weighted mode couples samples through mean(pc); gather it first.
  double pc_mean = 0.0, phys_mape = 0.0;
  std::vector<double> pcs;
  if (m.mode == PinnLossMode::Weighted) {
    pcs.reserve(rows.size());
    for (std::size_t r : rows) {
      forward_trace(m.net, inputs.row(r), t);
      const double pc = detail::pc_from_hidden(m.pc_head, detail::last_hidden(t));
      pcs.push_back(pc);
      pc_mean += pc * inv_n;
      phys_mape += loss_term(LossKind::SmoothMape, t.post.back()[0], physics.raw[r]).value * inv_n;
    }
  }

  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    forward_trace(m.net, inputs.row(r), t);
    const double pred = t.post.back()[0];
    const auto& h = detail::last_hidden(t);
    const auto dterm = loss_term(LossKind::SmoothMape, pred, labels[r]);
    data += dterm.value * inv_n;
    double d_pred = dterm.d_pred * inv_n;
    double d_pc = 0.0;
    double pc = 0.0;
    if (m.mode == PinnLossMode::Literal) {
      pc = detail::pc_from_hidden(m.pc_head, h);
      const double diff = pc - physics.normalized[r];
      phys += diff * diff * inv_n;
      d_pc = physics_weight * 2.0 * diff * inv_n;
    } else {
      pc = pcs[k];
      const auto pterm = loss_term(LossKind::SmoothMape, pred, physics.raw[r]);
      d_pred += physics_weight * pc_mean * pterm.d_pred * inv_n;
      d_pc = physics_weight * phys_mape * inv_n;
    }
    // pc head: d pc / d s = pc (1 - pc)
    const double d_s = d_pc * pc * (1.0 - pc);
    for (std::size_t i = 0; i < last; ++i) {
      grad[np + i] += d_s * h[i];
      extra[i] = d_s * m.pc_head[i];
    }
    grad[np + last] += d_s;
    backward(m.net, t, d_pred, grad.first(np), extra);
  }
  if (m.mode == PinnLossMode::Weighted) phys = pc_mean * phys_mape;
  return data + physics_weight * phys;
}

inline Vector pinn_flatten(const PinnModel& m) {
  Vector p = m.net.params;
  p.insert(p.end(), m.pc_head.begin(), m.pc_head.end());
  return p;
}

inline void pinn_assign(PinnModel& m, std::span<const double> p) {
  const std::size_t np = m.net.params.size();
  std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(np), m.net.params.begin());
  std::copy(p.begin() + static_cast<std::ptrdiff_t>(np), p.end(), m.pc_head.begin());
}

struct PinnTrainOptions {
  std::vector<std::size_t> widths{20, 20, 12};
  TrainConfig train;  // method adam/rmsprop/sgd; learning rate defaults below
  PinnLossMode mode = PinnLossMode::Literal;
  PhysicsParams physics;
  double physics_weight = 1.0;

  PinnTrainOptions() {
    train.method = TrainMethod::Adam;
    train.learning_rate = 0.34;
    train.loss = LossKind::SmoothMape;
  }
};

struct PinnTrainResult {
  PinnModel model;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  Vector train_trace;
  Vector val_trace;
  bool nonfinite_loss = false;
};

/// Trains on `ds` with inputs normalized by `norm`. Physics bounds are frozen
/// from the training rows before optimization; the prediction-head bias
/// starts at the mean training label.
inline PinnTrainResult pinn_train(const Dataset& ds, const NormalizationParams& norm,
                                  const PinnTrainOptions& opt, std::uint64_t seed) {
  const auto& cfg = opt.train;
  cfg.validate();
  if (cfg.method == TrainMethod::Lm)
    throw std::invalid_argument("pinn_train: method must be adam, rmsprop or sgd");
  if (ds.size() < 2) throw std::invalid_argument("pinn_train: need at least two samples");
  const Vector labels = ds.targets();
  for (double y : labels)
    if (!(y > 0.0)) throw NonPositiveLabel("pinn_train: labels must be > 0");
  const Matrix inputs = norm.inputs(ds);

  const RandomStream root(cfg.seed);
  const auto split = split_validation(ds.size(), cfg.validation_fraction, root.child(1));
  double label_mean = 0.0;
  for (std::size_t r : split.train) label_mean += labels[r];
  label_mean /= static_cast<double>(split.train.size());

  PinnModel model = init_pinn(opt.widths, seed, label_mean);
  model.physics = opt.physics;
  model.mode = opt.mode;
  model.net.normalizer = norm;
  {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t r : split.train) {
      const auto& p = ds[r];
      const double v = nu_ave_hat(p.alpha, p.l_over_d, p.pe, opt.physics);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!(hi > lo)) hi = lo + 1.0;
    model.physics_min = lo;
    model.physics_max = hi;
  }
  const PhysicsTargets physics = physics_targets(model, ds);

  PinnTrainResult res;
  res.model = model;
  if (cfg.max_epochs == 0) return res;

  PinnModel work = model;
  FirstOrderProblem prob;
  prob.batch_gradient = [&](std::span<const double> p, std::span<const std::size_t> batch,
                            std::span<double> grad) {
    pinn_assign(work, p);
    return pinn_objective(work, inputs, labels, physics, batch, opt.physics_weight, grad);
  };
  Vector scratch(pinn_flatten(model).size());
  prob.train_loss = [&](std::span<const double> p) {
    pinn_assign(work, p);
    std::fill(scratch.begin(), scratch.end(), 0.0);
    return pinn_objective(work, inputs, labels, physics, split.train, opt.physics_weight, scratch);
  };
  prob.val_loss = [&](std::span<const double> p) {
    pinn_assign(work, p);
    return mean_abs_relative_error(work.net, inputs, labels, split.val);
  };
  auto out = first_order_train(pinn_flatten(model), split.train, !split.val.empty(), prob, cfg,
                               root.child(2));
  pinn_assign(res.model, out.params);
  res.epochs = out.epochs;
  res.best_epoch = out.best_epoch;
  res.train_trace = std::move(out.train_trace);
  res.val_trace = std::move(out.val_trace);
  res.nonfinite_loss = out.nonfinite_loss;
  return res;
}

inline double pinn_predict(const PinnModel& m, const DataPoint& p) {
  return predict(m.net, p);
}

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct PcDistribution {
  std::vector<HistogramBin> bins;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Histogram of physics-coefficient values over [0,1].
inline PcDistribution pc_distribution(std::span<const double> pcs, std::size_t bins = 20) {
  if (bins < 1) throw std::invalid_argument("pc_distribution: need at least one bin");
  PcDistribution d;
  for (std::size_t b = 0; b < bins; ++b)
    d.bins.push_back({static_cast<double>(b) / static_cast<double>(bins),
                      static_cast<double>(b + 1) / static_cast<double>(bins), 0});
  for (double v : pcs) {
    auto b = static_cast<std::size_t>(v * static_cast<double>(bins));
    d.bins[std::min(b, bins - 1)].count++;
  }
  d.mean = nusselt::mean(pcs);
  d.stddev = std::sqrt(sample_variance(pcs));
  return d;
}

inline nlohmann::json to_json(const PinnModel& m) {
  auto net = to_json(m.net);
  return {{"family", "pinn"},
          {"net", net},
          {"pc_head", m.pc_head},
          {"physics_min", m.physics_min},
          {"physics_max", m.physics_max},
          {"loss_mode", std::string(to_string(m.mode))},
          {"physics",
           {{"alpha_exp", m.physics.alpha_exp},
            {"ld_exp", m.physics.ld_exp},
            {"c0", m.physics.c0},
            {"c1", m.physics.c1},
            {"c2", m.physics.c2},
            {"pe_coeff", m.physics.pe_coeff},
            {"pe_exp", m.physics.pe_exp}}}};
}

inline PinnModel pinn_from_json(const nlohmann::json& j) {
  PinnModel m;
  m.net = mlp_from_json(j.at("net"));
  m.pc_head = j.at("pc_head").get<Vector>();
  m.physics_min = j.at("physics_min").get<double>();
  m.physics_max = j.at("physics_max").get<double>();
  m.mode = pinn_loss_mode_from_string(j.value("loss_mode", std::string("literal")));
  const auto& p = j.at("physics");
  m.physics.alpha_exp = p.at("alpha_exp").get<double>();
  m.physics.ld_exp = p.at("ld_exp").get<double>();
  m.physics.c0 = p.at("c0").get<double>();
  m.physics.c1 = p.at("c1").get<double>();
  m.physics.c2 = p.at("c2").get<double>();
  m.physics.pe_coeff = p.at("pe_coeff").get<double>();
  m.physics.pe_exp = p.at("pe_exp").get<double>();
  return m;
}

}  // namespace nusselt
