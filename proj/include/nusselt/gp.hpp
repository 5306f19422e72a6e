#pragma once

/// Gaussian-process regression. The covariance is a linear mixture of a base
/// kernel, a constant term and white noise:
///
///   k(x, y) = c_k * k_base(x, y) + c_b + noise * [same training index]
///
/// Hyperparameters are fitted by maximizing the log marginal likelihood with
/// Nelder-Mead over log-parameters and random restarts.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nusselt/numerics.hpp"

namespace nusselt {

struct BadKernelParams : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class KernelBase { LinearDot, ExpSineSquared, Matern, Rbf, RationalQuadratic };

inline constexpr std::array<KernelBase, 5> kAllKernelBases = {
    KernelBase::LinearDot, KernelBase::ExpSineSquared, KernelBase::Matern, KernelBase::Rbf,
    KernelBase::RationalQuadratic};

inline std::string_view to_string(KernelBase b) {
  switch (b) {
    case KernelBase::LinearDot: return "linear-dot-product";
    case KernelBase::ExpSineSquared: return "exp-sine-squared";
    case KernelBase::Matern: return "matern";
    case KernelBase::Rbf: return "rbf";
    case KernelBase::RationalQuadratic: return "rational-quadratic";
  }
  return "unknown";
}

inline KernelBase kernel_base_from_string(std::string_view s) {
  for (KernelBase b : kAllKernelBases)
    if (to_string(b) == s) return b;
  if (s == "ldp") return KernelBase::LinearDot;
  if (s == "ess") return KernelBase::ExpSineSquared;
  if (s == "rq") return KernelBase::RationalQuadratic;
  throw BadKernelParams("unknown GP kernel '" + std::string(s) + "'");
}

struct KernelSpec {
  KernelBase base = KernelBase::Rbf;
  double length_scale = 1.0;
  double period = 1.0;      // exp-sine-squared only
  double rq_alpha = 1.0;    // rational-quadratic only
  double matern_nu = 2.5;   // one of 0.5, 1.5, 2.5
  double signal_variance = 1.0;
  double constant = 0.0;
  double noise_variance = 1e-6;

  void validate() const {
    if (!(length_scale > 0.0) || !(period > 0.0) || !(rq_alpha > 0.0) ||
        !(signal_variance > 0.0) || !(constant >= 0.0) || !(noise_variance >= 0.0))
      throw BadKernelParams("KernelSpec: scales and variances must be positive");
    if (base == KernelBase::Matern && matern_nu != 0.5 && matern_nu != 1.5 && matern_nu != 2.5)
      throw BadKernelParams("KernelSpec: Matern nu must be 0.5, 1.5 or 2.5");
  }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

namespace detail {

inline double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Base kernel value, without signal variance, constant or noise.
inline double kernel_base_eval(const KernelSpec& s, std::span<const double> x,
                               std::span<const double> y) {
  if (x.size() != y.size()) throw BadKernelParams("kernel: dimension mismatch");
  constexpr double pi = 3.14159265358979323846;
  switch (s.base) {
    case KernelBase::LinearDot: return dot(x, y);
    case KernelBase::Rbf:
      return std::exp(-detail::squared_distance(x, y) / (2.0 * s.length_scale * s.length_scale));
    case KernelBase::RationalQuadratic:
      return std::pow(1.0 + detail::squared_distance(x, y) /
                                (2.0 * s.rq_alpha * s.length_scale * s.length_scale),
                      -s.rq_alpha);
    case KernelBase::ExpSineSquared: {
      const double d = std::sqrt(detail::squared_distance(x, y));
      const double sn = std::sin(pi * d / s.period);
      return std::exp(-2.0 * sn * sn / (s.length_scale * s.length_scale));
    }
    case KernelBase::Matern: {
      const double r = std::sqrt(detail::squared_distance(x, y)) / s.length_scale;
      if (s.matern_nu == 0.5) return std::exp(-r);
      if (s.matern_nu == 1.5) {
        const double a = std::sqrt(3.0) * r;
        return (1.0 + a) * std::exp(-a);
      }
      const double a = std::sqrt(5.0) * r;
      return (1.0 + a + a * a / 3.0) * std::exp(-a);
    }
  }
  return 0.0;
}

/// Full covariance. `same_index` adds the noise term, which belongs only on
/// the diagonal of the training Gram matrix.
inline double kernel_eval(const KernelSpec& s, std::span<const double> x,
                          std::span<const double> y, bool same_index = false) {
  return s.signal_variance * kernel_base_eval(s, x, y) + s.constant +
         (same_index ? s.noise_variance : 0.0);
}

inline Matrix gram_matrix(const KernelSpec& s, const Matrix& inputs) {
  const std::size_t n = inputs.rows();
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = kernel_eval(s, inputs.row(i), inputs.row(j), i == j);
      k(i, j) = v;
      k(j, i) = v;
    }
  return k;
}

struct GpModel {
  KernelSpec spec;
  Matrix inputs;
  Vector targets;
  Matrix chol;          // lower factor of K + noise*I
  Vector dual_weights;  // (K + noise*I)^-1 y
  double log_marginal_likelihood = 0.0;
  bool degenerate_targets = false;
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Conditions a GP with fixed hyperparameters on the training data. Any
/// Cholesky jitter that was needed is folded into the stored noise variance
/// so that the dual weights solve the stored system exactly.
inline GpModel gp_condition(const KernelSpec& spec, const Matrix& inputs, Vector targets) {
  spec.validate();
  if (inputs.rows() != targets.size()) throw std::invalid_argument("gp: input/target mismatch");
  if (inputs.rows() == 0) throw std::invalid_argument("gp: no training data");
  GpModel m;
  m.spec = spec;
  m.inputs = inputs;
  m.targets = std::move(targets);
  const auto factor = cholesky_jittered(gram_matrix(spec, inputs));
  m.spec.noise_variance += factor.jitter;
  m.chol = factor.lower;
  m.dual_weights = cholesky_solve(m.chol, m.targets);
  const double n = static_cast<double>(m.targets.size());
  double log_det_half = 0.0;
  for (std::size_t i = 0; i < m.chol.rows(); ++i) log_det_half += std::log(m.chol(i, i));
  m.log_marginal_likelihood = -0.5 * dot(m.targets, m.dual_weights) - log_det_half -
                              0.5 * n * std::log(2.0 * 3.14159265358979323846);
  const auto [lo, hi] = std::minmax_element(m.targets.begin(), m.targets.end());
  m.degenerate_targets = *lo == *hi;
  return m;
}

inline GpPrediction gp_predict(const GpModel& m, std::span<const double> x) {
  if (x.size() != m.inputs.cols()) throw std::invalid_argument("gp_predict: dimension mismatch");
  const std::size_t n = m.inputs.rows();
  Vector k_star(n);
  for (std::size_t i = 0; i < n; ++i) k_star[i] = kernel_eval(m.spec, m.inputs.row(i), x);
  GpPrediction p;
  p.mean = dot(k_star, m.dual_weights);
  const Vector v = lower_solve(m.chol, k_star);
  p.variance = kernel_eval(m.spec, x, x) - dot(v, v);
  if (p.variance < 0.0) p.variance = 0.0;
  return p;
}

// ---------------------------------------------------------------------------
// Hyperparameter fitting
// ---------------------------------------------------------------------------

namespace detail {

struct LogBound {
  double lo;
  double hi;
};

enum class GpParam { LengthScale, Period, RqAlpha, Signal, Constant, Noise };

inline std::vector<GpParam> free_params(KernelBase base) {
  switch (base) {
    case KernelBase::LinearDot:
      return {GpParam::Signal, GpParam::Constant, GpParam::Noise};
    case KernelBase::ExpSineSquared:
      return {GpParam::LengthScale, GpParam::Period, GpParam::Signal, GpParam::Constant,
              GpParam::Noise};
    case KernelBase::RationalQuadratic:
      return {GpParam::LengthScale, GpParam::RqAlpha, GpParam::Signal, GpParam::Constant,
              GpParam::Noise};
    default:
      return {GpParam::LengthScale, GpParam::Signal, GpParam::Constant, GpParam::Noise};
  }
}

inline LogBound log_bound(GpParam p) {
  switch (p) {
    case GpParam::LengthScale: return {std::log(1e-3), std::log(1e3)};
    case GpParam::Period: return {std::log(1e-2), std::log(1e2)};
    case GpParam::RqAlpha: return {std::log(1e-3), std::log(1e3)};
    case GpParam::Signal: return {std::log(1e-6), std::log(1e4)};
    case GpParam::Constant: return {std::log(1e-8), std::log(1e4)};
    case GpParam::Noise: return {std::log(1e-10), std::log(1e2)};
  }
  return {0.0, 0.0};
}

inline double& param_ref(KernelSpec& s, GpParam p) {
  switch (p) {
    case GpParam::LengthScale: return s.length_scale;
    case GpParam::Period: return s.period;
    case GpParam::RqAlpha: return s.rq_alpha;
    case GpParam::Signal: return s.signal_variance;
    case GpParam::Constant: return s.constant;
    case GpParam::Noise: return s.noise_variance;
  }
  return s.length_scale;
}

}  // namespace detail

struct GpFitOptions {
  std::size_t restarts = 5;
  std::size_t budget_per_restart = 300;
  double matern_nu = 2.5;
};

/// Maximizes the log marginal likelihood. The first restart starts from a
/// data-scaled default, the others from log-uniform draws inside the bounds.
/// Results depend only on the inputs and the seed.
inline GpModel gp_fit(const Matrix& inputs, const Vector& targets, KernelBase base,
                      std::uint64_t seed, const GpFitOptions& opt = {}) {
  if (inputs.rows() < 2) throw std::invalid_argument("gp_fit: need at least two training points");
  const auto params = detail::free_params(base);
  const double y_var = std::max(sample_variance(targets), 1e-12);
  const double y_mean = nusselt::mean(targets);

  KernelSpec seed_spec;
  seed_spec.base = base;
  seed_spec.matern_nu = opt.matern_nu;
  seed_spec.length_scale = 0.5;
  seed_spec.signal_variance = y_var;
  seed_spec.constant = std::max(y_mean * y_mean, 1e-6);
  seed_spec.noise_variance = std::max(1e-2 * y_var, 1e-9);

  auto spec_from = [&](std::span<const double> logp) {
    KernelSpec s = seed_spec;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto b = detail::log_bound(params[i]);
      detail::param_ref(s, params[i]) = std::exp(std::clamp(logp[i], b.lo, b.hi));
    }
    return s;
  };
  auto negative_lml = [&](std::span<const double> logp) {
    // Leaving the box is penalized so that the simplex is pulled back.
    double penalty = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto b = detail::log_bound(params[i]);
      const double over = std::max(0.0, logp[i] - b.hi) + std::max(0.0, b.lo - logp[i]);
      penalty += over * over;
    }
    try {
      return -gp_condition(spec_from(logp), inputs, targets).log_marginal_likelihood + penalty;
    } catch (const NotPositiveDefinite&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  RandomStream rng(seed);
  std::optional<MinimizeResult> best;
  const std::size_t restarts = std::max<std::size_t>(1, opt.restarts);
  for (std::size_t r = 0; r < restarts; ++r) {
    Vector start(params.size());
    if (r == 0) {
      for (std::size_t i = 0; i < params.size(); ++i)
        start[i] = std::log(detail::param_ref(seed_spec, params[i]));
    } else {
      RandomStream child = rng.child(r);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto b = detail::log_bound(params[i]);
        start[i] = child.uniform(b.lo, b.hi);
      }
    }
    if (!std::isfinite(negative_lml(start))) continue;
    auto res = nelder_mead_min(negative_lml, start, opt.budget_per_restart, 0.5);
    if (!best || res.value < best->value) best = std::move(res);
  }
  if (!best) throw NotPositiveDefinite("gp_fit: no restart produced a positive definite Gram matrix");
  return gp_condition(spec_from(best->argmin), inputs, targets);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const KernelSpec& s) {
  return {{"kernel", std::string(to_string(s.base))},
          {"length_scale", s.length_scale},
          {"period", s.period},
          {"rq_alpha", s.rq_alpha},
          {"matern_nu", s.matern_nu},
          {"signal_variance", s.signal_variance},
          {"constant", s.constant},
          {"noise_variance", s.noise_variance}};
}

inline KernelSpec kernel_spec_from_json(const nlohmann::json& j) {
  KernelSpec s;
  s.base = kernel_base_from_string(j.at("kernel").get<std::string>());
  s.length_scale = j.value("length_scale", s.length_scale);
  s.period = j.value("period", s.period);
  s.rq_alpha = j.value("rq_alpha", s.rq_alpha);
  s.matern_nu = j.value("matern_nu", s.matern_nu);
  s.signal_variance = j.value("signal_variance", s.signal_variance);
  s.constant = j.value("constant", s.constant);
  s.noise_variance = j.value("noise_variance", s.noise_variance);
  s.validate();
  return s;
}

inline nlohmann::json to_json(const GpModel& m) {
  return {{"family", "gp"},
          {"spec", to_json(m.spec)},
          {"inputs", {{"rows", m.inputs.rows()}, {"cols", m.inputs.cols()}, {"data", m.inputs.data()}}},
          {"targets", m.targets},
          {"dual_weights", m.dual_weights},
          {"log_marginal_likelihood", m.log_marginal_likelihood}};
}

/// Rebuilds the model by re-conditioning on the stored data.
inline GpModel gp_model_from_json(const nlohmann::json& j) {
  const auto& in = j.at("inputs");
  Matrix x(in.at("rows").get<std::size_t>(), in.at("cols").get<std::size_t>(),
           in.at("data").get<Vector>());
  return gp_condition(kernel_spec_from_json(j.at("spec")), x, j.at("targets").get<Vector>());
}

}  // namespace nusselt
