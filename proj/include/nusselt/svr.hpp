#pragma once

/// epsilon-insensitive support vector regression trained by sequential
/// minimal optimization.
///
/// The dual is solved in the doubled-variable form: for n training points
/// there are 2n multipliers a_t in [0, C], the first n with label +1 and
/// linear term eps - y_i, the last n with label -1 and linear term eps + y_i.
/// The signed coefficient of point i is a_i - a_{i+n}. Each step picks the
/// maximal-violating pair.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nusselt/numerics.hpp"

namespace nusselt {

enum class SvrKernel { Rbf, Linear, Sigmoid };

inline std::string_view to_string(SvrKernel k) {
  switch (k) {
    case SvrKernel::Rbf: return "rbf";
    case SvrKernel::Linear: return "linear";
    case SvrKernel::Sigmoid: return "sigmoid";
  }
  return "unknown";
}

inline SvrKernel svr_kernel_from_string(std::string_view s) {
  if (s == "rbf") return SvrKernel::Rbf;
  if (s == "linear") return SvrKernel::Linear;
  if (s == "sigmoid") return SvrKernel::Sigmoid;
  throw std::invalid_argument("unknown SVR kernel '" + std::string(s) + "'");
}

struct SvrConfig {
  SvrKernel kernel = SvrKernel::Rbf;
  double c = 1.0;
  double gamma = 0.1;
  double epsilon = 0.01;
  double coef0 = 0.0;  // sigmoid offset r
  double tolerance = 1e-3;
  std::size_t max_iterations = 200000;

  void validate() const {
    if (!(c > 0.0) || !(gamma > 0.0) || !(epsilon >= 0.0) || !(tolerance > 0.0))
      throw std::invalid_argument("SvrConfig: need c > 0, gamma > 0, epsilon >= 0, tolerance > 0");
  }
};

/// k(x,y): exp(-gamma |x-y|^2), <x,y>, or tanh(gamma <x,y> + r).
inline double svr_kernel_eval(const SvrConfig& cfg, std::span<const double> x,
                              std::span<const double> y) {
  switch (cfg.kernel) {
    case SvrKernel::Linear: return dot(x, y);
    case SvrKernel::Sigmoid: return std::tanh(cfg.gamma * dot(x, y) + cfg.coef0);
    case SvrKernel::Rbf: {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
      return std::exp(-cfg.gamma * s);
    }
  }
  return 0.0;
}

struct SvrModel {
  SvrConfig config;
  Matrix support_vectors;
  Vector coefficients;  // signed a_i - a_i*, one per support vector
  double bias = 0.0;
  bool converged = true;
  std::size_t iterations = 0;
  double dual_objective = 0.0;  // maximization form
  double duality_gap = 0.0;
};

inline double svr_predict(const SvrModel& m, std::span<const double> x) {
  if (m.support_vectors.rows() > 0 && x.size() != m.support_vectors.cols())
    throw std::invalid_argument("svr_predict: dimension mismatch");
  double f = m.bias;
  for (std::size_t i = 0; i < m.support_vectors.rows(); ++i)
    f += m.coefficients[i] * svr_kernel_eval(m.config, m.support_vectors.row(i), x);
  return f;
}

/// Dual objective in maximization form for signed coefficients `beta`:
///   -1/2 b'Kb + b'y - eps * sum |b|
inline double svr_dual_objective(const Matrix& gram, std::span<const double> targets,
                                 std::span<const double> beta, double epsilon) {
  const Vector kb = gram * beta;
  double obj = 0.0;
  for (std::size_t i = 0; i < beta.size(); ++i)
    obj += -0.5 * beta[i] * kb[i] + beta[i] * targets[i] - epsilon * std::abs(beta[i]);
  return obj;
}

namespace detail {

struct SmoState {
  std::size_t n;
  double c;
  Vector alpha;  // 2n
  Vector grad;   // 2n, gradient of 1/2 a'Qa + p'a
  const Matrix* gram;

  int label(std::size_t t) const { return t < n ? 1 : -1; }
  double q(std::size_t s, std::size_t t) const {
    return static_cast<double>(label(s) * label(t)) * (*gram)(s % n, t % n);
  }
  bool in_up(std::size_t t) const {
    return (label(t) == 1 && alpha[t] < c) || (label(t) == -1 && alpha[t] > 0.0);
  }
  bool in_low(std::size_t t) const {
    return (label(t) == 1 && alpha[t] > 0.0) || (label(t) == -1 && alpha[t] < c);
  }
};

/// Returns false once the maximal violation is below tol.
inline bool smo_step(SmoState& st, double tol) {
  const std::size_t m = 2 * st.n;
  double gmax = -std::numeric_limits<double>::infinity();
  double gmin = std::numeric_limits<double>::infinity();
  std::size_t i = m, j = m;
  for (std::size_t t = 0; t < m; ++t) {
    const double v = -st.label(t) * st.grad[t];
    if (st.in_up(t) && v > gmax) {
      gmax = v;
      i = t;
    }
    if (st.in_low(t) && v < gmin) {
      gmin = v;
      j = t;
    }
  }
  if (i == m || j == m || gmax - gmin < tol) return false;

  constexpr double tau = 1e-12;  // curvature floor for indefinite kernels
  const double c = st.c;
  double& ai = st.alpha[i];
  double& aj = st.alpha[j];
  const double old_ai = ai, old_aj = aj;
  const double qii = st.q(i, i), qjj = st.q(j, j), qij = st.q(i, j);
  const double gi = st.grad[i], gj = st.grad[j];

  if (st.label(i) != st.label(j)) {
    double quad = qii + qjj + 2.0 * qij;
    if (quad <= 0.0) quad = tau;
    const double delta = (-gi - gj) / quad;
    const double diff = ai - aj;
    ai += delta;
    aj += delta;
    if (diff > 0.0) {
      if (aj < 0.0) {
        aj = 0.0;
        ai = diff;
      }
    } else if (ai < 0.0) {
      ai = 0.0;
      aj = -diff;
    }
    if (diff > 0.0) {
      if (ai > c) {
        ai = c;
        aj = c - diff;
      }
    } else if (aj > c) {
      aj = c;
      ai = c + diff;
    }
  } else {
    double quad = qii + qjj - 2.0 * qij;
    if (quad <= 0.0) quad = tau;
    const double delta = (gi - gj) / quad;
    const double sum = ai + aj;
    ai -= delta;
    aj += delta;
    if (sum > c) {
      if (ai > c) {
        ai = c;
        aj = sum - c;
      }
    } else if (aj < 0.0) {
      aj = 0.0;
      ai = sum;
    }
    if (sum > c) {
      if (aj > c) {
        aj = c;
        ai = sum - c;
      }
    } else if (ai < 0.0) {
      ai = 0.0;
      aj = sum;
    }
  }
  const double dai = ai - old_ai, daj = aj - old_aj;
  for (std::size_t t = 0; t < m; ++t) st.grad[t] += st.q(t, i) * dai + st.q(t, j) * daj;
  return true;
}

/// Offset rho of the decision function sum beta K - rho: the mean of
/// label*grad over free multipliers, or the midpoint of the feasible interval.
inline double smo_rho(const SmoState& st) {
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t free = 0;
  for (std::size_t t = 0; t < 2 * st.n; ++t) {
    const double yg = st.label(t) * st.grad[t];
    if (st.alpha[t] >= st.c) {
      if (st.label(t) == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (st.alpha[t] <= 0.0) {
      if (st.label(t) == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free;
      sum_free += yg;
    }
  }
  if (free > 0) return sum_free / static_cast<double>(free);
  return 0.5 * (ub + lb);
}

}  // namespace detail

struct SvrFitResult {
  SvrModel model;
  Vector all_coefficients;  // one per training point, zeros included
};

/// Trains on normalized inputs. The violation tolerance is tightened by x10
/// until the duality gap is within max(1e-3 |dual|, 1e-6) or the iteration
/// cap is reached, in which case `converged` is false.
inline SvrFitResult svr_fit_full(const Matrix& inputs, std::span<const double> targets,
                                 const SvrConfig& cfg) {
  cfg.validate();
  const std::size_t n = inputs.rows();
  if (n < 2 || targets.size() != n) throw std::invalid_argument("svr_fit: need >= 2 matching points");
  Matrix gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = svr_kernel_eval(cfg, inputs.row(i), inputs.row(j));
      gram(i, j) = v;
      gram(j, i) = v;
    }

  detail::SmoState st{n, cfg.c, Vector(2 * n, 0.0), Vector(2 * n, 0.0), &gram};
  for (std::size_t i = 0; i < n; ++i) {
    st.grad[i] = cfg.epsilon - targets[i];
    st.grad[i + n] = cfg.epsilon + targets[i];
  }

  SvrFitResult out;
  Vector beta(n);
  double tol = cfg.tolerance;
  std::size_t iters = 0;
  bool converged = false;
  double bias = 0.0, dual = 0.0, gap = 0.0;
  while (true) {
    while (iters < cfg.max_iterations && detail::smo_step(st, tol)) ++iters;
    for (std::size_t i = 0; i < n; ++i) beta[i] = st.alpha[i] - st.alpha[i + n];
    bias = -detail::smo_rho(st);
    dual = svr_dual_objective(gram, targets, beta, cfg.epsilon);
    const Vector kb = gram * std::span<const double>(beta);
    double primal = 0.5 * dot(beta, kb);
    for (std::size_t i = 0; i < n; ++i)
      primal += cfg.c * std::max(0.0, std::abs(kb[i] + bias - targets[i]) - cfg.epsilon);
    gap = primal - dual;
    if (gap <= std::max(1e-3 * std::abs(dual), 1e-6)) {
      converged = iters < cfg.max_iterations || !detail::smo_step(st, tol);
      break;
    }
    if (iters >= cfg.max_iterations || tol <= 1e-12) break;
    tol = std::max(tol * 0.1, 1e-12);
  }

  SvrModel& m = out.model;
  m.config = cfg;
  m.bias = bias;
  m.iterations = iters;
  m.converged = converged;
  m.dual_objective = dual;
  m.duality_gap = gap;
  std::vector<std::size_t> sv;
  for (std::size_t i = 0; i < n; ++i)
    if (beta[i] != 0.0) sv.push_back(i);
  m.support_vectors = Matrix(sv.size(), inputs.cols());
  for (std::size_t r = 0; r < sv.size(); ++r) {
    auto dst = m.support_vectors.row(r);
    auto src = inputs.row(sv[r]);
    std::copy(src.begin(), src.end(), dst.begin());
    m.coefficients.push_back(beta[sv[r]]);
  }
  out.all_coefficients = beta;
  return out;
}

inline SvrModel svr_fit(const Matrix& inputs, std::span<const double> targets, const SvrConfig& cfg) {
  return svr_fit_full(inputs, targets, cfg).model;
}

// ---------------------------------------------------------------------------
// KKT audit
// ---------------------------------------------------------------------------

enum class KktStatus { Interior, Margin, Bound };

struct KktPoint {
  std::size_t index = 0;
  double residual = 0.0;  // f(x) - y
  double coefficient = 0.0;
  KktStatus status = KktStatus::Interior;
  bool violated = false;
};

struct KktReport {
  std::vector<KktPoint> points;
  std::size_t violations = 0;
};

/// Checks the optimality conditions of each training point against
/// `coefficients` (one per training point) with tolerance `tol`:
/// inside the tube needs a zero coefficient, outside it needs |coef| = C,
/// a free coefficient needs |f - y| = eps, and |coef| = C needs |f - y| >= eps.
inline KktReport kkt_report(const SvrModel& m, const Matrix& inputs, std::span<const double> targets,
                            std::span<const double> coefficients, double tol = -1.0) {
  if (tol < 0.0) tol = m.config.tolerance;
  const double c = m.config.c, eps = m.config.epsilon;
  const double coef_tol = 1e-9 * std::max(1.0, c);
  KktReport rep;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    KktPoint p;
    p.index = i;
    p.residual = svr_predict(m, inputs.row(i)) - targets[i];
    p.coefficient = coefficients[i];
    const double a = std::abs(p.residual);
    const double mag = std::abs(p.coefficient);
    const bool zero = mag <= coef_tol;
    const bool at_bound = mag >= c - coef_tol;
    p.status = zero ? KktStatus::Interior : (at_bound ? KktStatus::Bound : KktStatus::Margin);
    if (a < eps - tol && !zero) p.violated = true;
    if (a > eps + tol && !at_bound) p.violated = true;
    if (p.status == KktStatus::Margin && std::abs(a - eps) > tol) p.violated = true;
    if (p.status == KktStatus::Bound && a < eps - tol) p.violated = true;
    // A nonzero coefficient must oppose the residual: beta > 0 when f < y.
    if (!zero && p.coefficient * p.residual > 0.0 && a > tol) p.violated = true;
    rep.violations += p.violated ? 1 : 0;
    rep.points.push_back(p);
  }
  return rep;
}

/// Convenience overload that recovers per-point coefficients by matching
/// support vectors to training rows.
inline KktReport kkt_report(const SvrModel& m, const Matrix& inputs, std::span<const double> targets,
                            double tol = -1.0) {
  Vector coef(inputs.rows(), 0.0);
  std::vector<bool> used(m.support_vectors.rows(), false);
  for (std::size_t i = 0; i < inputs.rows(); ++i)
    for (std::size_t s = 0; s < m.support_vectors.rows(); ++s) {
      if (used[s]) continue;
      auto a = inputs.row(i);
      auto b = m.support_vectors.row(s);
      if (std::equal(a.begin(), a.end(), b.begin())) {
        coef[i] = m.coefficients[s];
        used[s] = true;
        break;
      }
    }
  return kkt_report(m, inputs, targets, coef, tol);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SvrConfig& c) {
  return {{"kernel", std::string(to_string(c.kernel))}, {"c", c.c},
          {"gamma", c.gamma}, {"epsilon", c.epsilon},
          {"coef0", c.coef0}, {"tolerance", c.tolerance},
          {"max_iterations", c.max_iterations}};
}

inline SvrConfig svr_config_from_json(const nlohmann::json& j) {
  SvrConfig c;
  if (j.contains("kernel")) c.kernel = svr_kernel_from_string(j.at("kernel").get<std::string>());
  c.c = j.value("c", c.c);
  c.gamma = j.value("gamma", c.gamma);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.coef0 = j.value("coef0", c.coef0);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const SvrModel& m) {
  return {{"family", "svr"},
          {"config", to_json(m.config)},
          {"support_vectors", {{"rows", m.support_vectors.rows()},
                               {"cols", m.support_vectors.cols()},
                               {"data", m.support_vectors.data()}}},
          {"coefficients", m.coefficients},
          {"bias", m.bias},
          {"converged", m.converged}};
}

inline SvrModel svr_model_from_json(const nlohmann::json& j) {
  SvrModel m;
  m.config = svr_config_from_json(j.at("config"));
  const auto& sv = j.at("support_vectors");
  m.support_vectors = Matrix(sv.at("rows").get<std::size_t>(), sv.at("cols").get<std::size_t>(),
                             sv.at("data").get<Vector>());
  m.coefficients = j.at("coefficients").get<Vector>();
  m.bias = j.at("bias").get<double>();
  m.converged = j.value("converged", true);
  return m;
}

}  // namespace nusselt
