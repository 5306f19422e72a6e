#pragma once

/// Closed-form average Nusselt correlation for liquid sodium in rectangular
/// miniature heat sinks:
///
///   gamma = alpha^0.35 / (L/Dh)^0.1
///   Pe*   = Pe * gamma
///   Nu*   = 0.164 + 10.2 gamma - 12 gamma^2
///   Nu    = Nu* (1 + 0.135 Pe*^0.388)
///
/// All coefficients are carried in PhysicsParams so that perturbed
/// correlations (the water-analog source domain) reuse the same code.

#include <cmath>
#include <stdexcept>
#include <string>

namespace nusselt {

struct PhysicsDomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct NegativePrediction : std::domain_error {
  using std::domain_error::domain_error;
};

struct PhysicsParams {
  double alpha_exp = 0.35;
  double ld_exp = 0.1;
  double c0 = 0.164;
  double c1 = 10.2;
  double c2 = 12.0;
  double pe_coeff = 0.135;
  double pe_exp = 0.388;

  void validate() const {
    for (double v : {alpha_exp, ld_exp, c0, c1, c2, pe_coeff, pe_exp})
      if (!std::isfinite(v)) throw std::invalid_argument("PhysicsParams: non-finite coefficient");
    if (!(pe_exp > 0.0)) throw std::invalid_argument("PhysicsParams: pe_exp must be > 0");
  }

  /// Perturbed coefficients used to emulate a related fluid (water).
  static PhysicsParams water_analog() {
    PhysicsParams p;
    p.c0 = 0.3;
    p.c1 = 8.0;
    p.pe_exp = 0.45;
    return p;
  }

  friend bool operator==(const PhysicsParams&, const PhysicsParams&) = default;
};

/// Validated envelope of the correlation.
struct PhysicsEnvelope {
  static constexpr double alpha_min = 0.143;
  static constexpr double alpha_max = 1.0;
  static constexpr double ld_min = 75.0;
  static constexpr double ld_max = 150.0;
  static constexpr double pe_min = 3.9;
  static constexpr double pe_max = 163.0;

  static bool contains(double alpha, double l_over_d, double pe) {
    return alpha >= alpha_min && alpha <= alpha_max && l_over_d >= ld_min && l_over_d <= ld_max &&
           pe >= pe_min && pe <= pe_max;
  }
};

inline double gamma(double alpha, double l_over_d, const PhysicsParams& p = {}) {
  if (!(alpha > 0.0) || !(l_over_d > 0.0))
    throw PhysicsDomainError("gamma: alpha and L/D must be positive");
  return std::pow(alpha, p.alpha_exp) / std::pow(l_over_d, p.ld_exp);
}

inline double nu_star(double g, const PhysicsParams& p = {}) {
  return p.c0 + p.c1 * g - p.c2 * g * g;
}

struct PhysicsEvaluation {
  double gamma = 0.0;
  double pe_star = 0.0;
  double nu_star = 0.0;
  double nu_ave = 0.0;
  bool range_warning = false;  // inputs outside the validated envelope
};

/// Full evaluation chain. Throws NegativePrediction when Nu <= 0, which can
/// only happen outside the envelope.
inline PhysicsEvaluation evaluate_physics(double alpha, double l_over_d, double pe,
                                          const PhysicsParams& p = {}) {
  if (!(pe >= 0.0)) throw PhysicsDomainError("nu_ave_hat: Peclet number must be >= 0");
  PhysicsEvaluation e;
  e.gamma = gamma(alpha, l_over_d, p);
  e.pe_star = pe * e.gamma;
  e.nu_star = nu_star(e.gamma, p);
  e.nu_ave = e.nu_star * (1.0 + p.pe_coeff * std::pow(e.pe_star, p.pe_exp));
  e.range_warning = !PhysicsEnvelope::contains(alpha, l_over_d, pe);
  if (!(e.nu_ave > 0.0)) throw NegativePrediction("nu_ave_hat: non-positive prediction");
  return e;
}

inline double nu_ave_hat(double alpha, double l_over_d, double pe, const PhysicsParams& p = {}) {
  return evaluate_physics(alpha, l_over_d, pe, p).nu_ave;
}

}  // namespace nusselt
