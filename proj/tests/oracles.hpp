#pragma once

// Reference implementations used only by the tests. Each one is written
// independently of the library: different algorithms (Gauss-Jordan instead
// of Cholesky, exhaustive enumeration instead of SMO), long double where
// precision matters, and no shared helpers beyond the standard library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

/// Gauss-Jordan elimination with partial pivoting in long double. Returns
/// nullopt when a pivot is (numerically) zero.
inline std::optional<Vec> gauss_jordan(Mat a, Vec b) {
  const std::size_t n = b.size();
  std::vector<std::vector<long double>> m(n, std::vector<long double>(n + 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i][j] = a[i][j];
    m[i][n] = b[i];
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(m[r][c]) > std::fabs(m[p][c])) p = r;
    if (std::fabs(m[p][c]) < 1e-300L) return std::nullopt;
    std::swap(m[p], m[c]);
    const long double piv = m[c][c];
    for (auto& v : m[c]) v /= piv;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const long double f = m[r][c];
      if (f == 0.0L) continue;
      for (std::size_t j = c; j <= n; ++j) m[r][j] -= f * m[c][j];
    }
  }
  Vec x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(m[i][n]);
  return x;
}

// ---------------------------------------------------------------------------
// Closed-form correlation in long double
// ---------------------------------------------------------------------------

struct PhysicsLd {
  long double gamma, pe_star, nu_star, nu;
};

inline PhysicsLd physics_ld(long double alpha, long double ld, long double pe) {
  PhysicsLd r{};
  r.gamma = std::pow(alpha, 0.35L) / std::pow(ld, 0.1L);
  r.pe_star = pe * r.gamma;
  r.nu_star = 0.164L + 10.2L * r.gamma - 12.0L * r.gamma * r.gamma;
  r.nu = r.nu_star * (1.0L + 0.135L * std::pow(r.pe_star, 0.388L));
  return r;
}

// ---------------------------------------------------------------------------
// GP posterior mean by the textbook formula
// ---------------------------------------------------------------------------

/// mean(x*) = k*^T (K + noise I)^{-1} y, solved by Gauss-Jordan. `kern`
/// must return the full covariance without the noise term.
template <class Kernel>
std::optional<double> gp_posterior_mean(const Mat& x, const Vec& y, const Vec& xs, double noise, Kernel kern) {
  const std::size_t n = x.size();
  Mat k(n, Vec(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i][j] = kern(x[i], x[j]) + (i == j ? noise : 0.0);
  const auto w = gauss_jordan(k, y);
  if (!w) return std::nullopt;
  long double m = 0.0L;
  for (std::size_t i = 0; i < n; ++i) m += static_cast<long double>(kern(x[i], xs)) * (*w)[i];
  return static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Brute-force epsilon-SVR dual
// ---------------------------------------------------------------------------

/// Maximizes  -1/2 b'Kb + b'y - eps sum|b|  s.t. sum b = 0, |b_i| <= C by
/// enumerating, for every variable, one of five states: 0, +C, -C, free
/// positive or free negative. For each pattern the stationarity conditions of
/// the free variables plus the equality constraint form a linear system;
/// feasible solutions are scored and the best is returned. Because the
/// objective is concave the global maximum lies on one of these faces.
inline double svr_dual_bruteforce(const Mat& k, const Vec& y, double c, double eps, Vec* argmax = nullptr) {
  const std::size_t n = y.size();
  std::size_t patterns = 1;
  for (std::size_t i = 0; i < n; ++i) patterns *= 5;
  double best = -std::numeric_limits<double>::infinity();
  auto objective = [&](const Vec& b) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      long double kb = 0.0L;
      for (std::size_t j = 0; j < n; ++j) kb += static_cast<long double>(k[i][j]) * b[j];
      s += -0.5L * b[i] * kb + static_cast<long double>(b[i]) * y[i] - eps * std::fabs(static_cast<long double>(b[i]));
    }
    return static_cast<double>(s);
  };
  for (std::size_t code = 0; code < patterns; ++code) {
    std::vector<int> state(n);
    std::size_t rest = code;
    for (std::size_t i = 0; i < n; ++i) {
      state[i] = static_cast<int>(rest % 5);
      rest /= 5;
    }
    Vec b(n, 0.0);
    std::vector<std::size_t> free;
    std::vector<double> sign;
    for (std::size_t i = 0; i < n; ++i) {
      switch (state[i]) {
        case 0: b[i] = 0.0; break;
        case 1: b[i] = c; break;
        case 2: b[i] = -c; break;
        case 3: free.push_back(i); sign.push_back(1.0); break;
        case 4: free.push_back(i); sign.push_back(-1.0); break;
      }
    }
    double fixed_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) fixed_sum += b[i];
    if (free.empty()) {
      if (std::fabs(fixed_sum) > 1e-12) continue;
    } else {
      // Unknowns: b_F and the multiplier lambda of the equality constraint.
      const std::size_t m = free.size();
      Mat a(m + 1, Vec(m + 1, 0.0));
      Vec rhs(m + 1, 0.0);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t i = free[r];
        for (std::size_t s = 0; s < m; ++s) a[r][s] = k[i][free[s]];
        a[r][m] = 1.0;
        double kb_fixed = 0.0;
        for (std::size_t j = 0; j < n; ++j) kb_fixed += k[i][j] * b[j];
        rhs[r] = y[i] - eps * sign[r] - kb_fixed;
      }
      for (std::size_t s = 0; s < m; ++s) a[m][s] = 1.0;
      rhs[m] = -fixed_sum;
      const auto sol = gauss_jordan(a, rhs);
      if (!sol) continue;
      bool ok = true;
      for (std::size_t r = 0; r < m; ++r) {
        const double v = (*sol)[r];
        if (sign[r] * v < -1e-12 || std::fabs(v) > c + 1e-12) ok = false;
        b[free[r]] = std::clamp(v, -c, c);
      }
      if (!ok) continue;
    }
    const double f = objective(b);
    if (f > best) {
      best = f;
      if (argmax) *argmax = b;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Exact Mann-Whitney by bitmask enumeration
// ---------------------------------------------------------------------------

/// Two-sided exact p-value: the share of all C(n, na) relabelings whose
/// U statistic is at least as far from na*nb/2 as the observed one.
inline double mann_whitney_exact_p(const Vec& a, const Vec& b) {
  Vec pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), na = a.size(), nb = b.size();
  // Midranks by counting: rank = (#less) + (#equal + 1) / 2.
  Vec rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (pooled[j] < pooled[i]) ++less;
      if (pooled[j] == pooled[i]) ++equal;
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  const double mu = static_cast<double>(na * nb) / 2.0;
  auto u_of = [&](std::uint32_t mask) {
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1u) r += rank[i];
    return r - static_cast<double>(na * (na + 1)) / 2.0;
  };
  const double observed = std::fabs(u_of((1u << na) - 1u) - mu);
  std::size_t total = 0, extreme = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) continue;
    ++total;
    if (std::fabs(u_of(mask) - mu) >= observed - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

/// Two-pass sample variance in long double.
inline double variance(const Vec& v) {
  if (v.size() < 2) return 0.0;
  long double m = 0.0L;
  for (double x : v) m += x;
  m /= static_cast<long double>(v.size());
  long double s = 0.0L;
  for (double x : v) s += (x - m) * (x - m);
  return static_cast<double>(s / static_cast<long double>(v.size() - 1));
}

}  // namespace oracle
