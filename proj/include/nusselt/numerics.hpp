#pragma once

/// Dense linear algebra, seeded random streams and derivative-free
/// minimization shared by every model family.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nusselt {

using Vector = std::vector<double>;

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteObjective : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_)
      throw std::invalid_argument("Matrix: entry count does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged rows");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const Vector& data() const noexcept { return data_; }
  Vector& data() noexcept { return data_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  double trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) s += (*this)(i, i);
    return s;
  }

  double frobenius() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("Matrix product: shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw std::invalid_argument("Matrix-vector product: shape mismatch");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    out[i] = std::inner_product(r.begin(), r.end(), x.begin(), 0.0);
  }
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("Matrix difference: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-10) {
  if (!m.square()) return false;
  const double scale = std::max(1.0, m.frobenius());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > rel_tol * scale) return false;
  return true;
}

namespace detail {

// Returns false on the first non-positive pivot.
inline bool cholesky_in_place(const Matrix& m, double jitter, Matrix& l) {
  const std::size_t n = m.rows();
  l = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return true;
}

}  // namespace detail

struct CholeskyFactor {
  Matrix lower;
  double jitter = 0.0;  // diagonal shift that was needed, 0 when none
};

/// Cholesky factorization with escalating diagonal jitter. The jitter starts
/// at 1e-10*trace/n and grows by x10 up to 1e-4*trace/n.
inline CholeskyFactor cholesky_jittered(const Matrix& m) {
  if (!m.square()) throw std::invalid_argument("cholesky: matrix is not square");
  if (!is_symmetric(m)) throw std::invalid_argument("cholesky: matrix is not symmetric");
  CholeskyFactor f;
  if (m.rows() == 0) return f;
  if (detail::cholesky_in_place(m, 0.0, f.lower)) return f;
  const double base = std::abs(m.trace()) / static_cast<double>(m.rows());
  for (double scale = 1e-10; scale <= 1e-4 * (1.0 + 1e-9); scale *= 10.0) {
    const double jitter = scale * base;
    if (jitter > 0.0 && detail::cholesky_in_place(m, jitter, f.lower)) {
      f.jitter = jitter;
      return f;
    }
  }
  throw NotPositiveDefinite("cholesky: matrix is not positive definite");
}

inline Matrix cholesky(const Matrix& m) { return cholesky_jittered(m).lower; }

/// Solves L*L^T x = b given the lower factor.
inline Vector cholesky_solve(const Matrix& lower, std::span<const double> b) {
  const std::size_t n = lower.rows();
  if (b.size() != n) throw std::invalid_argument("cholesky_solve: size mismatch");
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * y[k];
    y[i] = s / lower(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * y[k];
    y[ii] = s / lower(ii, ii);
  }
  return y;
}

/// Forward substitution only: solves L y = b.
inline Vector lower_solve(const Matrix& lower, std::span<const double> b) {
  const std::size_t n = lower.rows();
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * y[k];
    y[i] = s / lower(i, i);
  }
  return y;
}

inline Vector solve_spd(const Matrix& m, std::span<const double> b) {
  return cholesky_solve(cholesky(m), b);
}

/// Dense solve by partial-pivot Gaussian elimination; used where the system
/// is not symmetric (Levenberg-Marquardt normal equations are, but the KKT
/// systems of small QPs are not).
inline Vector solve_general(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  if (!a.square() || b.size() != n) throw std::invalid_argument("solve_general: shape mismatch");
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) < 1e-300) throw std::runtime_error("solve_general: singular matrix");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Child seed for sub-stream `index` of `master`.
constexpr std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Seeded stream on top of std::mt19937_64. Conversions to doubles are done
/// here rather than through <random> distributions so that sequences are the
/// same on every standard library.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in the open interval (0,1).
  double uniform() {
    const std::uint64_t k = engine_() >> 11;
    return (static_cast<double>(k) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], rejection sampled.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1ULL;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1));
  }

  /// Standard normal by Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  RandomStream child(std::uint64_t index) const { return RandomStream(mix_seed(seed_, index)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Derivative-free minimization and finite differences
// ---------------------------------------------------------------------------

using Objective = std::function<double(std::span<const double>)>;

struct MinimizeResult {
  Vector argmin;
  double value = 0.0;
  std::size_t evaluations = 0;
};

/// Nelder-Mead simplex (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5). Stops when the spread of simplex values drops below 1e-9 or
/// the evaluation budget is spent. Non-finite values away from the start are
/// treated as +inf.
inline MinimizeResult nelder_mead_min(const Objective& f, Vector start, std::size_t budget,
                                      double initial_step = 0.0) {
  if (budget < 1) throw std::invalid_argument("nelder_mead_min: budget must be >= 1");
  const std::size_t n = start.size();
  std::size_t evals = 0;
  auto eval = [&](const Vector& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  const double f0 = f(start);
  ++evals;
  if (!std::isfinite(f0)) throw NonFiniteObjective("nelder_mead_min: objective not finite at start");
  MinimizeResult best{start, f0, evals};
  if (n == 0) return best;

  std::vector<Vector> simplex{start};
  Vector values{f0};
  for (std::size_t i = 0; i < n && evals < budget; ++i) {
    Vector x = start;
    const double step = initial_step > 0.0 ? initial_step
                                           : (x[i] != 0.0 ? 0.05 * std::abs(x[i]) : 0.00025);
    x[i] += step;
    simplex.push_back(x);
    values.push_back(eval(x));
  }
  if (simplex.size() < n + 1) {
    auto it = std::min_element(values.begin(), values.end());
    const auto k = static_cast<std::size_t>(it - values.begin());
    return {simplex[k], values[k], evals};
  }

  std::vector<std::size_t> order(n + 1);
  auto centroid_of = [&](std::size_t worst) {
    Vector c(n, 0.0);
    for (std::size_t k = 0; k <= n; ++k) {
      if (k == worst) continue;
      for (std::size_t j = 0; j < n; ++j) c[j] += simplex[k][j];
    }
    for (double& v : c) v /= static_cast<double>(n);
    return c;
  };
  auto along = [&](const Vector& c, const Vector& x, double t) {
    Vector y(n);
    for (std::size_t j = 0; j < n; ++j) y[j] = c[j] + t * (x[j] - c[j]);
    return y;
  };

  while (evals < budget) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t lo = order.front();
    const std::size_t hi = order.back();
    const std::size_t second = order[n - 1];
    if (std::isfinite(values[hi]) && values[hi] - values[lo] < 1e-9) break;

    const Vector c = centroid_of(hi);
    const Vector xr = along(c, simplex[hi], -1.0);
    const double fr = eval(xr);
    if (fr < values[lo]) {
      if (evals >= budget) {
        simplex[hi] = xr;
        values[hi] = fr;
        break;
      }
      const Vector xe = along(c, simplex[hi], -2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[hi] = xe;
        values[hi] = fe;
      } else {
        simplex[hi] = xr;
        values[hi] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[hi] = xr;
      values[hi] = fr;
      continue;
    }
    if (evals >= budget) break;
    const bool outside = fr < values[hi];
    const Vector xc = outside ? along(c, xr, 0.5) : along(c, simplex[hi], 0.5);
    const double fc = eval(xc);
    if (fc < (outside ? fr : values[hi])) {
      simplex[hi] = xc;
      values[hi] = fc;
      continue;
    }
    for (std::size_t k = 0; k <= n && evals < budget; ++k) {
      if (k == lo) continue;
      simplex[k] = along(simplex[lo], simplex[k], 0.5);
      values[k] = eval(simplex[k]);
    }
  }

  for (std::size_t k = 0; k <= n; ++k)
    if (values[k] < best.value) {
      best.argmin = simplex[k];
      best.value = values[k];
    }
  best.evaluations = evals;
  return best;
}

/// Central-difference gradient.
inline Vector finite_diff_grad(const Objective& f, std::span<const double> x, double h = 1e-5) {
  Vector probe(x.begin(), x.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = probe[i];
    probe[i] = xi + h;
    const double fp = f(probe);
    probe[i] = xi - h;
    const double fm = f(probe);
    probe[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteObjective("finite_diff_grad: objective not finite near x");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample variance with the n-1 denominator; 0 for fewer than two values.
inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

}  // namespace nusselt
