#pragma once

/// Data model for the heat-sink samples, CSV ingestion, min-max
/// normalization, fold assignment, synthetic data generation and the
/// descriptive statistics used in the data-analysis reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nusselt/numerics.hpp"
#include "nusselt/physics.hpp"

namespace nusselt {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaMismatch : DataError {
  using DataError::DataError;
};
struct NonPositiveValue : DataError {
  NonPositiveValue(std::size_t row_index, const std::string& what)
      : DataError(what), row(row_index) {}
  std::size_t row;
};
struct InconsistentLOverD : DataError {
  InconsistentLOverD(std::size_t row_index, const std::string& what)
      : DataError(what), row(row_index) {}
  std::size_t row;
};
struct DegenerateFeature : DataError {
  using DataError::DataError;
};
struct BadPartitionSpec : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct BadGenerationSpec : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct BadBandwidth : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kInputCount = 6;
inline constexpr std::size_t kFieldCount = 7;
inline constexpr std::size_t kTargetField = 6;

inline constexpr std::array<std::string_view, kFieldCount> kCsvColumns = {
    "alpha", "W_mm", "Dh_mm", "L_mm", "L_over_D", "Pe", "Nu_ave"};

/// One CFD sample. Lengths are in millimetres.
struct DataPoint {
  double alpha = 0.0;
  double w = 0.0;
  double dh = 0.0;
  double l = 0.0;
  double l_over_d = 0.0;
  double pe = 0.0;
  double nu_ave = 0.0;

  double field(std::size_t i) const {
    switch (i) {
      case 0: return alpha;
      case 1: return w;
      case 2: return dh;
      case 3: return l;
      case 4: return l_over_d;
      case 5: return pe;
      case 6: return nu_ave;
      default: throw std::out_of_range("DataPoint::field");
    }
  }

  double& field(std::size_t i) {
    switch (i) {
      case 0: return alpha;
      case 1: return w;
      case 2: return dh;
      case 3: return l;
      case 4: return l_over_d;
      case 5: return pe;
      case 6: return nu_ave;
      default: throw std::out_of_range("DataPoint::field");
    }
  }

  friend bool operator==(const DataPoint&, const DataPoint&) = default;
};

enum class Provenance { CfdCsv, SyntheticNa, SyntheticWater };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::CfdCsv: return "cfd-csv";
    case Provenance::SyntheticNa: return "synthetic-na";
    case Provenance::SyntheticWater: return "synthetic-water";
  }
  return "unknown";
}

struct Dataset {
  std::vector<DataPoint> points;
  Provenance provenance = Provenance::CfdCsv;
  std::optional<std::uint64_t> seed;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  const DataPoint& operator[](std::size_t i) const { return points[i]; }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{{}, provenance, seed};
    out.points.reserve(indices.size());
    for (std::size_t i : indices) out.points.push_back(points.at(i));
    return out;
  }

  Vector column(std::size_t field) const {
    Vector v;
    v.reserve(points.size());
    for (const auto& p : points) v.push_back(p.field(field));
    return v;
  }

  Vector targets() const { return column(kTargetField); }
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parses the dataset CSV. With `check` on, L_over_D must equal L_mm/Dh_mm
/// within 1e-6 relative.
inline Dataset read_csv(std::istream& in, bool check = false) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaMismatch("csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  bool ok = header.size() == kFieldCount;
  for (std::size_t i = 0; ok && i < kFieldCount; ++i) ok = header[i] == kCsvColumns[i];
  if (!ok) throw SchemaMismatch("csv: header must be alpha,W_mm,Dh_mm,L_mm,L_over_D,Pe,Nu_ave");

  Dataset ds;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != kFieldCount)
      throw SchemaMismatch("csv: row " + std::to_string(row) + " has " +
                           std::to_string(cells.size()) + " cells");
    DataPoint p;
    for (std::size_t i = 0; i < kFieldCount; ++i) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[i].size())
        throw SchemaMismatch("csv: row " + std::to_string(row) + " column " +
                             std::string(kCsvColumns[i]) + " is not a number");
      if (!std::isfinite(v) || !(v > 0.0))
        throw NonPositiveValue(row, "csv: row " + std::to_string(row) + " column " +
                                        std::string(kCsvColumns[i]) + " must be finite and > 0");
      p.field(i) = v;
    }
    if (check) {
      const double ratio = p.l / p.dh;
      if (std::abs(ratio - p.l_over_d) > 1e-6 * std::abs(ratio))
        throw InconsistentLOverD(row, "csv: row " + std::to_string(row) +
                                          " L_over_D does not equal L_mm/Dh_mm");
    }
    ds.points.push_back(p);
    ++row;
  }
  return ds;
}

inline Dataset ingest_csv(const std::string& path, bool check = false) {
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open " + path);
  return read_csv(in, check);
}

inline void write_csv(std::ostream& out, const Dataset& ds) {
  for (std::size_t i = 0; i < kFieldCount; ++i) out << (i ? "," : "") << kCsvColumns[i];
  out << '\n';
  for (const auto& p : ds.points) {
    for (std::size_t i = 0; i < kFieldCount; ++i)
      out << (i ? "," : "") << detail::format_double(p.field(i));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-field min-max bounds. Fitting requires the six inputs to vary; a
/// constant target is allowed but cannot then be mapped.
struct NormalizationParams {
  std::array<double, kFieldCount> min{};
  std::array<double, kFieldCount> max{};

  bool degenerate(std::size_t field) const { return !(max[field] > min[field]); }

  double apply(std::size_t field, double x) const {
    if (degenerate(field))
      throw DegenerateFeature("normalizer: field " + std::string(kCsvColumns[field]) +
                              " has max == min");
    return (x - min[field]) / (max[field] - min[field]);
  }

  double invert(std::size_t field, double z) const {
    return min[field] + z * (max[field] - min[field]);
  }

  /// Normalized model inputs of a point.
  Vector inputs(const DataPoint& p) const {
    Vector x(kInputCount);
    for (std::size_t i = 0; i < kInputCount; ++i) x[i] = apply(i, p.field(i));
    return x;
  }

  Matrix inputs(const Dataset& ds) const {
    Matrix m(ds.size(), kInputCount);
    for (std::size_t r = 0; r < ds.size(); ++r)
      for (std::size_t i = 0; i < kInputCount; ++i) m(r, i) = apply(i, ds[r].field(i));
    return m;
  }

  friend bool operator==(const NormalizationParams&, const NormalizationParams&) = default;
};

inline NormalizationParams fit_normalizer(const Dataset& ds) {
  if (ds.empty()) throw DataError("fit_normalizer: empty dataset");
  NormalizationParams n;
  n.min.fill(std::numeric_limits<double>::infinity());
  n.max.fill(-std::numeric_limits<double>::infinity());
  for (const auto& p : ds.points)
    for (std::size_t i = 0; i < kFieldCount; ++i) {
      n.min[i] = std::min(n.min[i], p.field(i));
      n.max[i] = std::max(n.max[i], p.field(i));
    }
  for (std::size_t i = 0; i < kInputCount; ++i)
    if (n.degenerate(i))
      throw DegenerateFeature("fit_normalizer: field " + std::string(kCsvColumns[i]) +
                              " is constant");
  return n;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

struct HoldoutSpec {
  double fraction = 0.1;
  std::uint64_t seed = 0;
};

struct KFoldSpec {
  std::size_t k = 10;
  std::uint64_t seed = 0;
};

using PartitionSpec = std::variant<HoldoutSpec, KFoldSpec>;

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

/// K-fold: a seeded permutation is cut into k contiguous folds, the first
/// n % k of which receive one extra index. Holdout: the first
/// round(fraction * n) permuted indices are held out. Index lists are sorted.
inline std::vector<Split> partition(std::size_t n, const PartitionSpec& spec) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto finish = [n](std::vector<std::size_t> eval) {
    std::sort(eval.begin(), eval.end());
    Split s;
    std::vector<bool> held(n, false);
    for (std::size_t i : eval) held[i] = true;
    for (std::size_t i = 0; i < n; ++i)
      if (!held[i]) s.train.push_back(i);
    s.eval = std::move(eval);
    return s;
  };

  if (const auto* h = std::get_if<HoldoutSpec>(&spec)) {
    if (!(h->fraction > 0.0 && h->fraction < 1.0))
      throw BadPartitionSpec("partition: holdout fraction must be in (0,1)");
    const auto count = static_cast<std::size_t>(std::llround(h->fraction * static_cast<double>(n)));
    if (count == 0 || count >= n)
      throw BadPartitionSpec("partition: holdout leaves an empty train or eval set");
    RandomStream rng(h->seed);
    rng.shuffle(perm);
    return {finish({perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(count)})};
  }

  const auto& kf = std::get<KFoldSpec>(spec);
  if (kf.k < 2 || kf.k > n) throw BadPartitionSpec("partition: k must satisfy 2 <= k <= n");
  RandomStream rng(kf.seed);
  rng.shuffle(perm);
  std::vector<Split> folds;
  std::size_t start = 0;
  for (std::size_t f = 0; f < kf.k; ++f) {
    const std::size_t size = n / kf.k + (f < n % kf.k ? 1 : 0);
    folds.push_back(finish({perm.begin() + static_cast<std::ptrdiff_t>(start),
                            perm.begin() + static_cast<std::ptrdiff_t>(start + size)}));
    start += size;
  }
  return folds;
}

inline std::vector<Split> partition(const Dataset& ds, const PartitionSpec& spec) {
  return partition(ds.size(), spec);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

enum class Fluid { Sodium, Water };

struct GenerationRanges {
  double alpha_lo = 0.143, alpha_hi = 1.0;
  double dh_lo = 1.0, dh_hi = 2.33;
  double ld_lo = 75.0, ld_hi = 150.0;
  double pe_lo = 3.9, pe_hi = 162.8;
};

/// Samples features inside the sodium design envelope and labels them with
/// the correlation times (1 + eps), eps ~ N(0, noise). Pe is log-uniform,
/// the other sampled features uniform. W and L follow from the hydraulic
/// diameter identity Dh = 2HW/(H+W), H = alpha W.
inline Dataset synthesize_dataset(std::size_t n, const PhysicsParams& params, double noise,
                                  Fluid fluid, std::uint64_t seed,
                                  const GenerationRanges& r = {}) {
  if (n < 1) throw BadGenerationSpec("synthesize_dataset: n must be >= 1");
  if (!(noise >= 0.0) || !std::isfinite(noise))
    throw BadGenerationSpec("synthesize_dataset: noise must be finite and >= 0");
  params.validate();
  Dataset ds;
  ds.provenance = fluid == Fluid::Sodium ? Provenance::SyntheticNa : Provenance::SyntheticWater;
  ds.seed = seed;
  RandomStream rng(seed);
  const double log_pe_lo = std::log(r.pe_lo), log_pe_hi = std::log(r.pe_hi);
  for (std::size_t i = 0; i < n; ++i) {
    DataPoint p;
    p.alpha = rng.uniform(r.alpha_lo, r.alpha_hi);
    p.dh = rng.uniform(r.dh_lo, r.dh_hi);
    p.l_over_d = rng.uniform(r.ld_lo, r.ld_hi);
    p.pe = std::exp(rng.uniform(log_pe_lo, log_pe_hi));
    p.l = p.l_over_d * p.dh;
    p.w = p.dh * (1.0 + p.alpha) / (2.0 * p.alpha);
    const double clean = nu_ave_hat(p.alpha, p.l_over_d, p.pe, params);
    double factor = 1.0;
    if (noise > 0.0) {
      do {
        factor = 1.0 + noise * rng.normal();
      } while (!(factor > 0.0));
    }
    p.nu_ave = clean * factor;
    ds.points.push_back(p);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Descriptive statistics
// ---------------------------------------------------------------------------

struct StatsSummary {
  double mean = 0.0;
  double mode = 0.0;
  double variance = 0.0;  // sample variance, n-1 denominator
  double min = 0.0;
  double max = 0.0;
  double p99 = 0.0;
  double p1 = 0.0;
};

/// Nearest-rank percentile: the value at rank ceil(k/100 * n), at least 1.
inline double percentile_nearest_rank(Vector sorted, double k) {
  if (sorted.empty()) throw DataError("percentile: empty sample");
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(k / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline StatsSummary summarize(std::span<const double> values) {
  if (values.empty()) throw DataError("describe_stats: empty sample");
  StatsSummary s;
  Vector sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  s.mean = nusselt::mean(values);
  s.variance = sample_variance(values);
  s.min = sorted.front();
  s.max = sorted.back();
  s.p99 = percentile_nearest_rank(sorted, 99.0);
  s.p1 = percentile_nearest_rank(sorted, 1.0);
  // Mode: most frequent exact value; the sorted scan keeps the smallest on ties.
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    if (j - i > best_count) {
      best_count = j - i;
      s.mode = sorted[i];
    }
    i = j;
  }
  return s;
}

inline std::array<StatsSummary, kFieldCount> describe_stats(const Dataset& ds) {
  if (ds.empty()) throw DataError("describe_stats: empty dataset");
  std::array<StatsSummary, kFieldCount> out;
  for (std::size_t i = 0; i < kFieldCount; ++i) out[i] = summarize(ds.column(i));
  return out;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

struct MannWhitneyResult {
  double u_a = 0.0;
  double u_b = 0.0;
  double p_value = 1.0;
  bool exact = false;
};

/// Midranks (1-based) of the concatenation of a and b.
inline Vector midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });
  Vector ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

/// Two-sided Mann-Whitney U test. Exact (enumerating every assignment of the
/// pooled midranks) when |a|+|b| <= 12, otherwise the tie-corrected normal
/// approximation with continuity correction.
inline MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  Vector pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const Vector ranks = midranks(pooled);
  double ra = 0.0;
  for (std::size_t i = 0; i < na; ++i) ra += ranks[i];
  const double nad = static_cast<double>(na), nbd = static_cast<double>(nb);
  MannWhitneyResult res;
  res.u_a = ra - nad * (nad + 1.0) / 2.0;
  res.u_b = nad * nbd - res.u_a;
  const double mu = nad * nbd / 2.0;
  const double observed = std::abs(res.u_a - mu);

  if (n <= 12) {
    res.exact = true;
    std::size_t total = 0, extreme = 0;
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(na), true);
    // prev_permutation over a sorted-descending mask walks every na-subset once
    do {
      double r = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (pick[i]) r += ranks[i];
      const double u = r - nad * (nad + 1.0) / 2.0;
      ++total;
      if (std::abs(u - mu) >= observed - 1e-9) ++extreme;
    } while (std::prev_permutation(pick.begin(), pick.end()));
    res.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    return res;
  }

  std::map<double, std::size_t> ties;
  for (double r : ranks) ++ties[r];
  double tie_sum = 0.0;
  for (const auto& [r, t] : ties) {
    const double td = static_cast<double>(t);
    tie_sum += td * td * td - td;
  }
  const double nd = static_cast<double>(n);
  const double var = nad * nbd / 12.0 * ((nd + 1.0) - tie_sum / (nd * (nd - 1.0)));
  if (!(var > 0.0)) {
    res.p_value = 1.0;
    return res;
  }
  const double z = std::max(0.0, observed - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
  return res;
}

// ---------------------------------------------------------------------------
// Kernel density estimate
// ---------------------------------------------------------------------------

/// Silverman's rule of thumb, 1.06 * sd * n^(-1/5).
inline double silverman_bandwidth(std::span<const double> sample) {
  const double sd = std::sqrt(sample_variance(sample));
  if (!(sd > 0.0)) throw BadBandwidth("kde: automatic bandwidth needs a non-constant sample");
  return 1.06 * sd * std::pow(static_cast<double>(sample.size()), -0.2);
}

struct KdePoint {
  double x = 0.0;
  double density = 0.0;
};

/// Gaussian KDE on `grid` evenly spaced points over [min - 3h, max + 3h].
/// A bandwidth of std::nullopt selects Silverman's rule.
inline std::vector<KdePoint> kde_curve(std::span<const double> sample,
                                       std::optional<double> bandwidth, std::size_t grid = 256) {
  if (sample.empty()) throw std::invalid_argument("kde: empty sample");
  if (grid < 2) throw std::invalid_argument("kde: grid needs at least two points");
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(sample);
  if (!(h > 0.0) || !std::isfinite(h)) throw BadBandwidth("kde: bandwidth must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(sample.begin(), sample.end());
  const double lo = *lo_it - 3.0 * h, hi = *hi_it + 3.0 * h;
  const double norm = 1.0 / (static_cast<double>(sample.size()) * h * std::sqrt(2.0 * 3.14159265358979323846));
  std::vector<KdePoint> out(grid);
  for (std::size_t g = 0; g < grid; ++g) {
    const double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid - 1);
    double s = 0.0;
    for (double v : sample) {
      const double z = (x - v) / h;
      s += std::exp(-0.5 * z * z);
    }
    out[g] = {x, s * norm};
  }
  return out;
}

inline double trapezoid_integral(std::span<const KdePoint> curve) {
  double s = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    s += 0.5 * (curve[i].density + curve[i - 1].density) * (curve[i].x - curve[i - 1].x);
  return s;
}

}  // namespace nusselt
