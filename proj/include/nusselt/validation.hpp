#pragma once

// Error metrics, k-fold cross-validation, the Monte-Carlo re-training
// harness and holdout margin analysis. Model families plug in through
// ModelFamily; concrete families live in families.hpp.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nusselt/dataset.hpp"
#include "nusselt/numerics.hpp"

namespace nusselt {

struct ZeroActual : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ErrorMetrics {
  double mape = 0.0;  // fraction, not percent
  double mse = 0.0;
};

inline ErrorMetrics error_metrics(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size() || actual.empty())
    throw std::invalid_argument("error_metrics: need equal, non-zero lengths");
  ErrorMetrics m;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == 0.0) throw ZeroActual("error_metrics: actual value is zero at index " + std::to_string(i));
    const double e = actual[i] - predicted[i];
    m.mape += std::abs(e / actual[i]);
    m.mse += e * e;
  }
  const auto n = static_cast<double>(actual.size());
  m.mape /= n;
  m.mse /= n;
  return m;
}

inline double mape(std::span<const double> actual, std::span<const double> predicted) {
  return error_metrics(actual, predicted).mape;
}

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

/// A trained regressor as seen by the harness.
struct FittedModel {
  std::function<double(const DataPoint&)> predict;
  std::size_t epochs = 0;
  nlohmann::json model;  // serialized parameters (may be null)
};

/// Trains on the given rows. The normalizer is always fitted by the caller
/// on exactly those rows, so evaluation data never leaks into it.
using FitFunction =
    std::function<FittedModel(const Dataset& train, const NormalizationParams& norm, std::uint64_t seed)>;

struct ModelFamily {
  std::string name;
  nlohmann::json config = nlohmann::json::object();
  FitFunction fit;
};

namespace detail {

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Callers write
/// results by index, so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  for (auto& t : pool) t.join();
}

inline Vector predict_all(const FittedModel& m, const Dataset& ds) {
  Vector p;
  p.reserve(ds.size());
  for (const auto& pt : ds.points) p.push_back(m.predict(pt));
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct FoldResult {
  std::vector<std::size_t> eval_indices;
  std::optional<double> mape;  // empty when the fold failed
  std::string error;
  std::size_t epochs = 0;
};

struct CvReport {
  std::string family;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::vector<FoldResult> folds;
  double mean_mape = std::numeric_limits<double>::quiet_NaN();
  std::size_t failed_folds = 0;

  Vector fold_mapes() const {
    Vector v;
    for (const auto& f : folds)
      if (f.mape) v.push_back(*f.mape);
    return v;
  }
};

/// Scores `family` by k-fold CV. Fold f trains with seed mix_seed(seed, f).
/// Failed folds are recorded and excluded from the mean.
inline CvReport cross_validate(const ModelFamily& family, const Dataset& ds, std::size_t k,
                               std::uint64_t seed, std::size_t jobs = 1) {
  const auto splits = partition(ds, KFoldSpec{k, seed});
  CvReport rep;
  rep.family = family.name;
  rep.config = family.config;
  rep.seed = seed;
  rep.k = k;
  rep.folds.resize(splits.size());
  detail::parallel_for(splits.size(), jobs, [&](std::size_t f) {
    auto& out = rep.folds[f];
    out.eval_indices = splits[f].eval;
    try {
      const Dataset train = ds.subset(splits[f].train);
      const Dataset eval = ds.subset(splits[f].eval);
      const auto fitted = family.fit(train, fit_normalizer(train), mix_seed(seed, f));
      const double m = mape(eval.targets(), detail::predict_all(fitted, eval));
      if (!std::isfinite(m)) throw std::runtime_error("non-finite fold MAPE");
      out.mape = m;
      out.epochs = fitted.epochs;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });
  const Vector ok = rep.fold_mapes();
  rep.failed_folds = rep.folds.size() - ok.size();
  if (!ok.empty()) rep.mean_mape = nusselt::mean(ok);
  return rep;
}

inline nlohmann::json to_json(const CvReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json j = {{"eval_indices", f.eval_indices}, {"epochs", f.epochs}};
    if (f.mape) j["mape"] = *f.mape;
    else {
      j["mape"] = nullptr;
      j["error"] = f.error;
    }
    folds.push_back(std::move(j));
  }
  nlohmann::json j = {{"report", "cv"},       {"family", r.family},         {"config", r.config},
                      {"seed", r.seed},       {"k", r.k},                   {"fold_mape", r.fold_mapes()},
                      {"folds", folds},       {"failed_folds", r.failed_folds}};
  if (std::isfinite(r.mean_mape)) j["mean_mape"] = r.mean_mape;
  else j["mean_mape"] = nullptr;
  if (r.failed_folds > 0)
    j["warning"] = std::to_string(r.failed_folds) + " fold(s) failed; mean is over successful folds";
  return j;
}

// ---------------------------------------------------------------------------
// Monte-Carlo harness
// ---------------------------------------------------------------------------

struct McRun {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  Vector predictions;  // one per holdout point
  double mape = 0.0;
  std::size_t epochs = 0;
};

struct McAggregates {
  double max_prediction_variance = 0.0;  // max over holdout points of the across-run variance
  double mape_variance = 0.0;
  double mean_mape = 0.0;
  double mean_epochs = 0.0;
  std::size_t successful_runs = 0;
  std::size_t failed_runs = 0;

  friend bool operator==(const McAggregates&, const McAggregates&) = default;
};

struct McReport {
  std::string family;
  nlohmann::json config;
  std::uint64_t master_seed = 0;
  HoldoutSpec holdout;
  std::vector<std::size_t> holdout_indices;
  Vector holdout_actual;
  std::vector<McRun> runs;
  McAggregates aggregates;
};

/// Table-6 style statistics from per-run records; sample variances (n-1)
/// over successful runs, zero when fewer than two runs succeeded.
inline McAggregates mc_aggregate(std::span<const McRun> runs) {
  McAggregates a;
  std::vector<const McRun*> ok;
  for (const auto& r : runs)
    if (!r.failed) ok.push_back(&r);
  a.successful_runs = ok.size();
  a.failed_runs = runs.size() - ok.size();
  if (ok.empty()) return a;
  Vector mapes, epochs;
  for (const auto* r : ok) {
    mapes.push_back(r->mape);
    epochs.push_back(static_cast<double>(r->epochs));
  }
  a.mean_mape = nusselt::mean(mapes);
  a.mean_epochs = nusselt::mean(epochs);
  if (ok.size() >= 2) {
    a.mape_variance = sample_variance(mapes);
    const std::size_t points = ok.front()->predictions.size();
    for (std::size_t p = 0; p < points; ++p) {
      Vector column;
      for (const auto* r : ok) column.push_back(r->predictions[p]);
      a.max_prediction_variance = std::max(a.max_prediction_variance, sample_variance(column));
    }
  }
  return a;
}

/// Checks that the stored aggregates recompute exactly from the runs.
inline bool mc_audit(const McReport& r) { return mc_aggregate(r.runs) == r.aggregates; }

/// Re-trains `family` `runs` times on a fixed holdout split. Run r uses seed
/// mix_seed(master_seed, r); results are stored by run index.
inline McReport monte_carlo(const ModelFamily& family, const Dataset& ds, const HoldoutSpec& holdout,
                            std::size_t runs, std::uint64_t master_seed, std::size_t jobs = 1) {
  if (runs < 1) throw std::invalid_argument("monte_carlo: runs must be >= 1");
  const auto split = partition(ds, holdout).front();
  const Dataset train = ds.subset(split.train);
  const Dataset eval = ds.subset(split.eval);
  const auto norm = fit_normalizer(train);

  McReport rep;
  rep.family = family.name;
  rep.config = family.config;
  rep.master_seed = master_seed;
  rep.holdout = holdout;
  rep.holdout_indices = split.eval;
  rep.holdout_actual = eval.targets();
  rep.runs.resize(runs);
  detail::parallel_for(runs, jobs, [&](std::size_t r) {
    auto& run = rep.runs[r];
    run.seed = mix_seed(master_seed, r);
    try {
      const auto fitted = family.fit(train, norm, run.seed);
      run.predictions = detail::predict_all(fitted, eval);
      run.mape = mape(rep.holdout_actual, run.predictions);
      run.epochs = fitted.epochs;
      if (!std::isfinite(run.mape)) throw std::runtime_error("non-finite holdout MAPE");
    } catch (const std::exception& e) {
      run.failed = true;
      run.error = e.what();
      run.predictions.clear();
    }
  });
  rep.aggregates = mc_aggregate(rep.runs);
  return rep;
}

inline nlohmann::json to_json(const McReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json j = {{"seed", run.seed}, {"failed", run.failed}};
    if (run.failed) j["error"] = run.error;
    else {
      j["predictions"] = run.predictions;
      j["mape"] = run.mape;
      j["epochs"] = run.epochs;
    }
    runs.push_back(std::move(j));
  }
  const auto& a = r.aggregates;
  return {{"report", "mc"},
          {"family", r.family},
          {"config", r.config},
          {"master_seed", r.master_seed},
          {"holdout", {{"fraction", r.holdout.fraction}, {"seed", r.holdout.seed}}},
          {"holdout_indices", r.holdout_indices},
          {"holdout_actual", r.holdout_actual},
          {"run_count", r.runs.size()},
          {"runs", runs},
          {"max_prediction_variance", a.max_prediction_variance},
          {"mape_variance", a.mape_variance},
          {"mean_mape", a.mean_mape},
          {"mean_epochs", a.mean_epochs},
          {"successful_runs", a.successful_runs},
          {"failed_runs", a.failed_runs}};
}

// ---------------------------------------------------------------------------
// Holdout margin
// ---------------------------------------------------------------------------

struct MarginPoint {
  double actual = 0.0;
  double predicted = 0.0;
  double relative_error = 0.0;
  bool within = false;
};

struct MarginReport {
  double margin = 0.08;
  double fraction_within = 0.0;
  double worst_relative_error = 0.0;
  std::vector<MarginPoint> points;
};

inline MarginReport holdout_margin(std::span<const double> actual, std::span<const double> predicted,
                                   double margin = 0.08) {
  if (actual.size() != predicted.size() || actual.empty())
    throw std::invalid_argument("holdout_margin: need equal, non-zero lengths");
  if (!(margin >= 0.0)) throw std::invalid_argument("holdout_margin: margin must be >= 0");
  MarginReport rep;
  rep.margin = margin;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (!(actual[i] > 0.0)) throw ZeroActual("holdout_margin: actual values must be > 0");
    MarginPoint p{actual[i], predicted[i], std::abs(predicted[i] - actual[i]) / actual[i], false};
    p.within = p.relative_error <= margin;
    inside += p.within ? 1 : 0;
    rep.worst_relative_error = std::max(rep.worst_relative_error, p.relative_error);
    rep.points.push_back(p);
  }
  rep.fraction_within = static_cast<double>(inside) / static_cast<double>(actual.size());
  return rep;
}

}  // namespace nusselt
