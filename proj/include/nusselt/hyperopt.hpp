#pragma once

/// Hyperparameter search: the adaptive randomized search (Algorithm 1 style
/// iteration budget that grows on large MAPE drops), exhaustive grid search,
/// a genetic algorithm over integer/categorical spaces, and GP-surrogate
/// Bayesian optimization with expected improvement.
///
/// Every optimizer minimizes a deterministic objective Config -> MAPE, logs
/// one TrialRecord per evaluation and caches results by exact configuration.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <istream>
#include <limits>
#include <numeric>
#include <span>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "json.hpp"
#include "nusselt/gp.hpp"
#include "nusselt/numerics.hpp"

namespace nusselt {

using ParamValue = std::variant<double, std::int64_t, std::string>;
using Config = std::map<std::string, ParamValue>;

inline nlohmann::json to_json(const Config& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : c) std::visit([&](const auto& x) { j[k] = x; }, v);
  return j;
}

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  for (const auto& [k, v] : j.items()) {
    if (v.is_number_integer()) c[k] = v.get<std::int64_t>();
    else if (v.is_number()) c[k] = v.get<double>();
    else if (v.is_string()) c[k] = v.get<std::string>();
    else throw std::invalid_argument("config value for '" + k + "' must be a number or string");
  }
  return c;
}

/// Canonical text used as the cache key.
inline std::string config_key(const Config& c) { return to_json(c).dump(); }

inline double as_double(const ParamValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw std::invalid_argument("parameter is not numeric");
}

inline std::int64_t as_int(const ParamValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v)) return static_cast<std::int64_t>(std::llround(*d));
  throw std::invalid_argument("parameter is not numeric");
}

inline const std::string& as_string(const ParamValue& v) { return std::get<std::string>(v); }

// ---------------------------------------------------------------------------
// Search spaces
// ---------------------------------------------------------------------------

enum class DimKind { LogUniform, Uniform, Integer, Categorical };

struct Dimension {
  std::string name;
  DimKind kind = DimKind::Uniform;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::string> options;

  static Dimension log_uniform(std::string n, double lo, double hi) {
    return {std::move(n), DimKind::LogUniform, lo, hi, {}};
  }
  static Dimension uniform(std::string n, double lo, double hi) {
    return {std::move(n), DimKind::Uniform, lo, hi, {}};
  }
  static Dimension integer(std::string n, std::int64_t lo, std::int64_t hi) {
    return {std::move(n), DimKind::Integer, static_cast<double>(lo), static_cast<double>(hi), {}};
  }
  static Dimension categorical(std::string n, std::vector<std::string> opts) {
    return {std::move(n), DimKind::Categorical, 0.0, 0.0, std::move(opts)};
  }

  void validate() const {
    switch (kind) {
      case DimKind::Categorical:
        if (options.empty()) throw std::invalid_argument("dimension " + name + ": no options");
        break;
      case DimKind::Integer:
        if (!(lo <= hi)) throw std::invalid_argument("dimension " + name + ": lo > hi");
        break;
      case DimKind::LogUniform:
        if (!(lo > 0.0)) throw std::invalid_argument("dimension " + name + ": log-uniform needs lo > 0");
        [[fallthrough]];
      case DimKind::Uniform:
        if (!(lo < hi)) throw std::invalid_argument("dimension " + name + ": need lo < hi");
        break;
    }
  }

  /// Number of distinct values (0 for continuous dimensions).
  std::size_t cardinality() const {
    if (kind == DimKind::Categorical) return options.size();
    if (kind == DimKind::Integer) return static_cast<std::size_t>(hi - lo) + 1;
    return 0;
  }

  /// Maps u in [0,1] onto the dimension (log scale for log-uniform).
  ParamValue from_unit(double u) const {
    u = std::clamp(u, 0.0, 1.0);
    switch (kind) {
      case DimKind::LogUniform: return std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
      case DimKind::Uniform: return lo + u * (hi - lo);
      case DimKind::Integer: {
        const auto n = static_cast<double>(cardinality());
        return static_cast<std::int64_t>(lo) +
               std::min<std::int64_t>(static_cast<std::int64_t>(u * n),
                                      static_cast<std::int64_t>(cardinality()) - 1);
      }
      case DimKind::Categorical: {
        const auto n = static_cast<double>(options.size());
        return options[std::min<std::size_t>(static_cast<std::size_t>(u * n), options.size() - 1)];
      }
    }
    return 0.0;
  }

  double to_unit(const ParamValue& v) const {
    switch (kind) {
      case DimKind::LogUniform:
        return (std::log(as_double(v)) - std::log(lo)) / (std::log(hi) - std::log(lo));
      case DimKind::Uniform: return (as_double(v) - lo) / (hi - lo);
      case DimKind::Integer:
        return (static_cast<double>(as_int(v) - static_cast<std::int64_t>(lo)) + 0.5) /
               static_cast<double>(cardinality());
      case DimKind::Categorical: {
        const auto it = std::find(options.begin(), options.end(), as_string(v));
        return (static_cast<double>(it - options.begin()) + 0.5) / static_cast<double>(options.size());
      }
    }
    return 0.0;
  }

  /// Value at discrete index i (integer or categorical dimensions).
  ParamValue at(std::size_t i) const {
    if (kind == DimKind::Categorical) return options.at(i);
    if (kind == DimKind::Integer) return static_cast<std::int64_t>(lo) + static_cast<std::int64_t>(i);
    throw std::invalid_argument("dimension " + name + " is continuous");
  }

  std::size_t index_of(const ParamValue& v) const {
    if (kind == DimKind::Categorical)
      return static_cast<std::size_t>(
          std::find(options.begin(), options.end(), as_string(v)) - options.begin());
    return static_cast<std::size_t>(as_int(v) - static_cast<std::int64_t>(lo));
  }
};

struct SearchSpace {
  std::vector<Dimension> dims;

  void validate() const {
    if (dims.empty()) throw std::invalid_argument("search space has no dimensions");
    for (const auto& d : dims) d.validate();
  }

  Config sample(RandomStream& rng) const {
    Config c;
    for (const auto& d : dims) c[d.name] = d.from_unit(rng.uniform());
    return c;
  }

  bool discrete() const {
    return std::all_of(dims.begin(), dims.end(), [](const Dimension& d) { return d.cardinality() > 0; });
  }

  /// Every cell of a discrete space, first dimension varying slowest.
  std::vector<Config> grid() const {
    if (!discrete()) throw std::invalid_argument("grid: space has continuous dimensions");
    std::vector<Config> cells{Config{}};
    for (const auto& d : dims) {
      std::vector<Config> next;
      for (const auto& c : cells)
        for (std::size_t i = 0; i < d.cardinality(); ++i) {
          Config e = c;
          e[d.name] = d.at(i);
          next.push_back(std::move(e));
        }
      cells = std::move(next);
    }
    return cells;
  }
};

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

struct TrialRecord {
  std::size_t index = 0;
  Config config;
  double mape = 0.0;
  bool failed = false;
  bool cached = false;
  std::string error;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TrialRecord& t) {
  nlohmann::json j = {{"trial", t.index}, {"config", to_json(t.config)}, {"seed", t.seed},
                      {"failed", t.failed}, {"cached", t.cached}};
  if (t.failed) j["error"] = t.error;
  else j["mape"] = t.mape;
  if (t.wall_seconds > 0.0) j["wall_seconds"] = t.wall_seconds;
  return j;
}

inline TrialRecord trial_from_json(const nlohmann::json& j) {
  TrialRecord t;
  t.index = j.at("trial").get<std::size_t>();
  t.config = config_from_json(j.at("config"));
  t.seed = j.value("seed", std::uint64_t{0});
  t.failed = j.value("failed", false);
  t.cached = j.value("cached", false);
  t.error = j.value("error", std::string{});
  t.mape = t.failed ? std::numeric_limits<double>::infinity() : j.at("mape").get<double>();
  t.wall_seconds = j.value("wall_seconds", 0.0);
  return t;
}

/// JSON-lines serialization, one trial per line.
inline std::string trials_to_jsonl(std::span<const TrialRecord> trials) {
  std::string out;
  for (const auto& t : trials) out += to_json(t).dump() + "\n";
  return out;
}

inline std::vector<TrialRecord> trials_from_jsonl(std::istream& in) {
  std::vector<TrialRecord> v;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) v.push_back(trial_from_json(nlohmann::json::parse(line)));
  return v;
}

using ConfigObjective = std::function<double(const Config&)>;

struct ObjectiveFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SearchOptions {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;             // concurrent evaluations within a batch
  bool record_wall_time = false;    // off keeps logs byte-identical across runs
  std::vector<TrialRecord> resume;  // prior log whose results seed the cache
};

/// Memoizing, logging wrapper around the objective. Exceptions thrown by the
/// objective turn into failed trials with MAPE = +inf.
class TrialLedger {
 public:
  TrialLedger(ConfigObjective f, SearchOptions opt) : f_(std::move(f)), opt_(std::move(opt)) {
    for (const auto& t : opt_.resume)
      if (!t.cached) resumed_[config_key(t.config)] = {t.mape, t.failed, t.error, t.wall_seconds};
  }

  /// Evaluates a batch, concurrently when jobs > 1, and appends trials in
  /// batch order. A configuration already evaluated in this run is served
  /// from the cache and logged with cached = true; one restored from a
  /// resumed log is logged exactly as if it had been evaluated now.
  std::vector<double> evaluate(const std::vector<Config>& batch) {
    std::vector<Entry> results(batch.size());
    std::vector<bool> cached(batch.size(), false);
    std::vector<std::size_t> todo;
    std::map<std::string, std::size_t> first_in_batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto key = config_key(batch[i]);
      if (auto it = cache_.find(key); it != cache_.end()) {
        results[i] = it->second;
        cached[i] = true;
      } else if (auto f = first_in_batch.find(key); f != first_in_batch.end()) {
        cached[i] = true;
      } else if (auto r = resumed_.find(key); r != resumed_.end()) {
        results[i] = r->second;
        cache_[key] = r->second;
        first_in_batch[key] = i;
      } else {
        first_in_batch[key] = i;
        todo.push_back(i);
      }
    }
    run(batch, todo, results);
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (cached[i]) results[i] = cache_.at(config_key(batch[i]));
    std::vector<double> values;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      TrialRecord t;
      t.index = trials_.size();
      t.config = batch[i];
      t.mape = results[i].value;
      t.failed = results[i].failed;
      t.error = results[i].error;
      t.wall_seconds = opt_.record_wall_time ? results[i].seconds : 0.0;
      t.seed = opt_.seed;
      t.cached = cached[i];
      trials_.push_back(t);
      values.push_back(t.mape);
    }
    return values;
  }

  double evaluate(const Config& c) { return evaluate(std::vector<Config>{c})[0]; }

  const std::vector<TrialRecord>& trials() const { return trials_; }

 private:
  struct Entry {
    double value = std::numeric_limits<double>::infinity();
    bool failed = true;
    std::string error;
    double seconds = 0.0;
  };

  Entry call(const Config& c) const {
    Entry e;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      e.value = f_(c);
      e.failed = !std::isfinite(e.value) || e.value < 0.0;
      if (e.failed) e.error = "objective returned a non-finite or negative MAPE";
    } catch (const std::exception& ex) {
      e.failed = true;
      e.error = ex.what();
    }
    if (e.failed) e.value = std::numeric_limits<double>::infinity();
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return e;
  }

  void run(const std::vector<Config>& batch, const std::vector<std::size_t>& todo,
           std::vector<Entry>& results) {
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt_.jobs, todo.size()));
    if (jobs <= 1) {
      for (std::size_t i : todo) results[i] = call(batch[i]);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < jobs; ++w)
        pool.emplace_back([&] {
          for (std::size_t k = next++; k < todo.size(); k = next++) results[todo[k]] = call(batch[todo[k]]);
        });
      for (auto& th : pool) th.join();
    }
    for (std::size_t i : todo) cache_[config_key(batch[i])] = results[i];
  }

  ConfigObjective f_;
  SearchOptions opt_;
  std::map<std::string, Entry> cache_;
  std::map<std::string, Entry> resumed_;
  std::vector<TrialRecord> trials_;
};

struct SearchResult {
  Config best;
  double best_mape = std::numeric_limits<double>::infinity();
  std::vector<TrialRecord> trials;
  Vector trace;  // best-so-far per iteration / generation / trial
};

namespace detail {

/// First-seen minimum over successful trials.
inline void finalize_best(SearchResult& r) {
  for (const auto& t : r.trials)
    if (!t.failed && t.mape < r.best_mape) {
      r.best_mape = t.mape;
      r.best = t.config;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Algorithm 1: randomized search with adaptive iteration budget
// ---------------------------------------------------------------------------

struct RsState {
  std::size_t k = 0;            // completed iterations
  std::size_t incumbent = 0;    // index into the candidate list
  std::size_t t_iter = 30;      // current iteration budget
  std::size_t span = 1;
  std::size_t k_iter = 5;
  double t_drop = 0.001;
  double incumbent_mape = std::numeric_limits<double>::infinity();
};

struct RandomSearchResult {
  SearchResult search;
  RsState final_state;
  std::vector<std::size_t> drop_iterations;  // iterations where a drop > t_drop occurred
};

/// Randomized search over an explicit candidate list. After an initial
/// uniform draw, each iteration draws a candidate uniformly, keeps it on
/// strict improvement, and when the drop from the previous incumbent exceeds
/// t_drop increments span and extends t_iter by k_iter * span. The search
/// stops once t_iter iterations have been performed.
inline RandomSearchResult random_search_alg1(const std::vector<Config>& candidates,
                                             const ConfigObjective& objective, RsState init,
                                             const SearchOptions& opt = {}) {
  if (candidates.empty()) throw std::invalid_argument("random_search_alg1: empty candidate list");
  if (init.t_iter < 1) throw std::invalid_argument("random_search_alg1: T_Iter must be >= 1");
  TrialLedger ledger(objective, opt);
  RandomStream rng(opt.seed);
  RandomSearchResult out;
  RsState s = init;

  // Initial incumbent; redrawn while the objective fails, at most |P| times.
  for (std::size_t attempt = 0; attempt < candidates.size(); ++attempt) {
    s.incumbent = rng.index(candidates.size());
    s.incumbent_mape = ledger.evaluate(candidates[s.incumbent]);
    if (std::isfinite(s.incumbent_mape)) break;
  }
  out.search.trace.push_back(s.incumbent_mape);

  while (s.k < s.t_iter) {
    const std::size_t v = rng.index(candidates.size());
    const double mv = ledger.evaluate(candidates[v]);
    const double previous = s.incumbent_mape;
    if (mv < previous) {
      s.incumbent = v;
      s.incumbent_mape = mv;
    }
    if (previous - mv > s.t_drop) {
      ++s.span;
      s.t_iter = s.k_iter * s.span + s.t_iter;
      out.drop_iterations.push_back(s.k + 1);
    }
    ++s.k;
    out.search.trace.push_back(s.incumbent_mape);
  }
  out.final_state = s;
  out.search.trials = ledger.trials();
  detail::finalize_best(out.search);
  return out;
}

/// Discrete candidate list for randomized search: `per_dim` points per
/// continuous dimension (log-spaced for log-uniform) times every discrete
/// value, enumerated as a grid.
inline std::vector<Config> candidate_list(const SearchSpace& space, std::size_t per_dim) {
  SearchSpace disc;
  std::map<std::string, Vector> values;
  std::vector<Config> cells{Config{}};
  for (const auto& d : space.dims) {
    std::vector<ParamValue> vals;
    if (d.cardinality() > 0) {
      for (std::size_t i = 0; i < d.cardinality(); ++i) vals.push_back(d.at(i));
    } else {
      for (std::size_t i = 0; i < per_dim; ++i)
        vals.push_back(d.from_unit(per_dim == 1 ? 0.5 : static_cast<double>(i) /
                                                            static_cast<double>(per_dim - 1)));
    }
    std::vector<Config> next;
    for (const auto& c : cells)
      for (const auto& v : vals) {
        Config e = c;
        e[d.name] = v;
        next.push_back(std::move(e));
      }
    cells = std::move(next);
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// Evaluates every cell once; ties go to the first cell in declaration order.
inline SearchResult grid_search(const std::vector<Config>& cells, const ConfigObjective& objective,
                                const SearchOptions& opt = {}) {
  if (cells.empty()) throw std::invalid_argument("grid_search: empty grid");
  TrialLedger ledger(objective, opt);
  const auto values = ledger.evaluate(cells);
  SearchResult r;
  r.trials = ledger.trials();
  double best = std::numeric_limits<double>::infinity();
  for (double v : values) {
    best = std::min(best, v);
    r.trace.push_back(best);
  }
  detail::finalize_best(r);
  return r;
}

// ---------------------------------------------------------------------------
// Genetic algorithm
// ---------------------------------------------------------------------------

struct GaConfig {
  std::size_t population = 10;
  std::size_t generations = 500;
  double stall_tolerance = 1e-6;
  std::size_t stall_generations = 10;
  std::size_t elitism = 1;
  std::size_t tournament = 3;
  double crossover_probability = 0.8;
  double mutation_probability = 0.2;
  double creep_fraction = 0.5;  // share of integer-gene mutations that step by +-1
};

/// Integer-coded GA. Fitness is the objective (lower is better); failures
/// get +inf. Elites are copied unchanged, so the per-generation best is
/// non-increasing. Stops at the generation cap or when the best improved by
/// less than stall_tolerance over stall_generations generations.
inline SearchResult ga_optimize(const SearchSpace& space, const ConfigObjective& objective,
                                const GaConfig& cfg, const SearchOptions& opt = {}) {
  space.validate();
  if (!space.discrete()) throw std::invalid_argument("ga_optimize: space must be integer/categorical");
  if (cfg.population < 2) throw std::invalid_argument("ga_optimize: population must be >= 2");
  const std::size_t genes = space.dims.size();
  using Genome = std::vector<std::size_t>;
  auto decode = [&](const Genome& g) {
    Config c;
    for (std::size_t i = 0; i < genes; ++i) c[space.dims[i].name] = space.dims[i].at(g[i]);
    return c;
  };

  TrialLedger ledger(objective, opt);
  RandomStream rng(opt.seed);
  std::vector<Genome> pop(cfg.population, Genome(genes));
  for (auto& g : pop)
    for (std::size_t i = 0; i < genes; ++i) g[i] = rng.index(space.dims[i].cardinality());

  SearchResult r;
  const std::size_t elites = std::min(cfg.elitism, cfg.population);
  for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
    std::vector<Config> batch;
    for (const auto& g : pop) batch.push_back(decode(g));
    const auto fitness = ledger.evaluate(batch);

    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
    const double gen_best = r.trace.empty() ? fitness[order[0]]
                                            : std::min(r.trace.back(), fitness[order[0]]);
    r.trace.push_back(gen_best);
    if (r.trace.size() > cfg.stall_generations) {
      const double before = r.trace[r.trace.size() - 1 - cfg.stall_generations];
      if (before - gen_best < cfg.stall_tolerance) break;
    }
    if (gen + 1 == cfg.generations) break;

    auto tournament = [&]() -> const Genome& {
      std::size_t best = rng.index(pop.size());
      for (std::size_t t = 1; t < cfg.tournament; ++t) {
        const std::size_t c = rng.index(pop.size());
        if (fitness[c] < fitness[best]) best = c;
      }
      return pop[best];
    };
    std::vector<Genome> next;
    for (std::size_t e = 0; e < elites; ++e) next.push_back(pop[order[e]]);
    while (next.size() < pop.size()) {
      Genome child = tournament();
      const Genome& other = tournament();
      if (rng.uniform() < cfg.crossover_probability)
        for (std::size_t i = 0; i < genes; ++i)
          if (rng.uniform() < 0.5) child[i] = other[i];
      for (std::size_t i = 0; i < genes; ++i) {
        if (rng.uniform() >= cfg.mutation_probability) continue;
        const std::size_t card = space.dims[i].cardinality();
        // integer genes are ordinal: half the mutations creep one step
        if (space.dims[i].kind == DimKind::Integer && card > 1 && rng.uniform() < cfg.creep_fraction) {
          if (child[i] == 0) child[i] = 1;
          else if (child[i] + 1 == card) child[i] = card - 2;
          else child[i] += rng.uniform() < 0.5 ? std::size_t{1} : std::size_t(-1);
        } else {
          child[i] = rng.index(card);
        }
      }
      next.push_back(std::move(child));
    }
    pop = std::move(next);
  }
  r.trials = ledger.trials();
  detail::finalize_best(r);
  return r;
}

// ---------------------------------------------------------------------------
// Bayesian optimization
// ---------------------------------------------------------------------------

struct BayesConfig {
  std::size_t budget = 100;
  std::size_t initial_points = 10;
  std::size_t candidates = 1000;
  std::size_t stall_window = 50;
  double stall_tolerance = 1e-3;
  std::size_t gp_restarts = 2;
};

/// Expected improvement for minimization; zero when the predictive standard
/// deviation vanishes.
inline double expected_improvement(double mean, double variance, double best) {
  const double sd = std::sqrt(std::max(variance, 0.0));
  if (sd <= 1e-12) return 0.0;
  const double z = (best - mean) / sd;
  return (best - mean) * normal_cdf(z) + sd * normal_pdf(z);
}

/// GP-EI loop on the unit cube. The initial design is a seeded Latin
/// hypercube; each later trial maximizes EI over `candidates` random points
/// under an RBF GP fitted to standardized observations. If the surrogate
/// cannot be fitted, that trial is a uniform random draw.
inline SearchResult bayes_optimize(const SearchSpace& space, const ConfigObjective& objective,
                                   const BayesConfig& cfg, const SearchOptions& opt = {}) {
  space.validate();
  if (cfg.budget < cfg.initial_points || cfg.initial_points < 1)
    throw std::invalid_argument("bayes_optimize: budget must cover the initial design");
  const std::size_t d = space.dims.size();
  TrialLedger ledger(objective, opt);
  RandomStream rng(opt.seed);
  auto decode = [&](std::span<const double> u) {
    Config c;
    for (std::size_t i = 0; i < d; ++i) c[space.dims[i].name] = space.dims[i].from_unit(u[i]);
    return c;
  };

  std::vector<Vector> xs;
  Vector ys;
  SearchResult r;
  auto record = [&](Vector u) {
    const double y = ledger.evaluate(decode(u));
    // Snap discrete dimensions to their cell centre so repeated cells coincide.
    const Config c = decode(u);
    for (std::size_t i = 0; i < d; ++i) u[i] = space.dims[i].to_unit(c.at(space.dims[i].name));
    xs.push_back(std::move(u));
    ys.push_back(y);
    const double best = r.trace.empty() ? y : std::min(r.trace.back(), y);
    r.trace.push_back(best);
  };

  // Latin hypercube initial design.
  {
    const std::size_t n0 = cfg.initial_points;
    std::vector<std::vector<std::size_t>> strata(d, std::vector<std::size_t>(n0));
    for (auto& s : strata) {
      std::iota(s.begin(), s.end(), std::size_t{0});
      rng.shuffle(s);
    }
    for (std::size_t k = 0; k < n0; ++k) {
      Vector u(d);
      for (std::size_t i = 0; i < d; ++i)
        u[i] = (static_cast<double>(strata[i][k]) + rng.uniform()) / static_cast<double>(n0);
      record(std::move(u));
    }
  }

  while (ys.size() < cfg.budget) {
    const std::size_t t = ys.size();
    if (t >= cfg.stall_window &&
        r.trace[t - 1 - cfg.stall_window] - r.trace[t - 1] < cfg.stall_tolerance)
      break;

    RandomStream trial_rng = rng.child(t);
    std::optional<Vector> next;
    try {
      Vector obs_y;
      std::vector<std::size_t> ok;
      for (std::size_t i = 0; i < ys.size(); ++i)
        if (std::isfinite(ys[i])) ok.push_back(i);
      if (ok.size() < 2) throw std::runtime_error("too few successful trials");
      Matrix x(ok.size(), d);
      for (std::size_t k = 0; k < ok.size(); ++k)
        for (std::size_t i = 0; i < d; ++i) x(k, i) = xs[ok[k]][i];
      for (std::size_t i : ok) obs_y.push_back(ys[i]);
      const double mu = nusselt::mean(obs_y);
      const double sd = std::sqrt(sample_variance(obs_y));
      const double scale = sd > 0.0 ? sd : 1.0;
      for (double& v : obs_y) v = (v - mu) / scale;
      GpFitOptions gopt;
      gopt.restarts = cfg.gp_restarts;
      gopt.budget_per_restart = 200;
      const auto gp = gp_fit(x, obs_y, KernelBase::Rbf, trial_rng.child(1).seed(), gopt);
      const double best = *std::min_element(obs_y.begin(), obs_y.end());
      double best_ei = -1.0;
      Vector u(d);
      for (std::size_t c = 0; c < cfg.candidates; ++c) {
        for (double& v : u) v = trial_rng.uniform();
        const auto pred = gp_predict(gp, u);
        const double ei = expected_improvement(pred.mean, pred.variance, best);
        if (ei > best_ei) {
          best_ei = ei;
          next = u;
        }
      }
    } catch (const std::exception&) {
      next.reset();
    }
    if (!next) {
      Vector u(d);
      for (double& v : u) v = trial_rng.uniform();
      next = std::move(u);
    }
    record(std::move(*next));
  }
  r.trials = ledger.trials();
  detail::finalize_best(r);
  return r;
}

}  // namespace nusselt
