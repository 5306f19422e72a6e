#pragma once

/// Layer transfer from a network trained on a related fluid.
///
/// The source is a 6-3-2-1 sigmoid network fitted with Levenberg-Marquardt.
/// A TransferPlan copies its first k hidden layers into a new network whose
/// remaining hidden layers (and output layer) are freshly drawn; everything
/// then fine-tunes on the target data unless `freeze` is set. A GA searches
/// over k and the widths of the new layers.

#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "nusselt/families.hpp"
#include "nusselt/hyperopt.hpp"
#include "nusselt/neural.hpp"
#include "nusselt/validation.hpp"

namespace nusselt {

struct IncompatibleTopology : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<std::size_t> kSourceWidths{3, 2};

struct SourceModel {
  MlpModel model;
  CvReport cv;
};

/// Family training a fresh network of the given hidden widths with `cfg`.
inline ModelFamily mlp_family(std::vector<std::size_t> hidden, const TrainConfig& cfg) {
  MlpTopology topo;
  topo.hidden = std::move(hidden);
  topo.validate();
  return {"nn", {{"hidden", topo.hidden}, {"method", std::string(to_string(cfg.method))}},
          [topo, cfg](const Dataset& train, const NormalizationParams& norm, std::uint64_t seed) {
            return fit_initialized_mlp(init_mlp(topo, seed), train, norm, cfg, seed);
          }};
}

/// Trains the 6-3-2-1 source network on all of `water` and reports its
/// k-fold CV MAPE under the same settings.
inline SourceModel train_source(const Dataset& water, std::uint64_t seed, const TrainConfig& cfg = {},
                                std::size_t folds = 10, std::size_t jobs = 1) {
  if (water.size() < 2) throw std::invalid_argument("train_source: need at least two samples");
  SourceModel out;
  out.cv = cross_validate(mlp_family(kSourceWidths, cfg), water, folds, seed, jobs);
  MlpTopology topo;
  topo.hidden = kSourceWidths;
  MlpModel init = init_mlp(topo, seed);
  const auto norm = fit_normalizer(water);
  init.normalizer = norm;
  TrainConfig c = cfg;
  c.seed = seed;
  out.model = train(init, norm.inputs(water), water.targets(), c).model;
  return out;
}

struct TransferPlan {
  std::size_t k = 0;                   // leading source hidden layers copied
  std::vector<std::size_t> new_widths; // hidden layers appended after them
  bool freeze = false;

  friend bool operator==(const TransferPlan&, const TransferPlan&) = default;
};

inline std::string describe(const TransferPlan& p) {
  std::string s = "k=" + std::to_string(p.k) + " new=[";
  for (std::size_t i = 0; i < p.new_widths.size(); ++i) s += (i ? "," : "") + std::to_string(p.new_widths[i]);
  return s + "]" + (p.freeze ? " frozen" : "");
}

inline nlohmann::json to_json(const TransferPlan& p) {
  return {{"k", p.k}, {"new_widths", p.new_widths}, {"freeze", p.freeze}};
}

inline MlpTopology transfer_topology(const MlpTopology& source, const TransferPlan& plan) {
  if (plan.k > source.hidden.size())
    throw IncompatibleTopology("transfer: k=" + std::to_string(plan.k) + " exceeds the source's " +
                               std::to_string(source.hidden.size()) + " hidden layers");
  MlpTopology t = source;
  t.hidden.assign(source.hidden.begin(), source.hidden.begin() + static_cast<std::ptrdiff_t>(plan.k));
  t.hidden.insert(t.hidden.end(), plan.new_widths.begin(), plan.new_widths.end());
  t.validate();
  return t;
}

/// Copies the first k layers of `source` verbatim and draws the rest from
/// U(0,1) with a stream seeded by `seed`, layer by layer. With k = 0 the
/// result equals init_mlp(topology, seed).
inline MlpModel transfer_init(const MlpModel& source, const TransferPlan& plan, std::uint64_t seed) {
  const MlpTopology topo = transfer_topology(source.topology, plan);
  MlpModel m{topo, Vector(topo.parameter_count(), 0.0), std::nullopt};
  const std::size_t copied = plan.k == 0 ? 0 : m.weight_offset(plan.k);
  std::copy(source.params.begin(), source.params.begin() + static_cast<std::ptrdiff_t>(copied), m.params.begin());
  RandomStream rng(seed);
  init_layers(m, plan.k, rng);
  return m;
}

/// Per-parameter mask marking the transferred layers.
inline std::vector<std::uint8_t> transfer_mask(const MlpModel& m, const TransferPlan& plan) {
  std::vector<std::uint8_t> mask(m.params.size(), 0);
  if (plan.k > 0) std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(m.weight_offset(plan.k)), 1);
  return mask;
}

inline ModelFamily transfer_family(std::shared_ptr<const MlpModel> source, const TransferPlan& plan,
                                   const TrainConfig& cfg) {
  transfer_topology(source->topology, plan);  // validate early
  return {"tr-nn", to_json(plan), [source, plan, cfg](const Dataset& train, const NormalizationParams& norm,
                                                       std::uint64_t seed) {
            MlpModel init = transfer_init(*source, plan, seed);
            TrainConfig c = cfg;
            if (plan.freeze) c.frozen = transfer_mask(init, plan);
            return fit_initialized_mlp(std::move(init), train, norm, c, seed);
          }};
}

// ---------------------------------------------------------------------------
// GA search over transfer plans
// ---------------------------------------------------------------------------

struct TransferSearchSpace {
  std::vector<std::size_t> width_options{2, 4, 8, 12, 16};
  std::size_t min_new_layers = 0;
  std::size_t max_new_layers = 2;
  std::optional<std::size_t> max_k;  // defaults to the source depth
};

struct TransferSweepRow {
  std::size_t k = 0;
  TransferPlan plan;
  double cv_mape = 0.0;
};

struct TransferSearchResult {
  TransferPlan best;
  double best_mape = std::numeric_limits<double>::infinity();
  std::vector<TransferSweepRow> sweep;  // one row per feasible k, ascending
  SearchResult ga;
};

/// GA over (k, number of new layers, their widths). Fitness is k-fold CV
/// MAPE after fine-tuning, always with the same fold seed so plans are
/// compared on identical splits. Genes beyond the active layer count are
/// ignored, and equivalent plans share one evaluation.
inline TransferSearchResult ga_transfer_search(const MlpModel& source, const Dataset& target,
                                               const GaConfig& ga, std::uint64_t seed,
                                               const TransferSearchSpace& space = {},
                                               const TrainConfig& cfg = {}, std::size_t folds = 10,
                                               std::size_t jobs = 1) {
  if (target.empty()) throw std::invalid_argument("ga_transfer_search: empty target dataset");
  if (space.width_options.empty() || space.min_new_layers > space.max_new_layers)
    throw std::invalid_argument("ga_transfer_search: bad search space");
  const std::size_t max_k = std::min(space.max_k.value_or(source.topology.hidden.size()),
                                     source.topology.hidden.size());
  auto shared_source = std::make_shared<const MlpModel>(source);

  SearchSpace ss;
  ss.dims.push_back(Dimension::integer("k", 0, static_cast<std::int64_t>(max_k)));
  ss.dims.push_back(Dimension::integer("n_new", static_cast<std::int64_t>(space.min_new_layers),
                                       static_cast<std::int64_t>(space.max_new_layers)));
  std::vector<std::string> opts;
  for (std::size_t w : space.width_options) opts.push_back(std::to_string(w));
  for (std::size_t i = 0; i < space.max_new_layers; ++i)
    ss.dims.push_back(Dimension::categorical("w" + std::to_string(i + 1), opts));

  auto decode = [&](const Config& c) {
    TransferPlan p;
    p.k = static_cast<std::size_t>(as_int(c.at("k")));
    const auto n = static_cast<std::size_t>(as_int(c.at("n_new")));
    for (std::size_t i = 0; i < n; ++i) p.new_widths.push_back(std::stoul(as_string(c.at("w" + std::to_string(i + 1)))));
    return p;
  };

  std::mutex mu;
  std::map<std::string, double> memo;  // canonical plan -> CV MAPE
  std::map<std::string, TransferPlan> plans;
  auto evaluate_plan = [&](const TransferPlan& p) {
    const std::string key = describe(p);
    {
      std::lock_guard lock(mu);
      if (auto it = memo.find(key); it != memo.end()) return it->second;
    }
    const auto rep = cross_validate(transfer_family(shared_source, p, cfg), target, folds, seed);
    if (rep.failed_folds == rep.k) throw std::runtime_error("every fold failed for plan " + key);
    std::lock_guard lock(mu);
    memo[key] = rep.mean_mape;
    plans[key] = p;
    return rep.mean_mape;
  };

  SearchOptions so;
  so.seed = seed;
  so.jobs = jobs;
  TransferSearchResult out;
  out.ga = ga_optimize(ss, [&](const Config& c) { return evaluate_plan(decode(c)); }, ga, so);
  if (out.ga.best.empty()) throw std::runtime_error("ga_transfer_search: every plan failed");
  out.best = decode(out.ga.best);
  out.best_mape = out.ga.best_mape;

  for (std::size_t k = 0; k <= max_k; ++k) {
    std::optional<TransferSweepRow> row;
    for (const auto& [key, p] : plans)
      if (p.k == k && (!row || memo[key] < row->cv_mape)) row = TransferSweepRow{k, p, memo[key]};
    if (!row) {
      TransferPlan p = out.best;
      p.k = k;
      row = TransferSweepRow{k, p, evaluate_plan(p)};
    }
    out.sweep.push_back(*row);
  }
  return out;
}

inline void write_sweep_csv(std::ostream& os, std::span<const TransferSweepRow> sweep) {
  os << "k,plan,cv_mape\n";
  for (const auto& r : sweep) os << r.k << ",\"" << describe(r.plan) << "\"," << detail::format_double(r.cv_mape) << "\n";
}

}  // namespace nusselt
