// nusselt — command-line front end for the surrogate-modeling toolkit.
//
// Every subcommand reads its settings from three layers: command-line flags,
// then an optional --config file, then built-in defaults. A config file is
// either flat "key = value" text (keys are the long flag names; "param.X"
// sets a model hyperparameter, "space.X" a search dimension) or a JSON
// object, which is taken as the model hyperparameters directly (the format
// `tune` writes to best_config.json).
//
// Failures print exactly one line on stderr:
//   ERROR <subcommand> <Code> <message>
// and exit with 2 (ConfigError), 3 (DataError) or 4 (RuntimeError).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nusselt/nusselt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nusselt;

namespace {

struct CliError : std::runtime_error {
  CliError(std::string code, const std::string& msg, int status)
      : std::runtime_error(msg), code(std::move(code)), status(status) {}
  std::string code;
  int status;
};

[[noreturn]] void config_error(const std::string& msg) { throw CliError("ConfigError", msg, 2); }

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

/// Parses a scalar the way a user would expect: JSON literals (numbers,
/// arrays, quoted strings) where possible, bare text otherwise.
json loose_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

// ---------------------------------------------------------------------------
// Layered settings
// ---------------------------------------------------------------------------

class Settings {
 public:
  void bind(CLI::App* app, const std::string& name, const std::string& help) {
    app->add_option("--" + name, flags_[name], help);
  }
  void bind_list(CLI::App* app, const std::string& name, const std::string& help) {
    app->add_option("--" + name, lists_[name], help)->take_all();
  }

  /// Called after parsing: drops flags that were not given and loads the
  /// config file, if any.
  void finalize(CLI::App* app) {
    for (auto it = flags_.begin(); it != flags_.end();)
      it = app->get_option("--" + it->first)->count() ? std::next(it) : flags_.erase(it);
    if (auto it = flags_.find("config"); it != flags_.end()) load(it->second);
    params_ = file_params_;
    for (const auto& kv : list("param")) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) config_error("--param expects key=value, got '" + kv + "'");
      params_[trim(kv.substr(0, eq))] = loose_value(trim(kv.substr(eq + 1)));
    }
  }

  bool has(const std::string& key) const { return flags_.contains(key) || file_.contains(key); }

  std::string str(const std::string& key, const std::string& fallback = {}) const {
    if (auto it = flags_.find(key); it != flags_.end()) return it->second;
    if (auto it = file_.find(key); it != file_.end()) return it->second;
    return fallback;
  }

  double num(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      config_error("'" + key + "' must be a number, got '" + s + "'");
    }
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = str(key);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size() || s.starts_with('-')) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      config_error("'" + key + "' must be a non-negative integer, got '" + s + "'");
    }
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(u64(key, fallback));
  }

  /// Repeatable flag values, or the comma-split file value when absent.
  std::vector<std::string> list(const std::string& key) const {
    if (auto it = lists_.find(key); it != lists_.end() && !it->second.empty()) return it->second;
    std::vector<std::string> out;
    if (auto it = file_lists_.find(key); it != file_lists_.end()) out = it->second;
    return out;
  }

  const json& params() const { return params_; }

 private:
  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      try {
        file_params_ = json::parse(text);
      } catch (const json::parse_error& e) {
        config_error("config file '" + path + "' is not valid JSON: " + e.what());
      }
      return;
    }
    std::istringstream lines(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      line = trim(line.substr(0, line.find('#')));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.starts_with("param.")) file_params_[key.substr(6)] = loose_value(value);
      else if (key.starts_with("space.")) file_lists_["space"].push_back(key.substr(6) + "=" + value);
      else if (key == "family-config") file_lists_[key].push_back(value);
      else if (key == "families") {
        std::stringstream ss(value);
        for (std::string item; std::getline(ss, item, ',');) file_lists_[key].push_back(trim(item));
      } else file_[key] = value;
    }
  }

  std::map<std::string, std::string> flags_;
  std::map<std::string, std::vector<std::string>> lists_;
  std::map<std::string, std::string> file_;
  std::map<std::string, std::vector<std::string>> file_lists_;
  json file_params_ = json::object();
  json params_ = json::object();
};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fs::path output_dir(const Settings& s) {
  std::string fallback = "nusselt-out";
  if (const char* env = std::getenv("NUSSELT_OUT"); env && *env) fallback = env;
  fs::path dir = s.str("out", fallback);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw CliError("RuntimeError", "cannot write " + p.string(), 4);
  os << content;
  std::cout << "wrote " << p.string() << "\n";
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

Fluid fluid_of(const std::string& s) {
  if (s == "na" || s == "sodium") return Fluid::Sodium;
  if (s == "water") return Fluid::Water;
  config_error("fluid must be 'na' or 'water', got '" + s + "'");
}

PhysicsParams physics_of(const Settings& s, Fluid fluid = Fluid::Sodium) {
  PhysicsParams p = fluid == Fluid::Water ? PhysicsParams::water_analog() : PhysicsParams{};
  p.alpha_exp = s.num("alpha-exp", p.alpha_exp);
  p.ld_exp = s.num("ld-exp", p.ld_exp);
  p.c0 = s.num("c0", p.c0);
  p.c1 = s.num("c1", p.c1);
  p.c2 = s.num("c2", p.c2);
  p.pe_coeff = s.num("pe-coeff", p.pe_coeff);
  p.pe_exp = s.num("pe-exp", p.pe_exp);
  p.validate();
  return p;
}

/// The single data source: a CSV file, or a synthesized set.
Dataset load_data(const Settings& s, const std::string& prefix = "") {
  const bool from_file = s.has(prefix + "data");
  const bool synth = s.has(prefix + "n") || s.has(prefix + "noise") || s.has(prefix + "fluid");
  if (from_file && synth)
    config_error("give either --" + prefix + "data or synthesis settings (--" + prefix + "n/--" + prefix +
                 "noise/--" + prefix + "fluid), not both");
  if (from_file) {
    try {
      return ingest_csv(s.str(prefix + "data"), s.str("check", "true") != "false");
    } catch (const DataError& e) {
      throw CliError("DataError", e.what(), 3);
    }
  }
  const Fluid fluid = fluid_of(s.str(prefix + "fluid", "na"));
  return synthesize_dataset(s.count(prefix + "n", 87), physics_of(s, fluid), s.num(prefix + "noise", 0.03), fluid,
                            s.u64(prefix + "data-seed", s.u64("seed", 0)));
}

std::size_t jobs_of(const Settings& s) { return std::max<std::size_t>(1, s.count("jobs", 1)); }

/// Default hyperparameters the CLI uses when a family is not configured.
json default_params(const std::string& family) {
  if (family == "svr") return {{"c", 10.0}, {"gamma", 1.0}, {"epsilon", 0.01}};
  if (family == "gp") return {{"kernel", "rbf"}};
  if (family == "nn") return {{"hidden", {8}}};
  if (family == "tr-nn") return {{"k", 1}, {"new_widths", {8}}};
  return json::object();
}

/// Builds a family from its name and hyperparameters. tr-nn trains its
/// water-analog source network first (settings under source_*).
ModelFamily make_family(const std::string& name, json params, std::uint64_t seed) {
  if (params.is_null() || params.empty()) params = default_params(name);
  try {
    if (name == "physics") return physics_family(params);
    if (name == "constant") return constant_family();
    if (name == "gp") return gp_family(params);
    if (name == "svr") return svr_family(params);
    if (name == "nn") return nn_family(params);
    if (name == "pinn") return pinn_family(params);
    if (name == "tr-nn") {
      TransferPlan plan;
      plan.k = params.value("k", std::size_t{1});
      plan.new_widths = params.value("new_widths", std::vector<std::size_t>{8});
      plan.freeze = params.value("freeze", false);
      const auto water = synthesize_dataset(params.value("source_n", std::size_t{200}), PhysicsParams::water_analog(),
                                            params.value("source_noise", 0.0), Fluid::Water,
                                            params.value("source_seed", mix_seed(seed, 0x57)));
      json train_keys = json::object();
      for (const auto& k : kTrainKeys)
        if (params.contains(k)) train_keys[std::string(k)] = params.at(std::string(k));
      const TrainConfig cfg = train_config_from_json(train_keys);
      auto source = std::make_shared<const MlpModel>(train_source(water, seed, cfg, 2).model);
      auto fam = transfer_family(source, plan, cfg);
      fam.config = params;
      return fam;
    }
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    config_error(name + ": " + e.what());
  }
  config_error("unknown family '" + name + "' (physics, constant, gp, svr, nn, tr-nn, pinn)");
}

ModelFamily family_of(const Settings& s) {
  const std::string name = s.str("family");
  if (name.empty()) config_error("--family is required");
  return make_family(name, s.params(), s.u64("seed", 0));
}

// ---------------------------------------------------------------------------
// Search spaces: "name=log:lo:hi", "uniform:lo:hi", "int:lo:hi", "cat:a,b,c"
// ---------------------------------------------------------------------------

Dimension parse_dimension(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) config_error("space entry must be name=kind:args, got '" + spec + "'");
  const std::string name = trim(spec.substr(0, eq)), rest = trim(spec.substr(eq + 1));
  const auto colon = rest.find(':');
  const std::string kind = rest.substr(0, colon), args = colon == std::string::npos ? "" : rest.substr(colon + 1);
  std::vector<std::string> parts;
  std::stringstream ss(args);
  for (std::string p; std::getline(ss, p, kind == "cat" ? ',' : ':');) parts.push_back(trim(p));
  try {
    Dimension d;
    if (kind == "cat") d = Dimension::categorical(name, parts);
    else if (parts.size() != 2) config_error("space '" + name + "': expected two bounds");
    else if (kind == "log") d = Dimension::log_uniform(name, std::stod(parts[0]), std::stod(parts[1]));
    else if (kind == "uniform") d = Dimension::uniform(name, std::stod(parts[0]), std::stod(parts[1]));
    else if (kind == "int") d = Dimension::integer(name, std::stoll(parts[0]), std::stoll(parts[1]));
    else config_error("space '" + name + "': kind must be log, uniform, int or cat");
    d.validate();
    return d;
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    config_error("space '" + name + "': " + e.what());
  }
}

SearchSpace default_space(const std::string& family) {
  SearchSpace s;
  if (family == "svr") {
    s.dims = {Dimension::log_uniform("c", 1e-6, 1e6), Dimension::log_uniform("gamma", 1e-4, 1e1),
              Dimension::log_uniform("epsilon", 1e-4, 1.0)};
  } else if (family == "gp") {
    s.dims = {Dimension::categorical("kernel", {"linear-dot-product", "exp-sine-squared", "matern", "rbf",
                                                "rational-quadratic"})};
  } else if (family == "nn") {
    s.dims = {Dimension::integer("layers", 1, 3), Dimension::integer("width", 1, 10)};
  } else if (family == "pinn") {
    s.dims = {Dimension::log_uniform("learning_rate", 1e-4, 1.0)};
  } else {
    config_error("no default search space for family '" + family + "'; give --space");
  }
  return s;
}

/// Search configurations use flat scalar keys; nn's (layers, width) pair
/// expands to a hidden-width list.
json params_from_config(const std::string& family, const Config& c, json base) {
  const json flat = to_json(c);
  for (const auto& [k, v] : flat.items()) base[k] = v;
  if (family == "nn" && base.contains("layers") && base.contains("width")) {
    const auto layers = base.at("layers").get<std::size_t>();
    const auto width = base.at("width").get<std::size_t>();
    base.erase("layers");
    base.erase("width");
    base["hidden"] = std::vector<std::size_t>(layers, width);
  }
  return base;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_gen_data(const Settings& s) {
  const Dataset ds = load_data(s);
  std::ostringstream os;
  write_csv(os, ds);
  write_text(output_dir(s) / "dataset.csv", os.str());
}

json stats_json(const Dataset& ds) {
  const auto stats = describe_stats(ds);
  json j = json::object();
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    const auto& st = stats[i];
    j[std::string(kCsvColumns[i])] = {{"mean", st.mean}, {"mode", st.mode}, {"variance", st.variance},
                                      {"min", st.min},   {"max", st.max},   {"p99", st.p99},
                                      {"p1", st.p1}};
  }
  return j;
}

void cmd_stats(const Settings& s) {
  const Dataset ds = load_data(s);
  const fs::path dir = output_dir(s);
  json report = {{"report", "stats"}, {"rows", ds.size()}, {"provenance", to_string(ds.provenance)},
                 {"summary", stats_json(ds)}};
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    const Vector col = ds.column(i);
    std::ostringstream os;
    os << "x,density\n";
    try {
      for (const auto& p : kde_curve(col, std::nullopt, s.count("grid", 256)))
        os << detail::format_double(p.x) << "," << detail::format_double(p.density) << "\n";
    } catch (const BadBandwidth&) {
      continue;  // constant column: no density to draw
    }
    write_text(dir / ("kde_" + std::string(kCsvColumns[i]) + ".csv"), os.str());
  }
  if (s.has("compare-data") || s.has("compare-fluid") || s.has("compare-n")) {
    const Dataset b = load_data(s, "compare-");
    const auto mw = mann_whitney_u(ds.targets(), b.targets());
    report["mann_whitney"] = {{"variable", "Nu_ave"}, {"u_a", mw.u_a},         {"u_b", mw.u_b},
                              {"p_value", mw.p_value}, {"exact", mw.exact},    {"n_a", ds.size()},
                              {"n_b", b.size()}};
    std::cout << "Mann-Whitney U on Nu_ave: U=" << mw.u_a << " p=" << mw.p_value << "\n";
  }
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    const auto& st = report["summary"][std::string(kCsvColumns[i])];
    std::cout << kCsvColumns[i] << ": mean=" << st["mean"].get<double>() << " mode=" << st["mode"].get<double>()
              << " variance=" << st["variance"].get<double>() << " max=" << st["max"].get<double>()
              << " p99=" << st["p99"].get<double>() << " p1=" << st["p1"].get<double>() << "\n";
  }
  write_json(dir / "stats.json", report);
}

void cmd_physics_eval(const Settings& s) {
  for (const char* k : {"alpha", "l-over-d", "pe"})
    if (!s.has(k)) config_error(std::string("--") + k + " is required");
  const PhysicsParams p = physics_of(s);
  try {
    const auto e = evaluate_physics(s.num("alpha", 0), s.num("l-over-d", 0), s.num("pe", 0), p);
    std::cout.precision(10);
    std::cout << "gamma=" << e.gamma << "\nPe*=" << e.pe_star << "\nNu*=" << e.nu_star << "\nNu_ave_hat=" << e.nu_ave
              << "\n";
    if (e.range_warning) std::cout << "warning: inputs outside the correlation's fitted envelope\n";
  } catch (const std::domain_error& e) {
    throw CliError("DataError", e.what(), 3);
  }
}

void cmd_fit(const Settings& s) {
  const Dataset ds = load_data(s);
  const auto fam = family_of(s);
  const auto fitted = fam.fit(ds, fit_normalizer(ds), s.u64("seed", 0));
  json j = {{"family", fam.name}, {"config", fam.config}, {"seed", s.u64("seed", 0)}, {"epochs", fitted.epochs},
            {"model", fitted.model}};
  write_json(output_dir(s) / "model.json", j);
}

void cmd_tune(const Settings& s) {
  const Dataset ds = load_data(s);
  const std::string family = s.str("family");
  if (family.empty()) config_error("--family is required");
  const std::uint64_t seed = s.u64("seed", 0);
  const std::size_t k = s.count("k", 10);
  SearchSpace space;
  for (const auto& spec : s.list("space")) space.dims.push_back(parse_dimension(spec));
  if (space.dims.empty()) space = default_space(family);
  space.validate();
  const json base = s.params();

  ConfigObjective objective = [&](const Config& c) {
    const auto fam = make_family(family, params_from_config(family, c, base), seed);
    const auto rep = cross_validate(fam, ds, k, seed);
    if (rep.failed_folds == rep.k) throw std::runtime_error("every fold failed");
    return rep.mean_mape;
  };
  SearchOptions opt;
  opt.seed = seed;
  opt.jobs = jobs_of(s);
  if (s.has("resume")) {
    std::ifstream in(s.str("resume"));
    if (!in) config_error("cannot open resume log '" + s.str("resume") + "'");
    opt.resume = trials_from_jsonl(in);
  }

  const std::string optimizer = s.str("optimizer", "bayes");
  SearchResult result;
  json extra = json::object();
  const std::size_t per_dim = s.count("grid-points", 10);
  auto discretized = [&] {
    SearchSpace d;
    for (const auto& dim : space.dims) {
      if (dim.cardinality() > 0) {
        d.dims.push_back(dim);
        continue;
      }
      std::vector<std::string> values;
      for (std::size_t i = 0; i < per_dim; ++i)
        values.push_back(json(as_double(dim.from_unit(per_dim == 1 ? 0.5 : double(i) / double(per_dim - 1)))).dump());
      d.dims.push_back(Dimension::categorical(dim.name, values));
    }
    return d;
  };
  auto undiscretize = [&](const Config& c) {
    Config out = c;
    for (const auto& dim : space.dims)
      if (dim.cardinality() == 0) out[dim.name] = std::stod(as_string(c.at(dim.name)));
    return out;
  };

  if (optimizer == "random") {
    RsState init;
    init.t_iter = s.count("t-iter", 30);
    init.span = s.count("span", 1);
    init.k_iter = s.count("k-iter", 5);
    init.t_drop = s.num("t-drop", 0.001);
    auto rs = random_search_alg1(candidate_list(space, per_dim), objective, init, opt);
    result = std::move(rs.search);
    extra = {{"t_iter", rs.final_state.t_iter}, {"span", rs.final_state.span}, {"iterations", rs.final_state.k}};
  } else if (optimizer == "grid") {
    result = grid_search(candidate_list(space, per_dim), objective, opt);
  } else if (optimizer == "ga") {
    GaConfig ga;
    ga.population = s.count("population", ga.population);
    ga.generations = s.count("generations", ga.generations);
    const SearchSpace d = discretized();
    result = ga_optimize(d, [&](const Config& c) { return objective(undiscretize(c)); }, ga, opt);
    for (auto& t : result.trials) t.config = undiscretize(t.config);
    if (!result.best.empty()) result.best = undiscretize(result.best);
  } else if (optimizer == "bayes") {
    BayesConfig bc;
    bc.budget = s.count("budget", bc.budget);
    bc.initial_points = std::min(bc.initial_points, bc.budget);
    bc.candidates = s.count("candidates", bc.candidates);
    result = bayes_optimize(space, objective, bc, opt);
  } else {
    config_error("optimizer must be random, grid, ga or bayes");
  }
  if (result.best.empty()) throw CliError("RuntimeError", "every trial failed", 4);

  const fs::path dir = output_dir(s);
  write_text(dir / "trials.jsonl", trials_to_jsonl(result.trials));
  const json best = params_from_config(family, result.best, base);
  write_json(dir / "best_config.json", best);
  json summary = {{"report", "tune"}, {"family", family},          {"optimizer", optimizer}, {"seed", seed},
                  {"k", k},           {"best_mape", result.best_mape}, {"best_config", best},
                  {"trials", result.trials.size()}, {"trace", result.trace}};
  summary.update(extra);
  write_json(dir / "tune.json", summary);
  std::cout << "best CV MAPE " << result.best_mape << " with " << best.dump() << "\n";
}

void cmd_cv(const Settings& s) {
  const Dataset ds = load_data(s);
  const auto rep = cross_validate(family_of(s), ds, s.count("k", 10), s.u64("seed", 0), jobs_of(s));
  write_json(output_dir(s) / "cv.json", to_json(rep));
  std::cout << rep.family << " mean CV MAPE " << rep.mean_mape << " (" << rep.failed_folds << " failed folds)\n";
}

HoldoutSpec holdout_of(const Settings& s) {
  return {s.num("holdout", 0.1), s.u64("holdout-seed", s.u64("seed", 0))};
}

void cmd_mc(const Settings& s) {
  const Dataset ds = load_data(s);
  const auto rep = monte_carlo(family_of(s), ds, holdout_of(s), s.count("runs", 500), s.u64("seed", 0), jobs_of(s));
  write_json(output_dir(s) / "mc.json", to_json(rep));
  const auto& a = rep.aggregates;
  std::cout << "max var(pred)=" << a.max_prediction_variance << " var(MAPE)=" << a.mape_variance
            << " mean epochs=" << a.mean_epochs << " failed runs=" << a.failed_runs << "\n";
}

MarginReport run_holdout(const Settings& s, json& out) {
  const Dataset ds = load_data(s);
  const auto split = partition(ds, holdout_of(s)).front();
  const Dataset train = ds.subset(split.train), eval = ds.subset(split.eval);
  const auto fam = family_of(s);
  const auto fitted = fam.fit(train, fit_normalizer(train), s.u64("seed", 0));
  Vector pred;
  for (const auto& p : eval.points) pred.push_back(fitted.predict(p));
  const auto m = holdout_margin(eval.targets(), pred, s.num("margin", 0.08));
  json points = json::array();
  for (std::size_t i = 0; i < m.points.size(); ++i)
    points.push_back({{"index", split.eval[i]}, {"actual", m.points[i].actual}, {"predicted", m.points[i].predicted},
                      {"relative_error", m.points[i].relative_error}, {"within", m.points[i].within}});
  out = {{"report", "holdout"},     {"family", fam.name},    {"config", fam.config},
         {"seed", s.u64("seed", 0)}, {"margin", m.margin},   {"fraction_within", m.fraction_within},
         {"worst_relative_error", m.worst_relative_error}, {"points", points}};
  return m;
}

void cmd_holdout(const Settings& s) {
  json j;
  ReportBundle b;
  b.margin = run_holdout(s, j);
  b.title = "Holdout predictions (" + j["family"].get<std::string>() + ")";
  const fs::path dir = output_dir(s);
  write_json(dir / "holdout.json", j);
  for (const auto& p : emit_report(b, ReportKind::Margin, dir)) std::cout << "wrote " << p.string() << "\n";
  std::cout << "within " << 100.0 * b.margin->margin << "%: " << b.margin->fraction_within << "\n";
}

json run_compare(const Settings& s) {
  const Dataset ds = load_data(s);
  std::vector<std::string> names = s.list("families");
  if (names.empty()) names = {"physics", "gp", "svr", "nn", "pinn"};
  std::map<std::string, json> configs;
  for (const auto& fc : s.list("family-config")) {
    const auto eq = fc.find('=');
    if (eq == std::string::npos) config_error("--family-config expects family=path.json");
    std::ifstream in(fc.substr(eq + 1));
    if (!in) config_error("cannot open " + fc.substr(eq + 1));
    try {
      configs[fc.substr(0, eq)] = json::parse(in);
    } catch (const json::parse_error& e) {
      config_error(fc.substr(eq + 1) + ": " + e.what());
    }
  }
  const std::uint64_t seed = s.u64("seed", 0);
  const std::size_t k = s.count("k", 10);
  json rows = json::array();
  for (const auto& name : names) {
    const json params = configs.contains(name) ? configs[name] : json::object();
    const auto rep = cross_validate(make_family(name, params, seed), ds, k, seed, jobs_of(s));
    rows.push_back({{"family", name},
                    {"optimizer", configs.contains(name) ? "configured" : "default"},
                    {"cv_mape", rep.mean_mape},
                    {"fold_mape", rep.fold_mapes()},
                    {"failed_folds", rep.failed_folds},
                    {"config", rep.config}});
    std::cout << name << " CV MAPE " << rep.mean_mape << "\n";
  }
  return {{"report", "compare"}, {"seed", seed}, {"k", k}, {"rows", rows}};
}

ReportBundle benchmark_bundle(const json& compare) {
  ReportBundle b;
  for (const auto& r : compare.at("rows"))
    b.benchmark.push_back({r.at("family").get<std::string>(), r.at("optimizer").get<std::string>(),
                           r.at("cv_mape").is_number() ? r.at("cv_mape").get<double>()
                                                       : std::numeric_limits<double>::quiet_NaN(),
                           r.at("failed_folds").get<std::size_t>()});
  return b;
}

void cmd_compare(const Settings& s) {
  const json j = run_compare(s);
  const fs::path dir = output_dir(s);
  write_json(dir / "compare.json", j);
  for (const auto& p : emit_report(benchmark_bundle(j), ReportKind::Benchmark, dir))
    std::cout << "wrote " << p.string() << "\n";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    config_error(path + ": " + e.what());
  }
}

void cmd_report(const Settings& s) {
  const ReportKind kind = [&] {
    try {
      return report_kind_from_string(s.str("kind"));
    } catch (const std::exception& e) {
      config_error(e.what());
    }
  }();
  const fs::path dir = output_dir(s);
  ReportBundle b;
  const std::uint64_t seed = s.u64("seed", 0);
  switch (kind) {
    case ReportKind::Benchmark:
      b = s.has("input") ? benchmark_bundle(read_json_file(s.str("input"))) : benchmark_bundle(run_compare(s));
      break;
    case ReportKind::Margin: {
      json j;
      if (s.has("input")) {
        j = read_json_file(s.str("input"));
        MarginReport m;
        m.margin = j.at("margin").get<double>();
        m.fraction_within = j.at("fraction_within").get<double>();
        m.worst_relative_error = j.at("worst_relative_error").get<double>();
        for (const auto& p : j.at("points"))
          m.points.push_back({p.at("actual").get<double>(), p.at("predicted").get<double>(),
                              p.at("relative_error").get<double>(), p.at("within").get<bool>()});
        b.margin = m;
      } else {
        b.margin = run_holdout(s, j);
      }
      b.title = "Holdout predictions (" + j.value("family", std::string("model")) + ")";
      break;
    }
    case ReportKind::Sweep: {
      // Transfer-depth sweep: source network on the water-analog set, GA over
      // plans on the sodium data.
      const Dataset na = load_data(s);
      const Dataset water = synthesize_dataset(s.count("source-n", 200), PhysicsParams::water_analog(),
                                               s.num("source-noise", 0.0), Fluid::Water, mix_seed(seed, 0x57));
      const auto source = train_source(water, seed, {}, s.count("k", 10), jobs_of(s));
      GaConfig ga;
      ga.population = s.count("population", ga.population);
      ga.generations = s.count("generations", 20);
      TransferSearchSpace space;
      const auto res = ga_transfer_search(source.model, na, ga, seed, space, {}, s.count("k", 10), jobs_of(s));
      json sweep = json::array();
      for (const auto& r : res.sweep) {
        b.sweep.push_back({double(r.k), describe(r.plan), r.cv_mape});
        sweep.push_back({{"k", r.k}, {"plan", to_json(r.plan)}, {"cv_mape", r.cv_mape}});
      }
      b.title = "CV MAPE by transferred layers";
      write_json(dir / "transfer.json",
                 {{"report", "transfer"}, {"seed", seed}, {"source_cv_mape", source.cv.mean_mape},
                  {"source_data", "synthetic water-analog correlation (stand-in for unavailable water data)"},
                  {"best_plan", to_json(res.best)}, {"best_cv_mape", res.best_mape}, {"sweep", sweep}});
      break;
    }
    case ReportKind::PcHistogram: {
      const Dataset ds = load_data(s);
      const auto opt = pinn_options_from_json(s.params());
      const auto res = pinn_train(ds, fit_normalizer(ds), opt, seed);
      Vector pcs;
      for (const auto& p : ds.points) pcs.push_back(pinn_forward(res.model, res.model.net.normalizer->inputs(p)).pc);
      b.pc = pc_distribution(pcs, s.count("bins", 20));
      std::cout << "PC mean=" << b.pc->mean << " std=" << b.pc->stddev << "\n";
      break;
    }
  }
  for (const auto& p : emit_report(b, kind, dir)) std::cout << "wrote " << p.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate models for the average Nusselt number of liquid-sodium miniature heat sinks"};
  app.require_subcommand(1);
  std::map<std::string, Settings> settings;
  std::map<std::string, std::function<void(const Settings&)>> handlers = {
      {"gen-data", cmd_gen_data}, {"stats", cmd_stats}, {"physics-eval", cmd_physics_eval},
      {"fit", cmd_fit},           {"tune", cmd_tune},   {"cv", cmd_cv},
      {"mc", cmd_mc},             {"holdout", cmd_holdout}, {"compare", cmd_compare},
      {"report", cmd_report}};
  const std::map<std::string, std::string> help = {
      {"gen-data", "write a synthetic dataset CSV"},
      {"stats", "dataset summary, KDE curves and Mann-Whitney comparison"},
      {"physics-eval", "evaluate the closed-form correlation"},
      {"fit", "train one model family and serialize it"},
      {"tune", "hyperparameter search scored by k-fold CV MAPE"},
      {"cv", "k-fold cross-validation report"},
      {"mc", "Monte-Carlo re-training report"},
      {"holdout", "holdout predictions and margin table"},
      {"compare", "CV MAPE benchmark across families"},
      {"report", "plot data for benchmark, sweep, margin or pc-histogram"}};

  // Flag -> (help, subcommands accepting it); "*" means every subcommand.
  const std::string data_cmds = " gen-data stats fit tune cv mc holdout compare report ";
  const std::string jobs_cmds = " tune cv mc compare report ";
  const std::string family_cmds = " fit tune cv mc holdout report ";
  const std::string physics_cmds = data_cmds + " physics-eval ";
  struct Flag {
    const char* name;
    const char* help;
    std::string where;
  };
  const std::vector<Flag> flags = {
      {"config", "settings file: key = value lines, or a JSON object of model hyperparameters", "*"},
      {"seed", "master seed (default 0)", "*"},
      {"out", "output directory (default $NUSSELT_OUT or nusselt-out)", "*"},
      {"jobs", "worker threads (default 1); results do not depend on it", jobs_cmds},
      {"data", "input CSV instead of synthesized data", data_cmds},
      {"check", "validate L/D against L/Dh on ingest (true|false, default true)", data_cmds},
      {"n", "synthesized rows (default 87)", data_cmds},
      {"noise", "relative label noise of synthesized data (default 0.03)", data_cmds},
      {"fluid", "synthesized fluid: na | water (default na)", data_cmds},
      {"data-seed", "seed of the synthesized data (default --seed)", data_cmds},
      {"alpha", "aspect ratio", " physics-eval "},
      {"l-over-d", "length over hydraulic diameter", " physics-eval "},
      {"pe", "Peclet number", " physics-eval "},
      {"alpha-exp", "correlation: exponent of alpha in gamma", physics_cmds},
      {"ld-exp", "correlation: exponent of L/D in gamma", physics_cmds},
      {"c0", "correlation: constant term of Nu*", physics_cmds},
      {"c1", "correlation: linear coefficient of Nu*", physics_cmds},
      {"c2", "correlation: quadratic coefficient of Nu*", physics_cmds},
      {"pe-coeff", "correlation: Pe* coefficient", physics_cmds},
      {"pe-exp", "correlation: Pe* exponent", physics_cmds},
      {"grid", "KDE grid points (default 256)", " stats "},
      {"compare-data", "second CSV for the Mann-Whitney comparison", " stats "},
      {"compare-n", "rows of a synthesized comparison set", " stats "},
      {"compare-noise", "noise of the synthesized comparison set", " stats "},
      {"compare-fluid", "fluid of the synthesized comparison set", " stats "},
      {"compare-data-seed", "seed of the synthesized comparison set", " stats "},
      {"family", "physics | constant | gp | svr | nn | tr-nn | pinn", family_cmds},
      {"k", "cross-validation folds (default 10)", " tune cv compare report "},
      {"holdout", "holdout fraction (default 0.1)", " mc holdout report "},
      {"holdout-seed", "seed of the holdout split (default --seed)", " mc holdout report "},
      {"runs", "Monte-Carlo re-trainings (default 500)", " mc "},
      {"margin", "relative margin for the holdout table (default 0.08)", " holdout report "},
      {"optimizer", "random | grid | ga | bayes (default bayes)", " tune "},
      {"budget", "Bayesian optimization trials (default 100)", " tune "},
      {"candidates", "EI candidates per Bayesian trial (default 1000)", " tune "},
      {"grid-points", "points per continuous dimension for random/grid/ga (default 10)", " tune "},
      {"t-iter", "random search: initial iteration budget (default 30)", " tune "},
      {"span", "random search: initial span (default 1)", " tune "},
      {"k-iter", "random search: budget increment factor (default 5)", " tune "},
      {"t-drop", "random search: MAPE drop that extends the budget (default 0.001)", " tune "},
      {"population", "GA population (default 10)", " tune report "},
      {"generations", "GA generation cap (default 500; 20 for the sweep report)", " tune report "},
      {"resume", "trial log (JSON lines) to resume from", " tune "},
      {"kind", "benchmark | sweep | margin | pc-histogram", " report "},
      {"input", "previously written compare.json or holdout.json", " report "},
      {"bins", "PC histogram bins (default 20)", " report "},
      {"source-n", "rows of the water-analog source set (default 200)", " report "},
      {"source-noise", "noise of the water-analog source set (default 0)", " report "},
  };

  for (const auto& [name, fn] : handlers) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    Settings& st = settings[name];
    const std::string tag = " " + name + " ";
    for (const auto& f : flags)
      if (f.where == "*" || f.where.find(tag) != std::string::npos) st.bind(sub, f.name, f.help);
    st.bind_list(sub, "param", "model hyperparameter key=value (repeatable)");
    if (name == "tune") st.bind_list(sub, "space", "search dimension name=log:lo:hi|uniform:lo:hi|int:lo:hi|cat:a,b");
    if (name == "compare" || name == "report") {
      st.bind_list(sub, "families", "families to benchmark (default physics gp svr nn pinn)");
      st.bind_list(sub, "family-config", "family=path.json hyperparameters for one benchmarked family");
    }
  }

  std::string current = "cli";
  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      for (auto* sub : app.get_subcommands()) current = sub->get_name();
      config_error(e.what());
    }
    CLI::App* sub = app.get_subcommands().front();
    current = sub->get_name();
    Settings& st = settings[current];
    st.finalize(sub);
    handlers.at(current)(st);
  } catch (const CliError& e) {
    std::cerr << "ERROR " << current << " " << e.code << " " << e.what() << "\n";
    return e.status;
  } catch (const DataError& e) {
    std::cerr << "ERROR " << current << " DataError " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "ERROR " << current << " ConfigError " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ERROR " << current << " RuntimeError " << e.what() << "\n";
    return 4;
  }
  return 0;
}
