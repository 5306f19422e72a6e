#pragma once

// Concrete model families for the validation harness, each configured from
// a JSON object. Unknown keys are rejected so typos do not silently fall
// back to defaults.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "nusselt/gp.hpp"
#include "nusselt/neural.hpp"
#include "nusselt/physics.hpp"
#include "nusselt/pinn.hpp"
#include "nusselt/svr.hpp"
#include "nusselt/validation.hpp"

namespace nusselt {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view family) {
  if (!j.is_object()) throw ConfigError(std::string(family) + ": configuration must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError(std::string(family) + ": unknown configuration key '" + k + "'");
}

inline std::vector<std::size_t> widths_from(const nlohmann::json& j, std::string_view key,
                                            std::vector<std::size_t> fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<std::vector<std::size_t>>();
}

}  // namespace detail

inline PhysicsParams physics_params_from_json(const nlohmann::json& j) {
  PhysicsParams p;
  p.alpha_exp = j.value("alpha_exp", p.alpha_exp);
  p.ld_exp = j.value("ld_exp", p.ld_exp);
  p.c0 = j.value("c0", p.c0);
  p.c1 = j.value("c1", p.c1);
  p.c2 = j.value("c2", p.c2);
  p.pe_coeff = j.value("pe_coeff", p.pe_coeff);
  p.pe_exp = j.value("pe_exp", p.pe_exp);
  p.validate();
  return p;
}

inline nlohmann::json to_json(const PhysicsParams& p) {
  return {{"alpha_exp", p.alpha_exp}, {"ld_exp", p.ld_exp},     {"c0", p.c0},          {"c1", p.c1},
          {"c2", p.c2},               {"pe_coeff", p.pe_coeff}, {"pe_exp", p.pe_exp}};
}

/// Training keys shared by the nn, tr-nn and pinn families.
inline constexpr std::array<std::string_view, 8> kTrainKeys = {
    "method", "loss", "learning_rate", "batch_size", "max_epochs", "patience", "validation_fraction",
    "lm_damping"};

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg = {}) {
  if (j.contains("method")) cfg.method = train_method_from_string(j.at("method").get<std::string>());
  if (j.contains("loss")) cfg.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
  cfg.lm_damping = j.value("lm_damping", cfg.lm_damping);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

/// Closed-form correlation; ignores the training data entirely.
inline ModelFamily physics_family(const nlohmann::json& config = nlohmann::json::object()) {
  const PhysicsParams p = physics_params_from_json(config);
  return {"physics", config, [p](const Dataset&, const NormalizationParams&, std::uint64_t) {
            return FittedModel{[p](const DataPoint& x) { return nu_ave_hat(x.alpha, x.l_over_d, x.pe, p); },
                               0, to_json(p)};
          }};
}

/// Predicts the training-set mean.
inline ModelFamily constant_family() {
  return {"constant", nlohmann::json::object(),
          [](const Dataset& train, const NormalizationParams&, std::uint64_t) {
            const double m = nusselt::mean(train.targets());
            return FittedModel{[m](const DataPoint&) { return m; }, 0, {{"value", m}}};
          }};
}

/// GP on normalized inputs and raw targets. With "spec" the hyperparameters
/// are fixed (deterministic conditioning); otherwise they are fitted by
/// maximizing the marginal likelihood.
inline ModelFamily gp_family(const nlohmann::json& config) {
  detail::require_keys(config, {"kernel", "restarts", "budget", "matern_nu", "spec"}, "gp");
  const bool fixed = config.contains("spec");
  GpFitOptions opt;
  opt.restarts = config.value("restarts", opt.restarts);
  opt.budget_per_restart = config.value("budget", opt.budget_per_restart);
  opt.matern_nu = config.value("matern_nu", opt.matern_nu);
  const KernelBase base = kernel_base_from_string(config.value("kernel", std::string("rbf")));
  std::optional<KernelSpec> spec;
  if (fixed) spec = kernel_spec_from_json(config.at("spec"));
  return {"gp", config, [=](const Dataset& train, const NormalizationParams& norm, std::uint64_t seed) {
            const Matrix x = norm.inputs(train);
            const Vector y = train.targets();
            auto model = std::make_shared<GpModel>(spec ? gp_condition(*spec, x, y) : gp_fit(x, y, base, seed, opt));
            return FittedModel{[model, norm](const DataPoint& p) { return gp_predict(*model, norm.inputs(p)).mean; },
                               0, to_json(*model)};
          }};
}

inline ModelFamily svr_family(const nlohmann::json& config) {
  detail::require_keys(config, {"kernel", "c", "gamma", "epsilon", "coef0", "tolerance"}, "svr");
  SvrConfig cfg;
  if (config.contains("kernel")) cfg.kernel = svr_kernel_from_string(config.at("kernel").get<std::string>());
  cfg.c = config.value("c", cfg.c);
  cfg.gamma = config.value("gamma", cfg.gamma);
  cfg.epsilon = config.value("epsilon", cfg.epsilon);
  cfg.coef0 = config.value("coef0", cfg.coef0);
  cfg.tolerance = config.value("tolerance", cfg.tolerance);
  cfg.validate();
  return {"svr", config, [cfg](const Dataset& train, const NormalizationParams& norm, std::uint64_t) {
            auto model = std::make_shared<SvrModel>(svr_fit(norm.inputs(train), train.targets(), cfg));
            return FittedModel{[model, norm](const DataPoint& p) { return svr_predict(*model, norm.inputs(p)); },
                               model->iterations, to_json(*model)};
          }};
}

/// Trains an already-initialized network; the run's seed drives the
/// validation split and batch order.
inline FittedModel fit_initialized_mlp(MlpModel init, const Dataset& train, const NormalizationParams& norm,
                                       TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  init.normalizer = norm;
  const auto res = nusselt::train(init, norm.inputs(train), train.targets(), cfg);
  auto model = std::make_shared<MlpModel>(res.model);
  return FittedModel{[model](const DataPoint& p) { return predict(*model, p); }, res.epochs, to_json(*model)};
}

inline ModelFamily nn_family(const nlohmann::json& config) {
  std::vector<std::string_view> allowed{"hidden", "init", "activation"};
  allowed.insert(allowed.end(), kTrainKeys.begin(), kTrainKeys.end());
  for (const auto& [k, v] : config.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("nn: unknown configuration key '" + k + "'");
  MlpTopology topo;
  topo.hidden = detail::widths_from(config, "hidden", {8});
  if (config.contains("activation"))
    topo.hidden_activation = activation_from_string(config.at("activation").get<std::string>());
  topo.validate();
  const std::string init = config.value("init", std::string("uniform01"));
  if (init != "uniform01" && init != "he-uniform") throw ConfigError("nn: init must be uniform01 or he-uniform");
  const InitScheme scheme = init == "he-uniform" ? InitScheme::HeUniform : InitScheme::Uniform01;
  const TrainConfig cfg = train_config_from_json(config);
  return {"nn", config, [=](const Dataset& train, const NormalizationParams& norm, std::uint64_t seed) {
            return fit_initialized_mlp(init_mlp(topo, seed, scheme), train, norm, cfg, seed);
          }};
}

inline PinnTrainOptions pinn_options_from_json(const nlohmann::json& config) {
  std::vector<std::string_view> allowed{"widths", "mode", "physics", "physics_weight"};
  allowed.insert(allowed.end(), kTrainKeys.begin(), kTrainKeys.end());
  for (const auto& [k, v] : config.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("pinn: unknown configuration key '" + k + "'");
  PinnTrainOptions opt;
  opt.widths = detail::widths_from(config, "widths", opt.widths);
  if (config.contains("mode")) opt.mode = pinn_loss_mode_from_string(config.at("mode").get<std::string>());
  if (config.contains("physics")) opt.physics = physics_params_from_json(config.at("physics"));
  opt.physics_weight = config.value("physics_weight", opt.physics_weight);
  opt.train = train_config_from_json(config, opt.train);
  return opt;
}

inline ModelFamily pinn_family(const nlohmann::json& config) {
  const PinnTrainOptions base = pinn_options_from_json(config);
  return {"pinn", config, [base](const Dataset& train, const NormalizationParams& norm, std::uint64_t seed) {
            PinnTrainOptions opt = base;
            opt.train.seed = seed;
            const auto res = pinn_train(train, norm, opt, seed);
            auto model = std::make_shared<PinnModel>(res.model);
            return FittedModel{[model](const DataPoint& p) { return pinn_predict(*model, p); }, res.epochs,
                               to_json(*model)};
          }};
}

}  // namespace nusselt
