#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "nusselt/dataset.hpp"
#include "nusselt/neural.hpp"

using namespace nusselt;

namespace {

MlpTopology topo_of(std::vector<std::size_t> hidden, std::size_t inputs = kInputCount,
                    Activation act = Activation::Sigmoid) {
  MlpTopology t;
  t.inputs = inputs;
  t.hidden = std::move(hidden);
  t.hidden_activation = act;
  return t;
}

Matrix random_matrix(RandomStream& rng, std::size_t n, std::size_t d) {
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.uniform();
  return x;
}

double max_rel_error(const Vector& a, const Vector& b) {
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    err = std::max(err, std::abs(a[i] - b[i]));
  }
  return err / std::max(scale, 1e-12);
}

}  // namespace

TEST(InitMlp, ParameterCountAndSupport) {
  const auto t = topo_of({3});
  EXPECT_EQ(t.parameter_count(), 25u);
  const auto a = init_mlp(t, 4), b = init_mlp(t, 4);
  EXPECT_EQ(a.params, b.params);
  for (double v : a.params) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_NE(init_mlp(t, 5).params, a.params);
}

TEST(InitMlp, HeUniformBoundsAndZeroBias) {
  const auto m = init_mlp(topo_of({4, 3}), 2, InitScheme::HeUniform);
  for (std::size_t l = 0; l < m.topology.layer_count(); ++l) {
    const double lim = std::sqrt(6.0 / static_cast<double>(m.topology.fan_in(l)));
    for (std::size_t o = 0; o < m.topology.fan_out(l); ++o) {
      EXPECT_EQ(m.bias(l, o), 0.0);
      for (std::size_t i = 0; i < m.topology.fan_in(l); ++i) EXPECT_LE(std::abs(m.weight(l, o, i)), lim);
    }
  }
}

TEST(Forward, HandBuiltNets) {
  MlpModel lin{topo_of({}, 1), {1.0, 0.0}, std::nullopt};
  EXPECT_DOUBLE_EQ(forward(lin, Vector{0.7}), 0.7);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  // 1-1-1: w1 = 1, b1 = 0 (sigmoid), w2 = 2, b2 = 1 (purelin)
  MlpModel net{topo_of({1}, 1), {1.0, 0.0, 2.0, 1.0}, std::nullopt};
  EXPECT_DOUBLE_EQ(forward(net, Vector{0.0}), 2.0);
}

TEST(Forward, PredictNeedsNormalizer) {
  const auto m = init_mlp(topo_of({2}), 1);
  EXPECT_THROW(predict(m, DataPoint{}), std::logic_error);
}

TEST(Gradient, HandCalculusSingleNeuron) {
  MlpModel m{topo_of({}, 1), {1.0, 0.0}, std::nullopt};
  const auto g = gradient(m, Matrix{{1.0}}, Vector{0.0}, LossKind::Mse);
  EXPECT_DOUBLE_EQ(g.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(g.grad[1], 2.0);
}

TEST(Gradient, ZeroAtPerfectFit) {
  RandomStream rng(3);
  const auto m = init_mlp(topo_of({4}), 9);
  const Matrix x = random_matrix(rng, 5, 6);
  Vector y(5);
  for (std::size_t i = 0; i < 5; ++i) y[i] = forward(m, x.row(i));
  const auto g = gradient(m, x, y, LossKind::Mse);
  EXPECT_LE(norm2(g.grad), 1e-10);
}

TEST(Gradient, MatchesFiniteDifferencesSigmoid) {
  RandomStream rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<std::size_t> hidden = trial % 2 ? std::vector<std::size_t>{4} : std::vector<std::size_t>{3, 2};
    MlpModel m = init_mlp(topo_of(hidden), static_cast<std::uint64_t>(trial), InitScheme::HeUniform);
    for (double& p : m.params) p = rng.uniform(-1, 1);
    const Matrix x = random_matrix(rng, 5, 6);
    Vector y(5);
    for (double& v : y) v = rng.uniform(1, 3);
    for (LossKind kind : {LossKind::Mse, LossKind::SmoothMape}) {
      const auto g = gradient(m, x, y, kind);
      MlpModel probe = m;
      const Vector fd = finite_diff_grad(
          [&](std::span<const double> p) {
            std::copy(p.begin(), p.end(), probe.params.begin());
            return gradient(probe, x, y, kind).loss;
          },
          m.params);
      EXPECT_LT(max_rel_error(g.grad, fd), 1e-4) << "trial " << trial << " " << to_string(kind);
    }
  }
}

TEST(Gradient, MatchesFiniteDifferencesRelu) {
  RandomStream rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    MlpModel m = init_mlp(topo_of({5, 3}, 6, Activation::Relu), static_cast<std::uint64_t>(trial), InitScheme::HeUniform);
    const Matrix x = random_matrix(rng, 6, 6);
    Vector y(6);
    for (double& v : y) v = rng.uniform(1, 3);
    // keep every hidden pre-activation away from the kink
    bool near_kink = false;
    ForwardTrace t;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      forward_trace(m, x.row(r), t);
      for (std::size_t l = 0; l + 1 < t.pre.size(); ++l)
        for (double v : t.pre[l]) near_kink |= std::abs(v) < 1e-3;
    }
    if (near_kink) continue;
    const auto g = gradient(m, x, y, LossKind::Mse);
    MlpModel probe = m;
    const Vector fd = finite_diff_grad(
        [&](std::span<const double> p) {
          std::copy(p.begin(), p.end(), probe.params.begin());
          return gradient(probe, x, y, LossKind::Mse).loss;
        },
        m.params, 1e-6);
    EXPECT_LT(max_rel_error(g.grad, fd), 1e-3) << "trial " << trial;
  }
}

TEST(Gradient, RelativeJacobianMatchesFiniteDifferences) {
  RandomStream rng(13);
  const auto m = init_mlp(topo_of({3}), 1);
  const Matrix x = random_matrix(rng, 4, 6);
  const Vector y{1.5, 2.0, 2.5, 3.0};
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const auto rj = relative_jacobian(m, x, y, rows);
  MlpModel probe = m;
  for (std::size_t r = 0; r < 4; ++r) {
    const Vector fd = finite_diff_grad(
        [&](std::span<const double> p) {
          std::copy(p.begin(), p.end(), probe.params.begin());
          return (forward(probe, x.row(r)) - y[r]) / y[r];
        },
        m.params);
    const Vector row(rj.jacobian.row(r).begin(), rj.jacobian.row(r).end());
    EXPECT_LT(max_rel_error(row, fd), 1e-6);
  }
}

TEST(Gradient, RelativeLossNeedsPositiveTargets) {
  const auto m = init_mlp(topo_of({2}, 1), 1);
  EXPECT_THROW(gradient(m, Matrix{{0.5}}, Vector{0.0}, LossKind::SmoothMape), NonPositiveTarget);
}

TEST(Train, LmRecoversLinearSlope) {
  Matrix x(5, 1);
  Vector y(5);
  for (std::size_t i = 0; i < 5; ++i) {
    x(i, 0) = static_cast<double>(i + 1);
    y[i] = 2.0 * x(i, 0);
  }
  TrainConfig cfg;
  cfg.validation_fraction = 0.0;
  cfg.max_epochs = 100;
  const auto r = train(init_mlp(topo_of({}, 1), 3), x, y, cfg);
  EXPECT_NEAR(r.model.params[0], 2.0, 1e-6);
  EXPECT_NEAR(r.model.params[1], 0.0, 1e-6);
}

TEST(Train, LmNeverIncreasesTrainingLoss) {
  const Dataset ds = synthesize_dataset(40, {}, 0.02, Fluid::Sodium, 5);
  const auto norm = fit_normalizer(ds);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.patience = 1000;
  const auto r = train(init_mlp(topo_of({4}), 2), norm.inputs(ds), ds.targets(), cfg);
  for (std::size_t i = 1; i < r.train_trace.size(); ++i) EXPECT_LE(r.train_trace[i], r.train_trace[i - 1]);
}

TEST(Train, ZeroEpochsIsNoOp) {
  const Dataset ds = synthesize_dataset(10, {}, 0.0, Fluid::Sodium, 1);
  const auto norm = fit_normalizer(ds);
  const auto init = init_mlp(topo_of({2}), 7);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  for (TrainMethod m : {TrainMethod::Lm, TrainMethod::Adam}) {
    cfg.method = m;
    const auto r = train(init, norm.inputs(ds), ds.targets(), cfg);
    EXPECT_EQ(r.model.params, init.params);
    EXPECT_EQ(r.epochs, 0u);
  }
}

TEST(Train, EarlyStoppingRestoresBestValidation) {
  const Dataset ds = synthesize_dataset(60, {}, 0.05, Fluid::Sodium, 9);
  const auto norm = fit_normalizer(ds);
  const Matrix x = norm.inputs(ds);
  const Vector y = ds.targets();
  for (TrainMethod m : {TrainMethod::Lm, TrainMethod::Adam, TrainMethod::Rmsprop, TrainMethod::Sgd}) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.seed = 4;
    cfg.max_epochs = 60;
    const auto r = train(init_mlp(topo_of({5}), 1), x, y, cfg);
    ASSERT_FALSE(r.val_trace.empty());
    const double best = *std::min_element(r.val_trace.begin(), r.val_trace.end());
    EXPECT_EQ(r.val_trace[r.best_epoch], best) << to_string(m);
    const auto split = split_validation(x.rows(), cfg.validation_fraction, RandomStream(cfg.seed).child(1));
    EXPECT_DOUBLE_EQ(mean_abs_relative_error(r.model, x, y, split.val), best) << to_string(m);
    EXPECT_LE(r.epochs, cfg.max_epochs);
  }
}

TEST(Train, BitIdenticalReruns) {
  const Dataset ds = synthesize_dataset(40, {}, 0.03, Fluid::Sodium, 2);
  const auto norm = fit_normalizer(ds);
  TrainConfig cfg;
  cfg.method = TrainMethod::Adam;
  cfg.seed = 77;
  cfg.max_epochs = 30;
  const auto init = init_mlp(topo_of({4}), 7);
  const auto a = train(init, norm.inputs(ds), ds.targets(), cfg);
  const auto b = train(init, norm.inputs(ds), ds.targets(), cfg);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.train_trace, b.train_trace);
}

TEST(Train, FrozenParametersStayPut) {
  const Dataset ds = synthesize_dataset(30, {}, 0.03, Fluid::Sodium, 2);
  const auto norm = fit_normalizer(ds);
  const auto init = init_mlp(topo_of({3, 2}), 1);
  for (TrainMethod m : {TrainMethod::Lm, TrainMethod::Adam}) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.max_epochs = 20;
    cfg.frozen.assign(init.params.size(), 0);
    std::fill(cfg.frozen.begin(), cfg.frozen.begin() + static_cast<std::ptrdiff_t>(init.weight_offset(1)), 1);
    const auto r = train(init, norm.inputs(ds), ds.targets(), cfg);
    for (std::size_t k = 0; k < init.weight_offset(1); ++k) EXPECT_EQ(r.model.params[k], init.params[k]);
    EXPECT_NE(r.model.params, init.params);
  }
}

TEST(Train, LmFitsSmoothData) {
  const Dataset ds = synthesize_dataset(60, {}, 0.0, Fluid::Sodium, 3);
  const auto norm = fit_normalizer(ds);
  TrainConfig cfg;
  cfg.max_epochs = 300;
  const auto init = init_mlp(topo_of({6}), 3);
  const auto r = train(init, norm.inputs(ds), ds.targets(), cfg);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  EXPECT_LT(mean_abs_relative_error(r.model, norm.inputs(ds), ds.targets(), all), 0.02);
}

TEST(Mlp, JsonRoundTrip) {
  const Dataset ds = synthesize_dataset(10, {}, 0.0, Fluid::Sodium, 1);
  auto m = init_mlp(topo_of({3, 2}), 5);
  m.normalizer = fit_normalizer(ds);
  const auto back = mlp_from_json(to_json(m));
  EXPECT_EQ(back.topology, m.topology);
  EXPECT_EQ(back.params, m.params);
  EXPECT_DOUBLE_EQ(predict(back, ds[3]), predict(m, ds[3]));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.patience = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.method = TrainMethod::Sgd;
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(train_method_from_string("newton"), std::invalid_argument);
}
