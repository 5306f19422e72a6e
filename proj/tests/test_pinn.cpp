#include <gtest/gtest.h>

#include <algorithm>

#include "nusselt/dataset.hpp"
#include "nusselt/pinn.hpp"

using namespace nusselt;

namespace {

double max_rel_error(const Vector& a, const Vector& b) {
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    err = std::max(err, std::abs(a[i] - b[i]));
  }
  return err / std::max(scale, 1e-12);
}

PinnTrainOptions small_options() {
  PinnTrainOptions opt;
  opt.widths = {8, 6};
  opt.train.learning_rate = 0.01;
  opt.train.max_epochs = 80;
  opt.train.seed = 5;
  return opt;
}

}  // namespace

TEST(PinnLoss, HandArithmetic) {
  PhysicsTargets pt;
  pt.normalized = {0.7, 0.7};
  pt.raw = {3.0, 3.0};
  const Vector labels{2, 4}, preds{1, 5}, pcs{0.5, 0.5};
  EXPECT_NEAR(pinn_loss(preds, pcs, labels, pt, PinnLossMode::Literal), 0.415, 1e-12);
  // weighted: 0.375 + mean(pc) * mean(|3-1|/3, |3-5|/3)
  EXPECT_NEAR(pinn_loss(preds, pcs, labels, pt, PinnLossMode::Weighted), 0.375 + 0.5 * (2.0 / 3.0), 1e-12);
}

TEST(PinnLoss, VanishesAtPerfectFit) {
  PhysicsTargets pt;
  pt.normalized = {0.2, 0.9, 0.4};
  pt.raw = {1, 2, 3};
  const Vector labels{2.5, 3.1, 2.8};
  EXPECT_EQ(pinn_loss(labels, pt.normalized, labels, pt, PinnLossMode::Literal), 0.0);
}

TEST(PinnLoss, LiteralLossBoundsMape) {
  RandomStream rng(3);
  PhysicsTargets pt;
  Vector labels, preds, pcs;
  double mape = 0.0;
  for (int i = 0; i < 20; ++i) {
    labels.push_back(rng.uniform(2, 4));
    preds.push_back(rng.uniform(2, 4));
    pcs.push_back(rng.uniform());
    pt.normalized.push_back(rng.uniform());
    mape += std::abs((labels.back() - preds.back()) / labels.back()) / 20.0;
  }
  EXPECT_GE(pinn_loss(preds, pcs, labels, pt, PinnLossMode::Literal), mape);
}

TEST(PinnLoss, Errors) {
  PhysicsTargets pt;
  pt.normalized = {0.5};
  EXPECT_THROW(pinn_loss(Vector{1.0}, Vector{0.5}, Vector{0.0}, pt, PinnLossMode::Literal), NonPositiveLabel);
  EXPECT_THROW(pinn_loss(Vector{1.0, 2.0}, Vector{0.5}, Vector{1.0}, pt, PinnLossMode::Literal),
               std::invalid_argument);
}

TEST(PinnForward, HeadsAtKnownPreActivations) {
  PinnModel m = init_pinn({2}, 1, 0.0, 1);
  std::fill(m.pc_head.begin(), m.pc_head.end(), 0.0);
  EXPECT_DOUBLE_EQ(pinn_forward(m, Vector{0.4}).pc, 0.5);
  // prediction head: zero weights, bias -3 -> ReLU clamps to 0
  const std::size_t out = m.net.topology.layer_count() - 1;
  for (std::size_t k = m.net.weight_offset(out); k < m.net.bias_offset(out); ++k) m.net.params[k] = 0.0;
  m.net.params[m.net.bias_offset(out)] = -3.0;
  EXPECT_EQ(pinn_forward(m, Vector{0.4}).prediction, 0.0);
}

TEST(PinnInit, TrunkMatchesPlainHeInit) {
  const auto p = init_pinn({5, 4}, 17, 2.5);
  auto plain = init_mlp(pinn_topology({5, 4}), 17, InitScheme::HeUniform);
  plain.params[plain.bias_offset(2)] = 2.5;
  EXPECT_EQ(p.net.params, plain.params);
  EXPECT_EQ(p.pc_head.size(), 5u);
  EXPECT_EQ(p.pc_head.back(), 0.0);
}

TEST(PinnObjective, GradientMatchesFiniteDifferences) {
  RandomStream rng(41);
  const Dataset ds = synthesize_dataset(12, {}, 0.02, Fluid::Sodium, 8);
  const auto norm = fit_normalizer(ds);
  const Matrix x = norm.inputs(ds);
  const Vector y = ds.targets();
  int checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    PinnModel m = init_pinn({5, 4}, static_cast<std::uint64_t>(trial), 3.0);
    m.mode = trial % 2 ? PinnLossMode::Weighted : PinnLossMode::Literal;
    for (double& v : m.pc_head) v = rng.uniform(-1, 1);
    m.physics_min = 2.0;
    m.physics_max = 4.0;
    const PhysicsTargets pt = physics_targets(m, ds);
    // skip draws that put a pre-activation near a ReLU kink
    bool near_kink = false;
    ForwardTrace t;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      forward_trace(m.net, x.row(r), t);
      for (const auto& layer : t.pre)
        for (double v : layer) near_kink |= std::abs(v) < 1e-3;
    }
    if (near_kink) continue;
    const std::vector<std::size_t> rows{0, 2, 3, 5, 7, 8, 11};
    const double w = 0.7;
    Vector grad(pinn_flatten(m).size(), 0.0);
    pinn_objective(m, x, y, pt, rows, w, grad);
    PinnModel probe = m;
    Vector scratch(grad.size());
    const Vector fd = finite_diff_grad(
        [&](std::span<const double> p) {
          pinn_assign(probe, p);
          std::fill(scratch.begin(), scratch.end(), 0.0);
          return pinn_objective(probe, x, y, pt, rows, w, scratch);
        },
        pinn_flatten(m), 1e-6);
    EXPECT_LT(max_rel_error(grad, fd), 1e-3) << "trial " << trial << " " << to_string(m.mode);
    ++checked;
  }
  EXPECT_GE(checked, 6);
}

TEST(PinnTrain, ZeroPhysicsWeightReducesToPlainNetwork) {
  const Dataset ds = synthesize_dataset(50, {}, 0.03, Fluid::Sodium, 4);
  const auto norm = fit_normalizer(ds);
  PinnTrainOptions opt = small_options();
  opt.physics_weight = 0.0;
  const std::uint64_t seed = 23;
  const auto pinn = pinn_train(ds, norm, opt, seed);

  const Vector y = ds.targets();
  const auto split = split_validation(ds.size(), opt.train.validation_fraction, RandomStream(opt.train.seed).child(1));
  double label_mean = 0.0;
  for (std::size_t r : split.train) label_mean += y[r];
  label_mean /= static_cast<double>(split.train.size());
  const auto plain = train(init_pinn(opt.widths, seed, label_mean).net, norm.inputs(ds), y, opt.train);

  EXPECT_EQ(pinn.train_trace, plain.train_trace);
  EXPECT_EQ(pinn.val_trace, plain.val_trace);
  EXPECT_EQ(pinn.model.net.params, plain.model.params);
}

TEST(PinnTrain, NoiseFreeDataIsLearnable) {
  const Dataset ds = synthesize_dataset(87, {}, 0.0, Fluid::Sodium, 2024);
  const auto norm = fit_normalizer(ds);
  PinnTrainOptions opt;
  opt.train.learning_rate = 0.01;
  opt.train.seed = 1;
  opt.train.patience = 30;
  const auto r = pinn_train(ds, norm, opt, 1);
  ASSERT_FALSE(r.nonfinite_loss);
  EXPECT_LT(r.train_trace[r.best_epoch], 0.02);
}

TEST(PinnTrain, DeterministicAndPcInUnitInterval) {
  const Dataset ds = synthesize_dataset(40, {}, 0.03, Fluid::Sodium, 6);
  const auto norm = fit_normalizer(ds);
  const auto opt = small_options();
  const auto a = pinn_train(ds, norm, opt, 3), b = pinn_train(ds, norm, opt, 3);
  EXPECT_EQ(a.train_trace, b.train_trace);
  EXPECT_EQ(pinn_flatten(a.model), pinn_flatten(b.model));
  const Matrix x = norm.inputs(ds);
  Vector pcs;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto o = pinn_forward(a.model, x.row(r));
    EXPECT_GT(o.pc, 0.0);
    EXPECT_LT(o.pc, 1.0);
    EXPECT_DOUBLE_EQ(o.prediction, pinn_predict(a.model, ds[r]));
    pcs.push_back(o.pc);
  }
  const auto d = pc_distribution(pcs, 10);
  std::size_t total = 0;
  for (const auto& bin : d.bins) total += bin.count;
  EXPECT_EQ(total, pcs.size());
  EXPECT_NEAR(d.mean, mean(pcs), 1e-15);
}

TEST(PinnTrain, RejectsLevenbergMarquardtAndBadLabels) {
  const Dataset ds = synthesize_dataset(10, {}, 0.0, Fluid::Sodium, 1);
  const auto norm = fit_normalizer(ds);
  PinnTrainOptions opt;
  opt.train.method = TrainMethod::Lm;
  EXPECT_THROW(pinn_train(ds, norm, opt, 1), std::invalid_argument);
  Dataset bad = ds;
  bad.points[0].nu_ave = 0.0;
  EXPECT_THROW(pinn_train(bad, norm, PinnTrainOptions{}, 1), NonPositiveLabel);
}

TEST(PinnModel, JsonRoundTrip) {
  const Dataset ds = synthesize_dataset(20, {}, 0.03, Fluid::Sodium, 6);
  const auto norm = fit_normalizer(ds);
  auto opt = small_options();
  opt.mode = PinnLossMode::Weighted;
  opt.train.max_epochs = 3;
  const auto m = pinn_train(ds, norm, opt, 2).model;
  const auto back = pinn_from_json(to_json(m));
  EXPECT_EQ(pinn_flatten(back), pinn_flatten(m));
  EXPECT_EQ(back.mode, PinnLossMode::Weighted);
  EXPECT_EQ(back.physics_min, m.physics_min);
  EXPECT_DOUBLE_EQ(pinn_predict(back, ds[4]), pinn_predict(m, ds[4]));
}
