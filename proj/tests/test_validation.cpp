#include <gtest/gtest.h>

#include <mutex>

#include "nusselt/families.hpp"
#include "nusselt/validation.hpp"

using namespace nusselt;

TEST(Metrics, HandArithmetic) {
  const auto m = error_metrics(Vector{2, 4}, Vector{1, 5});
  EXPECT_DOUBLE_EQ(m.mape, 0.375);
  EXPECT_DOUBLE_EQ(m.mse, 1.0);
  const auto z = error_metrics(Vector{2, 3}, Vector{2, 3});
  EXPECT_EQ(z.mape, 0.0);
  EXPECT_EQ(z.mse, 0.0);
}

TEST(Metrics, ScaleInvariantMape) {
  const Vector a{1.5, 2.5, 3.5}, p{1.4, 2.9, 3.0};
  Vector ca, cp;
  for (std::size_t i = 0; i < 3; ++i) {
    ca.push_back(7.0 * a[i]);
    cp.push_back(7.0 * p[i]);
  }
  EXPECT_NEAR(mape(ca, cp), mape(a, p), 1e-15);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(mape(Vector{1.0, 0.0}, Vector{1.0, 1.0}), ZeroActual);
  EXPECT_THROW(mape(Vector{1.0}, Vector{1.0, 2.0}), std::invalid_argument);
}

TEST(CrossValidate, ConstantFamilyOnConstantTargets) {
  Dataset ds = synthesize_dataset(20, {}, 0.0, Fluid::Sodium, 1);
  for (auto& p : ds.points) p.nu_ave = 3.0;
  const auto rep = cross_validate(constant_family(), ds, 10, 4);
  EXPECT_EQ(rep.mean_mape, 0.0);
  ASSERT_EQ(rep.folds.size(), 10u);
  for (const auto& f : rep.folds) EXPECT_EQ(f.eval_indices.size(), 2u);
}

TEST(CrossValidate, EveryPointEvaluatedOnceWithoutLeakage) {
  const Dataset ds = synthesize_dataset(37, {}, 0.02, Fluid::Sodium, 5);
  std::mutex mu;
  bool outside_unit = false, norm_matches = true;
  ModelFamily spy{"spy", {}, [&](const Dataset& train, const NormalizationParams& norm, std::uint64_t) {
                    std::lock_guard lock(mu);
                    norm_matches &= norm.min == fit_normalizer(train).min && norm.max == fit_normalizer(train).max;
                    return FittedModel{[&, norm](const DataPoint& p) {
                                         for (double v : norm.inputs(p)) outside_unit |= v < 0.0 || v > 1.0;
                                         return p.nu_ave;
                                       },
                                       0, nullptr};
                  }};
  const auto rep = cross_validate(spy, ds, 5, 2);
  std::vector<int> seen(ds.size(), 0);
  for (const auto& f : rep.folds)
    for (std::size_t i : f.eval_indices) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_TRUE(norm_matches);
  EXPECT_TRUE(outside_unit);
}

TEST(CrossValidate, FailedFoldsAreCounted) {
  const Dataset ds = synthesize_dataset(20, {}, 0.02, Fluid::Sodium, 5);
  int calls = 0;
  ModelFamily flaky{"flaky", {}, [&](const Dataset& train, const NormalizationParams&, std::uint64_t) {
                      if (calls++ % 2 == 0) throw std::runtime_error("boom");
                      const double m = mean(train.targets());
                      return FittedModel{[m](const DataPoint&) { return m; }, 0, nullptr};
                    }};
  const auto rep = cross_validate(flaky, ds, 4, 1);
  EXPECT_EQ(rep.failed_folds, 2u);
  EXPECT_EQ(rep.fold_mapes().size(), 2u);
  EXPECT_TRUE(std::isfinite(rep.mean_mape));
  const auto j = to_json(rep);
  EXPECT_TRUE(j.contains("warning"));
  EXPECT_EQ(j["folds"][0]["error"], "boom");
}

TEST(CrossValidate, JobsDoNotChangeResults) {
  const Dataset ds = synthesize_dataset(40, {}, 0.03, Fluid::Sodium, 8);
  const auto fam = nn_family({{"hidden", {4}}, {"max_epochs", 20}});
  EXPECT_EQ(to_json(cross_validate(fam, ds, 5, 3, 1)).dump(), to_json(cross_validate(fam, ds, 5, 3, 4)).dump());
}

TEST(MonteCarlo, ScriptedVarianceAndAudit) {
  std::vector<McRun> runs(3);
  const double preds[3] = {1.0, 1.2, 1.4};
  for (std::size_t r = 0; r < 3; ++r) {
    runs[r].predictions = {preds[r], 2.0};
    runs[r].mape = 0.1 * static_cast<double>(r + 1);
    runs[r].epochs = 10 * (r + 1);
  }
  const auto a = mc_aggregate(runs);
  EXPECT_NEAR(a.max_prediction_variance, 0.04, 1e-15);
  EXPECT_NEAR(a.mape_variance, 0.01, 1e-15);
  EXPECT_NEAR(a.mean_mape, 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(a.mean_epochs, 20.0);
  EXPECT_EQ(a.successful_runs, 3u);

  McReport rep;
  rep.runs = runs;
  rep.aggregates = a;
  EXPECT_TRUE(mc_audit(rep));
  rep.runs[1].predictions[0] = 1.25;
  EXPECT_FALSE(mc_audit(rep));
}

TEST(MonteCarlo, DeterministicFamilyHasZeroVariance) {
  const Dataset ds = synthesize_dataset(30, {}, 0.03, Fluid::Sodium, 4);
  const nlohmann::json spec = to_json(KernelSpec{});
  const auto rep = monte_carlo(gp_family({{"spec", spec}}), ds, HoldoutSpec{0.2, 1}, 4, 7);
  EXPECT_EQ(rep.aggregates.max_prediction_variance, 0.0);
  EXPECT_EQ(rep.aggregates.successful_runs, 4u);
  EXPECT_EQ(rep.holdout_indices.size(), 6u);
  EXPECT_TRUE(mc_audit(rep));
}

TEST(MonteCarlo, ReproducibleUnderConcurrency) {
  const Dataset ds = synthesize_dataset(40, {}, 0.03, Fluid::Sodium, 4);
  const auto fam = nn_family({{"hidden", {4}}, {"max_epochs", 30}});
  const auto a = monte_carlo(fam, ds, HoldoutSpec{0.1, 2}, 6, 11, 1);
  const auto b = monte_carlo(fam, ds, HoldoutSpec{0.1, 2}, 6, 11, 3);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(a.runs[r].seed, mix_seed(11, r));
  EXPECT_GT(a.aggregates.max_prediction_variance, 0.0);
}

TEST(Margin, Counting) {
  EXPECT_EQ(holdout_margin(Vector{1, 2}, Vector{1.01, 2.02}).fraction_within, 1.0);
  const auto r = holdout_margin(Vector{1, 1, 1, 1}, Vector{1.0, 1.05, 0.95, 1.2});
  EXPECT_EQ(r.fraction_within, 0.75);
  EXPECT_NEAR(r.worst_relative_error, 0.2, 1e-15);
  EXPECT_FALSE(r.points[3].within);
}

TEST(Margin, MonotoneInMargin) {
  RandomStream rng(3);
  Vector a, p;
  for (int i = 0; i < 30; ++i) {
    a.push_back(rng.uniform(2, 4));
    p.push_back(a.back() * rng.uniform(0.8, 1.2));
  }
  double prev = 0.0;
  for (double m = 0.0; m <= 0.25; m += 0.01) {
    const double f = holdout_margin(a, p, m).fraction_within;
    EXPECT_GE(f, prev);
    prev = f;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Families, PhysicsFamilyReproducesCorrelation) {
  const Dataset ds = synthesize_dataset(15, {}, 0.0, Fluid::Sodium, 2);
  const auto rep = cross_validate(physics_family(), ds, 5, 1);
  EXPECT_LT(rep.mean_mape, 1e-12);
}

TEST(Families, UnknownKeysRejected) {
  EXPECT_THROW(nn_family({{"hiden", {4}}}), ConfigError);
  EXPECT_THROW(pinn_family({{"width", {4}}}), ConfigError);
  EXPECT_THROW(gp_family({{"kernal", "rbf"}}), ConfigError);
  EXPECT_THROW(svr_family({{"C", 1.0}}), ConfigError);
}
