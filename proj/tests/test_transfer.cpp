#include <gtest/gtest.h>

#include <set>

#include "nusselt/transfer.hpp"

using namespace nusselt;

namespace {

MlpModel source_net(std::uint64_t seed = 11) {
  MlpTopology t;
  t.hidden = kSourceWidths;
  return init_mlp(t, seed);
}

}  // namespace

TEST(TransferInit, CopiesLeadingLayers) {
  const auto src = source_net();
  const auto m = transfer_init(src, TransferPlan{1, {8}, false}, 3);
  EXPECT_EQ(m.topology.hidden, (std::vector<std::size_t>{3, 8}));
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t i = 0; i < kInputCount; ++i) EXPECT_EQ(m.weight(0, o, i), src.weight(0, o, i));
    EXPECT_EQ(m.bias(0, o), src.bias(0, o));
  }
  const auto both = transfer_init(src, TransferPlan{2, {}, false}, 3);
  EXPECT_EQ(both.topology.hidden, kSourceWidths);
  for (std::size_t k = 0; k < both.weight_offset(2); ++k) EXPECT_EQ(both.params[k], src.params[k]);
}

TEST(TransferInit, KZeroIsPlainInit) {
  const auto src = source_net();
  const auto m = transfer_init(src, TransferPlan{0, {8}, false}, 42);
  MlpTopology t;
  t.hidden = {8};
  EXPECT_EQ(m.params, init_mlp(t, 42).params);
  const std::set<double> source_values(src.params.begin(), src.params.end());
  for (double v : m.params) EXPECT_FALSE(source_values.count(v));
}

TEST(TransferInit, IdempotentPerSeed) {
  const auto src = source_net();
  const TransferPlan plan{1, {4, 2}, false};
  EXPECT_EQ(transfer_init(src, plan, 9), transfer_init(src, plan, 9));
  EXPECT_NE(transfer_init(src, plan, 9).params, transfer_init(src, plan, 10).params);
}

TEST(TransferInit, RejectsTooDeepPlan) {
  EXPECT_THROW(transfer_init(source_net(), TransferPlan{3, {}, false}, 1), IncompatibleTopology);
}

TEST(TransferFamily, FreezeKeepsTransferredLayers) {
  const Dataset ds = synthesize_dataset(40, {}, 0.02, Fluid::Sodium, 3);
  const auto norm = fit_normalizer(ds);
  const auto src = source_net();
  const TransferPlan plan{1, {4}, true};
  const auto init = transfer_init(src, plan, 5);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.frozen = transfer_mask(init, plan);
  const auto r = train(init, norm.inputs(ds), ds.targets(), cfg);
  for (std::size_t k = 0; k < init.weight_offset(1); ++k) EXPECT_EQ(r.model.params[k], src.params[k]);

  const auto fam = transfer_family(std::make_shared<const MlpModel>(src), plan, TrainConfig{});
  EXPECT_EQ(fam.name, "tr-nn");
  const auto fitted = fam.fit(ds, norm, 5);
  EXPECT_TRUE(std::isfinite(fitted.predict(ds[0])));
}

TEST(TrainSource, WaterAnalogIsLearnable) {
  const Dataset water = synthesize_dataset(200, PhysicsParams::water_analog(), 0.0, Fluid::Water, 7);
  const auto src = train_source(water, 7);
  EXPECT_EQ(src.model.topology.hidden, kSourceWidths);
  EXPECT_EQ(src.cv.failed_folds, 0u);
  EXPECT_LT(src.cv.mean_mape, 0.05);
  EXPECT_TRUE(src.model.normalizer.has_value());
}

TEST(GaTransferSearch, SweepCoversEveryKAndBestIsMinimal) {
  const Dataset water = synthesize_dataset(80, PhysicsParams::water_analog(), 0.0, Fluid::Water, 1);
  const Dataset na = synthesize_dataset(30, {}, 0.03, Fluid::Sodium, 2);
  const auto src = train_source(water, 1, {}, 5).model;
  GaConfig ga;
  ga.population = 4;
  ga.generations = 3;
  TransferSearchSpace space;
  space.width_options = {2, 4};
  space.min_new_layers = 1;
  space.max_new_layers = 1;
  TrainConfig cfg;
  cfg.max_epochs = 20;
  const auto r = ga_transfer_search(src, na, ga, 4, space, cfg, 5);
  ASSERT_EQ(r.sweep.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(r.sweep[k].k, k);
    EXPECT_GE(r.sweep[k].cv_mape, r.best_mape);
  }
  double logged_min = std::numeric_limits<double>::infinity();
  for (const auto& t : r.ga.trials)
    if (!t.failed) logged_min = std::min(logged_min, t.mape);
  EXPECT_EQ(r.best_mape, logged_min);
  std::ostringstream csv;
  write_sweep_csv(csv, r.sweep);
  EXPECT_EQ(csv.str().rfind("k,plan,cv_mape\n", 0), 0u);
}
