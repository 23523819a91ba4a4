#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "drsfi/train.hpp"
#include "oracles.hpp"

using namespace drsfi;

namespace {

DummyModelConfig small_cfg() {
  DummyModelConfig c;
  c.mlp_depth = 1;
  c.dense_dim = 8;
  c.mlp_hidden = 8;
  c.embed_dim = 4;
  c.sparse_dim = 40;
  return c;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto cfg = small_cfg();
  const auto m = build_ctr(cfg, false, 1);
  const auto data = gen_labeled(500, cfg, 0.1, 1.0, 1);
  TrainConfig tc;
  tc.learning_rate = 0.0f;
  tc.epochs = 2;
  const auto res = train_ctr(m, data, tc);
  EXPECT_TRUE(res.model.bit_equal(m));
}

TEST(Train, RandomLabelsGiveChanceTestAuc) {
  const auto cfg = small_cfg();
  const auto data = gen_labeled(20000, cfg, 0.1, std::numeric_limits<double>::infinity(), 2);
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 2;
  const auto res = train_ctr(build_ctr(cfg, false, 2), data, tc);
  const auto split = split_8_1_1(data.size(), tc.seed);
  EXPECT_NEAR(validation_auc(res.model, subset(data, split.test)), 0.5, 0.03);
}

TEST(Train, LearnsPlantedSignal) {
  const auto cfg = small_cfg();
  const auto data = gen_labeled(5000, cfg, 0.1, 1.0, 3);
  TrainConfig tc;
  tc.learning_rate = 0.3f;
  tc.epochs = 10;
  tc.seed = 3;
  const auto m = build_ctr(cfg, false, 3);
  const auto split = split_8_1_1(data.size(), tc.seed);
  const auto test = subset(data, split.test);
  const double before = validation_auc(m, test);
  const auto res = train_ctr(m, data, tc);
  const double after = validation_auc(res.model, test);
  EXPECT_GT(after, before + 0.15);
  EXPECT_GT(after, 0.72);
  EXPECT_GE(res.epochs_run, 1u);
  EXPECT_LE(res.epochs_run, tc.epochs);
}

TEST(Train, LossMatchesDoubleReference) {
  for (const bool fm : {false, true}) {
    const auto cfg = small_cfg();
    const auto m = build_ctr(cfg, fm, 4);
    const auto batch = gen_labeled(32, cfg, 0.1, 1.0, 4);
    const double ref = oracle::loss(oracle::widen(m), m, batch);
    EXPECT_NEAR(loss_and_gradients(m, batch, nullptr), ref, 1e-5 * std::max(1.0, ref));
  }
}

TEST(Train, GradientsMatchFiniteDifferences) {
  DummyModelConfig cfg{2, 8, 4, 6, 12};
  for (const bool fm : {false, true}) {
    const auto m = build_ctr(cfg, fm, 5);
    const auto batch = gen_labeled(16, cfg, 0.25, 1.0, 5);
    auto grads = zero_gradients(m);
    loss_and_gradients(m, batch, &grads);
    const auto base = oracle::widen(m);
    CounterRng rng(5);
    std::size_t checked = 0;
    for (std::size_t p = 0; p < base.size(); ++p)
      for (int k = 0; k < 6; ++k) {
        const std::size_t i = rng.below(base[p].size());
        const double h = 1e-3;
        auto plus = base, minus = base;
        plus[p][i] += h;
        minus[p][i] -= h;
        const double fd = (oracle::loss(plus, m, batch) - oracle::loss(minus, m, batch)) / (2 * h);
        const double an = grads[p][i];
        EXPECT_NEAR(an, fd, 1e-2 * std::max(std::fabs(an), std::fabs(fd)) + 1e-6)
            << (fm ? "fm " : "") << m.parameter(p).name << "[" << i << "]";
        ++checked;
      }
    EXPECT_GE(checked, 60u);
  }
}

TEST(Train, NonFiniteLossAborts) {
  const auto cfg = small_cfg();
  auto m = build_ctr(cfg, false, 6);
  m.mutable_value(*m.index_of("ctr/top.1.bias"))[0] = std::numeric_limits<float>::quiet_NaN();
  const auto data = gen_labeled(200, cfg, 0.1, 1.0, 6);
  TrainConfig tc;
  tc.epochs = 1;
  EXPECT_THROW(train_ctr(m, data, tc), TrainingError);
}

TEST(Train, RejectsDummyAndUnlabeled) {
  const auto cfg = small_cfg();
  const auto data = gen_labeled(100, cfg, 0.1, 1.0, 7);
  EXPECT_THROW(train_ctr(build_dummy(cfg, 7), data, {}), ConfigError);
  const auto plain = gen_batch(10, cfg.dense_dim, cfg.sparse_dim, 0.1, 7);
  EXPECT_THROW(loss_and_gradients(build_ctr(cfg, false, 7), plain, nullptr), ConfigError);
}
