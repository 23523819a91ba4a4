#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "drsfi/datagen.hpp"
#include "oracles.hpp"

using namespace drsfi;

namespace {

double planted_auc(const SyntheticBatch& b, const DummyModelConfig& cfg, double sparsity, std::uint64_t seed) {
  const auto z = PlantedModel::draw(cfg, sparsity, seed).logits(b);
  return oracle::pairwise_auc(std::vector<double>(z.begin(), z.end()), b.labels);
}

DummyModelConfig small_cfg() {
  DummyModelConfig c;
  c.dense_dim = 16;
  c.sparse_dim = 200;
  c.embed_dim = 8;
  c.mlp_hidden = 8;
  return c;
}

}  // namespace

TEST(GenBatch, ActiveCountMatchesBinomialMean) {
  const std::size_t n = 10000, v = 8192;
  const double p = 0.01;
  const auto b = gen_batch(n, 4, v, p, 1);
  double sum = 0.0;
  for (const auto& s : b.sparse) {
    ASSERT_TRUE(std::is_sorted(s.begin(), s.end()));
    ASSERT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
    for (const auto f : s) ASSERT_LT(f, v);
    sum += static_cast<double>(s.size());
  }
  const double mean = v * p, sigma = std::sqrt(v * p * (1 - p) / n);
  EXPECT_NEAR(sum / n, mean, 3.0 * sigma);
}

TEST(GenBatch, EveryIndexIsEquallyLikely) {
  const std::size_t n = 20000, v = 10;
  const double p = 0.3;
  const auto b = gen_batch(n, 1, v, p, 2);
  std::vector<double> hits(v, 0.0);
  for (const auto& s : b.sparse)
    for (const auto f : s) hits[f] += 1.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const double h : hits) EXPECT_NEAR(h, n * p, 4.0 * sigma);
}

TEST(GenBatch, DenseFeaturesAreStandardNormal) {
  const auto b = gen_batch(2000, 64, 100, 0.05, 3);
  double sum = 0.0, sq = 0.0;
  for (const float x : b.dense.data()) {
    sum += x;
    sq += static_cast<double>(x) * x;
  }
  const double n = static_cast<double>(b.dense.size());
  EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(GenBatch, SameSeedSameBatchAndPrefixProperty) {
  const auto a = gen_batch(50, 8, 300, 0.02, 9);
  EXPECT_TRUE(a == gen_batch(50, 8, 300, 0.02, 9));
  EXPECT_FALSE(a == gen_batch(50, 8, 300, 0.02, 10));
  const auto longer = gen_batch(51, 8, 300, 0.02, 9);
  std::vector<std::size_t> first(50);
  for (std::size_t i = 0; i < 50; ++i) first[i] = i;
  EXPECT_TRUE(subset(longer, first) == a);
}

TEST(GenBatch, InvalidArgumentsThrow) {
  EXPECT_THROW(gen_batch(1, 1, 1, 0.0, 0), ConfigError);
  EXPECT_THROW(gen_batch(1, 1, 1, 1.0, 0), ConfigError);
  EXPECT_THROW(gen_batch(1, 1, 1, -0.1, 0), ConfigError);
  EXPECT_THROW(gen_batch(1, 1, 1, std::numeric_limits<double>::quiet_NaN(), 0), ConfigError);
  EXPECT_THROW(gen_batch(1, 0, 1, 0.5, 0), ConfigError);
  EXPECT_EQ(gen_batch(0, 1, 1, 0.5, 0).size(), 0u);
}

TEST(GenLabeled, ZeroNoiseIsSeparable) {
  const auto cfg = small_cfg();
  const auto b = gen_labeled(2000, cfg, 0.05, 0.0, 4);
  EXPECT_DOUBLE_EQ(planted_auc(b, cfg, 0.05, 4), 1.0);
}

TEST(GenLabeled, HugeNoiseIsUninformative) {
  const auto cfg = small_cfg();
  const auto b = gen_labeled(4000, cfg, 0.05, std::numeric_limits<double>::infinity(), 5);
  EXPECT_NEAR(planted_auc(b, cfg, 0.05, 5), 0.5, 0.03);
  const auto c = gen_labeled(4000, cfg, 0.05, 1e6, 5);
  EXPECT_NEAR(planted_auc(c, cfg, 0.05, 5), 0.5, 0.03);
}

TEST(GenLabeled, UnitNoiseGivesLearnableButNoisyLabels) {
  DummyModelConfig cfg;
  cfg.dense_dim = 32;
  cfg.sparse_dim = 200;
  const auto b = gen_labeled(20000, cfg, 0.05, 1.0, 6);
  const double auc = planted_auc(b, cfg, 0.05, 6);
  EXPECT_GE(auc, 0.80);
  EXPECT_LE(auc, 0.95);
  const double positives = std::count(b.labels.begin(), b.labels.end(), 1);
  EXPECT_NEAR(positives / 20000.0, 0.5, 0.05);
}

TEST(GenLabeled, RejectsNegativeNoise) {
  EXPECT_THROW(gen_labeled(10, small_cfg(), 0.05, -1.0, 0), ConfigError);
}

TEST(Split, DisjointExhaustiveAndRoughlyEightOneOne) {
  const std::size_t n = 20000;
  const auto s = split_8_1_1(n, 7);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (const auto i : *part) EXPECT_TRUE(all.insert(i).second) << "index " << i << " appears twice";
  EXPECT_EQ(all.size(), n);
  EXPECT_EQ(*all.rbegin(), n - 1);
  EXPECT_NEAR(s.train.size() / double(n), 0.8, 0.02);
  EXPECT_NEAR(s.validation.size() / double(n), 0.1, 0.01);
  EXPECT_NEAR(s.test.size() / double(n), 0.1, 0.01);
}

TEST(BatchText, RoundTripLabeledAndUnlabeled) {
  const auto labeled = gen_labeled(30, small_cfg(), 0.05, 1.0, 8);
  std::stringstream a;
  write_batch(a, labeled);
  EXPECT_TRUE(read_batch(a) == labeled);

  const auto plain = gen_batch(30, 5, 40, 0.1, 8);
  std::stringstream b;
  write_batch(b, plain);
  EXPECT_TRUE(read_batch(b) == plain);
}

TEST(BatchText, MalformedInputThrows) {
  std::stringstream missing("1\t0.5\n");
  EXPECT_THROW(read_batch(missing), LoadError);
  std::stringstream width("1\t0.5,1\t3\n0\t0.5\t\n");
  EXPECT_THROW(read_batch(width), LoadError);
  std::stringstream mixed("1\t0.5\t3\n\t0.5\t\n");
  EXPECT_THROW(read_batch(mixed), LoadError);
}
