#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "drsfi/rng.hpp"
#include "drsfi/tensor.hpp"
#include "oracles.hpp"

using namespace drsfi;

namespace {

std::vector<float> normals(CounterRng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  EXPECT_THROW(Tensor(std::vector<std::size_t>{2, 2, 2}), DimensionError);
  EXPECT_THROW(Tensor(std::vector<std::size_t>{}), DimensionError);
  const Tensor t({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.size(), 6u);
}

TEST(Tensor, WordRoundTripIsLosslessForEveryClassOfPattern) {
  CounterRng rng(1);
  Tensor t(std::vector<std::size_t>{1});
  const std::vector<std::uint32_t> specials{0x00000000u, 0x80000000u, 0x7F800000u, 0xFF800000u, 0x7FC00000u,
                                            0x7F800001u, 0xFFFFFFFFu, 0x00000001u, 0x007FFFFFu};
  for (const auto w : specials) {
    t.set_word(0, w);
    EXPECT_EQ(t.word(0), w);
  }
  for (int i = 0; i < 100000; ++i) {
    const auto w = static_cast<std::uint32_t>(rng());
    t.set_word(0, w);
    ASSERT_EQ(t.word(0), w);
  }
}

TEST(Tensor, FlipTogglesExactlyOneBit) {
  Tensor t = Tensor::vector({0.625f, -3.0f});
  t.flip(0, 30);
  EXPECT_EQ(t.word(0), to_word(0.625f) ^ 0x40000000u);
  EXPECT_EQ(t[1], -3.0f);
  t.flip(0, 30);
  EXPECT_EQ(t[0], 0.625f);
}

TEST(Gemm, IdentityReturnsOperand) {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor b = Tensor::matrix(2, 3, {1.5f, -2, 3, 4, 5e-3f, -6});
  EXPECT_TRUE(gemm(eye, b).bit_equal(b));
}

TEST(Gemm, SmallProduct) {
  const Tensor c = gemm(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  EXPECT_EQ(c.rows(), 1u);
  EXPECT_EQ(c.cols(), 1u);
  EXPECT_EQ(c[0], 11.0f);
}

TEST(Gemm, ShapeMismatchThrows) {
  EXPECT_THROW(gemm(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), DimensionError);
  EXPECT_THROW(gemm(Tensor::vector({1, 2}), Tensor::zeros(2, 1)), DimensionError);
}

TEST(Gemm, MatchesTripleLoopBitExactly) {
  for (std::uint64_t t = 0; t < 300; ++t) {
    CounterRng rng(derive_seed({11, t}));
    const std::size_t m = 1 + rng.below(16), k = 1 + rng.below(16), n = 1 + rng.below(16);
    const auto av = normals(rng, m * k), bv = normals(rng, k * n);
    const Tensor c = gemm(Tensor::matrix(m, k, av), Tensor::matrix(k, n, bv));
    const auto ref = oracle::gemm(av, bv, m, k, n);
    for (std::size_t i = 0; i < m * n; ++i) ASSERT_EQ(c.word(i), to_word(ref[i])) << "case " << t << " elem " << i;
  }
}

TEST(Gemm, NonFinitePropagates) {
  const Tensor a = Tensor::matrix(1, 2, {std::numeric_limits<float>::infinity(), 1});
  const Tensor c = gemm(a, Tensor::matrix(2, 2, {1, 0, 0, 1}));
  EXPECT_TRUE(std::isinf(c[0]));
  EXPECT_TRUE(std::isnan(c[1]));  // inf * 0
}

TEST(EmbeddingBag, EmptyAndSingleAndDuplicate) {
  const Tensor table = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<std::uint32_t> none{}, one{1}, dup{0, 0};
  const Tensor e = embedding_bag(table, none);
  EXPECT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0], 0.0f);
  EXPECT_EQ(e[1], 0.0f);
  const Tensor r = embedding_bag(table, one);
  EXPECT_EQ(r[0], 3.0f);
  EXPECT_EQ(r[1], 4.0f);
  const Tensor d = embedding_bag(table, dup);
  EXPECT_EQ(d[0], 2.0f);
  EXPECT_EQ(d[1], 4.0f);
}

TEST(EmbeddingBag, OutOfRangeIndexThrows) {
  const Tensor table = Tensor::zeros(3, 2);
  const std::vector<std::uint32_t> bad{0, 3};
  EXPECT_THROW(embedding_bag(table, bad), IndexError);
}

TEST(EmbeddingBag, ConcatenationSplitsIntoSumOfParts) {
  // Exact on integer-valued tables, where every partial sum is representable.
  CounterRng rng(5);
  std::vector<float> vals(50 * 8);
  for (auto& v : vals) v = static_cast<float>(static_cast<int>(rng.below(200)) - 100);
  const Tensor table = Tensor::matrix(50, 8, vals);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::uint32_t> f1(rng.below(6)), f2(rng.below(6));
    for (auto& f : f1) f = static_cast<std::uint32_t>(rng.below(50));
    for (auto& f : f2) f = static_cast<std::uint32_t>(rng.below(50));
    std::vector<std::uint32_t> both = f1;
    both.insert(both.end(), f2.begin(), f2.end());
    const Tensor whole = embedding_bag(table, both);
    const Tensor a = embedding_bag(table, f1), b = embedding_bag(table, f2);
    for (std::size_t j = 0; j < 8; ++j) ASSERT_EQ(whole[j], a[j] + b[j]);
  }
}

TEST(EmbeddingBag, BatchMatchesPerSample) {
  CounterRng rng(6);
  const Tensor table = Tensor::matrix(20, 4, normals(rng, 80));
  const std::vector<std::vector<std::uint32_t>> samples{{}, {3}, {1, 7, 19}, {0, 0}};
  const Tensor batch = embedding_bag_batch(table, samples);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Tensor one = embedding_bag(table, samples[s]);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(batch(s, j), one[j]);
  }
}

TEST(Activation, ReluAndSigmoidPointValues) {
  const float inf = std::numeric_limits<float>::infinity();
  const float nan = std::numeric_limits<float>::quiet_NaN();
  EXPECT_EQ(relu(-3.0f), 0.0f);
  EXPECT_EQ(relu(2.5f), 2.5f);
  EXPECT_EQ(relu(inf), inf);
  EXPECT_TRUE(std::isnan(relu(nan)));
  EXPECT_EQ(sigmoid(0.0f), 0.5f);
  EXPECT_TRUE(std::isnan(sigmoid(nan)));
  EXPECT_EQ(sigmoid(inf), 1.0f);
  EXPECT_EQ(sigmoid(-inf), 0.0f);
}

TEST(Activation, ClippedDispatchUsesRule) {
  ClipRule rule;
  rule.mode = ClipMode::clamp;
  rule.threshold = 6.0f;
  rule.range.reset();
  const Tensor x = Tensor::vector({-1, 3, 7, std::numeric_limits<float>::quiet_NaN()});
  const Tensor y = apply_activation(x, Activation::clipped, rule);
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[1], 3.0f);
  EXPECT_EQ(y[2], 6.0f);
  EXPECT_EQ(y[3], 0.0f);
}

TEST(FmInteraction, TrivialCases) {
  EXPECT_EQ(fm_interaction(std::vector<Tensor>{}), 0.0f);
  EXPECT_EQ(fm_interaction(std::vector<Tensor>{Tensor::vector({1, 2, 3})}), 0.0f);
  EXPECT_EQ(fm_interaction(std::vector<Tensor>{Tensor::vector({1, 0}), Tensor::vector({0, 1})}), 0.0f);
}

TEST(FmInteraction, MatchesPairwiseDots) {
  for (std::uint64_t t = 0; t < 300; ++t) {
    CounterRng rng(derive_seed({12, t}));
    const std::size_t k = t == 0 ? 5 : 1 + rng.below(10), d = t == 0 ? 4 : 1 + rng.below(16);
    std::vector<std::vector<float>> raw(k);
    std::vector<Tensor> vs;
    for (auto& v : raw) {
      v = normals(rng, d);
      vs.push_back(Tensor::vector(v));
    }
    const auto ref = oracle::pairwise_fm(raw);
    ASSERT_LE(std::fabs(fm_interaction(vs) - ref.value), 1e-5 * std::max(ref.magnitude, 1e-30)) << "case " << t;
  }
}
