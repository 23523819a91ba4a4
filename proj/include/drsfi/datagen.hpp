#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "drsfi/errors.hpp"
#include "drsfi/format.hpp"
#include "drsfi/model_config.hpp"
#include "drsfi/rng.hpp"
#include "drsfi/tensor.hpp"

namespace drsfi {

// Dense features as an [n x dense_dim] matrix, sparse features as per-sample sorted
// lists of active embedding rows, labels optional.
struct SyntheticBatch {
  Tensor dense;
  std::vector<std::vector<std::uint32_t>> sparse;
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return sparse.size(); }
  bool labeled() const noexcept { return !labels.empty(); }

  bool operator==(const SyntheticBatch& o) const {
    return dense.bit_equal(o.dense) && sparse == o.sparse && labels == o.labels;
  }
};

namespace detail {

enum class Stream : std::uint64_t { dense = 1, sparse = 2, label = 3, planted = 4, split = 5 };

inline CounterRng stream(std::uint64_t seed, Stream s, std::uint64_t index) {
  return CounterRng(derive_seed({seed, static_cast<std::uint64_t>(s), index}));
}

inline void check_sparsity(double sparsity) {
  if (!(sparsity > 0.0 && sparsity < 1.0))
    throw ConfigError("sparsity must lie strictly between 0 and 1, got " + format_real(sparsity));
}

}  // namespace detail

// Every sample draws from its own counter stream, so a batch of n is a prefix of a
// batch of n + 1 under the same seed.
inline SyntheticBatch gen_batch(std::size_t n, std::size_t dense_dim, std::size_t sparse_dim,
                                double sparsity, std::uint64_t seed) {
  detail::check_sparsity(sparsity);
  if (dense_dim == 0 || sparse_dim == 0) throw ConfigError("gen_batch: dimensions must be >= 1");
  SyntheticBatch batch;
  batch.dense = Tensor::zeros(n, dense_dim);
  batch.sparse.resize(n);
  const double log_miss = std::log1p(-sparsity);
  for (std::size_t i = 0; i < n; ++i) {
    auto dense_rng = detail::stream(seed, detail::Stream::dense, i);
    auto row = batch.dense.row(i);
    for (auto& v : row) v = static_cast<float>(dense_rng.normal());

    // Geometric gaps between successes of independent Bernoulli(sparsity) trials.
    auto sparse_rng = detail::stream(seed, detail::Stream::sparse, i);
    auto& active = batch.sparse[i];
    double pos = -1.0;
    for (;;) {
      pos += std::floor(std::log(sparse_rng.uniform_positive()) / log_miss) + 1.0;
      if (pos >= static_cast<double>(sparse_dim)) break;
      active.push_back(static_cast<std::uint32_t>(pos));
    }
  }
  return batch;
}

// Hidden ground truth for labeled data: logit = w . dense + sum_{f active} u[f].
struct PlantedModel {
  std::vector<float> dense_weights;
  std::vector<float> sparse_weights;

  // Each of the two parts contributes logit variance ~2.
  static PlantedModel draw(const DummyModelConfig& cfg, double sparsity, std::uint64_t seed) {
    PlantedModel m;
    auto rng = detail::stream(seed, detail::Stream::planted, 0);
    const double dense_scale = std::sqrt(2.0 / static_cast<double>(cfg.dense_dim));
    const double expected_active = std::max(1.0, sparsity * static_cast<double>(cfg.sparse_dim));
    const double sparse_scale = std::sqrt(2.0 / expected_active);
    m.dense_weights.resize(cfg.dense_dim);
    for (auto& w : m.dense_weights) w = static_cast<float>(rng.normal() * dense_scale);
    m.sparse_weights.resize(cfg.sparse_dim);
    for (auto& u : m.sparse_weights) u = static_cast<float>(rng.normal() * sparse_scale);
    return m;
  }

  float logit(std::span<const float> dense, std::span<const std::uint32_t> active) const {
    float z = 0.0f;
    for (std::size_t j = 0; j < dense.size(); ++j) z += dense_weights[j] * dense[j];
    for (const auto f : active) z += sparse_weights[f];
    return z;
  }

  std::vector<float> logits(const SyntheticBatch& batch) const {
    std::vector<float> z(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) z[i] = logit(batch.dense.row(i), batch.sparse[i]);
    return z;
  }
};

// label = 1[logit + noise * L > 0] with L standard logistic, i.e.
// label ~ Bernoulli(sigmoid(logit / noise)). noise = 1 is Bernoulli(sigmoid(logit));
// noise = 0 thresholds the planted logit at 0; noise = inf makes labels independent.
inline SyntheticBatch gen_labeled(std::size_t n, const DummyModelConfig& cfg, double sparsity,
                                  double noise, std::uint64_t seed) {
  cfg.validate();
  if (!(noise >= 0.0)) throw ConfigError("gen_labeled: noise must be >= 0");
  SyntheticBatch batch = gen_batch(n, cfg.dense_dim, cfg.sparse_dim, sparsity, seed);
  const PlantedModel planted = PlantedModel::draw(cfg, sparsity, seed);
  batch.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = detail::stream(seed, detail::Stream::label, i);
    const double l = rng.logistic();
    const double z = planted.logit(batch.dense.row(i), batch.sparse[i]);
    const double latent = std::isinf(noise) ? l : z + noise * l;
    batch.labels[i] = latent > 0.0 ? 1 : 0;
  }
  return batch;
}

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// 8:1:1 by a hash of the sample index; disjoint and exhaustive.
inline DataSplit split_8_1_1(std::size_t n, std::uint64_t seed) {
  DataSplit s;
  const std::uint64_t key = derive_seed({seed, static_cast<std::uint64_t>(detail::Stream::split)});
  for (std::size_t i = 0; i < n; ++i) {
    const auto bucket = mix64(key ^ (i * kGoldenGamma)) % 10;
    if (bucket < 8) s.train.push_back(i);
    else if (bucket == 8) s.validation.push_back(i);
    else s.test.push_back(i);
  }
  return s;
}

inline SyntheticBatch subset(const SyntheticBatch& batch, std::span<const std::size_t> indices) {
  SyntheticBatch out;
  const std::size_t d = batch.dense.cols();
  out.dense = Tensor::zeros(indices.size(), d);
  out.sparse.reserve(indices.size());
  if (batch.labeled()) out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    const auto src = batch.dense.row(i);
    std::copy(src.begin(), src.end(), out.dense.row(k).begin());
    out.sparse.push_back(batch.sparse[i]);
    if (batch.labeled()) out.labels.push_back(batch.labels[i]);
  }
  return out;
}

// One sample per line: label (empty if unlabeled) TAB dense floats TAB sparse indices.
inline void write_batch(std::ostream& os, const SyntheticBatch& batch) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.labeled()) os << static_cast<int>(batch.labels[i]);
    os << '\t';
    const auto row = batch.dense.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << format_real(row[j]);
    os << '\t';
    for (std::size_t j = 0; j < batch.sparse[i].size(); ++j)
      os << (j ? "," : "") << batch.sparse[i][j];
    os << '\n';
  }
}

inline SyntheticBatch read_batch(std::istream& is) {
  std::vector<float> dense;
  std::size_t dense_dim = 0;
  SyntheticBatch batch;
  std::string line;
  std::size_t lineno = 0;
  bool any_label = false, any_unlabeled = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw LoadError("batch line " + std::to_string(lineno) + ": expected three tab-separated fields");
    const std::string_view sv(line);
    const auto label = sv.substr(0, t1);
    if (label.empty()) any_unlabeled = true;
    else {
      any_label = true;
      batch.labels.push_back(label == "1" ? 1 : 0);
    }
    std::size_t count = 0;
    auto fields = sv.substr(t1 + 1, t2 - t1 - 1);
    while (!fields.empty()) {
      const auto c = fields.find(',');
      dense.push_back(parse_real<float>(fields.substr(0, c)));
      ++count;
      fields = c == std::string_view::npos ? std::string_view{} : fields.substr(c + 1);
    }
    if (batch.sparse.empty()) dense_dim = count;
    else if (count != dense_dim)
      throw LoadError("batch line " + std::to_string(lineno) + ": dense width changed");
    auto& active = batch.sparse.emplace_back();
    auto idx = sv.substr(t2 + 1);
    while (!idx.empty()) {
      const auto c = idx.find(',');
      active.push_back(parse_integer<std::uint32_t>(idx.substr(0, c)));
      idx = c == std::string_view::npos ? std::string_view{} : idx.substr(c + 1);
    }
  }
  if (any_label && any_unlabeled) throw LoadError("batch mixes labeled and unlabeled samples");
  batch.dense = Tensor::matrix(batch.sparse.size(), dense_dim, std::move(dense));
  return batch;
}

}  // namespace drsfi
