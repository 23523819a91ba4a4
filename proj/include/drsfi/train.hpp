#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "drsfi/datagen.hpp"
#include "drsfi/errors.hpp"
#include "drsfi/format.hpp"
#include "drsfi/metrics.hpp"
#include "drsfi/model.hpp"
#include "drsfi/rng.hpp"
#include "drsfi/tensor.hpp"

namespace drsfi {

struct TrainConfig {
  float learning_rate = 0.05f;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::size_t patience = 3;  // epochs without validation-AUC improvement
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelGraph model;
  double baseline_auc = 0.0;  // validation AUC of the returned model
  std::size_t epochs_run = 0;
};

namespace detail {

// out[i][j] = sum_s x[s][i] * dz[s][j]
inline void accumulate_xt_dz(const Tensor& x, const Tensor& dz, Tensor& out) {
  const std::size_t n = x.rows(), in = x.cols(), o = dz.cols();
  for (std::size_t s = 0; s < n; ++s) {
    const auto xr = x.row(s);
    const auto dr = dz.row(s);
    for (std::size_t i = 0; i < in; ++i) {
      const float xi = xr[i];
      if (xi == 0.0f) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < o; ++j) orow[j] += xi * dr[j];
    }
  }
}

// out[s][i] = sum_j dz[s][j] * w[i][j]
inline Tensor dz_wt(const Tensor& dz, const Tensor& w) {
  const std::size_t n = dz.rows(), in = w.rows(), o = w.cols();
  Tensor out = Tensor::zeros(n, in);
  for (std::size_t s = 0; s < n; ++s) {
    const auto dr = dz.row(s);
    auto orow = out.row(s);
    for (std::size_t i = 0; i < in; ++i) {
      const auto wr = w.row(i);
      float acc = 0.0f;
      for (std::size_t j = 0; j < o; ++j) acc += dr[j] * wr[j];
      orow[i] = acc;
    }
  }
  return out;
}

struct LayerCache {
  Tensor input;
  Tensor pre;  // pre-activation
};

inline Tensor cached_dense(const ModelGraph& m, const DenseLayer& layer, Tensor x, LayerCache& cache) {
  Tensor z = gemm(x, m.parameter(layer.weight).value);
  const Tensor& b = m.parameter(layer.bias).value;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  cache.input = std::move(x);
  cache.pre = z;
  if (layer.activated) apply_activation_inplace(z, Activation::relu);
  return z;
}

// d(out) -> d(input); accumulates weight and bias gradients.
inline Tensor backward_dense(const ModelGraph& m, const DenseLayer& layer, const LayerCache& cache,
                             Tensor d_out, std::vector<Tensor>& grads) {
  if (layer.activated)
    for (std::size_t i = 0; i < d_out.size(); ++i)
      if (!(cache.pre[i] > 0.0f)) d_out[i] = 0.0f;
  accumulate_xt_dz(cache.input, d_out, grads[layer.weight]);
  Tensor& gb = grads[layer.bias];
  for (std::size_t s = 0; s < d_out.rows(); ++s) {
    const auto r = d_out.row(s);
    for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
  }
  return dz_wt(d_out, m.parameter(layer.weight).value);
}

}  // namespace detail

inline std::vector<Tensor> zero_gradients(const ModelGraph& m) {
  std::vector<Tensor> g;
  g.reserve(m.parameter_tensor_count());
  for (const auto& p : m.parameters()) g.emplace_back(p.value.shape());
  return g;
}

// Mean binary cross-entropy of the sigmoid head over `batch`; when `grads` is non-null,
// adds d(loss)/d(parameter) into it. Hidden layers use plain ReLU.
inline double loss_and_gradients(const ModelGraph& m, const SyntheticBatch& batch,
                                 std::vector<Tensor>* grads) {
  if (!batch.labeled()) throw ConfigError("training requires a labeled batch");
  const std::size_t n = batch.size(), e = m.config().embed_dim;
  if (n == 0) return 0.0;
  const Tensor& table = m.parameter(m.embedding()).value;

  std::vector<detail::LayerCache> bottom_cache(m.bottom().size());
  Tensor h = batch.dense;
  for (std::size_t i = 0; i < m.bottom().size(); ++i)
    h = detail::cached_dense(m, m.bottom()[i], std::move(h), bottom_cache[i]);
  const Tensor pooled = embedding_bag_batch(table, batch.sparse);

  Tensor concat = Tensor::zeros(n, 2 * e);
  for (std::size_t s = 0; s < n; ++s) {
    auto dst = concat.row(s);
    std::copy(h.row(s).begin(), h.row(s).end(), dst.begin());
    std::copy(pooled.row(s).begin(), pooled.row(s).end(), dst.begin() + static_cast<std::ptrdiff_t>(e));
  }
  std::vector<detail::LayerCache> top_cache(m.top().size());
  Tensor t = detail::cached_dense(m, m.top()[0], std::move(concat), top_cache[0]);
  Tensor out = detail::cached_dense(m, m.top()[1], std::move(t), top_cache[1]);

  const bool fm = m.kind() == ModelKind::ctr_fm;
  std::vector<std::vector<float>> fm_sum;  // per-sample sum of FM vectors
  if (fm) {
    fm_sum.assign(n, std::vector<float>(e, 0.0f));
    std::vector<std::span<const float>> vecs;
    for (std::size_t s = 0; s < n; ++s) {
      vecs.clear();
      vecs.push_back(h.row(s));
      for (const auto f : batch.sparse[s]) vecs.push_back(table.row(f));
      out[s] += fm_interaction(std::span<const std::span<const float>>(vecs));
      for (const auto& v : vecs)
        for (std::size_t j = 0; j < e; ++j) fm_sum[s][j] += v[j];
    }
  }

  double loss = 0.0;
  Tensor d_logit = Tensor::zeros(n, 1);
  for (std::size_t s = 0; s < n; ++s) {
    const double l = out[s];
    const double y = batch.labels[s];
    loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::fabs(l)));
    d_logit[s] = static_cast<float>((1.0 / (1.0 + std::exp(-l)) - y) / static_cast<double>(n));
  }
  loss /= static_cast<double>(n);
  if (!grads) return loss;

  auto& g = *grads;
  Tensor d_t = detail::backward_dense(m, m.top()[1], top_cache[1], d_logit, g);
  Tensor d_concat = detail::backward_dense(m, m.top()[0], top_cache[0], std::move(d_t), g);

  Tensor d_h = Tensor::zeros(n, e);
  Tensor& g_table = g[m.embedding()];
  for (std::size_t s = 0; s < n; ++s) {
    const auto dc = d_concat.row(s);
    auto dh = d_h.row(s);
    std::copy(dc.begin(), dc.begin() + static_cast<std::ptrdiff_t>(e), dh.begin());
    for (const auto f : batch.sparse[s]) {
      auto gr = g_table.row(f);
      for (std::size_t j = 0; j < e; ++j) gr[j] += dc[e + j];
    }
    if (fm) {
      // d/dv_k of the FM term is (sum v) - v_k.
      const float dl = d_logit[s];
      const auto hr = h.row(s);
      for (std::size_t j = 0; j < e; ++j) dh[j] += dl * (fm_sum[s][j] - hr[j]);
      for (const auto f : batch.sparse[s]) {
        const auto tr = table.row(f);
        auto gr = g_table.row(f);
        for (std::size_t j = 0; j < e; ++j) gr[j] += dl * (fm_sum[s][j] - tr[j]);
      }
    }
  }
  for (std::size_t i = m.bottom().size(); i-- > 0;)
    d_h = detail::backward_dense(m, m.bottom()[i], bottom_cache[i], std::move(d_h), g);
  return loss;
}

inline double validation_auc(const ModelGraph& m, const SyntheticBatch& data) {
  const Tensor scores = predict(m, data);
  return auc_roc(scores.data(), data.labels);
}

// Minibatch SGD on binary cross-entropy over the 8:1:1 training split; stops at the
// epoch limit or after `patience` epochs without validation-AUC improvement and
// returns the best-validation parameters.
inline TrainResult train_ctr(ModelGraph model, const SyntheticBatch& dataset, const TrainConfig& cfg) {
  if (model.kind() == ModelKind::dummy) throw ConfigError("train_ctr: model has no sigmoid head");
  if (cfg.batch_size == 0) throw ConfigError("train_ctr: batch size must be >= 1");
  const DataSplit split = split_8_1_1(dataset.size(), cfg.seed);
  const SyntheticBatch val = subset(dataset, split.validation);

  TrainResult result{model, validation_auc(model, val), 0};
  std::size_t stale = 0;
  std::vector<std::size_t> order = split.train;
  auto grads = zero_gradients(model);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng rng(derive_seed({cfg.seed, 0x7261696EULL, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const SyntheticBatch mb =
          subset(dataset, std::span<const std::size_t>(order.data() + start, end - start));
      for (auto& gt : grads) std::fill(gt.data().begin(), gt.data().end(), 0.0f);
      const double loss = loss_and_gradients(model, mb, &grads);
      if (!std::isfinite(loss))
        throw TrainingError("train_ctr: non-finite loss " + format_real(loss) + " at epoch " +
                            std::to_string(epoch) + ", batch offset " + std::to_string(start));
      for (std::size_t p = 0; p < grads.size(); ++p) {
        auto dst = model.mutable_value(p).data();
        const auto src = grads[p].data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= cfg.learning_rate * src[k];
      }
    }
    ++result.epochs_run;
    const double auc = validation_auc(model, val);
    if (auc > result.baseline_auc) {
      result.baseline_auc = auc;
      result.model = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace drsfi
