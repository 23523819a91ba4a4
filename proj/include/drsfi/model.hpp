#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drsfi/datagen.hpp"
#include "drsfi/errors.hpp"
#include "drsfi/mitigate.hpp"
#include "drsfi/model_config.hpp"
#include "drsfi/rng.hpp"
#include "drsfi/tensor.hpp"

namespace drsfi {

enum class Component : std::uint8_t { mlp = 0, embedding = 1 };

// dummy: raw logit output. ctr: sigmoid head. ctr_fm: sigmoid head over logit + FM term.
enum class ModelKind { dummy, ctr, ctr_fm };

inline std::string to_string(Component c) { return c == Component::mlp ? "mlp" : "embedding"; }

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::dummy: return "dummy";
    case ModelKind::ctr: return "ctr";
    case ModelKind::ctr_fm: return "ctr_fm";
  }
  return "?";
}

struct Parameter {
  std::string name;
  Component component = Component::mlp;
  Tensor value;
};

struct DenseLayer {
  std::size_t weight = 0;  // parameter index, [in x out]
  std::size_t bias = 0;    // parameter index, [out]
  bool activated = true;
};

// Named parameters plus the layer sequence they imply. Parameter names follow
// "<kind>/bottom.<i>.weight", "<kind>/embedding.table", "<kind>/top.<i>.bias", ...,
// so the topology can be recovered from a bare parameter list.
class ModelGraph {
 public:
  ModelGraph() = default;

  static ModelGraph from_parameters(std::vector<Parameter> params);

  ModelKind kind() const noexcept { return kind_; }
  const DummyModelConfig& config() const noexcept { return config_; }

  std::span<const Parameter> parameters() const noexcept { return params_; }
  std::size_t parameter_tensor_count() const noexcept { return params_.size(); }
  const Parameter& parameter(std::size_t i) const { return params_.at(i); }
  Tensor& mutable_value(std::size_t i) { return params_.at(i).value; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<DenseLayer>& bottom() const noexcept { return bottom_; }
  const std::vector<DenseLayer>& top() const noexcept { return top_; }
  std::size_t embedding() const noexcept { return embedding_; }

  // Total scalar parameter count.
  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  bool bit_equal(const ModelGraph& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name != o.params_[i].name || params_[i].component != o.params_[i].component ||
          !params_[i].value.bit_equal(o.params_[i].value))
        return false;
    return true;
  }

  // FNV-1a over every parameter word; cheap golden-state fingerprint.
  std::uint64_t fingerprint() const noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& p : params_)
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        h ^= p.value.word(i);
        h *= 0x100000001B3ULL;
      }
    return h;
  }

 private:
  ModelKind kind_ = ModelKind::dummy;
  DummyModelConfig config_{};
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<DenseLayer> bottom_;
  std::vector<DenseLayer> top_;
  std::size_t embedding_ = 0;
};

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "dummy") return ModelKind::dummy;
  if (s == "ctr") return ModelKind::ctr;
  if (s == "ctr_fm") return ModelKind::ctr_fm;
  return std::nullopt;
}

inline ModelGraph ModelGraph::from_parameters(std::vector<Parameter> params) {
  ModelGraph g;
  std::optional<ModelKind> kind;
  std::map<std::size_t, std::pair<std::optional<std::size_t>, std::optional<std::size_t>>> bottom, top;
  std::optional<std::size_t> table;

  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i].name;
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw LoadError("parameter '" + name + "' lacks a model-kind prefix");
    const auto k = parse_model_kind(std::string_view(name).substr(0, slash));
    if (!k) throw LoadError("parameter '" + name + "' has an unknown model kind");
    if (kind && *kind != *k) throw LoadError("parameters mix model kinds");
    kind = k;
    if (!g.index_.emplace(name, i).second) throw LoadError("duplicate parameter '" + name + "'");

    const std::string_view local = std::string_view(name).substr(slash + 1);
    if (local == "embedding.table") {
      if (params[i].component != Component::embedding)
        throw LoadError("embedding table must carry the embedding tag");
      table = i;
      continue;
    }
    const bool is_bottom = local.starts_with("bottom.");
    const bool is_top = local.starts_with("top.");
    if (!is_bottom && !is_top) throw LoadError("unrecognised parameter '" + name + "'");
    auto rest = local.substr(is_bottom ? 7 : 4);
    const auto dot = rest.find('.');
    if (dot == std::string_view::npos) throw LoadError("unrecognised parameter '" + name + "'");
    std::size_t layer = 0;
    try {
      layer = parse_integer<std::size_t>(rest.substr(0, dot));
    } catch (const ConfigError&) {
      throw LoadError("unrecognised parameter '" + name + "'");
    }
    auto& slot = (is_bottom ? bottom : top)[layer];
    const auto field = rest.substr(dot + 1);
    if (field == "weight") slot.first = i;
    else if (field == "bias") slot.second = i;
    else throw LoadError("unrecognised parameter '" + name + "'");
    if (params[i].component != Component::mlp) throw LoadError("MLP parameter '" + name + "' must carry the mlp tag");
  }
  if (!kind || !table || bottom.size() < 2 || top.size() != 2)
    throw LoadError("parameter set does not describe a bottom MLP, embedding table and predictor");

  const auto to_layers = [&](const auto& m, std::size_t last_unactivated) {
    std::vector<DenseLayer> layers;
    std::size_t expected = 0;
    for (const auto& [idx, slot] : m) {
      if (idx != expected++ || !slot.first || !slot.second)
        throw LoadError("layer indices must be contiguous with weight and bias");
      const auto& w = params[*slot.first].value;
      const auto& b = params[*slot.second].value;
      if (w.rank() != 2 || b.rank() != 1 || b.size() != w.cols())
        throw LoadError("layer shapes are inconsistent");
      layers.push_back({*slot.first, *slot.second, idx != last_unactivated});
    }
    return layers;
  };
  g.bottom_ = to_layers(bottom, static_cast<std::size_t>(-1));
  g.top_ = to_layers(top, 1);
  g.embedding_ = *table;

  const auto& tbl = params[*table].value;
  if (tbl.rank() != 2) throw LoadError("embedding table must be rank 2");
  const auto w = [&](const DenseLayer& l) -> const Tensor& { return params[l.weight].value; };
  for (std::size_t i = 1; i < g.bottom_.size(); ++i)
    if (w(g.bottom_[i]).rows() != w(g.bottom_[i - 1]).cols()) throw LoadError("bottom MLP widths do not chain");
  const std::size_t embed = tbl.cols();
  if (w(g.bottom_.back()).cols() != embed) throw LoadError("bottom MLP output must match embedding width");
  if (w(g.top_[0]).rows() != 2 * embed) throw LoadError("predictor input must be twice the embedding width");
  if (w(g.top_[1]).rows() != w(g.top_[0]).cols() || w(g.top_[1]).cols() != 1)
    throw LoadError("predictor output layer must map hidden width to 1");

  g.kind_ = *kind;
  g.config_.dense_dim = w(g.bottom_.front()).rows();
  g.config_.mlp_hidden = w(g.bottom_.front()).cols();
  g.config_.mlp_depth = g.bottom_.size() - 1;
  g.config_.embed_dim = embed;
  g.config_.sparse_dim = tbl.rows();
  g.params_ = std::move(params);
  return g;
}

// Closed-form size of the topology built by build_dummy / build_ctr.
inline std::size_t expected_parameter_count(const DummyModelConfig& c) {
  const std::size_t h = c.mlp_hidden, e = c.embed_dim;
  const std::size_t bottom = (c.dense_dim * h + h) + (c.mlp_depth - 1) * (h * h + h) + (h * e + e);
  const std::size_t table = c.sparse_dim * e;
  const std::size_t top = (2 * e * h + h) + (h + 1);
  return bottom + table + top;
}

namespace detail {

inline void kaiming_uniform(Tensor& w, std::size_t fan_in, std::uint64_t seed) {
  CounterRng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
}

inline ModelGraph build(ModelKind kind, const DummyModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::string prefix = to_string(kind) + "/";
  std::vector<Parameter> params;
  const auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    Parameter w{prefix + name + ".weight", Component::mlp, Tensor::zeros(in, out)};
    kaiming_uniform(w.value, in, derive_seed({seed, params.size()}));
    params.push_back(std::move(w));
    params.push_back({prefix + name + ".bias", Component::mlp, Tensor({out})});
  };
  std::size_t width = cfg.dense_dim;
  for (std::size_t i = 0; i < cfg.mlp_depth; ++i) {
    dense("bottom." + std::to_string(i), width, cfg.mlp_hidden);
    width = cfg.mlp_hidden;
  }
  dense("bottom." + std::to_string(cfg.mlp_depth), width, cfg.embed_dim);

  // [V x E] table; fan-in follows the tensor-convention of its second dimension.
  Parameter table{prefix + "embedding.table", Component::embedding,
                  Tensor::zeros(cfg.sparse_dim, cfg.embed_dim)};
  kaiming_uniform(table.value, cfg.embed_dim, derive_seed({seed, params.size()}));
  params.push_back(std::move(table));

  dense("top.0", 2 * cfg.embed_dim, cfg.mlp_hidden);
  dense("top.1", cfg.mlp_hidden, 1);
  return ModelGraph::from_parameters(std::move(params));
}

}  // namespace detail

// Untrained dummy model: dense MLP -> embed_dim, pooled embedding, concatenation,
// predictor MLP (2 * embed_dim -> hidden -> 1). Kaiming-uniform weights, zero biases.
inline ModelGraph build_dummy(const DummyModelConfig& cfg, std::uint64_t seed) {
  return detail::build(ModelKind::dummy, cfg, seed);
}

// Same topology with a sigmoid head, optionally adding the FM interaction to the logit.
inline ModelGraph build_ctr(const DummyModelConfig& cfg, bool use_fm, std::uint64_t seed) {
  return detail::build(use_fm ? ModelKind::ctr_fm : ModelKind::ctr, cfg, seed);
}

// Trusted checksums taken from the golden parameters, consulted by checked forward passes.
struct AbftGuard {
  MitigationPolicy policy;
  std::vector<std::vector<float>> row_sums;  // per parameter index; empty for biases

  static AbftGuard from_golden(const ModelGraph& golden, const MitigationPolicy& policy) {
    AbftGuard g{policy, {}};
    g.row_sums.resize(golden.parameter_tensor_count());
    for (std::size_t i = 0; i < golden.parameter_tensor_count(); ++i) {
      const Tensor& t = golden.parameter(i).value;
      if (t.rank() != 2) continue;
      auto& sums = g.row_sums[i];
      sums.resize(t.rows());
      for (std::size_t r = 0; r < t.rows(); ++r) {
        float s = 0.0f;
        for (const float v : t.row(r)) s += v;
        sums[r] = s;
      }
    }
    return g;
  }
};

struct AbftCounters {
  std::size_t checks = 0;
  std::size_t detected = 0;
  std::size_t unrecoverable = 0;
  std::size_t retries = 0;

  void record(const AbftStatus& s) {
    ++checks;
    detected += s.detected;
    unrecoverable += s.unrecoverable;
    retries += s.retries_used;
  }
};

struct ForwardOptions {
  Activation hidden = Activation::relu;  // relu or clipped
  ClipRule clip{};
  const AbftGuard* abft = nullptr;
  AbftCounters* counters = nullptr;
};

namespace detail {

inline Tensor dense_layer(const ModelGraph& m, const DenseLayer& layer, const Tensor& x,
                          const ForwardOptions& opt) {
  const Tensor& w = m.parameter(layer.weight).value;
  const Tensor& b = m.parameter(layer.bias).value;
  if (x.cols() != w.rows())
    throw DimensionError("forward: layer expects width " + std::to_string(w.rows()) + ", got " +
                         std::to_string(x.cols()));
  Tensor z;
  if (opt.abft) {
    auto [c, status] = abft_gemm_checked(x, w, opt.abft->row_sums[layer.weight], opt.abft->policy);
    if (opt.counters) opt.counters->record(status);
    z = std::move(c);
  } else {
    z = gemm(x, w);
  }
  const std::size_t n = z.cols();
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    for (std::size_t j = 0; j < n; ++j) row[j] += b[j];
  }
  if (layer.activated) apply_activation_inplace(z, opt.hidden, opt.clip);
  return z;
}

}  // namespace detail

// Raw output logits [n] for a batch ([n x dense_dim] plus per-sample active rows).
// Non-finite values propagate as data.
inline Tensor forward_logits(const ModelGraph& m, const Tensor& dense,
                             std::span<const std::vector<std::uint32_t>> sparse,
                             const ForwardOptions& opt = {}) {
  if (dense.rank() != 2 || dense.cols() != m.config().dense_dim)
    throw DimensionError("forward: dense input must be [n x " + std::to_string(m.config().dense_dim) +
                         "], got " + shape_string(dense));
  if (sparse.size() != dense.rows()) throw DimensionError("forward: dense and sparse sample counts differ");
  const std::size_t n = dense.rows(), e = m.config().embed_dim;

  Tensor h = detail::dense_layer(m, m.bottom()[0], dense, opt);
  for (std::size_t i = 1; i < m.bottom().size(); ++i) h = detail::dense_layer(m, m.bottom()[i], h, opt);

  const Tensor& table = m.parameter(m.embedding()).value;
  Tensor pooled;
  if (opt.abft) {
    pooled = Tensor::zeros(n, e);
    for (std::size_t s = 0; s < n; ++s) {
      auto [r, status] = abft_embedding_checked(table, opt.abft->row_sums[m.embedding()], sparse[s],
                                                opt.abft->policy);
      if (opt.counters) opt.counters->record(status);
      std::copy(r.data().begin(), r.data().end(), pooled.row(s).begin());
    }
  } else {
    pooled = embedding_bag_batch(table, sparse);
  }

  Tensor concat = Tensor::zeros(n, 2 * e);
  for (std::size_t s = 0; s < n; ++s) {
    auto dst = concat.row(s);
    std::copy(h.row(s).begin(), h.row(s).end(), dst.begin());
    std::copy(pooled.row(s).begin(), pooled.row(s).end(), dst.begin() + static_cast<std::ptrdiff_t>(e));
  }
  Tensor t = detail::dense_layer(m, m.top()[0], concat, opt);
  Tensor out = detail::dense_layer(m, m.top()[1], t, opt);
  Tensor logits({n}, std::vector<float>(out.data().begin(), out.data().end()));

  if (m.kind() == ModelKind::ctr_fm) {
    std::vector<std::span<const float>> vecs;
    for (std::size_t s = 0; s < n; ++s) {
      vecs.clear();
      vecs.push_back(h.row(s));
      for (const auto f : sparse[s]) vecs.push_back(table.row(f));
      logits[s] += fm_interaction(std::span<const std::span<const float>>(vecs));
    }
  }
  return logits;
}

// Single-sample dummy forward: dense [dense_dim] and its active rows -> [1].
inline Tensor forward_dummy(const ModelGraph& m, const Tensor& dense,
                            std::span<const std::uint32_t> sparse_indices,
                            const ForwardOptions& opt = {}) {
  if (dense.rank() != 1 || dense.size() != m.config().dense_dim)
    throw DimensionError("forward_dummy: dense input must be [" + std::to_string(m.config().dense_dim) +
                         "], got " + shape_string(dense));
  const Tensor x = Tensor::matrix(1, dense.size(), std::vector<float>(dense.data().begin(), dense.data().end()));
  const std::vector<std::vector<std::uint32_t>> sparse{{sparse_indices.begin(), sparse_indices.end()}};
  return forward_logits(m, x, sparse, opt);
}

// Model scores for a batch: raw logits for dummy models, probabilities for CTR models.
inline Tensor predict(const ModelGraph& m, const SyntheticBatch& batch, const ForwardOptions& opt = {}) {
  Tensor out = forward_logits(m, batch.dense, batch.sparse, opt);
  if (m.kind() != ModelKind::dummy) apply_activation_inplace(out, Activation::sigmoid);
  return out;
}

}  // namespace drsfi
