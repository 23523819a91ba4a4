#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drsfi/clip.hpp"
#include "drsfi/errors.hpp"

namespace drsfi {

inline constexpr int kWordBits = 32;
inline constexpr int kSignBit = 31;

inline std::uint32_t to_word(float value) noexcept { return std::bit_cast<std::uint32_t>(value); }
inline float from_word(std::uint32_t word) noexcept { return std::bit_cast<float>(word); }

// Dense rank-1 or rank-2 array of IEEE-754 single-precision values, row-major.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(element_count(shape_), 0.0f);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (element_count(shape_) != data_.size())
      throw DimensionError("tensor: shape holds " + std::to_string(element_count(shape_)) +
                           " elements but " + std::to_string(data_.size()) + " were given");
  }

  static Tensor vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

  std::size_t rank() const noexcept { return shape_.size(); }
  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() == 2 ? shape_[1] : 1; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }
  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  std::uint32_t word(std::size_t i) const noexcept { return to_word(data_[i]); }
  void set_word(std::size_t i, std::uint32_t w) noexcept { data_[i] = from_word(w); }

  // The one sanctioned in-place mutation: toggles a single stored bit.
  void flip(std::size_t i, int bit) noexcept {
    data_[i] = from_word(to_word(data_[i]) ^ (std::uint32_t{1} << bit));
  }

  // Bitwise equality of shape and every stored word (NaN payloads included).
  bool bit_equal(const Tensor& other) const noexcept {
    if (shape_ != other.shape_) return false;
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (word(i) != other.word(i)) return false;
    return true;
  }

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  void check_rank() const {
    if (shape_.empty() || shape_.size() > 2)
      throw DimensionError("tensor: rank must be 1 or 2, got " + std::to_string(shape_.size()));
  }

  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

// c[i][j] = sum_l a[i][l] * b[l][j]; every c[i][j] accumulates l = 0, 1, ... in order,
// starting from +0, so the result is bit-identical to the naive triple loop.
inline Tensor gemm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("gemm: operands must be rank 2, got " + shape_string(a) + " and " +
                         shape_string(b));
  if (a.cols() != b.rows())
    throw DimensionError("gemm: inner dimensions differ: " + shape_string(a) + " x " +
                         shape_string(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros(m, n);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = pc + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const float ail = pa[i * k + l];
      const float* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
  return c;
}

// Sum of the selected table rows, accumulated in index order.
inline Tensor embedding_bag(const Tensor& table, std::span<const std::uint32_t> indices) {
  if (table.rank() != 2) throw DimensionError("embedding_bag: table must be rank 2");
  const std::size_t d = table.cols();
  Tensor out({d});
  for (const auto f : indices) {
    if (f >= table.rows())
      throw IndexError("embedding_bag: index " + std::to_string(f) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    const auto r = table.row(f);
    for (std::size_t j = 0; j < d; ++j) out[j] += r[j];
  }
  return out;
}

// One pooled row per sample: [n x d].
inline Tensor embedding_bag_batch(const Tensor& table,
                                  std::span<const std::vector<std::uint32_t>> samples) {
  if (table.rank() != 2) throw DimensionError("embedding_bag: table must be rank 2");
  const std::size_t d = table.cols();
  Tensor out = Tensor::zeros(samples.size(), d);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    auto o = out.row(s);
    for (const auto f : samples[s]) {
      if (f >= table.rows())
        throw IndexError("embedding_bag: index " + std::to_string(f) + " outside table of " +
                         std::to_string(table.rows()) + " rows");
      const auto r = table.row(f);
      for (std::size_t j = 0; j < d; ++j) o[j] += r[j];
    }
  }
  return out;
}

enum class Activation { relu, sigmoid, clipped };

inline float relu(float x) noexcept { return (x > 0.0f || std::isnan(x)) ? x : 0.0f; }
inline float sigmoid(float x) noexcept { return 1.0f / (1.0f + std::exp(-x)); }

inline float activate(float x, Activation kind, const ClipRule& clip) noexcept {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::clipped: return clip_value(x, clip);
  }
  return x;
}

inline void apply_activation_inplace(Tensor& x, Activation kind, const ClipRule& clip = {}) {
  for (auto& v : x.data()) v = activate(v, kind, clip);
}

inline Tensor apply_activation(Tensor x, Activation kind, const ClipRule& clip = {}) {
  apply_activation_inplace(x, kind, clip);
  return x;
}

// Second-order factorization-machine term sum_{i<j} <v_i, v_j>, via
// 0.5 * (|sum v|^2 - sum |v|^2).
inline float fm_interaction(std::span<const std::span<const float>> vectors) {
  if (vectors.empty()) return 0.0f;
  const std::size_t d = vectors.front().size();
  std::vector<float> sum(d, 0.0f);
  float sum_sq = 0.0f;
  for (const auto& v : vectors) {
    if (v.size() != d) throw DimensionError("fm_interaction: vectors differ in length");
    for (std::size_t j = 0; j < d; ++j) {
      sum[j] += v[j];
      sum_sq += v[j] * v[j];
    }
  }
  float sq_of_sum = 0.0f;
  for (const float s : sum) sq_of_sum += s * s;
  return 0.5f * (sq_of_sum - sum_sq);
}

inline float fm_interaction(const std::vector<Tensor>& vectors) {
  std::vector<std::span<const float>> views;
  views.reserve(vectors.size());
  for (const auto& v : vectors) views.push_back(v.data());
  return fm_interaction(std::span<const std::span<const float>>(views));
}

}  // namespace drsfi
