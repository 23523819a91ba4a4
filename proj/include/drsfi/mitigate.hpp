#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "drsfi/clip.hpp"
#include "drsfi/errors.hpp"
#include "drsfi/tensor.hpp"

namespace drsfi {

enum class MitigationKind { none, abft, clip, sbp };

enum class FloatField : std::uint8_t { sign = 1, exponent = 2, mantissa = 4 };

struct FieldSet {
  std::uint8_t bits = 0;

  constexpr FieldSet() = default;
  constexpr FieldSet(std::initializer_list<FloatField> fields) {
    for (const auto f : fields) bits |= static_cast<std::uint8_t>(f);
  }
  constexpr bool has(FloatField f) const { return bits & static_cast<std::uint8_t>(f); }
  constexpr bool operator==(const FieldSet&) const = default;
};

struct MitigationPolicy {
  MitigationKind kind = MitigationKind::none;
  ClipRule clip{};
  float abft_tolerance = 1e-4f;
  std::size_t abft_max_retries = 3;
  FieldSet sbp_fields{FloatField::sign, FloatField::exponent};

  void validate() const {
    if (!(clip.threshold > 0.0f)) throw ConfigError("clip threshold must be > 0");
    if (clip.range && !(*clip.range > 0.0f)) throw ConfigError("clip range must be > 0");
    if (!(abft_tolerance > 0.0f)) throw ConfigError("abft tolerance must be > 0");
  }
};

inline std::string to_string(MitigationKind k) {
  switch (k) {
    case MitigationKind::none: return "none";
    case MitigationKind::abft: return "abft";
    case MitigationKind::clip: return "clip";
    case MitigationKind::sbp: return "sbp";
  }
  return "?";
}

inline std::string to_string(ClipMode m) {
  return m == ClipMode::clamp ? "clamp" : "zero_outside";
}

inline float clip_activation(float x, const MitigationPolicy& policy) {
  return clip_value(x, policy.clip);
}

struct AbftStatus {
  bool detected = false;
  std::size_t retries_used = 0;
  bool unrecoverable = false;
};

// Appends the row-sum column: out[i][n] = sum_j b[i][j].
inline Tensor augment_checksums(const Tensor& b) {
  if (b.rank() != 2) throw DimensionError("augment_checksums: operand must be rank 2");
  const std::size_t k = b.rows(), n = b.cols();
  Tensor out = Tensor::zeros(k, n + 1);
  for (std::size_t i = 0; i < k; ++i) {
    const auto src = b.row(i);
    auto dst = out.row(i);
    float s = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = src[j];
      s += src[j];
    }
    dst[n] = s;
  }
  return out;
}

// |check - sum_j row[j]| <= tol * max(|check|, sum_j |row[j]|, 1). Non-finite values fail.
inline bool checksum_holds(float check, std::span<const float> row, float tolerance) {
  float sum = 0.0f, abs_sum = 0.0f;
  for (const float v : row) {
    sum += v;
    abs_sum += std::fabs(v);
  }
  const float scale = std::max({std::fabs(check), abs_sum, 1.0f});
  return std::fabs(check - sum) <= tolerance * scale;
}

// Verifies every row of c = a x b against a x s, where s holds b's row sums.
inline bool gemm_checksums_hold(const Tensor& a, const Tensor& c, std::span<const float> row_sums,
                                float tolerance) {
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    float check = 0.0f;
    for (std::size_t l = 0; l < k; ++l) check += arow[l] * row_sums[l];
    if (!checksum_holds(check, c.row(i), tolerance)) return false;
  }
  return true;
}

// Supplies the operand used on retry attempt r (1-based). Without one, re-execution reads
// the same stored parameters, which is what persistent corruption means.
using RecoverySource = std::function<const Tensor&(std::size_t attempt)>;

namespace detail {

inline std::pair<Tensor, std::vector<float>> split_checksum_column(const Tensor& b_aug) {
  if (b_aug.rank() != 2 || b_aug.cols() < 1)
    throw DimensionError("abft: operand must be rank 2 with a checksum column");
  const std::size_t k = b_aug.rows(), n = b_aug.cols() - 1;
  Tensor b = Tensor::zeros(k, n);
  std::vector<float> sums(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto src = b_aug.row(i);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n), b.row(i).begin());
    sums[i] = src[n];
  }
  return {std::move(b), std::move(sums)};
}

}  // namespace detail

// Checked GEMM over an operand whose stored checksums are trusted; a mismatch discards
// the product and re-executes, up to max_retries times.
inline std::pair<Tensor, AbftStatus> abft_gemm_checked(const Tensor& a, const Tensor& b,
                                                       std::span<const float> row_sums,
                                                       const MitigationPolicy& policy,
                                                       const RecoverySource& recovery = {}) {
  if (row_sums.size() != b.rows()) throw DimensionError("abft_gemm: checksum length mismatch");
  AbftStatus status;
  Tensor c = gemm(a, b);
  if (gemm_checksums_hold(a, c, row_sums, policy.abft_tolerance)) return {std::move(c), status};
  status.detected = true;
  while (status.retries_used < policy.abft_max_retries) {
    ++status.retries_used;
    const Tensor& operand = recovery ? recovery(status.retries_used) : b;
    c = gemm(a, operand);
    if (gemm_checksums_hold(a, c, row_sums, policy.abft_tolerance)) return {std::move(c), status};
  }
  status.unrecoverable = true;
  return {std::move(c), status};
}

inline std::pair<Tensor, AbftStatus> abft_gemm(const Tensor& a, const Tensor& b_aug,
                                               const MitigationPolicy& policy,
                                               const RecoverySource& recovery = {}) {
  if (a.rank() != 2 || b_aug.rank() != 2 || a.cols() != b_aug.rows())
    throw DimensionError("abft_gemm: shape mismatch " + shape_string(a) + " x " +
                         shape_string(b_aug));
  auto [b, sums] = detail::split_checksum_column(b_aug);
  return abft_gemm_checked(a, b, sums, policy, recovery);
}

// Pooled lookup over a table with trusted per-row sums; r = sum_{f} row_sums[f] must match
// the sum of the pooled vector.
inline std::pair<Tensor, AbftStatus> abft_embedding_checked(const Tensor& table,
                                                            std::span<const float> row_sums,
                                                            std::span<const std::uint32_t> indices,
                                                            const MitigationPolicy& policy) {
  AbftStatus status;
  const auto attempt = [&]() {
    Tensor r = embedding_bag(table, indices);
    float check = 0.0f;
    for (const auto f : indices) check += row_sums[f];
    return std::pair{std::move(r), checksum_holds(check, r.data(), policy.abft_tolerance)};
  };
  auto [r, ok] = attempt();
  if (ok) return {std::move(r), status};
  status.detected = true;
  while (status.retries_used < policy.abft_max_retries) {
    ++status.retries_used;
    std::tie(r, ok) = attempt();
    if (ok) return {std::move(r), status};
  }
  status.unrecoverable = true;
  return {std::move(r), status};
}

inline std::pair<Tensor, AbftStatus> abft_embedding(const Tensor& table_aug,
                                                    std::span<const std::uint32_t> indices,
                                                    const MitigationPolicy& policy) {
  auto [table, sums] = detail::split_checksum_column(table_aug);
  return abft_embedding_checked(table, sums, indices, policy);
}

}  // namespace drsfi
