#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "drsfi/errors.hpp"
#include "drsfi/tensor.hpp"

namespace drsfi {

enum class Classification { numeric, inf, nan, error };

inline std::string to_string(Classification c) {
  switch (c) {
    case Classification::numeric: return "numeric";
    case Classification::inf: return "inf";
    case Classification::nan: return "nan";
    case Classification::error: return "error";
  }
  return "?";
}

inline Classification parse_classification(const std::string& s) {
  if (s == "numeric") return Classification::numeric;
  if (s == "inf") return Classification::inf;
  if (s == "nan") return Classification::nan;
  if (s == "error") return Classification::error;
  throw ConfigError("unknown classification '" + s + "'");
}

// An output with at least this many invalid entries is reported as inf/nan.
inline constexpr std::size_t kDefaultInvalidThreshold = 2;
// Presentation-only cut-off below which an RMSE cell reads 0.0.
inline constexpr double kRmseDisplayFloor = 0.005;

struct RmseReport {
  double rmse = 0.0;  // NaN when no observed entry is finite
  std::size_t n_inf = 0;
  std::size_t n_nan = 0;
  std::size_t n_finite = 0;
  Classification classification = Classification::numeric;
};

inline Classification classify(std::size_t n_inf, std::size_t n_nan, std::size_t threshold) {
  if (n_nan >= threshold) return Classification::nan;
  if (n_inf >= threshold) return Classification::inf;
  return Classification::numeric;
}

inline RmseReport rmse_with_validity(std::span<const float> golden, std::span<const float> observed,
                                     std::size_t invalid_threshold = kDefaultInvalidThreshold) {
  if (golden.size() != observed.size())
    throw DimensionError("rmse: golden has " + std::to_string(golden.size()) +
                         " entries, observed " + std::to_string(observed.size()));
  RmseReport r;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const float o = observed[i];
    if (std::isnan(o)) {
      ++r.n_nan;
    } else if (std::isinf(o)) {
      ++r.n_inf;
    } else {
      const double d = static_cast<double>(golden[i]) - static_cast<double>(o);
      sum_sq += d * d;
      ++r.n_finite;
    }
  }
  r.rmse = r.n_finite ? std::sqrt(sum_sq / static_cast<double>(r.n_finite))
                      : std::numeric_limits<double>::quiet_NaN();
  r.classification = classify(r.n_inf, r.n_nan, invalid_threshold);
  return r;
}

inline RmseReport rmse_with_validity(const Tensor& golden, const Tensor& observed,
                                     std::size_t invalid_threshold = kDefaultInvalidThreshold) {
  if (golden.shape() != observed.shape())
    throw DimensionError("rmse: shapes differ " + shape_string(golden) + " vs " +
                         shape_string(observed));
  return rmse_with_validity(golden.data(), observed.data(), invalid_threshold);
}

// nan -> 0.5, +inf -> 1, -inf -> 0.
inline std::vector<double> sanitize_scores(std::span<const double> scores) {
  std::vector<double> out(scores.begin(), scores.end());
  for (auto& s : out) {
    if (std::isnan(s)) s = 0.5;
    else if (std::isinf(s)) s = s > 0 ? 1.0 : 0.0;
  }
  return out;
}

inline std::vector<double> sanitize_scores(std::span<const float> scores) {
  std::vector<double> wide(scores.begin(), scores.end());
  return sanitize_scores(std::span<const double>(wide));
}

// Mann-Whitney statistic P(s+ > s-) + P(s+ == s-) / 2 from midranks. Scores are
// expected to be sanitized; NaN would break the ordering.
inline double auc_roc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc_roc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps everything integral.
  std::uint64_t pos_rank_x2 = 0, n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t rank_x2 = i + 1 + j;  // (i+1) + j, ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        pos_rank_x2 += rank_x2;
        ++n_pos;
      }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc_roc: labels contain a single class");
  const double u_x2 = static_cast<double>(pos_rank_x2) - static_cast<double>(n_pos * (n_pos + 1));
  return u_x2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double auc_roc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  const auto clean = sanitize_scores(scores);
  return auc_roc(std::span<const double>(clean), labels);
}

struct RunAggregate {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;            // runs supplied
  std::size_t finite_count = 0;     // runs entering mean/min/max
  std::size_t nonfinite_count = 0;
};

inline RunAggregate aggregate_runs(std::span<const double> values) {
  RunAggregate a;
  a.count = values.size();
  double sum = 0.0;
  for (const double v : values) {
    if (!std::isfinite(v)) {
      ++a.nonfinite_count;
      continue;
    }
    if (a.finite_count == 0) a.min = a.max = v;
    a.min = std::min(a.min, v);
    a.max = std::max(a.max, v);
    sum += v;
    ++a.finite_count;
  }
  if (a.finite_count) a.mean = sum / static_cast<double>(a.finite_count);
  return a;
}

}  // namespace drsfi
