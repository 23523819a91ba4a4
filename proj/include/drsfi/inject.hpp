#pragma once

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "drsfi/errors.hpp"
#include "drsfi/format.hpp"
#include "drsfi/mitigate.hpp"
#include "drsfi/model.hpp"
#include "drsfi/rng.hpp"
#include "drsfi/tensor.hpp"

namespace drsfi {

inline constexpr std::uint32_t kSignMask = 0x80000000u;
inline constexpr std::uint32_t kExponentMask = 0x7F800000u;
inline constexpr std::uint32_t kMantissaMask = 0x007FFFFFu;

// Bit 0 is the least significant mantissa bit, bit 31 the sign.
inline std::uint32_t flip_bit(std::uint32_t word, int position) {
  if (position < 0 || position >= kWordBits)
    throw IndexError("flip_bit: position " + std::to_string(position) + " outside [0, 31]");
  return word ^ (std::uint32_t{1} << position);
}

inline float flip_bit(float value, int position) { return from_word(flip_bit(to_word(value), position)); }

inline std::uint32_t sbp_mask(FieldSet fields) {
  std::uint32_t m = 0;
  if (fields.has(FloatField::sign)) m |= kSignMask;
  if (fields.has(FloatField::exponent)) m |= kExponentMask;
  if (fields.has(FloatField::mantissa)) m |= kMantissaMask;
  return m;
}

enum class TargetKind { entire_model, mlp, embedding, named };

struct TargetSelector {
  TargetKind kind = TargetKind::entire_model;
  std::vector<std::string> names;  // for TargetKind::named

  static TargetSelector entire_model() { return {TargetKind::entire_model, {}}; }
  static TargetSelector mlp() { return {TargetKind::mlp, {}}; }
  static TargetSelector embedding() { return {TargetKind::embedding, {}}; }
  static TargetSelector named(std::vector<std::string> n) { return {TargetKind::named, std::move(n)}; }

  // "entire_model" | "mlp" | "embedding" | parameter names joined by ',' or '+'.
  static TargetSelector parse(std::string_view text) {
    text = trim(text);
    if (text == "entire_model") return entire_model();
    if (text == "mlp") return mlp();
    if (text == "embedding") return embedding();
    TargetSelector s{TargetKind::named, {}};
    while (!text.empty()) {
      const auto c = text.find_first_of(",+");
      const auto name = trim(text.substr(0, c));
      if (!name.empty()) s.names.emplace_back(name);
      text = c == std::string_view::npos ? std::string_view{} : text.substr(c + 1);
    }
    if (s.names.empty()) throw ConfigError("empty target selector");
    return s;
  }

  std::string str() const {
    switch (kind) {
      case TargetKind::entire_model: return "entire_model";
      case TargetKind::mlp: return "mlp";
      case TargetKind::embedding: return "embedding";
      case TargetKind::named: {
        std::string s;
        for (const auto& n : names) s += (s.empty() ? "" : "+") + n;
        return s;
      }
    }
    return "?";
  }

  bool operator==(const TargetSelector&) const = default;
};

struct InjectionConfig {
  double ber = 0.0;
  TargetSelector targets{};
  std::uint32_t protected_bits = 0;  // 1 = never flipped
  std::uint64_t seed = 0;
};

struct ErrorEntry {
  std::uint32_t param = 0;  // index into ErrorMap::params
  std::uint64_t element = 0;
  std::uint8_t bit = 0;

  auto operator<=>(const ErrorEntry&) const = default;
};

struct ErrorMap {
  std::vector<std::string> params;  // parameter names referenced by entries
  std::vector<ErrorEntry> entries;  // sorted, unique
  std::uint64_t seed = 0;
  double ber = 0.0;
  std::uint32_t mask = 0;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
};

inline std::vector<std::size_t> resolve_targets(const ModelGraph& model, const TargetSelector& sel) {
  std::vector<std::size_t> out;
  if (sel.kind == TargetKind::named) {
    for (const auto& n : sel.names) {
      const auto idx = model.index_of(n);
      if (!idx) throw ConfigError("target parameter '" + n + "' does not exist");
      if (std::find(out.begin(), out.end(), *idx) == out.end()) out.push_back(*idx);
    }
    std::sort(out.begin(), out.end());
  } else {
    for (std::size_t i = 0; i < model.parameter_tensor_count(); ++i) {
      const auto c = model.parameter(i).component;
      if (sel.kind == TargetKind::entire_model || (sel.kind == TargetKind::mlp && c == Component::mlp) ||
          (sel.kind == TargetKind::embedding && c == Component::embedding))
        out.push_back(i);
    }
  }
  if (out.empty()) throw ConfigError("target selector '" + sel.str() + "' matches no parameters");
  return out;
}

namespace detail {

// k distinct values from [0, n), sorted (Floyd's algorithm).
inline std::vector<std::uint64_t> sample_distinct(std::uint64_t n, std::uint64_t k, CounterRng& rng) {
  std::vector<std::uint64_t> out;
  if (k == 0) return out;
  if (k > n / 2) {
    // Draw the complement instead and enumerate what remains.
    const auto excluded = sample_distinct(n, n - k, rng);
    out.reserve(k);
    std::size_t e = 0;
    for (std::uint64_t v = 0; v < n; ++v) {
      if (e < excluded.size() && excluded[e] == v) {
        ++e;
        continue;
      }
      out.push_back(v);
    }
    return out;
  }
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k) * 2);
  for (std::uint64_t j = n - k; j < n; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  out.assign(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// K ~ Binomial(N, ber) over the N unprotected bits of the targeted elements, then K
// distinct positions uniformly without replacement. Jointly this is the same law as
// flipping every unprotected bit independently with probability ber.
inline ErrorMap build_error_map(const ModelGraph& model, const InjectionConfig& cfg) {
  if (!(cfg.ber >= 0.0 && cfg.ber <= 1.0))
    throw ConfigError("ber must lie in [0, 1], got " + format_real(cfg.ber));
  const auto targets = resolve_targets(model, cfg.targets);

  ErrorMap map;
  map.seed = cfg.seed;
  map.ber = cfg.ber;
  map.mask = cfg.protected_bits;

  std::vector<int> free_bits;
  for (int b = 0; b < kWordBits; ++b)
    if (!((cfg.protected_bits >> b) & 1u)) free_bits.push_back(b);
  const std::uint64_t per_word = free_bits.size();

  std::vector<std::uint64_t> first_element{0};  // prefix sums over targeted tensors
  for (const auto t : targets) first_element.push_back(first_element.back() + model.parameter(t).value.size());
  const std::uint64_t n_bits = per_word * first_element.back();
  for (const auto t : targets) map.params.push_back(model.parameter(t).name);
  if (n_bits == 0 || cfg.ber == 0.0) return map;

  CounterRng rng(derive_seed({cfg.seed, 0x696E6A656374ULL}));
  std::binomial_distribution<std::uint64_t> count_dist(n_bits, cfg.ber);
  const std::uint64_t k = cfg.ber == 1.0 ? n_bits : count_dist(rng);
  const auto positions = detail::sample_distinct(n_bits, k, rng);

  map.entries.reserve(positions.size());
  std::size_t param = 0;
  for (const auto p : positions) {
    const std::uint64_t element = p / per_word;
    while (element >= first_element[param + 1]) ++param;
    map.entries.push_back({static_cast<std::uint32_t>(param), element - first_element[param],
                           static_cast<std::uint8_t>(free_bits[p % per_word])});
  }
  return map;
}

// Toggles every listed bit once. The whole map is validated before the first flip, so a
// dangling entry leaves the model untouched. Applying the same map twice is the identity.
inline void apply_error_map(ModelGraph& model, const ErrorMap& map) {
  std::vector<std::size_t> resolved;
  resolved.reserve(map.params.size());
  for (const auto& name : map.params) {
    const auto idx = model.index_of(name);
    if (!idx) throw IntegrityError("error map names missing parameter '" + name + "'");
    resolved.push_back(*idx);
  }
  for (std::size_t i = 0; i < map.entries.size(); ++i) {
    const auto& e = map.entries[i];
    if (e.param >= resolved.size())
      throw IntegrityError("error map entry " + std::to_string(i) + " references parameter slot " +
                           std::to_string(e.param));
    if (e.element >= model.parameter(resolved[e.param]).value.size())
      throw IntegrityError("error map entry " + std::to_string(i) + ": element " + std::to_string(e.element) +
                           " outside '" + map.params[e.param] + "'");
    if (e.bit >= kWordBits)
      throw IntegrityError("error map entry " + std::to_string(i) + ": bit " + std::to_string(e.bit));
    if (i > 0 && !(map.entries[i - 1] < e))
      throw IntegrityError("error map entries must be sorted and unique (entry " + std::to_string(i) + ")");
  }
  for (const auto& e : map.entries) model.mutable_value(resolved[e.param]).flip(e.element, e.bit);
}

inline ModelGraph applied(ModelGraph model, const ErrorMap& map) {
  apply_error_map(model, map);
  return model;
}

// Text form: "# drsfi-errormap seed=<u64> ber=<real> mask=0x<hex8>" then one
// "param_name<TAB>element_index<TAB>bit_position" line per flip.
inline void write_error_map(std::ostream& os, const ErrorMap& map) {
  char mask[16];
  std::snprintf(mask, sizeof(mask), "0x%08X", map.mask);
  os << "# drsfi-errormap seed=" << map.seed << " ber=" << format_real(map.ber) << " mask=" << mask << '\n';
  for (const auto& e : map.entries)
    os << map.params[e.param] << '\t' << e.element << '\t' << static_cast<int>(e.bit) << '\n';
}

inline ErrorMap read_error_map(std::istream& is) {
  ErrorMap map;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    const auto where = "error map line " + std::to_string(lineno) + ": ";
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      if (header || !sv.starts_with("# drsfi-errormap")) continue;
      header = true;
      sv.remove_prefix(16);
      while (!(sv = trim(sv)).empty()) {
        const auto sp = sv.find(' ');
        const auto kv = sv.substr(0, sp);
        sv = sp == std::string_view::npos ? std::string_view{} : sv.substr(sp);
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) throw LoadError(where + "malformed header field");
        const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
        try {
          if (key == "seed") map.seed = parse_integer<std::uint64_t>(val);
          else if (key == "ber") map.ber = parse_real<double>(val);
          else if (key == "mask") {
            if (!val.starts_with("0x") && !val.starts_with("0X")) throw LoadError(where + "mask must be hex");
            map.mask = parse_integer<std::uint32_t>(val.substr(2), 16);
          }
        } catch (const ConfigError& e) {
          throw LoadError(where + e.what());
        }
      }
      continue;
    }
    const auto t1 = sv.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : sv.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) throw LoadError(where + "expected name<TAB>element<TAB>bit");
    const std::string name(sv.substr(0, t1));
    ErrorEntry e;
    try {
      e.element = parse_integer<std::uint64_t>(sv.substr(t1 + 1, t2 - t1 - 1));
      const auto bit = parse_integer<unsigned>(sv.substr(t2 + 1));
      if (bit >= 32) throw LoadError(where + "bit position " + std::to_string(bit) + " outside [0, 31]");
      e.bit = static_cast<std::uint8_t>(bit);
    } catch (const ConfigError& err) {
      throw LoadError(where + err.what());
    }
    auto it = std::find(map.params.begin(), map.params.end(), name);
    if (it == map.params.end()) it = map.params.insert(map.params.end(), name);
    e.param = static_cast<std::uint32_t>(it - map.params.begin());
    map.entries.push_back(e);
  }
  if (!header) throw LoadError("error map lacks its '# drsfi-errormap' header");
  // Canonical order is by name position of first appearance, element, bit.
  std::sort(map.entries.begin(), map.entries.end());
  if (std::adjacent_find(map.entries.begin(), map.entries.end()) != map.entries.end())
    throw LoadError("error map lists the same bit twice");
  return map;
}

}  // namespace drsfi
