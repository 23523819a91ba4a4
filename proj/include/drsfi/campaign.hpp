#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "drsfi/datagen.hpp"
#include "drsfi/errors.hpp"
#include "drsfi/format.hpp"
#include "drsfi/inject.hpp"
#include "drsfi/metrics.hpp"
#include "drsfi/mitigate.hpp"
#include "drsfi/model.hpp"
#include "drsfi/train.hpp"

namespace drsfi {

enum class ExperimentKind { dummy_rmse, ctr_auc };
enum class OutputFormat { csv, jsonl };

inline std::string to_string(ExperimentKind k) { return k == ExperimentKind::dummy_rmse ? "dummy_rmse" : "ctr_auc"; }

struct DesignPoint {
  DummyModelConfig model;
  double sparsity = 0.001;
};

struct CampaignSpec {
  ExperimentKind experiment = ExperimentKind::dummy_rmse;
  std::vector<std::size_t> mlp_depth{1};
  std::vector<std::size_t> mlp_hidden{64, 128, 256, 512};
  std::vector<std::size_t> embed_dim{64, 128, 256, 512};
  std::size_t dense_dim = 128;
  std::size_t sparse_dim = 8192;
  std::size_t n_samples = 16;
  std::vector<double> sparsity{0.001};
  std::vector<double> ber{1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  std::vector<TargetSelector> targets{TargetSelector::entire_model()};
  std::vector<MitigationKind> mitigation{MitigationKind::none};
  MitigationPolicy policy{};  // clip / abft / sbp knobs shared by every mitigation entry
  std::size_t runs = 10;
  std::uint64_t seed = 0;
  std::size_t invalid_threshold = kDefaultInvalidThreshold;

  // ctr_auc only
  bool use_fm = false;
  double noise = 1.0;
  TrainConfig train{};

  std::string output = "results.csv";
  OutputFormat format = OutputFormat::csv;
  bool timing = false;
  std::size_t threads = 0;  // 0 = hardware concurrency

  // Grid defaults differ by experiment: the dummy sweep uses the full hyper-parameter
  // grid; the CTR experiment uses one trainable desk-scale point.
  static CampaignSpec defaults(ExperimentKind kind) {
    CampaignSpec s;
    s.experiment = kind;
    if (kind == ExperimentKind::ctr_auc) {
      s.mlp_depth = {2};
      s.mlp_hidden = {256};
      s.embed_dim = {32};
      s.dense_dim = 32;
      s.sparse_dim = 200;
      s.sparsity = {0.05};
      s.n_samples = 20000;
      s.train.learning_rate = 0.1f;
    }
    return s;
  }

  std::vector<DesignPoint> design_points() const {
    std::vector<DesignPoint> pts;
    for (const auto d : mlp_depth)
      for (const auto h : mlp_hidden)
        for (const auto e : embed_dim)
          for (const auto s : sparsity) pts.push_back({{d, h, e, dense_dim, sparse_dim}, s});
    return pts;
  }

  std::size_t record_count() const {
    return design_points().size() * ber.size() * targets.size() * mitigation.size() * runs;
  }

  void validate() const {
    if (mlp_depth.empty() || mlp_hidden.empty() || embed_dim.empty() || sparsity.empty())
      throw ConfigError("campaign grid is empty");
    if (ber.empty() || targets.empty() || mitigation.empty()) throw ConfigError("campaign sweep is empty");
    for (const auto b : ber)
      if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("ber value " + format_real(b) + " outside [0, 1]");
    for (const auto s : sparsity)
      if (!(s > 0.0 && s < 1.0)) throw ConfigError("sparsity value " + format_real(s) + " outside (0, 1)");
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
    if (invalid_threshold < 1) throw ConfigError("invalid_threshold must be >= 1");
    for (const auto& p : design_points()) p.model.validate();
    policy.validate();
  }
};

struct RunRecord {
  ExperimentKind experiment = ExperimentKind::dummy_rmse;
  DummyModelConfig model{};
  double sparsity = 0.0;
  std::string target;
  std::string mitigation;
  ClipMode clip_mode = ClipMode::clamp;
  float clip_T = 6.0f;
  double ber = 0.0;
  std::uint64_t run_seed = 0;
  std::string metric;
  double value = 0.0;
  std::size_t n_inf = 0;
  std::size_t n_nan = 0;
  Classification classification = Classification::numeric;
  // Not part of the fixed CSV column set.
  double wall_time_s = 0.0;
  std::size_t flips = 0;
  std::size_t abft_detected = 0;
  std::size_t abft_unrecoverable = 0;
  std::string error;
};

// Seeds per design point and per run. Inputs and golden model are fixed per design
// point; only the error map changes across runs.
namespace seeds {
inline constexpr std::uint64_t kModel = 1, kData = 2, kTrain = 3, kRun = 4;
inline std::uint64_t model(std::uint64_t base, std::size_t point) { return derive_seed({base, point, kModel}); }
inline std::uint64_t data(std::uint64_t base, std::size_t point) { return derive_seed({base, point, kData}); }
inline std::uint64_t train(std::uint64_t base, std::size_t point) { return derive_seed({base, point, kTrain}); }
inline std::uint64_t run(std::uint64_t base, std::size_t point, std::size_t run) {
  return derive_seed({base, point, kRun, run});
}
}  // namespace seeds

struct CampaignProgress {
  std::size_t point = 0;
  std::size_t points = 0;
  std::size_t done = 0;   // runs finished at this point
  std::size_t total = 0;  // runs at this point
};

namespace detail {

inline ForwardOptions options_for(MitigationKind kind, const MitigationPolicy& policy, const AbftGuard* guard) {
  ForwardOptions o;
  if (kind == MitigationKind::clip) {
    o.hidden = Activation::clipped;
    o.clip = policy.clip;
  }
  if (kind == MitigationKind::abft) o.abft = guard;
  return o;
}

inline std::size_t worker_count(std::size_t requested, std::size_t tasks) {
  std::size_t n = requested ? requested : std::max<unsigned>(1, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, tasks));
}

}  // namespace detail

// Executes every (design point, ber, target, mitigation, run) combination and returns
// the records in canonical order. A failing run yields an error record; the campaign
// carries on.
inline std::vector<RunRecord> run_campaign(const CampaignSpec& spec,
                                           const std::function<void(const CampaignProgress&)>& progress = {}) {
  spec.validate();
  const auto points = spec.design_points();
  std::vector<RunRecord> records;
  records.reserve(spec.record_count());

  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const DesignPoint& point = points[pi];
    ModelGraph golden;
    SyntheticBatch eval;
    if (spec.experiment == ExperimentKind::dummy_rmse) {
      golden = build_dummy(point.model, seeds::model(spec.seed, pi));
      eval = gen_batch(spec.n_samples, point.model.dense_dim, point.model.sparse_dim, point.sparsity,
                       seeds::data(spec.seed, pi));
    } else {
      const auto data = gen_labeled(spec.n_samples, point.model, point.sparsity, spec.noise, seeds::data(spec.seed, pi));
      TrainConfig tc = spec.train;
      tc.seed = seeds::train(spec.seed, pi);
      golden = train_ctr(build_ctr(point.model, spec.use_fm, seeds::model(spec.seed, pi)), data, tc).model;
      eval = subset(data, split_8_1_1(data.size(), tc.seed).test);
    }
    const std::uint64_t golden_print = golden.fingerprint();

    const bool needs_abft = std::find(spec.mitigation.begin(), spec.mitigation.end(), MitigationKind::abft) !=
                            spec.mitigation.end();
    const AbftGuard guard = needs_abft ? AbftGuard::from_golden(golden, spec.policy) : AbftGuard{};
    std::vector<Tensor> golden_out;
    for (const auto mk : spec.mitigation) golden_out.push_back(predict(golden, eval, detail::options_for(mk, spec.policy, &guard)));

    struct Task {
      std::size_t ber, target, mitigation, run;
    };
    std::vector<Task> tasks;
    for (std::size_t b = 0; b < spec.ber.size(); ++b)
      for (std::size_t t = 0; t < spec.targets.size(); ++t)
        for (std::size_t m = 0; m < spec.mitigation.size(); ++m)
          for (std::size_t r = 0; r < spec.runs; ++r) tasks.push_back({b, t, m, r});

    std::vector<RunRecord> out(tasks.size());
    std::atomic<std::size_t> next{0}, done{0};
    std::mutex progress_mu;

    const auto work = [&]() {
      ModelGraph model = golden;
      for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
        const Task& task = tasks[i];
        const MitigationKind mk = spec.mitigation[task.mitigation];
        RunRecord& rec = out[i];
        rec.experiment = spec.experiment;
        rec.model = point.model;
        rec.sparsity = point.sparsity;
        rec.target = spec.targets[task.target].str();
        rec.mitigation = to_string(mk);
        rec.clip_mode = spec.policy.clip.mode;
        rec.clip_T = spec.policy.clip.threshold;
        rec.ber = spec.ber[task.ber];
        rec.run_seed = seeds::run(spec.seed, pi, task.run);
        rec.metric = spec.experiment == ExperimentKind::dummy_rmse ? "rmse" : "auc";

        const auto t0 = std::chrono::steady_clock::now();
        try {
          InjectionConfig ic;
          ic.ber = rec.ber;
          ic.targets = spec.targets[task.target];
          ic.protected_bits = mk == MitigationKind::sbp ? sbp_mask(spec.policy.sbp_fields) : 0u;
          ic.seed = rec.run_seed;
          const ErrorMap map = build_error_map(model, ic);
          rec.flips = map.size();
          apply_error_map(model, map);
          AbftCounters counters;
          ForwardOptions opt = detail::options_for(mk, spec.policy, &guard);
          opt.counters = &counters;
          Tensor scores;
          try {
            scores = predict(model, eval, opt);
          } catch (...) {
            apply_error_map(model, map);
            throw;
          }
          apply_error_map(model, map);
          if (model.fingerprint() != golden_print)
            throw IntegrityError("model differs from golden after restore");
          rec.abft_detected = counters.detected;
          rec.abft_unrecoverable = counters.unrecoverable;

          if (spec.experiment == ExperimentKind::dummy_rmse) {
            const auto rep = rmse_with_validity(golden_out[task.mitigation], scores, spec.invalid_threshold);
            rec.value = rep.rmse;
            rec.n_inf = rep.n_inf;
            rec.n_nan = rep.n_nan;
            rec.classification = rep.classification;
          } else {
            for (const float s : scores.data()) {
              rec.n_nan += std::isnan(s);
              rec.n_inf += std::isinf(s);
            }
            rec.classification = classify(rec.n_inf, rec.n_nan, spec.invalid_threshold);
            rec.value = auc_roc(scores.data(), eval.labels);
          }
        } catch (const std::exception& e) {
          rec.classification = Classification::error;
          rec.value = std::numeric_limits<double>::quiet_NaN();
          rec.error = e.what();
          if (model.fingerprint() != golden_print) model = golden;
        }
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto d = done.fetch_add(1) + 1;
        if (progress) {
          std::lock_guard lock(progress_mu);
          progress({pi, points.size(), d, tasks.size()});
        }
      }
    };

    const std::size_t workers = detail::worker_count(spec.threads, tasks.size());
    if (workers == 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    for (auto& r : out) records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------------------
// Config files: "key = value" or "key = [a, b, c]", '#' comments, one key per line.

namespace detail {

struct ConfigValue {
  std::vector<std::string> items;
  bool is_list = false;
  std::size_t line = 0;
};

inline std::string unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return std::string(s.substr(1, s.size() - 2));
  return std::string(s);
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    else if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, ConfigValue> values) : values_(std::move(values)) {}

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  template <typename T, typename Parse>
  std::vector<T> list(const std::string& key, Parse parse) const {
    const auto& v = values_.at(key);
    std::vector<T> out;
    for (const auto& item : v.items) {
      try {
        out.push_back(parse(item));
      } catch (const ConfigError& e) {
        throw ConfigError(where(key) + e.what());
      }
    }
    if (out.empty()) throw ConfigError(where(key) + "empty list");
    return out;
  }

  template <typename T, typename Parse>
  T scalar(const std::string& key, Parse parse) const {
    const auto& v = values_.at(key);
    if (v.is_list || v.items.size() != 1) throw ConfigError(where(key) + "expected a single value");
    try {
      return parse(v.items.front());
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + e.what());
    }
  }

  std::string where(const std::string& key) const {
    return "config line " + std::to_string(values_.at(key).line) + " (" + key + "): ";
  }

 private:
  std::map<std::string, ConfigValue> values_;
};

inline std::size_t parse_count(const std::string& s) { return parse_integer<std::size_t>(s); }
inline double parse_double(const std::string& s) { return parse_real<double>(s); }

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

inline MitigationKind parse_mitigation(const std::string& s) {
  if (s == "none") return MitigationKind::none;
  if (s == "abft") return MitigationKind::abft;
  if (s == "clip") return MitigationKind::clip;
  if (s == "sbp") return MitigationKind::sbp;
  throw ConfigError("unknown mitigation '" + s + "' (none, abft, clip, sbp)");
}

inline FloatField parse_field(const std::string& s) {
  if (s == "sign") return FloatField::sign;
  if (s == "exponent") return FloatField::exponent;
  if (s == "mantissa") return FloatField::mantissa;
  throw ConfigError("unknown float field '" + s + "' (sign, exponent, mantissa)");
}

}  // namespace detail

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "experiment", "mlp_depth", "mlp_hidden", "embed_dim", "dense_dim", "sparse_dim", "n_samples",
      "sparsity", "ber", "targets", "mitigation", "clip_mode", "clip_T", "clip_range",
      "abft_tolerance", "abft_max_retries", "sbp_fields", "runs", "seed", "invalid_threshold",
      "use_fm", "noise", "learning_rate", "epochs", "batch_size", "patience", "output", "format",
      "timing", "threads"};
  return keys;
}

inline CampaignSpec parse_config_text(std::string_view text) {
  std::map<std::string, detail::ConfigValue> values;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  const auto& keys = config_keys();
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string line = detail::strip_comment(raw);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto where = "config line " + std::to_string(lineno) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    auto rhs = trim(body.substr(eq + 1));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (values.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    detail::ConfigValue v;
    v.line = lineno;
    if (rhs.empty()) throw ConfigError(where + "missing value for '" + key + "'");
    if (rhs.front() == '[') {
      if (rhs.back() != ']') throw ConfigError(where + "unterminated list for '" + key + "'");
      v.is_list = true;
      rhs = trim(rhs.substr(1, rhs.size() - 2));
      std::string cur;
      bool quoted = false;
      for (const char c : rhs) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
          v.items.push_back(detail::unquote(cur));
          cur.clear();
        } else {
          cur += c;
        }
      }
      if (!trim(cur).empty() || !v.items.empty()) v.items.push_back(detail::unquote(cur));
      for (const auto& item : v.items)
        if (item.empty()) throw ConfigError(where + "empty list item for '" + key + "'");
    } else {
      v.items.push_back(detail::unquote(rhs));
    }
    values.emplace(key, std::move(v));
  }
  if (!values.count("experiment")) throw ConfigError("config: missing required key 'experiment'");

  const detail::ConfigReader r(std::move(values));
  const auto kind = r.scalar<ExperimentKind>("experiment", [](const std::string& s) {
    if (s == "dummy_rmse") return ExperimentKind::dummy_rmse;
    if (s == "ctr_auc") return ExperimentKind::ctr_auc;
    throw ConfigError("unknown experiment '" + s + "' (dummy_rmse, ctr_auc)");
  });
  CampaignSpec spec = CampaignSpec::defaults(kind);
  const auto count = detail::parse_count;
  const auto real = detail::parse_double;

  if (r.has("mlp_depth")) spec.mlp_depth = r.list<std::size_t>("mlp_depth", count);
  if (r.has("mlp_hidden")) spec.mlp_hidden = r.list<std::size_t>("mlp_hidden", count);
  if (r.has("embed_dim")) spec.embed_dim = r.list<std::size_t>("embed_dim", count);
  if (r.has("dense_dim")) spec.dense_dim = r.scalar<std::size_t>("dense_dim", count);
  if (r.has("sparse_dim")) spec.sparse_dim = r.scalar<std::size_t>("sparse_dim", count);
  if (r.has("n_samples")) spec.n_samples = r.scalar<std::size_t>("n_samples", count);
  if (r.has("sparsity")) spec.sparsity = r.list<double>("sparsity", real);
  if (r.has("ber")) spec.ber = r.list<double>("ber", real);
  if (r.has("targets"))
    spec.targets = r.list<TargetSelector>("targets", [](const std::string& s) { return TargetSelector::parse(s); });
  if (r.has("mitigation")) spec.mitigation = r.list<MitigationKind>("mitigation", detail::parse_mitigation);
  if (r.has("clip_mode"))
    spec.policy.clip.mode = r.scalar<ClipMode>("clip_mode", [](const std::string& s) {
      if (s == "clamp") return ClipMode::clamp;
      if (s == "zero_outside") return ClipMode::zero_outside;
      throw ConfigError("unknown clip_mode '" + s + "' (clamp, zero_outside)");
    });
  if (r.has("clip_T")) spec.policy.clip.threshold = static_cast<float>(r.scalar<double>("clip_T", real));
  if (r.has("clip_range"))
    spec.policy.clip.range = r.scalar<std::optional<float>>("clip_range", [](const std::string& s) {
      if (s == "none") return std::optional<float>{};
      return std::optional<float>{static_cast<float>(parse_real<double>(s))};
    });
  if (r.has("abft_tolerance")) spec.policy.abft_tolerance = static_cast<float>(r.scalar<double>("abft_tolerance", real));
  if (r.has("abft_max_retries")) spec.policy.abft_max_retries = r.scalar<std::size_t>("abft_max_retries", count);
  if (r.has("sbp_fields")) {
    FieldSet fs;
    for (const auto f : r.list<FloatField>("sbp_fields", detail::parse_field)) fs.bits |= static_cast<std::uint8_t>(f);
    spec.policy.sbp_fields = fs;
  }
  if (r.has("runs")) spec.runs = r.scalar<std::size_t>("runs", count);
  if (r.has("seed")) spec.seed = r.scalar<std::uint64_t>("seed", [](const std::string& s) { return parse_integer<std::uint64_t>(s); });
  if (r.has("invalid_threshold")) spec.invalid_threshold = r.scalar<std::size_t>("invalid_threshold", count);
  if (r.has("use_fm")) spec.use_fm = r.scalar<bool>("use_fm", detail::parse_bool);
  if (r.has("noise")) spec.noise = r.scalar<double>("noise", real);
  if (r.has("learning_rate")) spec.train.learning_rate = static_cast<float>(r.scalar<double>("learning_rate", real));
  if (r.has("epochs")) spec.train.epochs = r.scalar<std::size_t>("epochs", count);
  if (r.has("batch_size")) spec.train.batch_size = r.scalar<std::size_t>("batch_size", count);
  if (r.has("patience")) spec.train.patience = r.scalar<std::size_t>("patience", count);
  if (r.has("output")) spec.output = r.scalar<std::string>("output", [](const std::string& s) { return s; });
  if (r.has("format"))
    spec.format = r.scalar<OutputFormat>("format", [](const std::string& s) {
      if (s == "csv") return OutputFormat::csv;
      if (s == "jsonl") return OutputFormat::jsonl;
      throw ConfigError("unknown format '" + s + "' (csv, jsonl)");
    });
  if (r.has("timing")) spec.timing = r.scalar<bool>("timing", detail::parse_bool);
  if (r.has("threads")) spec.threads = r.scalar<std::size_t>("threads", count);

  // Range checks, attributed to the offending line.
  const auto check = [&](const std::string& key, bool ok, const std::string& what) {
    if (!ok) throw ConfigError((r.has(key) ? r.where(key) : "config (" + key + "): ") + what);
  };
  for (const auto b : spec.ber) check("ber", b >= 0.0 && b <= 1.0, "ber value " + format_real(b) + " outside [0, 1]");
  for (const auto s : spec.sparsity) check("sparsity", s > 0.0 && s < 1.0, "sparsity " + format_real(s) + " outside (0, 1)");
  check("runs", spec.runs >= 1, "runs must be >= 1");
  check("n_samples", spec.n_samples >= 1, "n_samples must be >= 1");
  check("noise", spec.noise >= 0.0, "noise must be >= 0");
  check("clip_T", spec.policy.clip.threshold > 0.0f, "clip_T must be > 0");
  check("abft_tolerance", spec.policy.abft_tolerance > 0.0f, "abft_tolerance must be > 0");
  check("invalid_threshold", spec.invalid_threshold >= 1, "invalid_threshold must be >= 1");
  for (const auto d : spec.mlp_depth) check("mlp_depth", d >= 1, "mlp_depth must be >= 1");
  for (const auto d : spec.mlp_hidden) check("mlp_hidden", d >= 1, "mlp_hidden must be >= 1");
  for (const auto d : spec.embed_dim) check("embed_dim", d >= 1, "embed_dim must be >= 1");
  check("dense_dim", spec.dense_dim >= 1, "dense_dim must be >= 1");
  check("sparse_dim", spec.sparse_dim >= 1, "sparse_dim must be >= 1");
  check("batch_size", spec.train.batch_size >= 1, "batch_size must be >= 1");
  spec.validate();
  return spec;
}

inline CampaignSpec parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------------------
// Result tables.

inline const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols{
      "experiment", "mlp_depth", "mlp_hidden", "embed_dim", "dense_dim", "sparse_dim",
      "sparsity",   "target",    "mitigation", "clip_mode", "clip_T",    "ber",
      "run_seed",   "metric",    "value",      "n_inf",     "n_nan",     "classification"};
  return cols;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (const char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::vector<std::string> record_fields(const RunRecord& r) {
  return {to_string(r.experiment),
          std::to_string(r.model.mlp_depth),
          std::to_string(r.model.mlp_hidden),
          std::to_string(r.model.embed_dim),
          std::to_string(r.model.dense_dim),
          std::to_string(r.model.sparse_dim),
          format_real(r.sparsity),
          r.target,
          r.mitigation,
          to_string(r.clip_mode),
          format_real(r.clip_T),
          format_real(r.ber),
          std::to_string(r.run_seed),
          r.metric,
          format_real(r.value),
          std::to_string(r.n_inf),
          std::to_string(r.n_nan),
          to_string(r.classification)};
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

inline void write_results(std::ostream& os, const std::vector<RunRecord>& records, OutputFormat format,
                          bool timing = false) {
  if (format == OutputFormat::csv) {
    const auto& cols = results_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    if (timing) os << ",wall_time_s";
    os << '\n';
    for (const auto& r : records) {
      const auto f = detail::record_fields(r);
      for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << detail::csv_field(f[i]);
      if (timing) os << ',' << format_real(r.wall_time_s);
      os << '\n';
    }
    return;
  }
  const auto real = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return format_real(v);
  };
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["experiment"] = to_string(r.experiment);
    j["mlp_depth"] = r.model.mlp_depth;
    j["mlp_hidden"] = r.model.mlp_hidden;
    j["embed_dim"] = r.model.embed_dim;
    j["dense_dim"] = r.model.dense_dim;
    j["sparse_dim"] = r.model.sparse_dim;
    j["sparsity"] = real(r.sparsity);
    j["target"] = r.target;
    j["mitigation"] = r.mitigation;
    j["clip_mode"] = to_string(r.clip_mode);
    j["clip_T"] = real(r.clip_T);
    j["ber"] = real(r.ber);
    j["run_seed"] = r.run_seed;
    j["metric"] = r.metric;
    j["value"] = real(r.value);
    j["n_inf"] = r.n_inf;
    j["n_nan"] = r.n_nan;
    j["classification"] = to_string(r.classification);
    j["flips"] = r.flips;
    if (r.mitigation == "abft") {
      j["abft_detected"] = r.abft_detected;
      j["abft_unrecoverable"] = r.abft_unrecoverable;
    }
    if (!r.error.empty()) j["error"] = r.error;
    if (timing) j["wall_time_s"] = r.wall_time_s;
    os << j.dump() << '\n';
  }
}

inline void emit_results(const std::vector<RunRecord>& records, OutputFormat format,
                         const std::filesystem::path& path, bool timing = false) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write results to '" + path.string() + "'");
  write_results(os, records, format, timing);
  if (!os) throw Error("write to '" + path.string() + "' failed");
}

inline std::vector<RunRecord> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw LoadError("results: empty file");
  const auto header = detail::split_csv_line(line);
  const auto& cols = results_columns();
  if (header.size() < cols.size() || !std::equal(cols.begin(), cols.end(), header.begin()))
    throw LoadError("results: unexpected header");
  const bool timing = header.size() > cols.size() && header[cols.size()] == "wall_time_s";
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size()) throw LoadError("results line " + std::to_string(lineno) + ": wrong field count");
    try {
      RunRecord r;
      if (f[0] == "dummy_rmse") r.experiment = ExperimentKind::dummy_rmse;
      else if (f[0] == "ctr_auc") r.experiment = ExperimentKind::ctr_auc;
      else throw ConfigError("unknown experiment '" + f[0] + "'");
      r.model = {parse_integer<std::size_t>(f[1]), parse_integer<std::size_t>(f[2]), parse_integer<std::size_t>(f[3]),
                 parse_integer<std::size_t>(f[4]), parse_integer<std::size_t>(f[5])};
      r.sparsity = parse_real<double>(f[6]);
      r.target = f[7];
      r.mitigation = f[8];
      r.clip_mode = f[9] == "clamp" ? ClipMode::clamp : ClipMode::zero_outside;
      r.clip_T = parse_real<float>(f[10]);
      r.ber = parse_real<double>(f[11]);
      r.run_seed = parse_integer<std::uint64_t>(f[12]);
      r.metric = f[13];
      r.value = parse_real<double>(f[14]);
      r.n_inf = parse_integer<std::size_t>(f[15]);
      r.n_nan = parse_integer<std::size_t>(f[16]);
      r.classification = parse_classification(f[17]);
      if (timing) r.wall_time_s = parse_real<double>(f[18]);
      out.push_back(std::move(r));
    } catch (const ConfigError& e) {
      throw LoadError("results line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// One cell per (design point, target, mitigation, ber), as the RMSE heat-map figures
// present them: an invalid classification in any run wins (nan over inf); otherwise the
// mean raw value, with RMSE below 0.005 shown as 0.0.
struct FigureCell {
  RunRecord key;  // descriptor fields only
  std::size_t runs = 0;
  std::string cell;
  RunAggregate stats;  // over numeric runs
  std::size_t inf_runs = 0;
  std::size_t nan_runs = 0;
  std::size_t error_runs = 0;
};

inline std::string rmse_display(double rmse) {
  if (rmse < kRmseDisplayFloor) return "0.0";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", rmse);
  return buf;
}

inline std::vector<FigureCell> figure_table(const std::vector<RunRecord>& records) {
  using Key = std::tuple<int, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, double,
                         std::string, std::string, double, std::string>;
  std::map<Key, std::size_t> index;
  std::vector<FigureCell> cells;
  std::vector<std::vector<const RunRecord*>> members;
  for (const auto& r : records) {
    const Key k{static_cast<int>(r.experiment), r.model.mlp_depth, r.model.mlp_hidden, r.model.embed_dim,
                r.model.dense_dim, r.model.sparse_dim, r.sparsity, r.target, r.mitigation, r.ber, r.metric};
    auto [it, fresh] = index.emplace(k, cells.size());
    if (fresh) {
      cells.push_back(FigureCell{r, 0, {}, {}, 0, 0, 0});
      members.emplace_back();
    }
    members[it->second].push_back(&r);
  }
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cell = cells[c];
    std::vector<double> vals;
    for (const auto* r : members[c]) {
      cell.nan_runs += r->classification == Classification::nan;
      cell.inf_runs += r->classification == Classification::inf;
      cell.error_runs += r->classification == Classification::error;
      if (r->classification == Classification::numeric) vals.push_back(r->value);
    }
    const bool any_nan = cell.nan_runs > 0, any_inf = cell.inf_runs > 0;
    cell.runs = members[c].size();
    cell.stats = aggregate_runs(vals);
    const auto& agg = cell.stats;
    const bool rmse = cells[c].key.metric == "rmse";
    if (rmse && any_nan) cells[c].cell = "nan";
    else if (rmse && any_inf) cells[c].cell = "inf";
    else if (agg.finite_count == 0) cells[c].cell = "nan";
    else if (rmse) cells[c].cell = rmse_display(agg.mean);
    else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", agg.mean);
      cells[c].cell = buf;
    }
  }
  return cells;
}

inline void write_figure_table(std::ostream& os, const std::vector<FigureCell>& cells) {
  os << "experiment,mlp_depth,mlp_hidden,embed_dim,sparsity,target,mitigation,ber,metric,runs,cell\n";
  for (const auto& c : cells) {
    const auto& k = c.key;
    os << to_string(k.experiment) << ',' << k.model.mlp_depth << ',' << k.model.mlp_hidden << ','
       << k.model.embed_dim << ',' << format_real(k.sparsity) << ',' << detail::csv_field(k.target) << ','
       << k.mitigation << ',' << format_real(k.ber) << ',' << k.metric << ',' << c.runs << ',' << c.cell << '\n';
  }
}

// Per-cell statistics: mean/min/max over numeric runs plus invalid and error counts.
inline void write_summary_table(std::ostream& os, const std::vector<FigureCell>& cells) {
  os << "experiment,mlp_depth,mlp_hidden,embed_dim,sparsity,target,mitigation,ber,metric,runs,numeric_runs,"
        "inf_runs,nan_runs,error_runs,mean,min,max\n";
  for (const auto& c : cells) {
    const auto& k = c.key;
    const bool any = c.stats.finite_count > 0;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    os << to_string(k.experiment) << ',' << k.model.mlp_depth << ',' << k.model.mlp_hidden << ','
       << k.model.embed_dim << ',' << format_real(k.sparsity) << ',' << detail::csv_field(k.target) << ','
       << k.mitigation << ',' << format_real(k.ber) << ',' << k.metric << ',' << c.runs << ','
       << c.stats.finite_count << ',' << c.inf_runs << ',' << c.nan_runs << ',' << c.error_runs << ','
       << format_real(any ? c.stats.mean : nan) << ',' << format_real(any ? c.stats.min : nan) << ','
       << format_real(any ? c.stats.max : nan) << '\n';
  }
}

}  // namespace drsfi
