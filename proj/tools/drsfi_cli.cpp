#include <CLI11.hpp>

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "drsfi/campaign.hpp"
#include "drsfi/checkpoint.hpp"
#include "drsfi/inject.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// "0xFF800000", a decimal word, or field names such as "sign+exponent".
std::uint32_t parse_mask(const std::string& text) {
  using namespace drsfi;
  if (text.rfind("0x", 0) == 0 || text.rfind("0X", 0) == 0) return parse_integer<std::uint32_t>(text.substr(2), 16);
  if (!text.empty() && std::isdigit(static_cast<unsigned char>(text.front()))) return parse_integer<std::uint32_t>(text);
  FieldSet fs;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto c = rest.find_first_of(",+");
    const auto name = trim(rest.substr(0, c));
    if (name == "sign") fs.bits |= static_cast<std::uint8_t>(FloatField::sign);
    else if (name == "exponent") fs.bits |= static_cast<std::uint8_t>(FloatField::exponent);
    else if (name == "mantissa") fs.bits |= static_cast<std::uint8_t>(FloatField::mantissa);
    else throw ConfigError("unknown mask field '" + std::string(name) + "'");
    rest = c == std::string_view::npos ? std::string_view{} : rest.substr(c + 1);
  }
  return sbp_mask(fs);
}

drsfi::ErrorMap read_map_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw drsfi::LoadError("cannot open error map '" + path + "'");
  return drsfi::read_error_map(is);
}

void write_map_file(const drsfi::ErrorMap& map, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw drsfi::Error("cannot write error map '" + path + "'");
  drsfi::write_error_map(os, map);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace drsfi;
  CLI::App app{"Bit-flip robustness campaigns for deep recommendation models"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Execute a campaign config and write its results table");
  std::string config_path;
  std::optional<std::string> run_output, run_format;
  std::optional<std::size_t> run_threads;
  bool run_timing = false, quiet = false;
  run->add_option("config", config_path, "Campaign config file")->required();
  run->add_option("--output", run_output, "Override the config's output path");
  run->add_option("--format", run_format, "Override the output format (csv, jsonl)");
  run->add_option("--threads", run_threads, "Worker threads (0 = all cores)");
  run->add_flag("--timing", run_timing, "Append the wall_time_s column");
  run->add_flag("-q,--quiet", quiet, "No progress output");

  // init
  auto* init = app.add_subcommand("init", "Write a freshly initialized (optionally trained) model checkpoint");
  std::string init_kind = "dummy", init_out;
  DummyModelConfig init_cfg;
  std::uint64_t init_seed = 0;
  bool init_train = false;
  std::size_t init_samples = 20000;
  double init_sparsity = 0.05, init_noise = 1.0;
  init->add_option("--kind", init_kind, "dummy, ctr or ctr_fm")->capture_default_str();
  init->add_option("--mlp-depth", init_cfg.mlp_depth)->capture_default_str();
  init->add_option("--mlp-hidden", init_cfg.mlp_hidden)->capture_default_str();
  init->add_option("--embed-dim", init_cfg.embed_dim)->capture_default_str();
  init->add_option("--dense-dim", init_cfg.dense_dim)->capture_default_str();
  init->add_option("--sparse-dim", init_cfg.sparse_dim)->capture_default_str();
  init->add_option("--seed", init_seed)->capture_default_str();
  init->add_flag("--train", init_train, "Train a CTR model on planted synthetic data");
  init->add_option("--n-samples", init_samples)->capture_default_str();
  init->add_option("--sparsity", init_sparsity)->capture_default_str();
  init->add_option("--noise", init_noise)->capture_default_str();
  init->add_option("--out", init_out, "Checkpoint path")->required();

  // inject
  auto* inject = app.add_subcommand("inject", "Sample an error map for a checkpoint and apply it");
  std::string inj_ckpt, inj_targets = "entire_model", inj_mask = "0";
  double inj_ber = 0.0;
  std::uint64_t inj_seed = 0;
  std::optional<std::string> inj_out, inj_map;
  inject->add_option("checkpoint", inj_ckpt)->required();
  inject->add_option("--ber", inj_ber, "Bit error rate in [0, 1]")->required();
  inject->add_option("--targets", inj_targets, "entire_model, mlp, embedding or parameter names")->capture_default_str();
  inject->add_option("--seed", inj_seed)->capture_default_str();
  inject->add_option("--mask", inj_mask, "Protected bits: hex word or field names (sign+exponent)")->capture_default_str();
  inject->add_option("--out", inj_out, "Write the corrupted checkpoint here");
  inject->add_option("--map", inj_map, "Write the error map here");

  // replay
  auto* replay = app.add_subcommand("replay", "Apply a saved error map to a checkpoint");
  std::string rep_map, rep_ckpt, rep_out;
  replay->add_option("errormap", rep_map)->required();
  replay->add_option("checkpoint", rep_ckpt)->required();
  replay->add_option("--out", rep_out, "Corrupted checkpoint path")->required();

  // report
  auto* report = app.add_subcommand("report", "Summarize a results CSV per design point, target, mitigation and ber");
  std::string results_path;
  bool figure = false;
  std::optional<std::string> report_out;
  report->add_option("results", results_path)->required();
  report->add_flag("--figure-table", figure, "Heat-map cell values (RMSE < 0.005 shown as 0.0)");
  report->add_option("--out", report_out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) {
      CampaignSpec spec = parse_config(config_path);
      if (run_output) spec.output = *run_output;
      if (run_format) {
        if (*run_format == "csv") spec.format = OutputFormat::csv;
        else if (*run_format == "jsonl") spec.format = OutputFormat::jsonl;
        else throw ConfigError("unknown format '" + *run_format + "'");
      }
      if (run_threads) spec.threads = *run_threads;
      spec.timing = spec.timing || run_timing;
      const auto records = run_campaign(spec, [&](const CampaignProgress& p) {
        if (!quiet && (p.done == p.total || p.done % 50 == 0))
          std::cerr << "point " << p.point + 1 << "/" << p.points << ": " << p.done << "/" << p.total << " runs\r"
                    << (p.done == p.total ? "\n" : "") << std::flush;
      });
      emit_results(records, spec.format, spec.output, spec.timing);
      std::size_t errors = 0;
      for (const auto& r : records) errors += r.classification == Classification::error;
      std::cerr << records.size() << " records written to " << spec.output;
      if (errors) std::cerr << " (" << errors << " error rows)";
      std::cerr << "\n";
    } else if (*init) {
      const auto kind = parse_model_kind(init_kind);
      if (!kind) throw ConfigError("unknown model kind '" + init_kind + "'");
      init_cfg.validate();
      ModelGraph model = *kind == ModelKind::dummy ? build_dummy(init_cfg, init_seed)
                                                   : build_ctr(init_cfg, *kind == ModelKind::ctr_fm, init_seed);
      if (init_train) {
        if (*kind == ModelKind::dummy) throw ConfigError("--train requires a ctr or ctr_fm model");
        const auto data = gen_labeled(init_samples, init_cfg, init_sparsity, init_noise, derive_seed({init_seed, 2}));
        TrainConfig tc;
        tc.learning_rate = 0.1f;
        tc.seed = derive_seed({init_seed, 3});
        auto res = train_ctr(std::move(model), data, tc);
        std::cerr << "validation AUC " << format_real(res.baseline_auc) << " after " << res.epochs_run << " epochs\n";
        model = std::move(res.model);
      }
      save_checkpoint(model, init_out);
      std::cerr << model.parameter_count() << " parameters written to " << init_out << "\n";
    } else if (*inject) {
      ModelGraph model = load_checkpoint(inj_ckpt);
      InjectionConfig ic;
      ic.ber = inj_ber;
      ic.targets = TargetSelector::parse(inj_targets);
      ic.protected_bits = parse_mask(inj_mask);
      ic.seed = inj_seed;
      const ErrorMap map = build_error_map(model, ic);
      if (inj_map) write_map_file(map, *inj_map);
      if (inj_out) {
        apply_error_map(model, map);
        save_checkpoint(model, *inj_out);
      }
      std::cout << map.size() << " flips\n";
    } else if (*replay) {
      const ErrorMap map = read_map_file(rep_map);
      ModelGraph model = load_checkpoint(rep_ckpt);
      apply_error_map(model, map);
      save_checkpoint(model, rep_out);
      std::cout << map.size() << " flips\n";
    } else if (*report) {
      std::ifstream is(results_path);
      if (!is) throw LoadError("cannot open results '" + results_path + "'");
      const auto records = read_results_csv(is);
      std::ofstream file;
      if (report_out) {
        file.open(*report_out);
        if (!file) throw Error("cannot write '" + *report_out + "'");
      }
      std::ostream& os = report_out ? static_cast<std::ostream&>(file) : std::cout;
      if (figure) {
        write_figure_table(os, figure_table(records));
      } else {
        write_summary_table(os, figure_table(records));
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
