#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <tuple>

#include "drsfi/campaign.hpp"

using namespace drsfi;

namespace {

CampaignSpec small_dummy() {
  CampaignSpec s;
  s.mlp_depth = {1};
  s.mlp_hidden = {8, 16};
  s.embed_dim = {8};
  s.dense_dim = 16;
  s.sparse_dim = 200;
  s.sparsity = {0.02};
  s.ber = {1e-7, 1e-3};
  s.mitigation = {MitigationKind::none, MitigationKind::clip};
  s.runs = 3;
  s.seed = 5;
  s.threads = 1;
  return s;
}

CampaignSpec small_ctr() {
  CampaignSpec s = CampaignSpec::defaults(ExperimentKind::ctr_auc);
  s.mlp_hidden = {16};
  s.embed_dim = {8};
  s.mlp_depth = {1};
  s.dense_dim = 8;
  s.sparse_dim = 60;
  s.sparsity = {0.1};
  s.n_samples = 2000;
  s.train.epochs = 3;
  s.runs = 2;
  s.seed = 6;
  s.threads = 1;
  return s;
}

std::string csv(const std::vector<RunRecord>& r) {
  std::ostringstream os;
  write_results(os, r, OutputFormat::csv);
  return os.str();
}

}  // namespace

TEST(Campaign, RecordCountAndCanonicalOrder) {
  auto s = small_dummy();
  s.targets = {TargetSelector::entire_model(), TargetSelector::embedding()};
  const auto records = run_campaign(s);
  EXPECT_EQ(records.size(), s.record_count());
  EXPECT_EQ(records.size(), 2u * 2u * 2u * 2u * 3u);
  EXPECT_EQ(records.front().model.mlp_hidden, 8u);
  EXPECT_EQ(records.back().model.mlp_hidden, 16u);
  for (const auto& r : records) {
    EXPECT_EQ(r.metric, "rmse");
    EXPECT_TRUE(r.error.empty()) << r.error;
  }
}

TEST(Campaign, ZeroBerGivesZeroRmse) {
  auto s = small_dummy();
  s.ber = {0.0};
  s.runs = 1;
  s.mitigation = {MitigationKind::none, MitigationKind::clip, MitigationKind::abft, MitigationKind::sbp};
  for (const auto& r : run_campaign(s)) {
    EXPECT_EQ(r.value, 0.0) << r.mitigation;
    EXPECT_EQ(r.flips, 0u);
    EXPECT_EQ(r.classification, Classification::numeric);
    EXPECT_EQ(r.abft_detected, 0u);
  }
}

TEST(Campaign, ZeroBerGivesBaselineAuc) {
  auto s = small_ctr();
  s.ber = {0.0, 1e-2};
  s.runs = 1;
  const auto records = run_campaign(s);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].metric, "auc");
  EXPECT_GT(records[0].value, 0.6);
  EXPECT_NEAR(records[1].value, 0.5, 0.1);
  EXPECT_GT(records[1].flips, 0u);
}

TEST(Campaign, DeterministicAcrossRerunsAndThreadCounts) {
  auto s = small_dummy();
  const auto a = csv(run_campaign(s));
  EXPECT_EQ(a, csv(run_campaign(s)));
  s.threads = 3;
  EXPECT_EQ(a, csv(run_campaign(s)));
  s.seed = 6;
  EXPECT_NE(a, csv(run_campaign(s)));
}

TEST(Campaign, MitigationsShareErrorMaps) {
  auto s = small_dummy();
  s.mitigation = {MitigationKind::none, MitigationKind::clip, MitigationKind::abft};
  std::map<std::tuple<std::size_t, double, std::uint64_t>, std::vector<std::size_t>> flips;
  for (const auto& r : run_campaign(s)) flips[{r.model.mlp_hidden, r.ber, r.run_seed}].push_back(r.flips);
  EXPECT_EQ(flips.size(), 2u * 2u * 3u);
  for (const auto& [key, f] : flips) {
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0], f[1]);
    EXPECT_EQ(f[0], f[2]);
  }
}

TEST(Campaign, SeverityGrowsFromLowToMidBer) {
  auto s = small_dummy();
  s.mlp_hidden = {16};
  s.ber = {1e-7, 1e-6, 1e-4};
  s.mitigation = {MitigationKind::none};
  s.runs = 10;
  const auto cells = figure_table(run_campaign(s));
  ASSERT_EQ(cells.size(), 3u);
  const auto badness = [](const FigureCell& c) {
    return std::pair{c.inf_runs + c.nan_runs, c.stats.finite_count ? c.stats.mean : 0.0};
  };
  EXPECT_LE(badness(cells[0]), badness(cells[1]));
  EXPECT_LE(badness(cells[1]), badness(cells[2]));
}

TEST(Campaign, SbpKeepsOutputsFinite) {
  auto s = small_dummy();
  s.ber = {1e-2};
  s.mitigation = {MitigationKind::sbp};
  for (const auto& r : run_campaign(s)) {
    EXPECT_GT(r.flips, 0u);
    EXPECT_EQ(r.classification, Classification::numeric);
  }
}

TEST(Config, DefaultsAndOverrides) {
  const auto s = parse_config_text(
      "experiment = dummy_rmse\n"
      "# comment line\n"
      "mlp_hidden = [64, 128]   # trailing comment\n"
      "ber = [1e-9, 1e-3]\n"
      "targets = [entire_model, mlp, \"dummy/top.0.weight+dummy/top.1.weight\"]\n"
      "mitigation = [none, clip]\n"
      "clip_mode = zero_outside\n"
      "clip_T = 4\n"
      "runs = 4\n"
      "seed = 99\n"
      "output = \"out file.csv\"\n");
  EXPECT_EQ(s.experiment, ExperimentKind::dummy_rmse);
  EXPECT_EQ(s.mlp_hidden, (std::vector<std::size_t>{64, 128}));
  EXPECT_EQ(s.embed_dim, (std::vector<std::size_t>{64, 128, 256, 512}));
  EXPECT_EQ(s.ber, (std::vector<double>{1e-9, 1e-3}));
  ASSERT_EQ(s.targets.size(), 3u);
  EXPECT_EQ(s.targets[2], TargetSelector::named({"dummy/top.0.weight", "dummy/top.1.weight"}));
  EXPECT_EQ(s.policy.clip.mode, ClipMode::zero_outside);
  EXPECT_EQ(s.policy.clip.threshold, 4.0f);
  EXPECT_EQ(s.runs, 4u);
  EXPECT_EQ(s.seed, 99u);
  EXPECT_EQ(s.output, "out file.csv");
  EXPECT_EQ(s.record_count(), 2u * 4u * 2u * 3u * 2u * 4u);

  const auto c = parse_config_text("experiment = ctr_auc\n");
  EXPECT_EQ(c.runs, 10u);
  EXPECT_EQ(c.design_points().size(), 1u);
}

TEST(Config, ErrorsNameLineAndKey) {
  const auto message = [](const std::string& text) {
    try {
      parse_config_text(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("experiment = dummy_rmse\nbogus = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nbogus = 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nruns = 2\nruns = 3\n").find("duplicate"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nber = [1.5]\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nber = [-1e-3]\n").find("ber"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nsparsity = [0]\n").find("sparsity"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nruns = two\n").find("runs"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nmitigation = [magic]\n").find("magic"), std::string::npos);
  EXPECT_NE(message("runs = 2\n").find("experiment"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\nber = [1e-3\n").find("unterminated"), std::string::npos);
  EXPECT_NE(message("experiment = dummy_rmse\njust text\n").find("key = value"), std::string::npos);
}

TEST(Results, EmptyRecordsGiveHeaderOnly) {
  const auto text = csv({});
  std::string expected;
  for (const auto& c : results_columns()) expected += (expected.empty() ? "" : ",") + c;
  EXPECT_EQ(text, expected + "\n");
  EXPECT_EQ(results_columns().size(), 18u);
}

TEST(Results, NonFiniteValuesAreText) {
  RunRecord r;
  r.target = "entire_model";
  r.mitigation = "none";
  r.metric = "rmse";
  r.value = std::numeric_limits<double>::quiet_NaN();
  r.classification = Classification::nan;
  const auto text = csv({r});
  EXPECT_NE(text.find(",nan,0,0,nan\n"), std::string::npos);

  std::ostringstream js;
  write_results(js, {r}, OutputFormat::jsonl);
  EXPECT_NE(js.str().find("\"value\":\"nan\""), std::string::npos);
}

TEST(Results, CsvRoundTrip) {
  auto s = small_dummy();
  s.targets = {TargetSelector::named({"dummy/top.0.weight", "dummy/top.1.weight"})};
  const auto records = run_campaign(s);
  std::istringstream is(csv(records));
  const auto back = read_results_csv(is);
  ASSERT_EQ(back.size(), records.size());
  EXPECT_EQ(csv(back), csv(records));
  EXPECT_EQ(back[0].target, "dummy/top.0.weight+dummy/top.1.weight");

  std::istringstream bad("not,a,header\n");
  EXPECT_THROW(read_results_csv(bad), LoadError);
}

TEST(Figure, DisplayFloorAndInvalidPrecedence) {
  EXPECT_EQ(rmse_display(0.004), "0.0");
  EXPECT_EQ(rmse_display(0.0), "0.0");
  EXPECT_EQ(rmse_display(0.25), "0.25");

  RunRecord base;
  base.metric = "rmse";
  base.target = "entire_model";
  base.mitigation = "none";
  auto a = base, b = base, c = base;
  a.value = 0.004;
  b.value = 0.002;
  EXPECT_EQ(figure_table({a, b}).at(0).cell, "0.0");
  c.classification = Classification::inf;
  c.value = 1.0;
  EXPECT_EQ(figure_table({a, c}).at(0).cell, "inf");
  auto d = base;
  d.classification = Classification::nan;
  EXPECT_EQ(figure_table({a, c, d}).at(0).cell, "nan");

  auto auc = base;
  auc.metric = "auc";
  auc.value = 0.75;
  EXPECT_EQ(figure_table({auc}).at(0).cell, "0.7500");
}

TEST(Config, ShippedConfigsParse) {
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(DRSFI_CONFIG_DIR)) {
    if (entry.path().extension() != ".cfg") continue;
    EXPECT_NO_THROW(parse_config(entry.path())) << entry.path();
    ++n;
  }
  EXPECT_GE(n, 4u);
}
