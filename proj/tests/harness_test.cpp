#include <fstream>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "walab/errors.hpp"
#include "walab/harness.hpp"

using namespace walab;
using walab::testing::read_text;
using walab::testing::strip_wallclock;
using walab::testing::TempDir;

namespace {

TrainPlan blob_plan(std::vector<ControllerKind> kinds) {
  TrainPlan p;
  p.name = "blobs-test";
  p.model.name = "mlp";
  p.model.mlp_dims = {8, 16, 4};
  p.dataset.name = "blobs";
  p.dataset.blob_train_per_class = 48;
  p.dataset.blob_test_per_class = 16;
  p.schedule = sched::Backbone{4, 0.1, 0.02, 0.5, 0.9};
  p.controllers = std::move(kinds);
  p.batch_size = 32;
  p.total_epochs = 4;
  p.averaging.swa_epochs = 2;
  p.averaging.pswa_start_epoch = 1;
  p.averaging.pswa_period_epochs = 2;
  p.eval.train_eval_samples = 0;
  return p;
}

std::string metrics(const std::filesystem::path& run, const char* kind, int seed) {
  return read_text(run / kind / ("seed" + std::to_string(seed)) / "metrics.csv");
}

}  // namespace

TEST(Presets, CaseOneBackbone) {
  const auto p = std::get<TrainPlan>(preset("case1-backbone"));
  EXPECT_EQ(p.schedule, (ScheduleParams{sched::Backbone{160, 0.05, 0.01, 0.5, 0.9}}));
  EXPECT_EQ(p.total_epochs, 160);
  EXPECT_EQ(p.batch_size, 128u);
}

TEST(Presets, CaseTwoIsThirtyEpochs) { EXPECT_EQ(std::get<TrainPlan>(preset("case2-backbone")).total_epochs, 30); }

TEST(Presets, Table3DeskUsesPlainSgd) {
  const auto p = std::get<TrainPlan>(preset("table3-desk"));
  EXPECT_EQ(p.optimizer, (OptimizerConfig{SgdConfig{0.0, 0.0}}));
  EXPECT_EQ(p.controllers, (std::vector<ControllerKind>{ControllerKind::sgd, ControllerKind::swa, ControllerKind::dswa}));
  EXPECT_EQ(p.dataset.subset_per_class, 1000u);
  EXPECT_EQ(p.total_epochs, 30);
  EXPECT_EQ(p.seeds, 3);
}

TEST(Presets, Fig4DeskScaling) {
  const auto p = std::get<TrainPlan>(preset("fig4-desk"));
  EXPECT_EQ(p.optimizer, (OptimizerConfig{SgdConfig{0.9, 5e-4}}));
  EXPECT_EQ(p.averaging.pswa_start_epoch, 8);
  EXPECT_EQ(p.averaging.pswa_period_epochs, 4);
  EXPECT_EQ(p.averaging.pswa_samples_per_epoch, 1);
  EXPECT_EQ(p.total_epochs, 32);
}

TEST(Presets, UnknownNameListsPresets) {
  try {
    (void)preset("table9");
    FAIL() << "unknown preset accepted";
  } catch (const UsageError& e) {
    for (const auto& name : preset_names()) EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << name;
  }
  EXPECT_EQ(preset_names().size(), 7u);
}

TEST(Presets, AllValidate) {
  for (const auto& name : preset_names()) {
    EXPECT_NO_THROW(std::visit([](const auto& p) { validate(p); }, preset(name))) << name;
  }
}

TEST(Presets, EveryNumericFieldHasProvenance) {
  const std::regex numeric(R"(^\w+ = \[?-?[0-9])");
  const std::regex tagged(R"(# (reference|scaled|decision): )");
  for (const auto& name : preset_names()) {
    std::istringstream in(emit_plan_toml(preset(name)));
    for (std::string line; std::getline(in, line);) {
      if (std::regex_search(line, numeric)) EXPECT_TRUE(std::regex_search(line, tagged)) << name << ": " << line;
    }
  }
}

TEST(Toml, RoundTripsPresetsAndCustomPlans) {
  std::vector<Plan> plans;
  for (const auto& name : preset_names()) plans.push_back(preset(name));
  TrainPlan adam = blob_plan({ControllerKind::tswa, ControllerKind::pswa});
  adam.optimizer = AdamConfig{0.8, 0.99, 1e-7};
  adam.schedule = sched::CyclicLinear{7, 0.2, 0.01};
  adam.averaging.swa_lr_low = 0.01;
  adam.averaging.cycle_iters = 3;
  adam.probe = ProbeChoice{true, -1.0, 2.0, 31};
  adam.eval.average_every_epoch = false;
  adam.seed = 123456789012345ULL;
  plans.push_back(adam);
  TrainPlan constant = blob_plan({ControllerKind::sgd});
  constant.schedule = sched::Constant{0.3};
  plans.push_back(constant);
  for (const auto& plan : plans) {
    const std::string text = emit_plan_toml(plan);
    EXPECT_EQ(parse_plan_toml(text), plan) << text;
    EXPECT_EQ(emit_plan_toml(parse_plan_toml(text)), emit_plan_toml(Plan{plan})) << "provenance lost";
  }
}

TEST(Toml, FileOverlaysPreset) {
  const auto base = preset("table3-desk");
  const auto plan = std::get<TrainPlan>(parse_plan_toml("[run]\nseed = 7\n", base));
  auto expected = std::get<TrainPlan>(base);
  expected.seed = 7;
  EXPECT_EQ(plan, expected);
  const auto named = std::get<TrainPlan>(parse_plan_toml("preset = \"table3-desk\"\n[controller]\nswa_epochs = 4\n"));
  EXPECT_EQ(named.averaging.swa_epochs, 4);
  EXPECT_EQ(named.name, "table3-desk");
}

TEST(Toml, Errors) {
  EXPECT_THROW((void)parse_plan_toml("[run\nseed = 1"), FormatError);
  EXPECT_THROW((void)parse_plan_toml("[run]\nsed = 1\n"), SpecError);
  EXPECT_THROW((void)parse_plan_toml("[runs]\nseed = 1\n"), SpecError);
  EXPECT_THROW((void)parse_plan_toml("[run]\nseed = \"one\"\n"), SpecError);
  EXPECT_THROW((void)parse_plan_toml("kind = \"other\"\n"), SpecError);
  EXPECT_THROW((void)load_plan_toml("/nonexistent/plan.toml"), FormatError);
}

TEST(Validate, RejectsBadPlans) {
  auto p = blob_plan({ControllerKind::dswa});
  p.averaging.swa_epochs = 3;
  EXPECT_THROW(validate(p), SpecError);
  p = blob_plan({ControllerKind::sgd, ControllerKind::sgd});
  EXPECT_THROW(validate(p), SpecError);
  p = blob_plan({ControllerKind::swa});
  p.probe.enabled = true;
  EXPECT_THROW(validate(p), SpecError);
  p = blob_plan({ControllerKind::sgd});
  p.model.name = "toy_cnn";
  EXPECT_THROW(validate(p), SpecError);
  EXPECT_THROW((void)controller_from_string("ema"), SpecError);
}

TEST(SeedStreams, Independent) {
  const auto s = seed_streams(3);
  EXPECT_NE(s.init, s.shuffle);
  EXPECT_NE(s.data, s.noise);
  EXPECT_EQ(s.init, seed_streams(3).init);
  EXPECT_NE(s.init, seed_streams(4).init);
}

TEST(MetricsCsv, RoundTrip) {
  TempDir dir("metrics");
  const MetricsRecord r{3, 0.05, 1.234567891, 0.5, 0.25, "swa_live", 12.5};
  {
    std::ofstream out(dir / "metrics.csv");
    write_metrics_header(out);
    write_metrics_row(out, r);
  }
  EXPECT_EQ(read_text(dir / "metrics.csv"),
            "epoch,lr,train_loss,train_acc,test_acc,controller_tag,wallclock_s\n3,0.05,1.23457,0.5,0.25,swa_live,12.5\n");
  const auto rows = read_metrics_csv(dir / "metrics.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].controller_tag, "swa_live");
  EXPECT_DOUBLE_EQ(rows[0].train_loss, 1.23457);
  {
    std::ofstream out(dir / "metrics.csv");
    out << "epoch,lr\n";
  }
  EXPECT_THROW((void)read_metrics_csv(dir / "metrics.csv"), FormatError);
}

TEST(RunPlan, ZeroEpochsWritesHeaderAndInitWeights) {
  TempDir dir("zero");
  auto p = blob_plan({ControllerKind::sgd});
  p.total_epochs = 0;
  const auto summary = run_plan(p, dir.path());
  EXPECT_EQ(metrics(dir.path(), "sgd", 0), "epoch,lr,train_loss,train_acc,test_acc,controller_tag,wallclock_s\n");
  const Model model(plan_model(p));
  EXPECT_EQ(read_checkpoint(dir / "sgd/seed0/checkpoints/final.wav"), model.init_weights(seed_streams(0).init));
  ASSERT_EQ(summary.members.size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / ".lock"));
}

TEST(RunPlan, SameSeedSameMetrics) {
  TempDir a("det_a"), b("det_b");
  const auto p = blob_plan({ControllerKind::sgd, ControllerKind::swa, ControllerKind::pswa});
  (void)run_plan(p, a.path());
  (void)run_plan(p, b.path());
  for (const char* kind : {"sgd", "swa", "pswa"}) {
    EXPECT_EQ(strip_wallclock(metrics(a.path(), kind, 0)), strip_wallclock(metrics(b.path(), kind, 0))) << kind;
  }
  EXPECT_EQ(read_checkpoint(a / "swa/seed0/checkpoints/final.wav"), read_checkpoint(b / "swa/seed0/checkpoints/final.wav"));
}

TEST(RunPlan, BundleSharesBackbonePrefix) {
  TempDir dir("bundle");
  (void)run_plan(blob_plan({ControllerKind::sgd, ControllerKind::swa, ControllerKind::dswa}), dir.path());
  const auto sgd = read_metrics_csv(dir / "sgd/seed0/metrics.csv");
  ASSERT_EQ(sgd.size(), 4u);
  for (const char* kind : {"swa", "dswa"}) {
    const auto rows = read_metrics_csv(dir.path() / kind / "seed0/metrics.csv");
    ASSERT_GT(rows.size(), sgd.size());
    for (std::size_t i = 0; i < sgd.size(); ++i) {
      EXPECT_EQ(rows[i].test_acc, sgd[i].test_acc);
      EXPECT_EQ(rows[i].controller_tag, "sgd");
    }
    EXPECT_EQ(rows.back().controller_tag, kind);
    EXPECT_EQ(rows.back().epoch, 6);
  }
}

TEST(RunPlan, MemberConfigReproducesMember) {
  TempDir bundle("member_bundle");
  const auto p = blob_plan({ControllerKind::sgd, ControllerKind::dswa, ControllerKind::pswa});
  (void)run_plan(p, bundle.path());
  for (const char* kind : {"sgd", "dswa", "pswa"}) {
    TempDir alone(std::string("member_") + kind);
    const auto member = load_plan_toml(bundle.path() / kind / "seed0/config.toml");
    (void)run_plan(member, alone.path());
    EXPECT_EQ(strip_wallclock(metrics(alone.path(), kind, 0)), strip_wallclock(metrics(bundle.path(), kind, 0)))
        << kind;
  }
}

TEST(RunPlan, ProbeWritesCsv) {
  TempDir dir("probe");
  auto p = blob_plan({ControllerKind::swa, ControllerKind::dswa});
  p.probe = ProbeChoice{true, 0.0, 1.0, 5};
  (void)run_plan(p, dir.path());
  const auto csv = read_text(dir / "probe/seed0/probe.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,train_loss,test_error");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST(RunPlan, LockedDirectoryIsUsageError) {
  TempDir dir("lock");
  { std::ofstream(dir / ".lock") << ""; }
  EXPECT_THROW((void)run_plan(blob_plan({ControllerKind::sgd}), dir.path()), UsageError);
}

TEST(RunPlan, MissingDataIsFormatError) {
  TempDir dir("nodata");
  TrainPlan p = std::get<TrainPlan>(preset("table3-desk"));
  RunOptions o;
  o.data_dir = dir / "empty";
  EXPECT_THROW((void)run_plan(p, dir / "out", o), FormatError);
}

TEST(RunPlan, QuadPlanWritesVarianceTable) {
  TempDir dir("quad");
  QuadPlan q = std::get<QuadPlan>(preset("quad-variance"));
  q.seeds = 30;
  q.base.steps = 400;
  q.windows = {1, 50};
  (void)run_plan(q, dir.path());
  const auto csv = read_text(dir / "variance.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 2);
}

TEST(Compare, SingleRunTableIsItsMetrics) {
  TempDir dir("cmp_one");
  (void)run_plan(blob_plan({ControllerKind::sgd}), dir.path());
  const auto cmp = compare_runs({dir / "sgd/seed0"});
  const auto rows = read_metrics_csv(dir / "sgd/seed0/metrics.csv");
  ASSERT_EQ(cmp.groups, (std::vector<std::string>{"sgd"}));
  ASSERT_EQ(cmp.epochs.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(cmp.table[0][i], rows[i].test_acc);
}

TEST(Compare, IdenticalSeedsHaveZeroStd) {
  TempDir a("cmp_a"), b("cmp_b");
  const auto p = blob_plan({ControllerKind::sgd, ControllerKind::swa});
  (void)run_plan(p, a.path());
  (void)run_plan(p, b.path());
  const auto cmp = compare_runs({a.path(), b.path()});
  ASSERT_EQ(cmp.finals.size(), 2u);
  for (const auto& g : cmp.finals) {
    EXPECT_EQ(g.runs, 2u);
    EXPECT_EQ(g.std, 0.0);
  }
  std::ostringstream csv;
  write_comparison_csv(csv, cmp);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "epoch,sgd,swa");
}

TEST(Compare, MeanStdFormatting) {
  EXPECT_EQ(format_mean_std(0.6727, 0.0029), "67.27±0.29");
  EXPECT_EQ(format_mean_std(0.571, 0.0), "57.10±0.00");
}

TEST(Compare, MissingMetricsNamesDirectory) {
  TempDir dir("cmp_empty");
  try {
    (void)compare_runs({dir.path()});
    FAIL() << "empty directory accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(dir.path().string()), std::string::npos);
  }
}
