// walab command-line front end.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "walab/errors.hpp"
#include "walab/harness.hpp"
#include "walab/landscape.hpp"
#include "walab/ndcore.hpp"
#include "walab/quadratic.hpp"

namespace fs = std::filesystem;
using namespace walab;

namespace {

struct TrainArgs {
  std::string config;
  std::string preset_name;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data_dir;
  bool progress = false;
};

// flags > file > preset
Plan resolve_plan(const std::string& preset_name, const std::string& config) {
  std::optional<Plan> plan;
  if (!preset_name.empty()) plan = preset(preset_name);
  if (!config.empty()) plan = load_plan_toml(config, plan);
  if (!plan) throw UsageError("give --config FILE or --preset NAME");
  return *plan;
}

int cmd_train(const TrainArgs& a) {
  Plan plan = resolve_plan(a.preset_name, a.config);
  if (a.seed) {
    std::visit([&](auto& p) { p.seed = *a.seed; }, plan);
  }
  const std::string name = std::visit([](const auto& p) { return p.name; }, plan);
  const fs::path out = a.out.empty() ? fs::path("runs") / name : fs::path(a.out);
  RunOptions options{a.data_dir, !a.progress};
  const RunSummary summary = run_plan(plan, out, options);
  fmt::print("{} -> {}\n", name, out.string());
  if (std::holds_alternative<QuadPlan>(plan)) {
    std::ifstream csv(out / "variance.csv");
    std::cout << csv.rdbuf();
    return 0;
  }
  for (const auto& m : summary.members) {
    fmt::print("  {:<5} seed {:<4} final test accuracy {:.4f}\n", to_string(m.kind), m.seed, m.final_test_acc);
  }
  print_comparison(std::cout, compare_runs({out}));
  return 0;
}

struct ProbeArgs {
  std::string ckpt_a;
  std::string ckpt_b;
  double t_min = -0.25;
  double t_max = 1.25;
  int t_count = 21;
  std::string config;
  std::string preset_name;
  std::string out;
  std::string data_dir;
};

int cmd_probe(const ProbeArgs& a) {
  TrainPlan plan;
  plan.dataset.subset_per_class = 1000;
  if (!a.preset_name.empty() || !a.config.empty()) {
    const Plan p = resolve_plan(a.preset_name, a.config);
    if (!std::holds_alternative<TrainPlan>(p)) throw UsageError("probe needs a train plan for model and data");
    plan = std::get<TrainPlan>(p);
  }
  const Model model(plan_model(plan));
  const WeightVector w_a = read_checkpoint(a.ckpt_a);
  const WeightVector w_b = read_checkpoint(a.ckpt_b);
  if (w_a.layout() != model.layout()) {
    throw LayoutError(fmt::format("{} does not hold {} weights", a.ckpt_a, model.spec().name));
  }
  const PlanData data = load_plan_data(plan, RunOptions{a.data_dir, true}, plan.seed);
  const ProbeOptions options{plan.eval.train_eval_samples, plan.eval.test_eval_samples, plan.eval.eval_batch};
  const auto result =
      line_probe(model, w_a, w_b, probe_grid(a.t_min, a.t_max, a.t_count), data.train, data.test, options);
  if (a.out.empty()) {
    write_probe_csv(std::cout, result);
  } else {
    write_probe_csv(fs::path(a.out), result);
  }
  return 0;
}

struct QuadArgs {
  double lr = 0.1;
  std::vector<double> h{1.0};
  double sigma = 1.0;
  std::int64_t steps = 2000;
  std::int64_t window = 50;
  int seeds = 200;
  std::uint64_t seed = 0;
};

int cmd_quad(const QuadArgs& a) {
  QuadSpec spec;
  spec.curvatures = a.h;
  spec.noise_std = a.sigma;
  spec.lr = a.lr;
  spec.steps = a.steps;
  spec.tail_window = a.window;
  const auto report = variance_report(spec, a.seeds, seed_streams(a.seed).noise);
  write_variance_csv_header(std::cout);
  write_variance_csv_row(std::cout, spec, report);
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& csv) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const Comparison cmp = compare_runs(paths);
  print_comparison(std::cout, cmp);
  if (!csv.empty()) {
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write {}", csv));
    write_comparison_csv(out, cmp);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"walab: weight-averaging training lab"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "run a plan from a preset and/or TOML config");
  t->add_option("--config", train.config, "TOML plan; overrides the preset")->check(CLI::ExistingFile);
  t->add_option("--preset", train.preset_name, "preset name (see `walab preset list`)");
  t->add_option("--seed", train.seed, "master seed; overrides file and preset");
  t->add_option("--out", train.out, "output directory (default runs/<plan name>)");
  t->add_option("--data-dir", train.data_dir, "dataset root (default $WALAB_DATA_DIR)");
  t->add_flag("--progress", train.progress, "print every metrics row to stderr");

  ProbeArgs probe;
  auto* p = app.add_subcommand("probe", "loss and error along the line between two checkpoints");
  p->add_option("--ckpt-a", probe.ckpt_a, "checkpoint at t = 0")->required()->check(CLI::ExistingFile);
  p->add_option("--ckpt-b", probe.ckpt_b, "checkpoint at t = 1")->required()->check(CLI::ExistingFile);
  p->add_option("--t-min", probe.t_min, "first t")->capture_default_str();
  p->add_option("--t-max", probe.t_max, "last t")->capture_default_str();
  p->add_option("--t-count", probe.t_count, "evenly spaced points (0 and 1 are always added)")->capture_default_str();
  p->add_option("--config", probe.config, "plan giving model and data")->check(CLI::ExistingFile);
  p->add_option("--preset", probe.preset_name, "preset giving model and data");
  p->add_option("--out", probe.out, "CSV file (default stdout)");
  p->add_option("--data-dir", probe.data_dir, "dataset root (default $WALAB_DATA_DIR)");

  QuadArgs quad;
  auto* q = app.add_subcommand("quad", "noisy quadratic: tail-average vs final-iterate variance");
  q->set_help_flag("--help", "Print this help message and exit");
  q->add_option("--lr", quad.lr, "learning rate")->capture_default_str();
  q->add_option("--h", quad.h, "curvature(s), comma separated")->delimiter(',')->capture_default_str();
  q->add_option("--sigma", quad.sigma, "gradient noise std")->capture_default_str();
  q->add_option("--steps", quad.steps, "iterations")->capture_default_str();
  q->add_option("--window", quad.window, "tail window")->capture_default_str();
  q->add_option("--seeds", quad.seeds, "replicates (>= 30)")->capture_default_str();
  q->add_option("--seed", quad.seed, "master seed")->capture_default_str();

  std::vector<std::string> compare_dirs;
  std::string compare_csv;
  auto* c = app.add_subcommand("compare", "test-accuracy table across runs");
  c->add_option("dirs", compare_dirs, "run or bundle directories")->required();
  c->add_option("--csv", compare_csv, "also write the aligned table as CSV");

  auto* pr = app.add_subcommand("preset", "preset catalogue");
  pr->require_subcommand(1);
  auto* pl = pr->add_subcommand("list", "list presets");
  std::string show_name;
  auto* ps = pr->add_subcommand("show", "print a preset as TOML");
  ps->add_option("name", show_name, "preset name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (t->parsed()) return cmd_train(train);
    if (p->parsed()) return cmd_probe(probe);
    if (q->parsed()) return cmd_quad(quad);
    if (c->parsed()) return cmd_compare(compare_dirs, compare_csv);
    if (pl->parsed()) {
      for (const auto& [name, about] : preset_catalog()) fmt::print("{:<16} {}\n", name, about);
      return 0;
    }
    if (ps->parsed()) {
      std::cout << emit_plan_toml(preset(show_name));
      return 0;
    }
  } catch (const walab::Error& e) {
    fmt::print(stderr, "walab: error: {}\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    fmt::print(stderr, "walab: error: {}\n", e.what());
    return 1;
  }
  return 0;
}
