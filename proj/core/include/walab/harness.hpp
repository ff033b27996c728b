#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "walab/data.hpp"
#include "walab/nn.hpp"
#include "walab/optim.hpp"
#include "walab/quadratic.hpp"
#include "walab/schedule.hpp"
#include "walab/training.hpp"

namespace walab {

enum class ControllerKind { sgd, swa, dswa, tswa, pswa };

[[nodiscard]] const char* to_string(ControllerKind kind);
/// Throws SpecError on an unknown name.
[[nodiscard]] ControllerKind controller_from_string(std::string_view name);

struct ModelChoice {
  std::string name = "toy_cnn";  // toy_cnn | mlp
  std::vector<int> mlp_dims;     // input, hidden..., classes (mlp only)

  friend bool operator==(const ModelChoice&, const ModelChoice&) = default;
};

struct DatasetChoice {
  std::string name = "cifar10";      // cifar10 | mnist | blobs
  std::size_t subset_per_class = 0;  // first K train samples per class; 0 = whole split
  int blob_classes = 4;
  int blob_dim = 8;
  int blob_train_per_class = 64;
  int blob_test_per_class = 32;
  double blob_separation = 6.0;

  friend bool operator==(const DatasetChoice&, const DatasetChoice&) = default;
};

using ScheduleParams = std::variant<sched::Backbone, sched::Constant, sched::CyclicLinear>;

/// Averaging-phase settings shared by the controllers of a plan.
struct AveragingChoice {
  /// SWA budget n in epochs (swa, dswa and tswa all take n steps), run after
  /// the backbone's total_epochs.
  std::int64_t swa_epochs = 10;
  /// Cycle length c in iterations; 0 means one epoch.
  std::int64_t cycle_iters = 0;
  /// Constant rate when equal, else cyclic-linear high -> low per cycle.
  double swa_lr_high = 0.05;
  double swa_lr_low = 0.05;
  std::int64_t pswa_start_epoch = 40;
  std::int64_t pswa_period_epochs = 20;
  std::int64_t pswa_samples_per_epoch = 1;

  friend bool operator==(const AveragingChoice&, const AveragingChoice&) = default;
};

/// Line probe between the final weights of the first two controllers.
struct ProbeChoice {
  bool enabled = false;
  double t_min = -0.25;
  double t_max = 1.25;
  int t_count = 21;

  friend bool operator==(const ProbeChoice&, const ProbeChoice&) = default;
};

/// A training experiment. Listing several controllers makes a bundle: all
/// members share the backbone run (same data order, same init) and it is
/// computed once.
struct TrainPlan {
  std::string name = "custom";
  ModelChoice model;
  DatasetChoice dataset;
  OptimizerConfig optimizer = SgdConfig{};
  ScheduleParams schedule = sched::Backbone{};
  std::vector<ControllerKind> controllers{ControllerKind::sgd};
  AveragingChoice averaging;
  ProbeChoice probe;
  std::size_t batch_size = 128;
  /// Backbone epochs (sgd, pswa: the whole run; swa family: before averaging).
  std::int64_t total_epochs = 30;
  std::uint64_t seed = 0;
  /// Replicates use seeds seed, seed + 1, ..., seed + seeds - 1.
  int seeds = 1;
  EvalPolicy eval;
  /// Field path ("run.batch_size") -> "reference|scaled|decision: note".
  std::map<std::string, std::string> provenance;

  friend bool operator==(const TrainPlan& a, const TrainPlan& b) {
    return a.name == b.name && a.model == b.model && a.dataset == b.dataset && a.optimizer == b.optimizer &&
           a.schedule == b.schedule && a.controllers == b.controllers && a.averaging == b.averaging &&
           a.probe == b.probe && a.batch_size == b.batch_size && a.total_epochs == b.total_epochs &&
           a.seed == b.seed && a.seeds == b.seeds && a.eval == b.eval;
  }
};

/// Noisy-quadratic sweep: one variance row per (lr, window).
struct QuadPlan {
  std::string name = "quad";
  QuadSpec base;
  std::vector<double> lrs{0.1};
  std::vector<std::int64_t> windows{50};
  int seeds = 200;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> provenance;

  friend bool operator==(const QuadPlan& a, const QuadPlan& b) {
    return a.name == b.name && a.base.curvatures == b.base.curvatures && a.base.noise_std == b.base.noise_std &&
           a.base.steps == b.base.steps && a.base.initial == b.base.initial && a.lrs == b.lrs &&
           a.windows == b.windows && a.seeds == b.seeds && a.seed == b.seed;
  }
};

using Plan = std::variant<TrainPlan, QuadPlan>;

/// Throws SpecError on unresolvable names, bad budgets or divisibility.
void validate(const TrainPlan& plan);
void validate(const QuadPlan& plan);

[[nodiscard]] std::vector<std::string> preset_names();
/// Throws UsageError listing the known presets.
[[nodiscard]] Plan preset(std::string_view name);
/// One line per preset: name and a short description.
[[nodiscard]] std::vector<std::pair<std::string, std::string>> preset_catalog();

/// Independent substreams of a master seed.
struct SeedStreams {
  std::uint64_t init;     // derive_seed(master, "init")
  std::uint64_t shuffle;  // derive_seed(master, "shuffle")
  std::uint64_t data;     // derive_seed(master, "data"): synthetic data
  std::uint64_t noise;    // derive_seed(master, "noise"): quadratic noise
};
[[nodiscard]] SeedStreams seed_streams(std::uint64_t master);

/// TOML config. Parsing overlays the file's fields onto `base`, so a
/// preset can supply defaults. FormatError on syntax errors, SpecError on
/// bad values.
[[nodiscard]] Plan parse_plan_toml(std::string_view text, const std::optional<Plan>& base = std::nullopt);
[[nodiscard]] Plan load_plan_toml(const std::filesystem::path& path, const std::optional<Plan>& base = std::nullopt);
/// Every field, each numeric one with its provenance comment.
[[nodiscard]] std::string emit_plan_toml(const Plan& plan);

struct MemberResult {
  ControllerKind kind;
  std::uint64_t seed;
  double final_test_acc;
  std::filesystem::path dir;
};

struct RunSummary {
  std::string plan_name;
  std::vector<MemberResult> members;
};

struct RunOptions {
  std::filesystem::path data_dir;  // dataset root; empty = $WALAB_DATA_DIR
  bool quiet = true;               // no per-epoch progress on stderr
};

struct PlanData {
  Dataset train;  // after subsetting
  Dataset test;
};

/// Model of a plan.
[[nodiscard]] ModelSpec plan_model(const TrainPlan& plan);
/// Train / test splits of a plan; blobs are generated from `seed`.
/// FormatError with fetch instructions when the files are missing.
[[nodiscard]] PlanData load_plan_data(const TrainPlan& plan, const RunOptions& options, std::uint64_t seed);

/// Runs every (seed, controller) member. Layout:
///   out_dir/config.toml, out_dir/summary.json,
///   out_dir/<controller>/seed<s>/{config.toml, metrics.csv, summary.json, checkpoints/*.wav},
///   out_dir/probe/seed<s>/probe.csv (probe plans), out_dir/variance.csv (quad plans).
/// Each member's config.toml reruns that member alone and reproduces its
/// metrics.csv. Holds out_dir/.lock for the duration.
RunSummary run_plan(const Plan& plan, const std::filesystem::path& out_dir, const RunOptions& options = {});

/// `epoch,lr,train_loss,train_acc,test_acc,controller_tag,wallclock_s`
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRecord& record);
/// Throws FormatError naming the file on a bad header or row.
[[nodiscard]] std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

/// One run's test-accuracy curve: the last row of each epoch is the
/// controller output at that epoch.
struct RunCurve {
  std::filesystem::path dir;
  std::string group;  // tag of the final row
  std::vector<std::int64_t> epochs;
  std::vector<double> test_acc;
};

struct GroupStats {
  std::string group;
  std::size_t runs = 0;
  double mean = 0.0;  // final TA
  double std = 0.0;   // sample std, 0 for one run
};

struct Comparison {
  std::vector<RunCurve> runs;
  std::vector<std::string> groups;  // first-seen order
  std::vector<std::int64_t> epochs; // union, ascending
  /// mean TA per group per epoch (NaN when the group has no row there)
  std::vector<std::vector<double>> table;
  std::vector<GroupStats> finals;
};

/// `dirs` may be run directories (holding metrics.csv) or any directory
/// above them. FormatError naming the directory when no metrics are found.
[[nodiscard]] Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);
/// "67.27±0.29" for accuracies given as fractions.
[[nodiscard]] std::string format_mean_std(double mean, double std);
void write_comparison_csv(std::ostream& out, const Comparison& cmp);
void print_comparison(std::ostream& out, const Comparison& cmp);

}  // namespace walab
