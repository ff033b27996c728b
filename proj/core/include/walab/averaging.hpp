#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "walab/ndcore.hpp"
#include "walab/schedule.hpp"
#include "walab/training.hpp"

namespace walab {

/// One SWA procedure: n optimizer steps under `schedule` (indexed from the
/// start of the procedure), folding the live weights into the running
/// average every `cycle_len` steps.
struct SwaPlan {
  ScheduleSpec schedule;
  std::int64_t cycle_len = 1;
  std::int64_t total_iters = 1;

  friend bool operator==(const SwaPlan&, const SwaPlan&) = default;
};

/// Throws SpecError unless cycle_len >= 1, total_iters >= cycle_len and
/// total_iters is a multiple of cycle_len.
void validate(const SwaPlan& plan);

/// Periodic SWA on top of the backbone schedule.
struct PswaPlan {
  std::int64_t start_epoch = 40;
  std::int64_t period_epochs = 20;
  std::int64_t samples_per_epoch = 1;
  ScheduleSpec backbone_schedule;

  friend bool operator==(const PswaPlan&, const PswaPlan&) = default;
};

void validate(const PswaPlan& plan);

/// Test accuracy of one SWA sample.
struct SampleRecord {
  std::int64_t iteration = 0;  // global iteration after which it was taken
  double test_acc = 0.0;
};

struct ControllerOutput {
  WeightVector final_weights;
  std::vector<MetricsRecord> per_epoch_metrics;
  std::vector<SampleRecord> sampled_weights_metrics;
  /// Optimizer steps performed.
  std::int64_t iterations = 0;
  /// Vectors folded into the (last) running average, including the seed.
  std::uint64_t samples_folded = 0;
  /// Live training state at the end, for controllers that keep one
  /// (sgd_baseline_run, pswa_run).
  std::optional<TrainState> final_state;
};

/// Plain training from `start` (at an epoch boundary) until `total_epochs`
/// epochs are complete, lr = schedule(global iteration). Emits one `tag` row
/// per epoch and a "<tag>_final" checkpoint.
[[nodiscard]] ControllerOutput sgd_baseline_run(const TrainContext& ctx, TrainState start,
                                                const ScheduleSpec& schedule, std::int64_t total_epochs,
                                                const std::string& tag = "sgd");

/// Stochastic weight averaging. The average is seeded with w_init (count 1)
/// and every cycle_len-th step folds the live weights in, so n/c + 1 vectors
/// are averaged. The rewarmed optimizer starts from zero state. Batches are
/// read from global iteration `start_iteration` on.
/// Emits "<tag>_live" and "<tag>" (running average) rows at epoch ends and a
/// "<tag>_stage" checkpoint.
[[nodiscard]] ControllerOutput swa_run(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan,
                                       const OptimizerConfig& optimizer, std::int64_t start_iteration,
                                       const std::string& tag = "swa");

/// `stages` SWA procedures of plan.total_iters / stages steps each, every
/// stage seeded with the previous stage's average. Total steps equal
/// plan.total_iters. Throws SpecError if the split is not exact.
[[nodiscard]] ControllerOutput chained_swa_run(const TrainContext& ctx, const WeightVector& w_init,
                                               const SwaPlan& plan, int stages, const OptimizerConfig& optimizer,
                                               std::int64_t start_iteration, const std::string& tag);

/// Two chained SWA procedures of n/2 steps.
[[nodiscard]] ControllerOutput dswa_run(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan,
                                        const OptimizerConfig& optimizer, std::int64_t start_iteration,
                                        const std::string& tag = "dswa");

/// Three chained SWA procedures of n/3 steps.
[[nodiscard]] ControllerOutput tswa_run(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan,
                                        const OptimizerConfig& optimizer, std::int64_t start_iteration,
                                        const std::string& tag = "tswa");

/// Periodic SWA. Until plan.start_epoch this is plain training under the
/// backbone schedule. Afterwards every window of period_epochs epochs samples
/// the live weights samples_per_epoch times per epoch into a fresh running
/// average; at the window's end the live weights are replaced by that
/// average and the optimizer state is zeroed. The schedule never restarts.
/// Rows: "<tag>" is the controller output at each epoch end (the current
/// window mean inside a window, the live weights otherwise) and
/// "<tag>_live" the live iterate. A run ending inside a window returns that
/// window's mean.
[[nodiscard]] ControllerOutput pswa_run(const TrainContext& ctx, TrainState start, const PswaPlan& plan,
                                        std::int64_t total_epochs, const std::string& tag = "pswa");

}  // namespace walab
