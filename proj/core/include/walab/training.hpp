#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "walab/data.hpp"
#include "walab/nn.hpp"
#include "walab/optim.hpp"

namespace walab {

/// One row of metrics.csv.
struct MetricsRecord {
  std::int64_t epoch = 0;  // completed epochs
  double lr = 0.0;         // rate of the last step taken in this epoch
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::string controller_tag;
  double wallclock_s = 0.0;
};

/// What gets evaluated, and on how much data.
struct EvalPolicy {
  /// Evaluate the running average at every epoch end (otherwise only at the
  /// end of each averaging stage / window).
  bool average_every_epoch = true;
  /// Record the test accuracy of every SWA sample at sampling time.
  bool sample_test = true;
  /// Train-split samples used to score averaged weights; 0 = all. Live rows
  /// report the mean over the epoch's own mini-batches instead.
  std::size_t train_eval_samples = 2048;
  /// Test-split samples used for test accuracy; 0 = all.
  std::size_t test_eval_samples = 0;
  std::size_t eval_batch = 500;

  friend bool operator==(const EvalPolicy&, const EvalPolicy&) = default;
};

/// Totals over the first `limit` samples (0 = all) of `dataset`, evaluated in
/// chunks of `chunk` in storage order.
[[nodiscard]] EvalTotals evaluate(const Model& model, const WeightVector& w, const Dataset& dataset,
                                  std::size_t limit = 0, std::size_t chunk = 500);

/// Live weights plus updater state at a global iteration count.
struct TrainState {
  WeightVector weights;
  Optimizer optimizer;
  std::int64_t iteration = 0;

  [[nodiscard]] static TrainState fresh(WeightVector weights, const OptimizerConfig& config);
};

/// Receives metrics, checkpoints and epoch-end snapshots as a run progresses.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_metrics(const MetricsRecord& /*record*/) {}
  virtual void on_checkpoint(std::string_view /*name*/, const WeightVector& /*w*/) {}
  virtual void on_epoch_end(std::string_view /*tag*/, const TrainState& /*state*/) {}
};

/// Everything a controller needs besides its own plan. The stream fixes the
/// data order: global iteration g reads batch (g / steps, g % steps).
struct TrainContext {
  const Model& model;
  const BatchStream& train;
  const Dataset& test;
  EvalPolicy eval{};
  RunObserver* observer = nullptr;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  [[nodiscard]] std::int64_t steps_per_epoch() const noexcept {
    return static_cast<std::int64_t>(train.steps_per_epoch());
  }
  [[nodiscard]] double elapsed_s() const;
  [[nodiscard]] double test_accuracy(const WeightVector& w) const;
  [[nodiscard]] Evaluation train_evaluation(const WeightVector& w) const;
};

/// Mean train loss/accuracy over the mini-batches of the current epoch,
/// measured before each update.
struct EpochStats {
  EvalTotals totals;
  double last_lr = 0.0;

  void reset() { *this = EpochStats{}; }
};

/// One optimizer step on the batch addressed by state.iteration. Advances
/// the iteration counter. NumericError is rethrown with the iteration.
void train_step(const TrainContext& ctx, TrainState& state, double lr, EpochStats& stats);

}  // namespace walab
