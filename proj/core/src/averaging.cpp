#include "walab/averaging.hpp"

#include <algorithm>
#include <optional>

#include <fmt/format.h>

#include "walab/errors.hpp"

namespace walab {

namespace {

void emit(const TrainContext& ctx, ControllerOutput& out, MetricsRecord record) {
  record.wallclock_s = ctx.elapsed_s();
  if (ctx.observer) ctx.observer->on_metrics(record);
  out.per_epoch_metrics.push_back(std::move(record));
}

void checkpoint(const TrainContext& ctx, const std::string& name, const WeightVector& w) {
  if (ctx.observer) ctx.observer->on_checkpoint(name, w);
}

MetricsRecord live_row(std::int64_t epoch, const EpochStats& stats, double test_acc, std::string tag) {
  const Evaluation train = stats.totals.mean();
  return MetricsRecord{epoch, stats.last_lr, train.loss, train.accuracy, test_acc, std::move(tag), 0.0};
}

MetricsRecord averaged_row(const TrainContext& ctx, std::int64_t epoch, double lr, const WeightVector& mean,
                           std::string tag) {
  const Evaluation train = ctx.train_evaluation(mean);
  return MetricsRecord{epoch, lr, train.loss, train.accuracy, ctx.test_accuracy(mean), std::move(tag), 0.0};
}

std::int64_t boundary_epoch(const TrainContext& ctx, const TrainState& state, const char* who) {
  const std::int64_t steps = ctx.steps_per_epoch();
  if (state.iteration % steps != 0) {
    throw SpecError(fmt::format("{} must start at an epoch boundary (iteration {}, {} steps/epoch)", who,
                                state.iteration, steps));
  }
  return state.iteration / steps;
}

void require_model_layout(const TrainContext& ctx, const WeightVector& w, const char* who) {
  if (w.layout() != ctx.model.layout() || w.size() != ctx.model.parameter_count()) {
    throw LayoutError(fmt::format("{}: initial weights do not match model {}", who, ctx.model.spec().name));
  }
}

// Algorithm 1 for one stage; appends to `out`.
WeightVector run_swa_stage(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan,
                           const OptimizerConfig& optimizer, std::int64_t start_iteration, const std::string& tag,
                           int stage, ControllerOutput& out) {
  const std::int64_t steps = ctx.steps_per_epoch();
  TrainState state = TrainState::fresh(w_init, optimizer);
  state.iteration = start_iteration;
  RunningAverage average = RunningAverage::seeded(w_init);
  EpochStats stats;

  for (std::int64_t i = 1; i <= plan.total_iters; ++i) {
    train_step(ctx, state, lr_at(plan.schedule, i - 1), stats);

    std::optional<double> live_acc;
    if (i % plan.cycle_len == 0) {
      average = running_average_update(average, state.weights);
      if (ctx.eval.sample_test) {
        live_acc = ctx.test_accuracy(state.weights);
        out.sampled_weights_metrics.push_back(SampleRecord{state.iteration, *live_acc});
      }
    }
    if (state.iteration % steps == 0) {
      const std::int64_t epoch = state.iteration / steps;
      if (!live_acc) live_acc = ctx.test_accuracy(state.weights);
      emit(ctx, out, live_row(epoch, stats, *live_acc, tag + "_live"));
      if (ctx.eval.average_every_epoch || i == plan.total_iters) {
        emit(ctx, out, averaged_row(ctx, epoch, stats.last_lr, average.mean(), tag));
      }
      stats.reset();
    }
  }
  checkpoint(ctx, fmt::format("{}_stage{}", tag, stage), average.mean());
  out.iterations += plan.total_iters;
  out.samples_folded = average.count();
  return average.mean();
}

}  // namespace

void validate(const SwaPlan& plan) {
  validate(plan.schedule);
  if (plan.cycle_len < 1) throw SpecError("SWA cycle length must be >= 1");
  if (plan.total_iters < plan.cycle_len) {
    throw SpecError(fmt::format("SWA needs n >= c (n={}, c={})", plan.total_iters, plan.cycle_len));
  }
  if (plan.total_iters % plan.cycle_len != 0) {
    throw SpecError(fmt::format("SWA needs n to be a multiple of c (n={}, c={})", plan.total_iters, plan.cycle_len));
  }
}

void validate(const PswaPlan& plan) {
  validate(plan.backbone_schedule);
  if (plan.start_epoch < 0) throw SpecError("PSWA start_epoch must be >= 0");
  if (plan.period_epochs < 1) throw SpecError("PSWA period_epochs must be >= 1");
  if (plan.samples_per_epoch < 1) throw SpecError("PSWA samples_per_epoch must be >= 1");
}

ControllerOutput sgd_baseline_run(const TrainContext& ctx, TrainState start, const ScheduleSpec& schedule,
                                  std::int64_t total_epochs, const std::string& tag) {
  validate(schedule);
  require_model_layout(ctx, start.weights, "sgd_baseline_run");
  const std::int64_t steps = ctx.steps_per_epoch();
  TrainState state = std::move(start);
  std::int64_t epoch = boundary_epoch(ctx, state, "sgd_baseline_run");
  const std::int64_t first_iteration = state.iteration;

  ControllerOutput out{state.weights, {}, {}, 0, 0, std::nullopt};
  EpochStats stats;
  while (epoch < total_epochs) {
    stats.reset();
    for (std::int64_t s = 0; s < steps; ++s) train_step(ctx, state, lr_at(schedule, state.iteration), stats);
    ++epoch;
    emit(ctx, out, live_row(epoch, stats, ctx.test_accuracy(state.weights), tag));
    if (ctx.observer) ctx.observer->on_epoch_end(tag, state);
  }
  checkpoint(ctx, tag + "_final", state.weights);
  out.final_weights = state.weights;
  out.iterations = state.iteration - first_iteration;
  out.final_state = std::move(state);
  return out;
}

ControllerOutput chained_swa_run(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan, int stages,
                                 const OptimizerConfig& optimizer, std::int64_t start_iteration,
                                 const std::string& tag) {
  if (stages < 1) throw SpecError("chained SWA needs at least one stage");
  if (plan.total_iters % stages != 0) {
    throw SpecError(fmt::format("{}: n={} is not a multiple of {}", tag, plan.total_iters, stages));
  }
  SwaPlan stage_plan = plan;
  stage_plan.total_iters = plan.total_iters / stages;
  validate(stage_plan);
  validate(optimizer);
  require_model_layout(ctx, w_init, tag.c_str());

  ControllerOutput out{w_init, {}, {}, 0, 0, std::nullopt};
  WeightVector seed = w_init;
  for (int s = 0; s < stages; ++s) {
    seed = run_swa_stage(ctx, seed, stage_plan, optimizer, start_iteration + s * stage_plan.total_iters, tag, s + 1,
                         out);
  }
  out.final_weights = std::move(seed);
  return out;
}

ControllerOutput swa_run(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan,
                         const OptimizerConfig& optimizer, std::int64_t start_iteration, const std::string& tag) {
  return chained_swa_run(ctx, w_init, plan, 1, optimizer, start_iteration, tag);
}

ControllerOutput dswa_run(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan,
                          const OptimizerConfig& optimizer, std::int64_t start_iteration, const std::string& tag) {
  return chained_swa_run(ctx, w_init, plan, 2, optimizer, start_iteration, tag);
}

ControllerOutput tswa_run(const TrainContext& ctx, const WeightVector& w_init, const SwaPlan& plan,
                          const OptimizerConfig& optimizer, std::int64_t start_iteration, const std::string& tag) {
  return chained_swa_run(ctx, w_init, plan, 3, optimizer, start_iteration, tag);
}

ControllerOutput pswa_run(const TrainContext& ctx, TrainState start, const PswaPlan& plan, std::int64_t total_epochs,
                          const std::string& tag) {
  validate(plan);
  require_model_layout(ctx, start.weights, "pswa_run");
  const std::int64_t steps = ctx.steps_per_epoch();
  if (plan.samples_per_epoch > steps) {
    throw SpecError(fmt::format("PSWA samples_per_epoch {} exceeds {} steps per epoch", plan.samples_per_epoch, steps));
  }
  // Steps (0-based, within an epoch) after which a sample is taken; the
  // last one is the epoch's final step.
  std::vector<std::int64_t> sample_steps;
  for (std::int64_t j = 1; j <= plan.samples_per_epoch; ++j) {
    sample_steps.push_back(j * steps / plan.samples_per_epoch - 1);
  }

  TrainState state = std::move(start);
  std::int64_t epoch = boundary_epoch(ctx, state, "pswa_run");
  const std::int64_t first_iteration = state.iteration;
  ControllerOutput out{state.weights, {}, {}, 0, 0, std::nullopt};
  std::optional<RunningAverage> window;
  int window_index = 0;
  EpochStats stats;

  while (epoch < total_epochs) {
    const bool in_window = epoch >= plan.start_epoch;
    stats.reset();
    for (std::int64_t s = 0; s < steps; ++s) {
      train_step(ctx, state, lr_at(plan.backbone_schedule, state.iteration), stats);
      if (in_window && std::binary_search(sample_steps.begin(), sample_steps.end(), s)) {
        if (!window) window = RunningAverage::empty(state.weights.layout(), state.weights.size());
        window = running_average_update(*window, state.weights);
      }
    }
    ++epoch;

    const double live_acc = ctx.test_accuracy(state.weights);
    emit(ctx, out, live_row(epoch, stats, live_acc, tag + "_live"));
    if (!in_window) {
      emit(ctx, out, live_row(epoch, stats, live_acc, tag));
    } else {
      const bool boundary = (epoch - plan.start_epoch) % plan.period_epochs == 0;
      if (boundary || ctx.eval.average_every_epoch) {
        emit(ctx, out, averaged_row(ctx, epoch, stats.last_lr, window->mean(), tag));
      }
      if (boundary) {
        state.weights = window->mean();
        state.optimizer.reset();
        window.reset();
        ++window_index;
        checkpoint(ctx, fmt::format("{}_window{}", tag, window_index), state.weights);
      }
    }
    if (ctx.observer) ctx.observer->on_epoch_end(tag, state);
  }

  out.final_weights = window ? window->mean() : state.weights;
  out.samples_folded = window ? window->count() : 0;
  out.iterations = state.iteration - first_iteration;
  out.final_state = std::move(state);
  return out;
}

}  // namespace walab
