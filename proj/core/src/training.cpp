#include "walab/training.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "walab/errors.hpp"

namespace walab {

EvalTotals evaluate(const Model& model, const WeightVector& w, const Dataset& dataset, std::size_t limit,
                    std::size_t chunk) {
  const std::size_t n = limit == 0 ? dataset.size() : std::min(limit, dataset.size());
  chunk = std::max<std::size_t>(chunk, 1);
  EvalTotals totals;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    totals += model.forward_totals(w, dataset.slice(begin, std::min(begin + chunk, n)));
  }
  return totals;
}

TrainState TrainState::fresh(WeightVector weights, const OptimizerConfig& config) {
  Optimizer optimizer(config, weights);
  return TrainState{std::move(weights), std::move(optimizer), 0};
}

double TrainContext::elapsed_s() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
}

double TrainContext::test_accuracy(const WeightVector& w) const {
  return evaluate(model, w, test, eval.test_eval_samples, eval.eval_batch).mean().accuracy;
}

Evaluation TrainContext::train_evaluation(const WeightVector& w) const {
  return evaluate(model, w, train.dataset(), eval.train_eval_samples, eval.eval_batch).mean();
}

void train_step(const TrainContext& ctx, TrainState& state, double lr, EpochStats& stats) {
  const std::int64_t steps = ctx.steps_per_epoch();
  const auto epoch = static_cast<std::uint64_t>(state.iteration / steps);
  const auto step = static_cast<std::size_t>(state.iteration % steps);
  try {
    const Batch batch = ctx.train.next_batch(epoch, step);
    const LossAndGradient result = ctx.model.backward(state.weights, batch);
    state.optimizer.step(state.weights, result.grad, lr);
    stats.totals += result.totals;
    stats.last_lr = lr;
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("iteration {} (epoch {}, step {}): {}", state.iteration, epoch, step, e.what()));
  }
  ++state.iteration;
}

}  // namespace walab
