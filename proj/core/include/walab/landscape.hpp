#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "walab/data.hpp"
#include "walab/nn.hpp"

namespace walab {

/// Loss / error curves along (1 - t) * w_a + t * w_b.
struct ProbeResult {
  std::vector<double> ts;
  std::vector<double> train_loss;
  std::vector<double> test_error;  // 1 - accuracy
};

/// Maps a weight vector to (mean loss, accuracy) on some data.
using LossEvaluator = std::function<Evaluation(const WeightVector&)>;

/// `count` evenly spaced points on [t_min, t_max], with 0 and 1 merged in
/// so both endpoints are always probed exactly.
[[nodiscard]] std::vector<double> probe_grid(double t_min = -0.25, double t_max = 1.25, int count = 21);

/// Generic probe. `ts` must be non-empty and strictly increasing. Train loss
/// comes from `train`, test error from `test`.
[[nodiscard]] ProbeResult line_probe(const LossEvaluator& train, const LossEvaluator& test, const WeightVector& w_a,
                                     const WeightVector& w_b, std::span<const double> ts);

struct ProbeOptions {
  std::size_t train_samples = 0;  // 0 = full split
  std::size_t test_samples = 0;
  std::size_t eval_batch = 500;
};

/// Probe of a model on a train / test split pair.
[[nodiscard]] ProbeResult line_probe(const Model& model, const WeightVector& w_a, const WeightVector& w_b,
                                     std::span<const double> ts, const Dataset& train_set, const Dataset& test_set,
                                     const ProbeOptions& options = {});

/// CSV with header `t,train_loss,test_error`, shortest round-trip floats.
void write_probe_csv(std::ostream& out, const ProbeResult& result);
void write_probe_csv(const std::filesystem::path& path, const ProbeResult& result);

}  // namespace walab
