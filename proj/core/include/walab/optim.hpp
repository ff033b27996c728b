#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "walab/ndcore.hpp"

namespace walab {

/// Heavy-ball SGD, no dampening, no Nesterov. Weight decay is L2 added to
/// the gradient:
///   g = grad + weight_decay * w;  v = momentum * v + g;  w -= lr * v
struct SgdConfig {
  double momentum = 0.0;
  double weight_decay = 0.0;

  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

/// Bias-corrected Adam.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

[[nodiscard]] std::string describe(const OptimizerConfig& config);
/// Throws SpecError on momentum outside [0, 1), negative decay, betas
/// outside [0, 1) or eps <= 0.
void validate(const OptimizerConfig& config);

struct SgdState {
  WeightVector velocity;
  SgdConfig config;

  [[nodiscard]] static SgdState zero(const WeightVector& like, SgdConfig config);
};

struct AdamState {
  WeightVector m;
  WeightVector v;
  AdamConfig config;
  std::int64_t t = 0;

  [[nodiscard]] static AdamState zero(const WeightVector& like, AdamConfig config);
};

struct SgdStepResult {
  WeightVector w;
  SgdState state;
};

struct AdamStepResult {
  WeightVector w;
  AdamState state;
};

[[nodiscard]] SgdStepResult sgd_step(const WeightVector& w, const WeightVector& grad, double lr,
                                     const SgdState& state);
[[nodiscard]] AdamStepResult adam_step(const WeightVector& w, const WeightVector& grad, double lr,
                                       const AdamState& state);

// In-place forms used by the training loop. Same arithmetic as above.
void sgd_update(WeightVector& w, const WeightVector& grad, double lr, SgdState& state);
void adam_update(WeightVector& w, const WeightVector& grad, double lr, AdamState& state);

/// Owns the state of one configured updater for one parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const WeightVector& like);

  void step(WeightVector& w, const WeightVector& grad, double lr);
  /// Zeroes velocity / moments and the Adam step count.
  void reset();

  [[nodiscard]] const OptimizerConfig& config() const noexcept { return config_; }
  [[nodiscard]] const std::variant<SgdState, AdamState>& state() const noexcept { return state_; }

 private:
  OptimizerConfig config_;
  std::variant<SgdState, AdamState> state_;
};

}  // namespace walab
