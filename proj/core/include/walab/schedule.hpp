#pragma once

#include <cstdint>
#include <string>
#include <variant>

namespace walab {

namespace sched {

/// High plateau, linear decay, low plateau. Segment boundaries are in
/// epochs: [0, plateau_frac*L) at high, linear to low over
/// [plateau_frac*L, decay_end_frac*L), low afterwards.
struct Backbone {
  double total_epochs = 160;
  double high = 0.05;
  double low = 0.01;
  double plateau_frac = 0.5;
  double decay_end_frac = 0.9;

  friend bool operator==(const Backbone&, const Backbone&) = default;
};

struct Constant {
  double lr = 0.05;

  friend bool operator==(const Constant&, const Constant&) = default;
};

/// Linear decay from `high` at the first iteration of every cycle to `low`
/// at its last iteration, then reset.
struct CyclicLinear {
  std::int64_t cycle_iters = 1;
  double high = 0.05;
  double low = 0.01;

  friend bool operator==(const CyclicLinear&, const CyclicLinear&) = default;
};

}  // namespace sched

struct ScheduleSpec {
  std::variant<sched::Backbone, sched::Constant, sched::CyclicLinear> params;
  std::int64_t steps_per_epoch = 1;

  [[nodiscard]] static ScheduleSpec backbone(double total_epochs, double high, double low,
                                             std::int64_t steps_per_epoch, double plateau_frac = 0.5,
                                             double decay_end_frac = 0.9);
  [[nodiscard]] static ScheduleSpec constant(double lr, std::int64_t steps_per_epoch);
  [[nodiscard]] static ScheduleSpec cyclic_linear(std::int64_t cycle_iters, double high, double low,
                                                  std::int64_t steps_per_epoch);

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

/// "backbone", "constant" or "cyclic_linear".
[[nodiscard]] std::string kind_name(const ScheduleSpec& spec);

/// Throws SpecError on a non-positive rate, high < low, bad fractions, or a
/// non-positive cycle / steps_per_epoch.
void validate(const ScheduleSpec& spec);

/// Learning rate used for (0-based) `iteration`. The backbone schedule is
/// evaluated at the fractional epoch iteration / steps_per_epoch.
[[nodiscard]] double lr_at(const ScheduleSpec& spec, std::int64_t iteration);

/// Backbone schedule at a (possibly fractional) epoch.
[[nodiscard]] double backbone_lr_at_epoch(const sched::Backbone& b, double epoch);

[[nodiscard]] constexpr std::int64_t epoch_of(std::int64_t iteration, std::int64_t steps_per_epoch) {
  return iteration / steps_per_epoch;
}

}  // namespace walab
