#include "walab/schedule.hpp"

#include <cmath>

#include <fmt/format.h>

#include "overloaded.hpp"
#include "walab/errors.hpp"

namespace walab {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw SpecError("schedule: " + message);
}

bool positive_rate(double lr) { return std::isfinite(lr) && lr > 0.0; }

}  // namespace

ScheduleSpec ScheduleSpec::backbone(double total_epochs, double high, double low, std::int64_t steps_per_epoch,
                                    double plateau_frac, double decay_end_frac) {
  ScheduleSpec s{sched::Backbone{total_epochs, high, low, plateau_frac, decay_end_frac}, steps_per_epoch};
  validate(s);
  return s;
}

ScheduleSpec ScheduleSpec::constant(double lr, std::int64_t steps_per_epoch) {
  ScheduleSpec s{sched::Constant{lr}, steps_per_epoch};
  validate(s);
  return s;
}

ScheduleSpec ScheduleSpec::cyclic_linear(std::int64_t cycle_iters, double high, double low,
                                         std::int64_t steps_per_epoch) {
  ScheduleSpec s{sched::CyclicLinear{cycle_iters, high, low}, steps_per_epoch};
  validate(s);
  return s;
}

std::string kind_name(const ScheduleSpec& spec) {
  return std::visit(Overloaded{
                        [](const sched::Backbone&) { return std::string("backbone"); },
                        [](const sched::Constant&) { return std::string("constant"); },
                        [](const sched::CyclicLinear&) { return std::string("cyclic_linear"); },
                    },
                    spec.params);
}

void validate(const ScheduleSpec& spec) {
  require(spec.steps_per_epoch >= 1, "steps_per_epoch must be >= 1");
  std::visit(Overloaded{
                 [](const sched::Backbone& b) {
                   require(b.total_epochs > 0.0, "backbone total_epochs must be positive");
                   require(positive_rate(b.high) && positive_rate(b.low), "learning rates must be > 0");
                   require(b.high >= b.low, fmt::format("C_h ({}) must be >= C_l ({})", b.high, b.low));
                   require(0.0 < b.plateau_frac && b.plateau_frac < b.decay_end_frac && b.decay_end_frac <= 1.0,
                           fmt::format("need 0 < plateau_frac ({}) < decay_end_frac ({}) <= 1", b.plateau_frac,
                                       b.decay_end_frac));
                 },
                 [](const sched::Constant& c) { require(positive_rate(c.lr), "learning rate must be > 0"); },
                 [](const sched::CyclicLinear& c) {
                   require(c.cycle_iters >= 1, "cycle length must be >= 1");
                   require(positive_rate(c.high) && positive_rate(c.low), "learning rates must be > 0");
                   require(c.high >= c.low, fmt::format("alpha1 ({}) must be >= alpha2 ({})", c.high, c.low));
                 },
             },
             spec.params);
}

double backbone_lr_at_epoch(const sched::Backbone& b, double epoch) {
  const double decay_begin = b.plateau_frac * b.total_epochs;
  const double decay_end = b.decay_end_frac * b.total_epochs;
  if (epoch < decay_begin) return b.high;
  if (epoch >= decay_end) return b.low;
  const double frac = (epoch - decay_begin) / (decay_end - decay_begin);
  return b.high + (b.low - b.high) * frac;
}

double lr_at(const ScheduleSpec& spec, std::int64_t iteration) {
  if (iteration < 0) throw RangeError(fmt::format("negative iteration {}", iteration));
  return std::visit(Overloaded{
                        [&](const sched::Backbone& b) {
                          return backbone_lr_at_epoch(
                              b, static_cast<double>(iteration) / static_cast<double>(spec.steps_per_epoch));
                        },
                        [](const sched::Constant& c) { return c.lr; },
                        [&](const sched::CyclicLinear& c) {
                          if (c.cycle_iters == 1) return c.high;
                          const auto pos = static_cast<double>(iteration % c.cycle_iters);
                          return c.high + (c.low - c.high) * (pos / static_cast<double>(c.cycle_iters - 1));
                        },
                    },
                    spec.params);
}

}  // namespace walab
