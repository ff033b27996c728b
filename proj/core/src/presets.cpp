#include <fmt/format.h>
#include <fmt/ranges.h>

#include "walab/errors.hpp"
#include "walab/harness.hpp"

namespace walab {

namespace {

// Provenance notes shared by the CIFAR presets.
void backbone_provenance(TrainPlan& p) {
  auto& m = p.provenance;
  m["schedule.high"] = "reference: C_h";
  m["schedule.low"] = "reference: C_l";
  m["schedule.plateau_frac"] = "reference: first half of the budget at C_h";
  m["schedule.decay_end_frac"] = "decision: end of the linear decay is not given";
  m["run.batch_size"] = "reference: mini-batch size";
  m["schedule.total_epochs"] = "reference: long budget L";
  m["run.total_epochs"] = "reference: long budget L";
  m["dataset.subset_per_class"] = "decision: 0 = full train split";
  m["run.seed"] = "decision: master seed";
  m["run.seeds"] = "decision: seed count";
  m["eval.train_eval_samples"] = "decision: train metrics of averaged weights on a fixed prefix";
  m["eval.test_eval_samples"] = "decision: 0 = full test split";
  m["eval.eval_batch"] = "decision: evaluation chunk";
  m["optimizer.momentum"] = "reference: momentum removed for the averaging comparison";
  m["optimizer.weight_decay"] = "reference: weight decay removed for the averaging comparison";
}

TrainPlan full_backbone(std::string name, double epochs) {
  TrainPlan p;
  p.name = std::move(name);
  p.optimizer = SgdConfig{0.0, 0.0};
  p.schedule = sched::Backbone{epochs, 0.05, 0.01, 0.5, 0.9};
  p.controllers = {ControllerKind::sgd};
  p.total_epochs = static_cast<std::int64_t>(epochs);
  backbone_provenance(p);
  return p;
}

TrainPlan desk(std::string name) {
  TrainPlan p = full_backbone(std::move(name), 30);
  p.dataset.subset_per_class = 1000;
  p.seeds = 3;
  auto& m = p.provenance;
  m["dataset.subset_per_class"] = "scaled: balanced 10k subset of the 50k train split";
  m["schedule.total_epochs"] = "reference: short budget that leaves SGD non-converged";
  m["run.total_epochs"] = "reference: short budget that leaves SGD non-converged";
  m["run.seeds"] = "decision: seed count is not reported";
  m["controller.cycle_iters"] = "reference: one cycle per epoch (0 = one epoch)";
  m["controller.swa_epochs"] = "scaled: averaging budget sized for one core";
  m["controller.swa_lr_high"] = "decision: cyclic averaging rate starts each cycle at the backbone's C_h";
  m["controller.swa_lr_low"] = "decision: and ends it at C_l (best of a small sweep)";
  for (const char* key : {"pswa_start_epoch", "pswa_period_epochs", "pswa_samples_per_epoch"}) {
    m[fmt::format("controller.{}", key)] = "decision: unused by this plan";
  }
  for (const char* key : {"t_min", "t_max", "t_count"}) m[fmt::format("probe.{}", key)] = "decision: unused by this plan";
  return p;
}

TrainPlan table3_desk() {
  TrainPlan p = desk("table3-desk");
  p.controllers = {ControllerKind::sgd, ControllerKind::swa, ControllerKind::dswa};
  p.averaging.swa_epochs = 20;
  p.averaging.swa_lr_high = 0.05;
  p.averaging.swa_lr_low = 0.01;
  return p;
}

TrainPlan table4_desk() {
  TrainPlan p = desk("table4-desk");
  p.controllers = {ControllerKind::sgd, ControllerKind::swa, ControllerKind::dswa, ControllerKind::tswa};
  p.averaging.swa_epochs = 18;
  p.averaging.swa_lr_high = 0.05;
  p.averaging.swa_lr_low = 0.01;
  p.provenance["controller.swa_epochs"] = "scaled: averaging budget divisible by 2 and 3 epochs";
  p.provenance["dataset.subset_per_class"] =
      "scaled: balanced 10k CIFAR-10 subset stands in for the 100-class set";
  return p;
}

TrainPlan fig4_desk() {
  TrainPlan p = desk("fig4-desk");
  p.name = "fig4-desk";
  p.optimizer = SgdConfig{0.9, 5e-4};
  p.schedule = sched::Backbone{32, 0.05, 0.01, 0.5, 0.9};
  p.total_epochs = 32;
  p.controllers = {ControllerKind::sgd, ControllerKind::pswa};
  p.averaging.pswa_start_epoch = 8;
  p.averaging.pswa_period_epochs = 4;
  p.averaging.pswa_samples_per_epoch = 1;
  auto& m = p.provenance;
  m["optimizer.momentum"] = "reference: momentum 0.9";
  m["optimizer.weight_decay"] = "reference: weight decay 0.0005";
  m["schedule.total_epochs"] = "scaled: 160 epochs / 5";
  m["run.total_epochs"] = "scaled: 160 epochs / 5";
  m["controller.pswa_start_epoch"] = "scaled: start after epoch 40 / 5";
  m["controller.pswa_period_epochs"] = "scaled: period of 20 epochs / 5";
  m["controller.pswa_samples_per_epoch"] = "reference: one sample per epoch";
  for (const char* key : {"swa_epochs", "cycle_iters", "swa_lr_high", "swa_lr_low"}) {
    m[fmt::format("controller.{}", key)] = "decision: unused by this plan";
  }
  return p;
}

TrainPlan fig5_probe() {
  TrainPlan p = desk("fig5-probe");
  p.controllers = {ControllerKind::swa, ControllerKind::dswa};
  p.averaging.swa_epochs = 20;
  p.averaging.swa_lr_high = 0.05;
  p.averaging.swa_lr_low = 0.01;
  p.seeds = 1;
  p.probe.enabled = true;
  auto& m = p.provenance;
  m["run.seeds"] = "decision: one probe run";
  m["probe.t_min"] = "decision: range is not given; extends a quarter past each end";
  m["probe.t_max"] = "decision: range is not given; extends a quarter past each end";
  m["probe.t_count"] = "decision: point count is not given";
  return p;
}

QuadPlan quad_variance() {
  QuadPlan q;
  q.name = "quad-variance";
  q.base.curvatures = {1.0};
  q.base.noise_std = 1.0;
  q.base.steps = 2000;
  q.lrs = {0.01, 0.05, 0.1};
  q.windows = {1, 10, 50, 200};
  q.seeds = 200;
  q.seed = 0;
  auto& m = q.provenance;
  m["quad.curvatures"] = "decision: unit curvature";
  m["quad.noise_std"] = "decision: unit gradient noise";
  m["quad.steps"] = "decision: long enough to reach stationarity for every lr";
  m["quad.initial"] = "decision: start at the optimum";
  m["quad.lrs"] = "decision: sweep";
  m["quad.windows"] = "decision: tail lengths; 1 is the final iterate";
  m["quad.seeds"] = "decision: replicate count";
  m["quad.seed"] = "decision: master seed";
  return q;
}

struct Entry {
  const char* name;
  const char* about;
  Plan (*make)();
};

const Entry kPresets[] = {
    {"case1-backbone", "toy CNN, full CIFAR-10, 160-epoch backbone SGD (converged regime)",
     [] { return Plan{full_backbone("case1-backbone", 160)}; }},
    {"case2-backbone", "toy CNN, full CIFAR-10, 30-epoch backbone SGD (non-converged regime)",
     [] {
       TrainPlan p = full_backbone("case2-backbone", 30);
       p.provenance["schedule.total_epochs"] = "reference: short budget that leaves SGD non-converged";
       p.provenance["run.total_epochs"] = "reference: short budget that leaves SGD non-converged";
       return Plan{p};
     }},
    {"table3-desk", "SGD vs SWA vs DSWA after a 30-epoch backbone, 10k subset, 3 seeds",
     [] { return Plan{table3_desk()}; }},
    {"table4-desk", "SGD vs SWA vs DSWA vs TSWA, 10k subset, 3 seeds", [] { return Plan{table4_desk()}; }},
    {"fig4-desk", "PSWA vs backbone SGD, momentum 0.9, 32 epochs, start 8 / period 4, 3 seeds",
     [] { return Plan{fig4_desk()}; }},
    {"fig5-probe", "line probe between SWA and DSWA solutions of a non-converged backbone",
     [] { return Plan{fig5_probe()}; }},
    {"quad-variance", "noisy quadratic: tail-average vs final-iterate variance", [] { return Plan{quad_variance()}; }},
};

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& e : kPresets) names.emplace_back(e.name);
  return names;
}

std::vector<std::pair<std::string, std::string>> preset_catalog() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : kPresets) out.emplace_back(e.name, e.about);
  return out;
}

Plan preset(std::string_view name) {
  for (const auto& e : kPresets) {
    if (name == e.name) return e.make();
  }
  throw UsageError(fmt::format("unknown preset '{}'; known presets: {}", name, fmt::join(preset_names(), ", ")));
}

}  // namespace walab
