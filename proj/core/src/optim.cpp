#include "walab/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "overloaded.hpp"
#include "walab/errors.hpp"

namespace walab {

std::string describe(const OptimizerConfig& config) {
  return std::visit(Overloaded{
                        [](const SgdConfig& c) {
                          return fmt::format("sgd(momentum={}, weight_decay={})", c.momentum, c.weight_decay);
                        },
                        [](const AdamConfig& c) {
                          return fmt::format("adam(beta1={}, beta2={}, eps={})", c.beta1, c.beta2, c.eps);
                        },
                    },
                    config);
}

void validate(const OptimizerConfig& config) {
  std::visit(Overloaded{
                 [](const SgdConfig& c) {
                   if (!(c.momentum >= 0.0 && c.momentum < 1.0)) {
                     throw SpecError(fmt::format("sgd momentum {} outside [0, 1)", c.momentum));
                   }
                   if (!(c.weight_decay >= 0.0) || !std::isfinite(c.weight_decay)) {
                     throw SpecError(fmt::format("sgd weight_decay {} must be >= 0", c.weight_decay));
                   }
                 },
                 [](const AdamConfig& c) {
                   if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
                     throw SpecError(fmt::format("adam betas ({}, {}) outside [0, 1)", c.beta1, c.beta2));
                   }
                   if (!(c.eps > 0.0)) throw SpecError("adam eps must be > 0");
                 },
             },
             config);
}

SgdState SgdState::zero(const WeightVector& like, SgdConfig config) {
  validate(OptimizerConfig{config});
  return SgdState{WeightVector::zeros(like.layout(), like.size()), config};
}

AdamState AdamState::zero(const WeightVector& like, AdamConfig config) {
  validate(OptimizerConfig{config});
  return AdamState{WeightVector::zeros(like.layout(), like.size()), WeightVector::zeros(like.layout(), like.size()),
                   config, 0};
}

void sgd_update(WeightVector& w, const WeightVector& grad, double lr, SgdState& state) {
  require_same_layout(w, grad, "sgd_step");
  require_same_layout(w, state.velocity, "sgd_step");
  auto x = w.mutable_values();
  auto v = state.velocity.mutable_values();
  const auto g = grad.values();
  const double mu = state.config.momentum;
  const double wd = state.config.weight_decay;
  bool finite = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gi = g[i] + wd * x[i];
    v[i] = mu * v[i] + gi;
    x[i] -= lr * v[i];
    finite = finite && std::isfinite(x[i]) && std::isfinite(v[i]);
  }
  if (!finite) throw NumericError(fmt::format("sgd_step produced a non-finite value (lr={})", lr));
}

void adam_update(WeightVector& w, const WeightVector& grad, double lr, AdamState& state) {
  require_same_layout(w, grad, "adam_step");
  require_same_layout(w, state.m, "adam_step");
  auto x = w.mutable_values();
  auto m = state.m.mutable_values();
  auto v = state.v.mutable_values();
  const auto g = grad.values();
  const auto& c = state.config;
  ++state.t;
  const double correct1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double correct2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  bool finite = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correct1;
    const double v_hat = v[i] / correct2;
    x[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    finite = finite && std::isfinite(x[i]);
  }
  if (!finite) throw NumericError(fmt::format("adam_step produced a non-finite value (lr={})", lr));
}

SgdStepResult sgd_step(const WeightVector& w, const WeightVector& grad, double lr, const SgdState& state) {
  SgdStepResult out{w, state};
  sgd_update(out.w, grad, lr, out.state);
  return out;
}

AdamStepResult adam_step(const WeightVector& w, const WeightVector& grad, double lr, const AdamState& state) {
  AdamStepResult out{w, state};
  adam_update(out.w, grad, lr, out.state);
  return out;
}

Optimizer::Optimizer(OptimizerConfig config, const WeightVector& like)
    : config_(config),
      state_(std::visit(Overloaded{
                            [&](const SgdConfig& c) -> std::variant<SgdState, AdamState> {
                              return SgdState::zero(like, c);
                            },
                            [&](const AdamConfig& c) -> std::variant<SgdState, AdamState> {
                              return AdamState::zero(like, c);
                            },
                        },
                        config)) {}

void Optimizer::step(WeightVector& w, const WeightVector& grad, double lr) {
  std::visit(Overloaded{
                 [&](SgdState& s) { sgd_update(w, grad, lr, s); },
                 [&](AdamState& s) { adam_update(w, grad, lr, s); },
             },
             state_);
}

void Optimizer::reset() {
  std::visit(Overloaded{
                 [](SgdState& s) { s = SgdState::zero(s.velocity, s.config); },
                 [](AdamState& s) { s = AdamState::zero(s.m, s.config); },
             },
             state_);
}

}  // namespace walab
