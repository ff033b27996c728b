#include "walab/quadratic.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>

#include "walab/errors.hpp"
#include "walab/rng.hpp"

namespace walab {

namespace {

// Welford's online mean / variance.
struct Welford {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  [[nodiscard]] double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (const double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(xs.size() - 1);
}

}  // namespace

void validate(const QuadSpec& spec) {
  if (spec.curvatures.empty()) throw SpecError("quadratic: need at least one curvature");
  if (!(spec.lr > 0.0)) throw SpecError(fmt::format("quadratic: lr {} must be > 0", spec.lr));
  for (const double h : spec.curvatures) {
    if (!(h > 0.0) || !std::isfinite(h)) throw SpecError(fmt::format("quadratic: curvature {} must be > 0", h));
    if (!(std::fabs(1.0 - spec.lr * h) < 1.0)) {
      throw SpecError(fmt::format("quadratic: unstable, |1 - lr*h| = {} >= 1 for lr={}, h={}",
                                  std::fabs(1.0 - spec.lr * h), spec.lr, h));
    }
  }
  if (!(spec.noise_std >= 0.0)) throw SpecError("quadratic: noise_std must be >= 0");
  if (spec.steps < 1) throw SpecError("quadratic: steps must be >= 1");
  if (spec.tail_window < 1 || spec.tail_window > spec.steps) {
    throw SpecError(fmt::format("quadratic: tail_window {} outside [1, {}]", spec.tail_window, spec.steps));
  }
  if (!spec.initial.empty() && spec.initial.size() != spec.curvatures.size()) {
    throw SpecError("quadratic: initial point dimension does not match curvatures");
  }
}

std::uint64_t coordinate_substream(std::uint64_t seed, std::size_t coordinate) {
  return derive_seed(derive_seed(seed, "quad/noise"), coordinate);
}

QuadRun simulate_with_substreams(const QuadSpec& spec, std::span<const std::uint64_t> substreams) {
  validate(spec);
  const std::size_t dim = spec.curvatures.size();
  if (substreams.size() != dim) throw SpecError("quadratic: one substream per coordinate required");

  QuadRun run;
  run.final_iterate.resize(dim);
  run.tail_mean.resize(dim);
  run.summary.burn_in = spec.steps / 2;
  run.summary.iterate_mean.resize(dim);
  run.summary.iterate_variance.resize(dim);
  const std::int64_t tail_begin = spec.steps - spec.tail_window + 1;  // 1-based index of first tail iterate

  for (std::size_t j = 0; j < dim; ++j) {
    SplitMix64 rng(substreams[j]);
    const double contraction = 1.0 - spec.lr * spec.curvatures[j];
    double w = spec.initial.empty() ? 0.0 : spec.initial[j];
    double tail_sum = 0.0;
    Welford stats;
    for (std::int64_t t = 1; t <= spec.steps; ++t) {
      const double eps = spec.noise_std * rng.normal();
      w = contraction * w + spec.lr * eps;
      if (t >= tail_begin) tail_sum += w;
      if (t > run.summary.burn_in) stats.add(w);
    }
    run.final_iterate[j] = w;
    run.tail_mean[j] = tail_sum / static_cast<double>(spec.tail_window);
    run.summary.iterate_mean[j] = stats.mean;
    run.summary.iterate_variance[j] = stats.variance();
  }
  return run;
}

QuadRun simulate(const QuadSpec& spec, std::uint64_t seed) {
  std::vector<std::uint64_t> substreams(spec.curvatures.size());
  for (std::size_t j = 0; j < substreams.size(); ++j) substreams[j] = coordinate_substream(seed, j);
  return simulate_with_substreams(spec, substreams);
}

double stationary_variance(double lr, double curvature, double noise_std) {
  const double c = 1.0 - lr * curvature;
  return lr * lr * noise_std * noise_std / (1.0 - c * c);
}

VarianceReport variance_report(const QuadSpec& spec, int n_seeds, std::uint64_t base_seed) {
  validate(spec);
  if (n_seeds < 30) throw SpecError(fmt::format("variance_report needs >= 30 seeds, got {}", n_seeds));
  const std::size_t dim = spec.curvatures.size();
  std::vector<std::vector<double>> finals(dim), tails(dim);
  double iterate_variance_sum = 0.0;
  for (int k = 0; k < n_seeds; ++k) {
    const QuadRun run = simulate(spec, derive_seed(base_seed, static_cast<std::uint64_t>(k)));
    for (std::size_t j = 0; j < dim; ++j) {
      finals[j].push_back(run.final_iterate[j]);
      tails[j].push_back(run.tail_mean[j]);
      iterate_variance_sum += run.summary.iterate_variance[j];
    }
  }
  VarianceReport report;
  for (std::size_t j = 0; j < dim; ++j) {
    report.var_final += sample_variance(finals[j]);
    report.var_tail += sample_variance(tails[j]);
  }
  report.ratio = report.var_final == 0.0 && report.var_tail == 0.0 ? 1.0 : report.var_tail / report.var_final;
  report.mean_iterate_variance = iterate_variance_sum / static_cast<double>(n_seeds);
  return report;
}

void write_variance_csv_header(std::ostream& out) {
  fmt::print(out, "lr,h_summary,window,var_final,var_tail,ratio\n");
}

void write_variance_csv_row(std::ostream& out, const QuadSpec& spec, const VarianceReport& report) {
  fmt::print(out, "{},{},{},{},{},{}\n", spec.lr, fmt::join(spec.curvatures, ";"), spec.tail_window, report.var_final,
             report.var_tail, report.ratio);
}

}  // namespace walab
