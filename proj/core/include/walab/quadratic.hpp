#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace walab {

/// Noisy quadratic SGD process with diagonal Hessian:
///   w[t+1][j] = (1 - lr*h[j]) * w[t][j] + lr * eps[t][j],  eps ~ N(0, noise_std^2)
struct QuadSpec {
  std::vector<double> curvatures;
  double noise_std = 1.0;
  double lr = 0.1;
  std::int64_t steps = 2000;
  std::int64_t tail_window = 50;
  /// w[0]; empty means all zeros.
  std::vector<double> initial;
};

/// Throws SpecError on an unstable rate (|1 - lr*h| >= 1), non-positive
/// curvature, negative noise, or a window outside [1, steps].
void validate(const QuadSpec& spec);

/// Per-coordinate mean and (n - 1) variance of the iterates after burn-in
/// (the second half of the trajectory).
struct TrajectorySummary {
  std::int64_t burn_in = 0;
  std::vector<double> iterate_mean;
  std::vector<double> iterate_variance;
};

struct QuadRun {
  std::vector<double> final_iterate;
  std::vector<double> tail_mean;  // mean of the last tail_window iterates
  TrajectorySummary summary;
};

/// Seed of coordinate j's noise stream.
[[nodiscard]] std::uint64_t coordinate_substream(std::uint64_t seed, std::size_t coordinate);

[[nodiscard]] QuadRun simulate(const QuadSpec& spec, std::uint64_t seed);
/// Same process with explicit per-coordinate stream seeds.
[[nodiscard]] QuadRun simulate_with_substreams(const QuadSpec& spec, std::span<const std::uint64_t> substreams);

/// lr^2 sigma^2 / (1 - (1 - lr h)^2): stationary variance of one coordinate.
[[nodiscard]] double stationary_variance(double lr, double curvature, double noise_std);

struct VarianceReport {
  double var_final = 0.0;  // across-seed variance of final iterates, summed over coordinates
  double var_tail = 0.0;   // same for tail means
  double ratio = 1.0;      // var_tail / var_final; 1 when both are 0
  /// Seed-averaged post-burn-in iterate variance, summed over coordinates.
  double mean_iterate_variance = 0.0;
};

/// Runs seeds derive_seed(base_seed, k), k < n_seeds. Needs n_seeds >= 30.
[[nodiscard]] VarianceReport variance_report(const QuadSpec& spec, int n_seeds, std::uint64_t base_seed = 0);

/// `lr,h_summary,window,var_final,var_tail,ratio`
void write_variance_csv_header(std::ostream& out);
void write_variance_csv_row(std::ostream& out, const QuadSpec& spec, const VarianceReport& report);

}  // namespace walab
