#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "walab/errors.hpp"
#include "walab/quadratic.hpp"

using namespace walab;

namespace {

QuadSpec one_d(double lr = 0.1, double h = 1.0, double sigma = 1.0, std::int64_t steps = 2000,
               std::int64_t window = 50) {
  QuadSpec s;
  s.curvatures = {h};
  s.noise_std = sigma;
  s.lr = lr;
  s.steps = steps;
  s.tail_window = window;
  return s;
}

}  // namespace

TEST(Simulate, NoNoiseFromOriginStaysAtZero) {
  auto s = one_d(0.1, 1.0, 0.0);
  s.curvatures = {1.0, 0.5, 2.0};
  const auto r = simulate(s, 3);
  for (const double v : r.final_iterate) EXPECT_EQ(v, 0.0);
  for (const double v : r.tail_mean) EXPECT_EQ(v, 0.0);
}

TEST(Simulate, NoNoiseClosedForm) {
  auto s = one_d(0.1, 1.5, 0.0, 37, 1);
  s.initial = {2.0};
  const auto r = simulate(s, 0);
  EXPECT_NEAR(r.final_iterate[0], std::pow(1.0 - 0.15, 37) * 2.0, 1e-15);
}

TEST(Simulate, StationaryVariance) {
  const auto s = one_d(0.1, 1.0, 1.0, 100000, 50);
  EXPECT_NEAR(stationary_variance(0.1, 1.0, 1.0), 0.01 / 0.19, 1e-15);
  const auto r = simulate(s, 17);
  EXPECT_NEAR(r.summary.iterate_variance[0] / stationary_variance(0.1, 1.0, 1.0), 1.0, 0.05);
  EXPECT_EQ(r.summary.burn_in, 50000);
}

TEST(Simulate, Deterministic) {
  const auto s = one_d();
  EXPECT_EQ(simulate(s, 5).final_iterate, simulate(s, 5).final_iterate);
  EXPECT_NE(simulate(s, 5).final_iterate, simulate(s, 6).final_iterate);
}

TEST(Simulate, CoordinatesMatchOneDimensionalRuns) {
  auto s = one_d(0.2, 1.0, 0.7, 300, 20);
  s.curvatures = {1.0, 3.0, 0.5};
  const std::uint64_t seed = 41;
  const auto joint = simulate(s, seed);
  for (std::size_t j = 0; j < 3; ++j) {
    auto single = s;
    single.curvatures = {s.curvatures[j]};
    const std::uint64_t stream[] = {coordinate_substream(seed, j)};
    const auto r = simulate_with_substreams(single, stream);
    EXPECT_EQ(r.final_iterate[0], joint.final_iterate[j]);
    EXPECT_EQ(r.tail_mean[0], joint.tail_mean[j]);
  }
}

TEST(Simulate, Validation) {
  EXPECT_THROW(validate(one_d(2.0, 1.0)), SpecError);   // |1 - 2| = 1
  EXPECT_THROW(validate(one_d(0.1, -1.0)), SpecError);
  EXPECT_THROW(validate(one_d(0.1, 1.0, -1.0)), SpecError);
  EXPECT_THROW(validate(one_d(0.1, 1.0, 1.0, 10, 11)), SpecError);
  EXPECT_THROW(validate(one_d(0.1, 1.0, 1.0, 10, 0)), SpecError);
  EXPECT_NO_THROW(validate(one_d(1.9, 1.0)));
}

TEST(VarianceReport, WindowOneGivesRatioOne) {
  const auto r = variance_report(one_d(0.1, 1.0, 1.0, 500, 1), 40);
  EXPECT_EQ(r.var_tail, r.var_final);
  EXPECT_EQ(r.ratio, 1.0);
}

TEST(VarianceReport, NoNoiseBothZero) {
  const auto r = variance_report(one_d(0.1, 1.0, 0.0), 30);
  EXPECT_EQ(r.var_final, 0.0);
  EXPECT_EQ(r.var_tail, 0.0);
}

TEST(VarianceReport, TailAveragingHalvesVariance) {
  const auto r = variance_report(one_d(), 200);
  EXPECT_LT(r.ratio, 0.5);
  EXPECT_NEAR(r.var_final, stationary_variance(0.1, 1.0, 1.0), 0.25 * stationary_variance(0.1, 1.0, 1.0));
}

TEST(VarianceReport, RatioNotAboveOneAndMonotoneInWindow) {
  double prev = 1.0 + 1e-12;
  for (const std::int64_t w : {1, 5, 20, 50}) {
    const auto r = variance_report(one_d(0.1, 1.0, 1.0, 2000, w), 400, 7);
    // sd of a variance ratio estimate from 400 samples is well under 0.1
    EXPECT_LE(r.ratio, 1.0 + 1e-12) << w;
    EXPECT_LE(r.ratio, prev + 0.1) << w;
    prev = r.ratio;
  }
}

TEST(VarianceReport, NeedsThirtySeeds) { EXPECT_THROW((void)variance_report(one_d(), 29), SpecError); }

TEST(VarianceReport, CsvRow) {
  auto s = one_d();
  s.curvatures = {1.0, 2.0};
  std::ostringstream out;
  write_variance_csv_header(out);
  write_variance_csv_row(out, s, VarianceReport{0.5, 0.25, 0.5, 0.0});
  EXPECT_EQ(out.str(), "lr,h_summary,window,var_final,var_tail,ratio\n0.1,1;2,50,0.5,0.25,0.5\n");
}
