#include <cmath>

#include <gtest/gtest.h>

#include "walab/errors.hpp"
#include "walab/schedule.hpp"

using namespace walab;

TEST(Backbone, CaseOneValues) {
  const auto s = ScheduleSpec::backbone(160, 0.05, 0.01, 390);
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.05);
  EXPECT_NEAR(lr_at(s, 159 * 390), 0.01, 1e-12);
  EXPECT_NEAR(lr_at(s, 112 * 390), 0.03, 1e-12);  // (0.05 + 0.01) / 2
  for (int e = 0; e < 80; ++e) EXPECT_EQ(lr_at(s, e * 390), 0.05) << e;
  for (int e = 144; e < 200; ++e) EXPECT_EQ(lr_at(s, e * 390), 0.01) << e;
}

TEST(Backbone, FractionalEpochInsideDecay) {
  const sched::Backbone b{160, 0.05, 0.01, 0.5, 0.9};
  // a quarter of the way through [80, 144)
  EXPECT_NEAR(backbone_lr_at_epoch(b, 96.0), 0.04, 1e-12);
  const auto s = ScheduleSpec::backbone(160, 0.05, 0.01, 4);
  EXPECT_NEAR(lr_at(s, 96 * 4 + 2), backbone_lr_at_epoch(b, 96.5), 1e-15);
}

TEST(Backbone, ContinuousAtJoins) {
  const sched::Backbone b{160, 0.05, 0.01, 0.5, 0.9};
  EXPECT_NEAR(backbone_lr_at_epoch(b, std::nextafter(80.0, 0.0)), backbone_lr_at_epoch(b, 80.0), 1e-12);
  EXPECT_NEAR(backbone_lr_at_epoch(b, std::nextafter(144.0, 0.0)), backbone_lr_at_epoch(b, 144.0), 1e-12);
}

TEST(Backbone, MonotoneAndPositive) {
  const auto s = ScheduleSpec::backbone(30, 0.05, 0.01, 79);
  double prev = lr_at(s, 0);
  for (std::int64_t i = 1; i < 40 * 79; ++i) {
    const double lr = lr_at(s, i);
    EXPECT_LE(lr, prev);
    EXPECT_GT(lr, 0.0);
    prev = lr;
  }
}

TEST(CyclicLinear, Endpoints) {
  const auto s = ScheduleSpec::cyclic_linear(390, 0.05, 0.01, 390);
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.05);
  EXPECT_NEAR(lr_at(s, 389), 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(lr_at(s, 390), 0.05);
}

TEST(CyclicLinear, PeriodicAndDecreasingWithinCycle) {
  const auto s = ScheduleSpec::cyclic_linear(7, 0.1, 0.02, 7);
  for (std::int64_t i = 0; i < 50; ++i) {
    EXPECT_EQ(lr_at(s, i), lr_at(s, i + 7));
    if ((i + 1) % 7 != 0) EXPECT_GT(lr_at(s, i), lr_at(s, i + 1));
  }
}

TEST(CyclicLinear, SingleIterationCycle) {
  const auto s = ScheduleSpec::cyclic_linear(1, 0.05, 0.01, 10);
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.05);
  EXPECT_DOUBLE_EQ(lr_at(s, 5), 0.05);
}

TEST(Constant, Flat) {
  const auto s = ScheduleSpec::constant(0.07, 3);
  EXPECT_EQ(lr_at(s, 0), 0.07);
  EXPECT_EQ(lr_at(s, 123456), 0.07);
}

TEST(EpochOf, FloorDivision) {
  EXPECT_EQ(epoch_of(0, 390), 0);
  EXPECT_EQ(epoch_of(390, 390), 1);
  EXPECT_EQ(epoch_of(3899, 390), 9);
}

TEST(ScheduleSpec, Validation) {
  EXPECT_NO_THROW(validate(ScheduleSpec::backbone(160, 0.05, 0.01, 1)));
  EXPECT_THROW(validate(ScheduleSpec::backbone(160, 0.01, 0.05, 1)), SpecError);
  EXPECT_THROW(validate(ScheduleSpec::backbone(160, 0.05, 0.01, 1, 0.9, 0.5)), SpecError);
  EXPECT_THROW(validate(ScheduleSpec::backbone(160, 0.05, 0.01, 1, 0.5, 1.1)), SpecError);
  EXPECT_THROW(validate(ScheduleSpec::constant(0.0, 1)), SpecError);
  EXPECT_THROW(validate(ScheduleSpec::cyclic_linear(0, 0.05, 0.01, 1)), SpecError);
  EXPECT_THROW(validate(ScheduleSpec::cyclic_linear(5, 0.01, 0.05, 1)), SpecError);
  EXPECT_THROW(validate(ScheduleSpec::constant(0.1, 0)), SpecError);
  EXPECT_EQ(kind_name(ScheduleSpec::constant(0.1, 1)), "constant");
}
