#include "arz/scenarios.hpp"
#include "arz/sensing.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace arz;

namespace {

SensorSchedule reference_schedule(std::optional<int> period) {
  SensorSchedule s;
  s.fixed_segments = SensorSchedule::minimum_fixed(Topology::reference());
  s.mobile_start = {1, 3, 7};
  s.rotation_period = period;
  return s;
}

}  // namespace

TEST(Schedule, MinimumFixedSet) {
  EXPECT_EQ(SensorSchedule::minimum_fixed(Topology::reference()), (std::vector<int>{9, 10, 11, 12}));
}

TEST(Schedule, FixedPositionsNeverMove) {
  const Topology t = Topology::reference();
  const auto s = reference_schedule(std::nullopt);
  for (long k : {0L, 1L, 17L, 499L}) EXPECT_EQ(s.mobile_positions_at(k, t), (std::vector<int>{1, 3, 7}));
}

TEST(Schedule, ReferenceRotationSequence) {
  const Topology t = Topology::reference();
  const auto s = reference_schedule(1);
  EXPECT_EQ(s.mobile_positions_at(0, t), (std::vector<int>{1, 3, 7}));
  EXPECT_EQ(s.mobile_positions_at(1, t), (std::vector<int>{2, 4, 8}));
  EXPECT_EQ(s.mobile_positions_at(2, t), (std::vector<int>{3, 5, 1}));
}

TEST(Schedule, RotationPeriodHoldsPositions) {
  const Topology t = Topology::reference();
  const auto s = reference_schedule(10);
  EXPECT_EQ(s.mobile_positions_at(9, t), (std::vector<int>{1, 3, 7}));
  EXPECT_EQ(s.mobile_positions_at(10, t), (std::vector<int>{2, 4, 8}));
  EXPECT_EQ(s.mobile_positions_at(25, t), (std::vector<int>{3, 5, 1}));
}

TEST(Schedule, CycleReturnsToStart) {
  const Topology t = Topology::reference();
  const auto s = reference_schedule(1);
  const long cycle = static_cast<long>(s.mobile_cycle(t).size());
  EXPECT_EQ(cycle, 8);
  EXPECT_EQ(s.mobile_positions_at(cycle, t), s.mobile_start);
  EXPECT_NE(s.mobile_positions_at(cycle - 1, t), s.mobile_start);
}

TEST(Schedule, PositionsAreSortedUnion) {
  const Topology t = Topology::reference();
  EXPECT_EQ(reference_schedule(1).positions_at(2, t), (std::vector<int>{1, 3, 5, 9, 10, 11, 12}));
}

TEST(Schedule, ValidationRejectsBadConfigs) {
  const Topology t = Topology::reference();
  auto s = reference_schedule(1);
  s.mobile_start = {1, 1, 3};
  EXPECT_THROW(s.validate(t), std::invalid_argument);
  s.mobile_start = {9};
  EXPECT_THROW(s.validate(t), std::invalid_argument);
  s.mobile_start = {10};
  EXPECT_THROW(s.validate(t), std::invalid_argument);
  s = reference_schedule(0);
  EXPECT_THROW(s.validate(t), std::invalid_argument);
  s = reference_schedule(1);
  s.fixed_segments.push_back(13);
  EXPECT_THROW(s.validate(t), std::invalid_argument);
  for (const std::vector<int>& start : {std::vector<int>{1, 2, 3}, {1, 3, 5}, {1, 4, 7}}) {
    s = reference_schedule(1);
    s.mobile_start = start;
    EXPECT_NO_THROW(s.validate(t));
  }
}

TEST(Observation, Rows) {
  const Topology t = Topology::reference();
  EXPECT_TRUE(build_observation({}, t).empty());
  EXPECT_EQ(build_observation({4}, t).rows, (std::vector<int>{6, 7}));
  EXPECT_EQ(build_observation({9, 10, 11, 12}, t).size(), 8);
  bool dup = false;
  EXPECT_EQ(build_observation({3, 3}, t, &dup).size(), 2);
  EXPECT_TRUE(dup);
  EXPECT_THROW(build_observation({0}, t), std::invalid_argument);
}

TEST(Noise, ZeroStdIsExact) {
  const Topology t = Topology::reference();
  const ModelParams p = ModelParams::reference();
  const Vector x = uniform_equilibrium(t, p, 50.0);
  const auto sel = build_observation({1, 9}, t);
  std::mt19937_64 rng(1);
  EXPECT_EQ(synthesize_measurements(x, sel, 0.0, rng, p), sel.apply(measure_h(x, p)));
}

TEST(Noise, EmpiricalStdAndDeterminism) {
  Topology one;
  one.n_mainline = 1;
  const ModelParams p = ModelParams::reference();
  Vector x(2);
  x << 50.0, 50.0 * 102.0;
  const auto sel = build_observation({1}, one);
  const Vector clean = sel.apply(measure_h(x, p));
  const double s = 3.0;
  std::mt19937_64 rng(42);
  double sum = 0.0, sum2 = 0.0;
  const int n = 500000;  // two draws per call: 10^6 samples
  for (int i = 0; i < n; ++i) {
    const Vector e = synthesize_measurements(x, sel, s, rng, p) - clean;
    for (int j = 0; j < 2; ++j) {
      sum += e[j];
      sum2 += e[j] * e[j];
      EXPECT_LE(std::abs(e[j]), s * std::sqrt(3.0) + 1e-12);
    }
  }
  const double m = sum / (2.0 * n);
  const double sd = std::sqrt(sum2 / (2.0 * n) - m * m);
  EXPECT_GE(sd, 0.99 * s);
  EXPECT_LE(sd, 1.01 * s);

  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(synthesize_measurements(x, sel, s, a, p), synthesize_measurements(x, sel, s, b, p));
}

TEST(Gramian, TrivialCases) {
  const int n = 4;
  const GramianResult id = observability_gramian(Matrix::Zero(n, n), Matrix::Identity(n, n));
  EXPECT_LT((id.W - Matrix::Identity(n, n)).norm(), 1e-15);
  EXPECT_TRUE(id.observable);
  const GramianResult none = observability_gramian(Matrix::Identity(n, n) * 0.5, Matrix::Zero(0, n));
  EXPECT_EQ(none.W.norm(), 0.0);
  EXPECT_EQ(none.min_eigenvalue, 0.0);
  EXPECT_FALSE(none.observable);
}

TEST(Gramian, MatchesDirectSumOnSmallSystem) {
  Matrix A(2, 2);
  A << 0.5, 0.1, 0.0, 0.7;
  Matrix C(1, 2);
  C << 1.0, 0.0;
  Matrix W = Matrix::Zero(2, 2), Am = Matrix::Identity(2, 2);
  for (int m = 0; m < 200; ++m) {
    W += Am.transpose() * C.transpose() * C * Am;
    Am = A * Am;
  }
  EXPECT_LT((observability_gramian(A, C).W - W).norm(), 1e-12);
}

TEST(Gramian, ReferenceMinimumSetObservableAndNeedsLastMainlineSensor) {
  const Scenario sc = Scenario::reference();
  const GramianResult full = steady_state_gramian(sc, {9, 10, 11, 12});
  EXPECT_GT(full.min_eigenvalue, kObservabilityThreshold);
  EXPECT_TRUE(full.observable);
  EXPECT_FALSE(full.divergent);
  const GramianResult dropped = steady_state_gramian(sc, {10, 11, 12});
  EXPECT_LE(dropped.min_eigenvalue, kObservabilityThreshold);
  EXPECT_FALSE(dropped.observable);
  EXPECT_FALSE(steady_state_gramian(sc, {}).observable);
}
