#include "arz/linearization.hpp"
#include "arz/sensing.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace arz;

namespace {

const ModelParams P = ModelParams::reference();

Vector reference_input() {
  BoundaryInputs in;
  in.demand_in = 8800;
  in.w_in = 102;
  in.rho_out = 60;
  in.ramp_demand = {1000};
  in.ramp_w = {102};
  in.offramp_rho_out = {20, 20};
  return in.to_vector(Topology::reference());
}

Vector random_state(const Topology& topo, std::mt19937_64& rng, double lo = 5.0, double hi = 300.0) {
  std::uniform_real_distribution<double> rho_d(lo, hi), w_d(0.1, 0.9);
  Vector x(topo.n_x());
  for (int s = 0; s < topo.n_segments(); ++s) {
    const double rho = rho_d(rng);
    x[2 * s] = rho;
    x[2 * s + 1] = rho * (pressure(rho, P) + w_d(rng) * P.v_f);
  }
  return x;
}

// Exact model update x+ = A x + G f(x, u), independent of the linearization.
Vector exact_next(const Vector& x, const Vector& u, const Topology& t) {
  return process_matrix_A(t, P) * x + process_matrix_G(t, P) * nonlinear_f(x, u, t, P);
}

// Each segment either free-flowing (rho <= 100, w >= p(rho) + v_f/2) or
// congested (rho >= 280, w <= p(rho) + 0.3 v_f): densities then stay clear of
// every critical density sigma(w) that enters a demand or supply.
Vector two_regime_state(const Topology& topo, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Vector x(topo.n_x());
  for (int s = 0; s < topo.n_segments(); ++s) {
    const bool congested = u01(rng) < 0.4;
    const double rho = congested ? 280.0 + 50.0 * u01(rng) : 5.0 + 95.0 * u01(rng);
    const double f = congested ? 0.1 + 0.2 * u01(rng) : 0.5 + 0.4 * u01(rng);
    x[2 * s] = rho;
    x[2 * s + 1] = rho * (pressure(rho, P) + f * P.v_f);
  }
  return x;
}

// Random states at which no junction sits near a branch switch.
std::vector<Vector> tie_free_states(const Topology& t, const Vector& u, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  while (static_cast<int>(out.size()) < count) {
    Vector x = two_regime_state(t, rng);
    if (compute_fluxes(x, u, t, P).min_branch_gap() > 50.0 && !linearize_model(x, u, t, P).branch_tie)
      out.push_back(x);
  }
  return out;
}

}  // namespace

TEST(Linearize, ExactAtOperatingPoint) {
  const Topology t = Topology::reference();
  const Vector u = reference_input();
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Vector x0 = random_state(t, rng);
    const LinearizedModel lm = linearize_model(x0, u, t, P);
    const Vector ref = exact_next(x0, u, t);
    const double err = (lm.predict(x0, u) - ref).norm();
    EXPECT_LT(err, 1e-9 * std::max(1.0, ref.norm()));
  }
}

TEST(Linearize, ZeroRegionGivesPlainMatrices) {
  const Topology t = Topology::reference();
  const Vector x = Vector::Zero(t.n_x());
  const Vector u = Vector::Zero(t.n_u());
  const LinearizedModel lm = linearize_model(x, u, t, P);
  EXPECT_LT((lm.A_tilde - process_matrix_A(t, P)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(lm.B.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(lm.c1.cwiseAbs().maxCoeff(), 1e-12);
}

// Second-order Taylor remainder: halving the perturbation quarters the error.
TEST(Linearize, TaylorRemainderIsQuadratic) {
  const Topology t = Topology::reference();
  const Vector u = reference_input();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01(0.0, 1.0);
  int checked = 0;
  for (const Vector& x0 : tie_free_states(t, u, 10, 21)) {
    const LinearizedModel lm = linearize_model(x0, u, t, P);
    Vector dir(t.n_x());
    for (int i = 0; i < t.n_x(); ++i) dir[i] = n01(rng) * (i % 2 == 0 ? 1.0 : P.v_f);
    dir *= 0.5 / dir.norm() * 1.0;
    auto err = [&](double s) {
      const Vector x = x0 + s * dir;
      return (lm.predict(x, u) - exact_next(x, u, t)).norm();
    };
    const double e1 = err(1.0), e2 = err(0.5), e3 = err(0.25);
    if (e3 < 1e-8) continue;  // locally linear; nothing to measure
    const FluxSet a = compute_fluxes(x0 + dir, u, t, P), b = compute_fluxes(x0, u, t, P);
    if (!detail::same_branches(a, b)) continue;
    EXPECT_NEAR(e1 / e2, 4.0, 1.0);
    EXPECT_NEAR(e2 / e3, 4.0, 1.0);
    ++checked;
  }
  EXPECT_GE(checked, 5);
}

// |J(h/2) - J(h/4)| / |J(h) - J(h/2)| is 1/4 for a second-order scheme.
TEST(Jacobian, RichardsonRatioAwayFromTies) {
  const Topology t = Topology::reference();
  const Vector u = reference_input();
  for (const Vector& x0 : tie_free_states(t, u, 10, 5)) {
    const double big = 40.0;
    const Jacobian j1 = jacobian_fx(x0, u, t, P, big);
    const Jacobian j2 = jacobian_fx(x0, u, t, P, big / 2);
    const Jacobian j3 = jacobian_fx(x0, u, t, P, big / 4);
    if (j1.branch_tie || j2.branch_tie || j3.branch_tie) continue;
    const double d12 = (j1.J - j2.J).norm(), d23 = (j2.J - j3.J).norm();
    ASSERT_GT(d12, 0.0);
    const double ratio = d23 / d12;
    EXPECT_GE(ratio, 0.15);
    EXPECT_LE(ratio, 0.45);
  }
}

TEST(Jacobian, SingleSegmentDemandDerivative) {
  Topology one;
  one.n_mainline = 1;
  const double rho = 40.0, w = 102.0;
  Vector x(2);
  x << rho, rho * w;
  Vector u(3);
  u << 500.0, 102.0, 0.0;  // small inflow, empty exit: demand-limited at both ends
  const Jacobian j = jacobian_fx(x, u, one, P);
  // q_1 = D(rho, psi/rho); d/drho at fixed psi
  const double h = 1e-5;
  auto D = [&](double r, double ps) { return demand(r, ps / r, P); };
  const double dD = (D(rho + h, rho * w) - D(rho - h, rho * w)) / (2 * h);
  EXPECT_NEAR(j.J(0, 0), -dD, 1e-5 * std::abs(dD));
}

TEST(Jacobian, InputColumns) {
  const Topology t = Topology::reference();
  Vector x = Vector::Constant(t.n_x(), 0.0);
  for (int s = 1; s <= t.n_segments(); ++s) {
    x[Topology::rho_index(s)] = 40.0;
    x[Topology::psi_index(s)] = 40.0 * 102.0;
  }
  Vector u = reference_input();
  u[0] = 2000.0;  // below supply of segment 1
  Jacobian ju = jacobian_fu(x, u, t, P);
  EXPECT_NEAR(ju.J(0, 0), 1.0, 1e-6);
  u[0] = 20000.0;  // above supply
  ju = jacobian_fu(x, u, t, P);
  EXPECT_NEAR(ju.J(0, 0), 0.0, 1e-9);

  // rho_out only touches rows of the last mainline segment; make the exit supply-limited
  Vector xj = x;
  xj[Topology::rho_index(9)] = 150.0;
  xj[Topology::psi_index(9)] = 150.0 * 102.0;
  u[2] = 250.0;
  ju = jacobian_fu(xj, u, t, P);
  for (int r = 0; r < t.n_x(); ++r) {
    if (r == Topology::rho_index(9) || r == Topology::psi_index(9)) continue;
    EXPECT_EQ(ju.J(r, 2), 0.0) << "row " << r;
  }
  EXPECT_NE(ju.J(Topology::rho_index(9), 2), 0.0);
}

TEST(Jacobian, FlatWhereRampIsSupplyLimitedElsewhere) {
  Topology t;
  t.n_mainline = 3;
  t.off_ramps = {{2, 0.2}};
  Vector x(t.n_x());
  // upstream demand limited; mainline jammed downstream, off-ramp free
  x << 30, 30 * 102.0, 30, 30 * 102.0, 344, 344 * 102.0, 10, 10 * 102.0;
  Vector u(4);
  u << 1000, 102, 300, 10;
  const Jacobian j = jacobian_fx(x, u, t, P);
  // the diverge flux is limited by the jammed mainline supply; off-ramp density does not enter it
  const int ramp_rho = Topology::rho_index(4);
  for (int r = 0; r < 6; ++r) EXPECT_NEAR(j.J(r, ramp_rho), 0.0, 1e-7);
}

TEST(MeasurementJacobian, MatchesFiniteDifferences) {
  const Topology t = Topology::reference();
  std::mt19937_64 rng(9);
  for (int k = 0; k < 20; ++k) {
    const Vector x0 = random_state(t, rng);
    const Matrix J = measurement_jacobian(x0, P);
    for (int i = 0; i < t.n_x(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(x0[i]));
      Vector xp = x0, xm = x0;
      xp[i] += h;
      xm[i] -= h;
      const Vector col = (measure_h(xp, P) - measure_h(xm, P)) / (2 * h);
      for (int r = 0; r < t.n_x(); ++r) {
        const double scale = std::max(1e-3, std::abs(J(r, i)));
        EXPECT_LT(std::abs(J(r, i) - col[r]) / scale, 1e-6) << "entry " << r << "," << i;
      }
    }
  }
}

TEST(MeasurementLinearization, DensityRowsAreSelection) {
  const Topology t = Topology::reference();
  std::mt19937_64 rng(4);
  const Vector x0 = random_state(t, rng);
  MeasurementSelector sel;
  sel.rows = {Topology::rho_index(2), Topology::rho_index(9)};
  const LinearizedMeasurement lm = linearize_measurement(x0, sel, P);
  EXPECT_EQ(lm.C_tilde, sel.as_matrix(t.n_x()));
  EXPECT_LT(lm.c2.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MeasurementLinearization, ExactAtOperatingPoint) {
  const Topology t = Topology::reference();
  std::mt19937_64 rng(8);
  const MeasurementSelector sel = build_observation({1, 5, 9, 10, 12}, t);
  for (int k = 0; k < 20; ++k) {
    const Vector x0 = random_state(t, rng);
    const LinearizedMeasurement lm = linearize_measurement(x0, sel, P);
    const Vector ref = sel.apply(measure_h(x0, P));
    EXPECT_LT((lm.C_tilde * x0 + lm.c2 - ref).norm(), 1e-9 * std::max(1.0, ref.norm()));
  }
}

TEST(MeasurementLinearization, FlagsDensityFloor) {
  Vector x(2);
  x << 0.0, 0.0;
  MeasurementSelector sel;
  sel.rows = {0, 1};
  EXPECT_TRUE(linearize_measurement(x, sel, P).at_floor);
}
