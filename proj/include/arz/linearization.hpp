#pragma once

// First-order Taylor models of the process and measurement equations about an
// operating point.

#include "arz/model.hpp"

#include <vector>

namespace arz {

inline constexpr double kBranchTieTolerance = 1e-6;

struct Jacobian {
  Matrix J;
  /// Set when some junction's active min() argument changes inside a
  /// finite-difference stencil, or two arguments are within the tie tolerance.
  bool branch_tie = false;
};

namespace detail {

inline double fd_step(double v, double step_scale) {
  return std::max(1e-4 * std::abs(v), 1e-3) * step_scale;
}

inline bool same_branches(const FluxSet& a, const FluxSet& b) {
  if (a.branches.size() != b.branches.size()) return false;
  for (std::size_t i = 0; i < a.branches.size(); ++i)
    if (a.branches[i].active != b.branches[i].active) return false;
  return true;
}

/// Central differences of f along each coordinate of `var` (the state when
/// `wrt_state`, otherwise the input). Coordinates that would go negative use a
/// forward difference.
inline Jacobian fd_jacobian(const Vector& x0, const Vector& u0, const Topology& topo, const ModelParams& p,
                            bool wrt_state, double step_scale) {
  const Vector& var = wrt_state ? x0 : u0;
  const int n = static_cast<int>(var.size());
  Jacobian out{Matrix(topo.n_x(), n), false};
  const FluxSet base = compute_fluxes(x0, u0, topo, p);
  if (base.min_branch_gap() < kBranchTieTolerance) out.branch_tie = true;
  const Vector f0 = flux_differences(base);
  Vector xp = x0, up = u0;
  for (int i = 0; i < n; ++i) {
    const double h = fd_step(var[i], step_scale);
    Vector& v = wrt_state ? xp : up;
    const double orig = v[i];
    v[i] = orig + h;
    const FluxSet plus = compute_fluxes(xp, up, topo, p);
    if (orig - h >= 0.0) {
      v[i] = orig - h;
      const FluxSet minus = compute_fluxes(xp, up, topo, p);
      out.J.col(i) = (flux_differences(plus) - flux_differences(minus)) / (2.0 * h);
      if (!same_branches(plus, minus)) out.branch_tie = true;
    } else {
      out.J.col(i) = (flux_differences(plus) - f0) / h;
      if (!same_branches(plus, base)) out.branch_tie = true;
    }
    v[i] = orig;
  }
  return out;
}

}  // namespace detail

/// d f / d x at (x0, u0) by finite differences with step max(1e-4 |x_i|, 1e-3)
/// (times `step_scale`).
inline Jacobian jacobian_fx(const Vector& x0, const Vector& u0, const Topology& topo, const ModelParams& p,
                            double step_scale = 1.0) {
  return detail::fd_jacobian(x0, u0, topo, p, true, step_scale);
}

inline Jacobian jacobian_fu(const Vector& x0, const Vector& u0, const Topology& topo, const ModelParams& p,
                            double step_scale = 1.0) {
  return detail::fd_jacobian(x0, u0, topo, p, false, step_scale);
}

/// x+ ~= A_tilde x + B u + c1 about (x0, u0).
struct LinearizedModel {
  Matrix A_tilde;
  Matrix B;
  Vector c1;
  Vector x0;
  Vector u0;
  bool branch_tie = false;

  Vector predict(const Vector& x, const Vector& u) const { return A_tilde * x + B * u + c1; }
};

inline LinearizedModel linearize_model(const Vector& x0, const Vector& u0, const Topology& topo,
                                       const ModelParams& p) {
  const Jacobian jx = jacobian_fx(x0, u0, topo, p);
  const Jacobian ju = jacobian_fu(x0, u0, topo, p);
  const Vector f0 = nonlinear_f(x0, u0, topo, p);
  const double g = p.dt_over_dx();  // G is a multiple of the identity
  LinearizedModel lm;
  lm.A_tilde = process_matrix_A(topo, p) + g * jx.J;
  lm.B = g * ju.J;
  lm.c1 = g * (f0 - jx.J * x0 - ju.J * u0);
  lm.x0 = x0;
  lm.u0 = u0;
  lm.branch_tie = jx.branch_tie || ju.branch_tie;
  return lm;
}

/// Rows of the full measurement vector h(x) that are observed at one step.
struct MeasurementSelector {
  std::vector<int> rows;  // 0-based indices into measure_h, increasing

  int size() const { return static_cast<int>(rows.size()); }
  bool empty() const { return rows.empty(); }

  Vector apply(const Vector& full) const {
    Vector out(size());
    for (int i = 0; i < size(); ++i) out[i] = full[rows[i]];
    return out;
  }
  Matrix rows_of(const Matrix& full) const {
    Matrix out(size(), full.cols());
    for (int i = 0; i < size(); ++i) out.row(i) = full.row(rows[i]);
    return out;
  }
  Matrix as_matrix(int n_x) const {
    Matrix C = Matrix::Zero(size(), n_x);
    for (int i = 0; i < size(); ++i) C(i, rows[i]) = 1.0;
    return C;
  }
};

/// Analytic Jacobian of measure_h. Sets `at_floor` when some density is at or
/// below the regularization floor (that speed row then has zero density slope).
inline Matrix measurement_jacobian(const Vector& x0, const ModelParams& p, bool* at_floor = nullptr) {
  const Eigen::Index n = x0.size();
  Matrix J = Matrix::Zero(n, n);
  for (Eigen::Index s = 0; s < n / 2; ++s) {
    const double rho = x0[2 * s];
    const double psi = x0[2 * s + 1];
    J(2 * s, 2 * s) = 1.0;
    if (rho <= kDensityFloor) {
      if (at_floor) *at_floor = true;
      J(2 * s + 1, 2 * s + 1) = 1.0 / kDensityFloor;
    } else {
      J(2 * s + 1, 2 * s) = -psi / (rho * rho) - pressure_derivative(rho, p);
      J(2 * s + 1, 2 * s + 1) = 1.0 / rho;
    }
  }
  return J;
}

/// y ~= C_tilde x + c2 about x0, restricted to the selected rows.
struct LinearizedMeasurement {
  Matrix C_tilde;
  Vector c2;
  Vector x0;
  bool at_floor = false;
};

inline LinearizedMeasurement linearize_measurement(const Vector& x0, const MeasurementSelector& sel,
                                                   const ModelParams& p) {
  LinearizedMeasurement lm;
  bool floor_hit = false;
  const Matrix J = measurement_jacobian(x0, p, &floor_hit);
  lm.C_tilde = sel.rows_of(J);
  lm.c2 = sel.apply(measure_h(x0, p)) - lm.C_tilde * x0;
  lm.x0 = x0;
  for (int r : sel.rows)
    if (r % 2 == 1 && x0[r - 1] <= kDensityFloor) lm.at_floor = true;
  return lm;
}

}  // namespace arz
