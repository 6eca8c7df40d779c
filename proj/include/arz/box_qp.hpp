#pragma once

// Dense convex QP with box constraints:
//   minimize z^T H z + q^T z   subject to   z_min <= z <= z_max
// solved by accelerated projected gradient with restarts, plus an occasional
// reduced Newton solve on the current free set.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace arz {

struct QPProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd q;
  Eigen::VectorXd z_min;
  Eigen::VectorXd z_max;
  double constant = 0.0;  // dropped term; objective() + constant is the full cost

  Eigen::Index size() const { return q.size(); }
  double objective(const Eigen::VectorXd& z) const { return z.dot(H * z) + q.dot(z); }
  Eigen::VectorXd gradient(const Eigen::VectorXd& z) const { return 2.0 * (H * z) + q; }

  void validate() const {
    const Eigen::Index n = q.size();
    if (H.rows() != n || H.cols() != n || z_min.size() != n || z_max.size() != n)
      throw std::invalid_argument("QP dimensions disagree");
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(z_min[i] <= z_max[i]))
        throw std::invalid_argument("QP bound z_min > z_max at index " + std::to_string(i));
  }
};

struct QPOptions {
  double tol_kkt = 1e-8;
  int max_iter = 5000;
  int polish_every = 20;  // 0 disables the free-set Newton solve
};

struct QPResult {
  Eigen::VectorXd z;
  int iterations = 0;
  bool converged = false;
  double kkt = std::numeric_limits<double>::infinity();
  double objective = 0.0;
  int restarts = 0;
  bool polished = false;
  std::vector<double> objective_trace;  // objective after each iteration
};

inline Eigen::VectorXd project_box(const Eigen::VectorXd& z, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return z.cwiseMax(lo).cwiseMin(hi);
}

/// Projected-KKT residual: |g| on free coordinates, the outward-pointing part
/// of g on coordinates sitting at a bound.
inline double kkt_residual(const Eigen::VectorXd& z, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                           const Eigen::VectorXd& hi) {
  double r = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    double v;
    if (lo[i] == hi[i])
      v = 0.0;
    else if (z[i] <= lo[i])
      v = std::max(0.0, -g[i]);
    else if (z[i] >= hi[i])
      v = std::max(0.0, g[i]);
    else
      v = std::abs(g[i]);
    r = std::max(r, v);
  }
  return r;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_iteration_max_eig(const Eigen::MatrixXd& H, int iters = 60) {
  Eigen::VectorXd v(H.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(i));
  v.normalize();
  double lambda = 0.0;
  for (int k = 0; k < iters; ++k) {
    const Eigen::VectorXd w = H * v;
    const double nrm = w.norm();
    if (nrm == 0.0) return 0.0;
    lambda = v.dot(w);
    v = w / nrm;
  }
  // Rayleigh quotients underestimate; return the norm bound of the last step
  return std::max(lambda, (H * v).norm());
}

namespace detail {

/// Newton step on the free set of z (coordinates strictly inside the box or
/// at a bound with inward gradient). Returns false if the result is infeasible.
inline bool polish_free_set(const QPProblem& p, const Eigen::VectorXd& z, Eigen::VectorXd& out) {
  const Eigen::Index n = z.size();
  const Eigen::VectorXd g = p.gradient(z);
  std::vector<Eigen::Index> free;
  free.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool at_lo = z[i] <= p.z_min[i] && g[i] >= 0.0;
    const bool at_hi = z[i] >= p.z_max[i] && g[i] <= 0.0;
    if (!(at_lo || at_hi) && p.z_min[i] < p.z_max[i]) free.push_back(i);
  }
  out = z;
  if (free.empty()) return true;
  const Eigen::Index m = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd Hff(m, m);
  Eigen::VectorXd rhs(m);
  // 2 (H_ff z_f + H_fa z_a) + q_f = 0
  Eigen::VectorXd z_fixed = z;
  for (Eigen::Index a = 0; a < m; ++a) z_fixed[free[a]] = 0.0;
  const Eigen::VectorXd Hz_fixed = p.H * z_fixed;
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) Hff(a, b) = p.H(free[a], free[b]);
    rhs[a] = -0.5 * p.q[free[a]] - Hz_fixed[free[a]];
  }
  Eigen::LLT<Eigen::MatrixXd> llt(Hff);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd zf = llt.solve(rhs);
  for (Eigen::Index a = 0; a < m; ++a) {
    const Eigen::Index i = free[a];
    if (!(zf[a] >= p.z_min[i] && zf[a] <= p.z_max[i])) return false;
    out[i] = zf[a];
  }
  return true;
}

}  // namespace detail

/// Accelerated projected gradient (FISTA) with step 1/L, L = 2 lambda_max(H).
/// When momentum would increase the objective the iteration restarts with a
/// plain projected-gradient step, so the objective never increases.
inline QPResult solve_box_qp(const QPProblem& p, const QPOptions& opt = {}, const Eigen::VectorXd* warm = nullptr,
                             bool keep_trace = false) {
  p.validate();
  const Eigen::Index n = p.size();
  QPResult res;
  Eigen::VectorXd z = warm && warm->size() == n ? project_box(*warm, p.z_min, p.z_max)
                                                 : project_box(Eigen::VectorXd::Zero(n), p.z_min, p.z_max);
  double L = 1.05 * 2.0 * power_iteration_max_eig(p.H);
  if (!(L > 0.0) || !std::isfinite(L)) throw std::invalid_argument("QP Hessian has no positive curvature");

  double f = p.objective(z);
  Eigen::VectorXd g = p.gradient(z);
  res.kkt = kkt_residual(z, g, p.z_min, p.z_max);
  Eigen::VectorXd y = z;
  double t = 1.0;
  int it = 0;
  while (res.kkt >= opt.tol_kkt && it < opt.max_iter) {
    ++it;
    Eigen::VectorXd z_new = project_box(y - p.gradient(y) / L, p.z_min, p.z_max);
    double f_new = p.objective(z_new);
    if (f_new > f) {
      ++res.restarts;
      z_new = project_box(z - g / L, p.z_min, p.z_max);
      f_new = p.objective(z_new);
      // a plain step can only go uphill if L underestimates the curvature
      for (int grow = 0; grow < 8 && f_new > f + 1e-14 * std::abs(f); ++grow) {
        L *= 2.0;
        z_new = project_box(z - g / L, p.z_min, p.z_max);
        f_new = p.objective(z_new);
      }
      t = 1.0;
      y = z_new;
    } else {
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = z_new + ((t - 1.0) / t_new) * (z_new - z);
      t = t_new;
    }
    z = std::move(z_new);
    f = f_new;
    g = p.gradient(z);
    res.kkt = kkt_residual(z, g, p.z_min, p.z_max);

    if (res.kkt >= opt.tol_kkt && opt.polish_every > 0 && it % opt.polish_every == 0) {
      Eigen::VectorXd zp;
      if (detail::polish_free_set(p, z, zp)) {
        const double fp = p.objective(zp);
        const Eigen::VectorXd gp = p.gradient(zp);
        const double kp = kkt_residual(zp, gp, p.z_min, p.z_max);
        if (fp <= f + 1e-12 * (1.0 + std::abs(f))) {
          z = zp;
          g = gp;
          f = fp;
          res.kkt = kp;
          y = z;
          t = 1.0;
          res.polished = true;
        }
      }
    }
    if (keep_trace) res.objective_trace.push_back(f);
  }
  res.z = z;
  res.iterations = it;
  res.objective = p.objective(z);
  res.converged = res.kkt < opt.tol_kkt;
  return res;
}

}  // namespace arz
