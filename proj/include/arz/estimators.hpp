#pragma once

// Kalman-type baselines (extended, unscented, ensemble) with projection of
// every estimate onto the physical box. Covariances live in scaled space.

#include "arz/linearization.hpp"
#include "arz/scaling.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>

namespace arz {

struct EstimatorConfig {
  double q = 1.0;    // process noise, scaled space
  double r = 1.0;    // measurement noise, measurement units
  double p0 = 1e-3;  // initial covariance
  double ukf_alpha = 0.1;
  double ukf_kappa = -4.0;
  double ukf_beta = 2.0;
  int ensemble_size = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(q >= 0.0) || !std::isfinite(q)) throw std::invalid_argument("estimator q must be finite and nonnegative");
    if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("estimator r must be finite and positive");
    if (!(p0 > 0.0) || !std::isfinite(p0)) throw std::invalid_argument("estimator p0 must be finite and positive");
    if (!(ukf_alpha > 0.0 && ukf_alpha <= 1.0)) throw std::invalid_argument("UKF alpha must lie in (0, 1]");
    if (ensemble_size < 2) throw std::invalid_argument("EnKF ensemble size must be at least 2");
  }
};

/// Counts of recoverable numerical events.
struct EstimatorFlags {
  int innovation_jitter = 0;   // innovation covariance needed jitter
  int sqrt_jitter = 0;         // covariance needed jitter before the square root
  int eigen_clipped = 0;       // covariance repaired by clipping eigenvalues
  int ensemble_collapse = 0;
  int branch_tie = 0;          // linearized at a junction branch switch
  int qp_not_converged = 0;

  int total() const {
    return innovation_jitter + sqrt_jitter + eigen_clipped + ensemble_collapse + qp_not_converged;
  }
  std::string describe() const {
    std::string s;
    auto add = [&](const char* name, int n) {
      if (n == 0) return;
      if (!s.empty()) s += ';';
      s += name;
      s += '=';
      s += std::to_string(n);
    };
    add("innovation_jitter", innovation_jitter);
    add("sqrt_jitter", sqrt_jitter);
    add("eigen_clipped", eigen_clipped);
    add("ensemble_collapse", ensemble_collapse);
    add("qp_not_converged", qp_not_converged);
    return s;
  }
};

struct EstimatorState {
  Vector x;         // physical units, always within bounds
  Matrix P;         // EKF/UKF: covariance of the scaled state
  Matrix ensemble;  // EnKF: scaled members as columns
  long step = 0;
  std::mt19937_64 rng;
  EstimatorFlags flags;
};

/// Componentwise clamp to [lower, upper].
inline Vector project_to_bounds(const Vector& x, const StateBounds& b) {
  return x.cwiseMax(b.lower).cwiseMin(b.upper);
}

/// Box projection followed by clamping each relative flow so the driver
/// characteristic psi/rho stays in [p(rho), 2 v_f]; an empty segment gets psi = 0.
inline Vector project_consistent(const Vector& x, const StateBounds& b, const ModelParams& p) {
  Vector out = project_to_bounds(x, b);
  for (Eigen::Index s = 0; s + 1 < out.size(); s += 2) {
    const double rho = out[s];
    const double lo = rho * pressure(std::min(rho, p.rho_m), p);
    const double hi = rho * 2.0 * p.v_f;
    out[s + 1] = std::clamp(out[s + 1], std::min(lo, b.upper[s + 1]), std::min(hi, b.upper[s + 1]));
  }
  return out;
}

/// Shared problem description for the filters.
struct FilterContext {
  Topology topo;
  ModelParams params;
  StateScaling scaling;
  StateBounds bounds;         // physical
  StateBounds scaled_bounds;  // scaled

  FilterContext(const Topology& t, const ModelParams& p)
      : topo(t),
        params(p),
        scaling(StateScaling::for_model(t, p)),
        bounds(physical_bounds(t, p)),
        scaled_bounds(scaling.bounds(bounds)) {}
};

namespace detail {

inline void symmetrize(Matrix& P) { P = 0.5 * (P + P.transpose()); }

/// Clips negative eigenvalues so P is PSD; returns true when it had to.
inline bool make_psd(Matrix& P, double floor = 0.0) {
  symmetrize(P);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(P);
  if (eig.eigenvalues().minCoeff() >= floor) return false;
  const Vector d = eig.eigenvalues().cwiseMax(floor);
  P = eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
  symmetrize(P);
  return true;
}

/// Solves S X = B for symmetric S, adding jitter if S is not positive definite.
inline Matrix spd_solve(Matrix S, const Matrix& B, int& jitter_count) {
  symmetrize(S);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) {
    ++jitter_count;
    S.diagonal().array() += 1e-9;
    llt.compute(S);
    if (llt.info() != Eigen::Success) {
      Eigen::LDLT<Matrix> ldlt(S);
      return ldlt.solve(B);
    }
  }
  return llt.solve(B);
}

/// Lower-triangular L with L L^T = P, repairing P if needed.
inline Matrix robust_sqrt(Matrix P, EstimatorFlags& flags) {
  symmetrize(P);
  Eigen::LLT<Matrix> llt(P);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  ++flags.sqrt_jitter;
  P.diagonal().array() += 1e-9;
  llt.compute(P);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  ++flags.eigen_clipped;
  make_psd(P, 1e-12);
  llt.compute(P);
  if (llt.info() != Eigen::Success) throw std::runtime_error("covariance square root failed after repair");
  return llt.matrixL();
}

inline Vector measure_selected(const Vector& x, const MeasurementSelector& sel, const ModelParams& p) {
  return sel.apply(measure_h(x, p));
}

/// Consistent projection of a scaled state.
inline Vector project_member(const Vector& xs, const FilterContext& ctx) {
  return ctx.scaling.to_scaled(project_consistent(ctx.scaling.from_scaled(xs), ctx.bounds, ctx.params));
}

}  // namespace detail

inline EstimatorState init_covariance_state(const Vector& x0, const EstimatorConfig& cfg, const FilterContext& ctx) {
  EstimatorState st;
  st.x = project_to_bounds(x0, ctx.bounds);
  st.P = cfg.p0 * Matrix::Identity(ctx.topo.n_x(), ctx.topo.n_x());
  st.rng.seed(cfg.seed);
  return st;
}

/// Predict with the nonlinear model, propagate P with the Jacobian at (x, u),
/// then a Joseph-form update with the measurement Jacobian at the prediction.
inline EstimatorState ekf_step(EstimatorState st, const Vector& u, const Vector& y, const MeasurementSelector& sel,
                               const EstimatorConfig& cfg, const FilterContext& ctx) {
  const int n = ctx.topo.n_x();
  const Jacobian jx = jacobian_fx(st.x, u, ctx.topo, ctx.params);
  if (jx.branch_tie) ++st.flags.branch_tie;
  const Matrix A = process_matrix_A(ctx.topo, ctx.params) + ctx.params.dt_over_dx() * jx.J;
  const Matrix As = ctx.scaling.similar(A);
  const Vector x_pred = step(st.x, u, ctx.topo, ctx.params);
  Matrix P = As * st.P * As.transpose();
  P.diagonal().array() += cfg.q;
  detail::symmetrize(P);

  Vector xs = ctx.scaling.to_scaled(x_pred);
  if (!sel.empty()) {
    const Matrix C = sel.rows_of(measurement_jacobian(x_pred, ctx.params));
    const Matrix Cs = ctx.scaling.on_input_side(C);
    Matrix S = Cs * P * Cs.transpose();
    S.diagonal().array() += cfg.r;
    const Matrix PCt = P * Cs.transpose();
    const Matrix K = detail::spd_solve(S, PCt.transpose(), st.flags.innovation_jitter).transpose();
    const Vector nu = y - detail::measure_selected(x_pred, sel, ctx.params);
    xs += K * nu;
    const Matrix IKC = Matrix::Identity(n, n) - K * Cs;
    P = IKC * P * IKC.transpose() + cfg.r * K * K.transpose();
    detail::symmetrize(P);
  }
  st.P = P;
  st.x = project_consistent(ctx.scaling.from_scaled(xs), ctx.bounds, ctx.params);
  ++st.step;
  return st;
}

struct UnscentedWeights {
  double lambda = 0.0;
  Vector wm, wc;
};

inline UnscentedWeights unscented_weights(int n, const EstimatorConfig& cfg) {
  UnscentedWeights w;
  const double a2 = cfg.ukf_alpha * cfg.ukf_alpha;
  w.lambda = a2 * (n + cfg.ukf_kappa) - n;
  const double c = n + w.lambda;
  if (!(c > 0.0)) throw std::invalid_argument("UKF parameters give a nonpositive sigma-point spread");
  w.wm = Vector::Constant(2 * n + 1, 1.0 / (2.0 * c));
  w.wc = w.wm;
  w.wm[0] = w.lambda / c;
  w.wc[0] = w.lambda / c + (1.0 - a2 + cfg.ukf_beta);
  return w;
}

namespace detail {

/// Sigma points of (mean, P) in scaled space, each projected to the scaled box.
inline Matrix sigma_points(const Vector& mean, const Matrix& P, double spread, const FilterContext& ctx,
                           EstimatorFlags& flags) {
  const int n = static_cast<int>(mean.size());
  const Matrix L = std::sqrt(spread) * robust_sqrt(P, flags);
  Matrix X(n, 2 * n + 1);
  X.col(0) = mean;
  for (int i = 0; i < n; ++i) {
    X.col(1 + i) = mean + L.col(i);
    X.col(1 + n + i) = mean - L.col(i);
  }
  for (int j = 0; j < X.cols(); ++j) X.col(j) = project_member(X.col(j), ctx);
  return X;
}

}  // namespace detail

inline EstimatorState ukf_step(EstimatorState st, const Vector& u, const Vector& y, const MeasurementSelector& sel,
                               const EstimatorConfig& cfg, const FilterContext& ctx) {
  const int n = ctx.topo.n_x();
  const UnscentedWeights w = unscented_weights(n, cfg);
  const double spread = n + w.lambda;
  const auto& sc = ctx.scaling;

  Matrix X = detail::sigma_points(sc.to_scaled(st.x), st.P, spread, ctx, st.flags);
  for (int j = 0; j < X.cols(); ++j)
    X.col(j) = sc.to_scaled(step(sc.from_scaled(X.col(j)), u, ctx.topo, ctx.params));
  Vector mean = X * w.wm;
  Matrix P = Matrix::Zero(n, n);
  for (int j = 0; j < X.cols(); ++j) {
    const Vector d = X.col(j) - mean;
    P += w.wc[j] * d * d.transpose();
  }
  P.diagonal().array() += cfg.q;
  detail::symmetrize(P);

  if (!sel.empty()) {
    const int m = sel.size();
    const Matrix Xu = detail::sigma_points(detail::project_member(mean, ctx), P, spread, ctx, st.flags);
    Matrix Z(m, Xu.cols());
    for (int j = 0; j < Xu.cols(); ++j)
      Z.col(j) = detail::measure_selected(sc.from_scaled(Xu.col(j)), sel, ctx.params);
    const Vector z_mean = Z * w.wm;
    const Vector x_mean = Xu * w.wm;
    Matrix Pzz = Matrix::Zero(m, m);
    Matrix Pxz = Matrix::Zero(n, m);
    for (int j = 0; j < Xu.cols(); ++j) {
      const Vector dz = Z.col(j) - z_mean;
      Pzz += w.wc[j] * dz * dz.transpose();
      Pxz += w.wc[j] * (Xu.col(j) - x_mean) * dz.transpose();
    }
    Pzz.diagonal().array() += cfg.r;
    const Matrix K = detail::spd_solve(Pzz, Pxz.transpose(), st.flags.innovation_jitter).transpose();
    mean = x_mean + K * (y - z_mean);
    P = P - K * Pzz * K.transpose();
  }
  if (detail::make_psd(P)) ++st.flags.eigen_clipped;
  st.P = P;
  st.x = project_consistent(sc.from_scaled(mean), ctx.bounds, ctx.params);
  ++st.step;
  return st;
}

inline EstimatorState init_ensemble_state(const Vector& x0, const EstimatorConfig& cfg, const FilterContext& ctx) {
  EstimatorState st;
  st.rng.seed(cfg.seed);
  const int n = ctx.topo.n_x();
  const Vector mean = ctx.scaling.to_scaled(project_to_bounds(x0, ctx.bounds));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(cfg.p0);
  st.ensemble.resize(n, cfg.ensemble_size);
  for (int j = 0; j < cfg.ensemble_size; ++j) {
    Vector m = mean;
    for (int i = 0; i < n; ++i) m[i] += sd * normal(st.rng);
    st.ensemble.col(j) = detail::project_member(m, ctx);
  }
  st.x = project_to_bounds(x0, ctx.bounds);
  return st;
}

/// Stochastic EnKF with perturbed observations; members and mean are projected.
inline EstimatorState enkf_step(EstimatorState st, const Vector& u, const Vector& y, const MeasurementSelector& sel,
                                const EstimatorConfig& cfg, const FilterContext& ctx) {
  const int n = ctx.topo.n_x();
  const int M = static_cast<int>(st.ensemble.cols());
  const auto& sc = ctx.scaling;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double q_sd = std::sqrt(cfg.q);
  Matrix& E = st.ensemble;
  for (int j = 0; j < M; ++j) {
    Vector xs = sc.to_scaled(step(sc.from_scaled(E.col(j)), u, ctx.topo, ctx.params));
    for (int i = 0; i < n; ++i) xs[i] += q_sd * normal(st.rng);
    E.col(j) = detail::project_member(xs, ctx);
  }

  if (!sel.empty()) {
    const int m = sel.size();
    Matrix Z(m, M);
    for (int j = 0; j < M; ++j) Z.col(j) = detail::measure_selected(sc.from_scaled(E.col(j)), sel, ctx.params);
    const Vector x_mean = E.rowwise().mean();
    const Vector z_mean = Z.rowwise().mean();
    const Matrix Xa = E.colwise() - x_mean;
    const Matrix Za = Z.colwise() - z_mean;
    const Matrix Pxz = Xa * Za.transpose() / (M - 1);
    Matrix Pzz = Za * Za.transpose() / (M - 1);
    Pzz.diagonal().array() += cfg.r;
    const Matrix K = detail::spd_solve(Pzz, Pxz.transpose(), st.flags.innovation_jitter).transpose();
    const double r_sd = std::sqrt(cfg.r);
    for (int j = 0; j < M; ++j) {
      Vector yp = y;
      for (int i = 0; i < m; ++i) yp[i] += r_sd * normal(st.rng);
      E.col(j) = detail::project_member(E.col(j) + K * (yp - Z.col(j)), ctx);
    }
  }
  const Vector mean = E.rowwise().mean();
  if ((E.colwise() - mean).cwiseAbs().maxCoeff() < 1e-12) ++st.flags.ensemble_collapse;
  st.x = project_consistent(sc.from_scaled(mean), ctx.bounds, ctx.params);
  ++st.step;
  return st;
}

/// Common contract: one call per time step k >= 1 with the inputs of steps
/// k-1 and k and the measurement taken at step k.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string name() const = 0;
  virtual void init(const Vector& x0, const Vector& u0) = 0;
  virtual const Vector& update(const Vector& u_prev, const Vector& u_now, const Vector& y,
                               const MeasurementSelector& sel) = 0;
  virtual const Vector& estimate() const = 0;
  virtual const EstimatorFlags& flags() const = 0;
};

enum class FilterKind { ekf, ukf, enkf };

class KalmanEstimator final : public Estimator {
 public:
  KalmanEstimator(FilterKind kind, EstimatorConfig cfg, const Topology& topo, const ModelParams& p)
      : kind_(kind), cfg_(cfg), ctx_(topo, p) {
    cfg_.validate();
  }

  std::string name() const override {
    switch (kind_) {
      case FilterKind::ekf: return "ekf";
      case FilterKind::ukf: return "ukf";
      case FilterKind::enkf: return "enkf";
    }
    return "?";
  }

  void init(const Vector& x0, const Vector&) override {
    st_ = kind_ == FilterKind::enkf ? init_ensemble_state(x0, cfg_, ctx_) : init_covariance_state(x0, cfg_, ctx_);
  }

  const Vector& update(const Vector& u_prev, const Vector&, const Vector& y,
                       const MeasurementSelector& sel) override {
    switch (kind_) {
      case FilterKind::ekf: st_ = ekf_step(std::move(st_), u_prev, y, sel, cfg_, ctx_); break;
      case FilterKind::ukf: st_ = ukf_step(std::move(st_), u_prev, y, sel, cfg_, ctx_); break;
      case FilterKind::enkf: st_ = enkf_step(std::move(st_), u_prev, y, sel, cfg_, ctx_); break;
    }
    return st_.x;
  }

  const Vector& estimate() const override { return st_.x; }
  const EstimatorFlags& flags() const override { return st_.flags; }
  const EstimatorState& state() const { return st_; }

 private:
  FilterKind kind_;
  EstimatorConfig cfg_;
  FilterContext ctx_;
  EstimatorState st_;
};

}  // namespace arz
