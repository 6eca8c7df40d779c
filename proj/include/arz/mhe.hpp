#pragma once

// Linear moving horizon estimation. At each step the model and measurement
// are linearized once about the mean of the previous window, the horizon
// least-squares problem is assembled as a box QP and solved in scaled space.

#include "arz/box_qp.hpp"
#include "arz/estimators.hpp"
#include "arz/linearization.hpp"
#include "arz/scaling.hpp"

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace arz {

struct MheConfig {
  int horizon = 4;
  double mu = 1.0;  // arrival
  double w1 = 1.0;  // measurement
  double w2 = 1.0;  // model
  double tol_kkt = 1e-8;
  int max_iter = 5000;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("MHE horizon must be at least 1");
    if (!(mu >= 0.0 && w1 >= 0.0 && w2 >= 0.0)) throw std::invalid_argument("MHE weights must be nonnegative");
    if (!(mu + w2 > 0.0)) throw std::invalid_argument("MHE needs mu + w2 > 0");
    if (!(tol_kkt > 0.0)) throw std::invalid_argument("MHE QP tolerance must be positive");
    if (max_iter < 1) throw std::invalid_argument("MHE QP iteration limit must be positive");
  }
};

/// One horizon step in scaled coordinates. `A`, `d` describe the transition
/// to the next step (z+ = A z + d); `C`, `r` the measurement (C z ~ r).
struct HorizonEntry {
  Matrix A;
  Vector d;
  Matrix C;  // zero rows when nothing was measured
  Vector r;  // y - c2
};

/// Stacks the arrival, measurement and model terms of a window into
/// z^T H z + q^T z (+ constant). Transitions of the last entry are unused.
inline QPProblem assemble_qp(const std::vector<HorizonEntry>& window, const Vector& x_bar, const MheConfig& cfg,
                             const StateBounds& bounds) {
  if (window.empty()) throw std::invalid_argument("assemble_qp: empty window");
  const Eigen::Index n = x_bar.size();
  const Eigen::Index K = static_cast<Eigen::Index>(window.size());
  if (bounds.lower.size() != n || bounds.upper.size() != n)
    throw std::invalid_argument("assemble_qp: bounds do not match the state dimension");
  QPProblem qp;
  qp.H = Matrix::Zero(K * n, K * n);
  qp.q = Vector::Zero(K * n);
  qp.z_min.resize(K * n);
  qp.z_max.resize(K * n);

  qp.H.topLeftCorner(n, n).diagonal().array() += cfg.mu;
  qp.q.head(n) += -2.0 * cfg.mu * x_bar;
  qp.constant += cfg.mu * x_bar.squaredNorm();

  for (Eigen::Index i = 0; i < K; ++i) {
    const HorizonEntry& e = window[static_cast<std::size_t>(i)];
    const std::string at = " (window entry " + std::to_string(i) + ")";
    qp.z_min.segment(i * n, n) = bounds.lower;
    qp.z_max.segment(i * n, n) = bounds.upper;
    if (e.C.rows() > 0) {
      if (e.C.cols() != n || e.r.size() != e.C.rows())
        throw std::invalid_argument("assemble_qp: measurement block has wrong dimensions" + at);
      qp.H.block(i * n, i * n, n, n) += cfg.w1 * e.C.transpose() * e.C;
      qp.q.segment(i * n, n) += -2.0 * cfg.w1 * e.C.transpose() * e.r;
      qp.constant += cfg.w1 * e.r.squaredNorm();
    }
    if (i + 1 < K) {
      if (e.A.rows() != n || e.A.cols() != n || e.d.size() != n)
        throw std::invalid_argument("assemble_qp: transition block has wrong dimensions" + at);
      const Matrix At = e.A.transpose();
      qp.H.block(i * n, i * n, n, n) += cfg.w2 * At * e.A;
      qp.H.block((i + 1) * n, (i + 1) * n, n, n).diagonal().array() += cfg.w2;
      qp.H.block(i * n, (i + 1) * n, n, n) += -cfg.w2 * At;
      qp.H.block((i + 1) * n, i * n, n, n) += -cfg.w2 * e.A;
      qp.q.segment((i + 1) * n, n) += -2.0 * cfg.w2 * e.d;
      qp.q.segment(i * n, n) += 2.0 * cfg.w2 * At * e.d;
      qp.constant += cfg.w2 * e.d.squaredNorm();
    }
  }
  return qp;
}

/// Mean of a window of states.
inline Vector operating_point(const std::vector<Vector>& window) {
  if (window.empty()) throw std::invalid_argument("operating_point: empty window");
  Vector sum = Vector::Zero(window.front().size());
  for (const auto& x : window) sum += x;
  return sum / static_cast<double>(window.size());
}

/// Arrival prior: the nonlinear model applied to the previous estimate.
inline Vector predict_arrival(const Vector& x_prev, const Vector& u_prev, const Topology& topo,
                              const ModelParams& p) {
  return step(x_prev, u_prev, topo, p);
}

/// Model hooks used by the MHE. The default is the nonlinear highway model;
/// tests substitute an exactly linear system.
struct MheModel {
  std::function<LinearizedModel(const Vector& x_o, const Vector& u)> linearize;
  std::function<LinearizedMeasurement(const Vector& x_o, const MeasurementSelector& sel)> linearize_measurement;
  std::function<Vector(const Vector& x, const Vector& u)> predict;

  static MheModel nonlinear(const Topology& topo, const ModelParams& p) {
    MheModel m;
    m.linearize = [topo, p](const Vector& x, const Vector& u) { return linearize_model(x, u, topo, p); };
    m.linearize_measurement = [p](const Vector& x, const MeasurementSelector& sel) {
      return arz::linearize_measurement(x, sel, p);
    };
    m.predict = [topo, p](const Vector& x, const Vector& u) { return predict_arrival(x, u, topo, p); };
    return m;
  }
};

struct MheStepInfo {
  QPResult qp;
  int window_length = 0;
};

class MheEstimator final : public Estimator {
 public:
  MheEstimator(MheConfig cfg, const Topology& topo, const ModelParams& p)
      : MheEstimator(cfg, topo, p, MheModel::nonlinear(topo, p)) {}

  MheEstimator(MheConfig cfg, const Topology& topo, const ModelParams& p, MheModel model)
      : cfg_(cfg), ctx_(topo, p), model_(std::move(model)) {
    cfg_.validate();
  }

  std::string name() const override { return "mhe"; }

  void init(const Vector& x0, const Vector& u0) override {
    if (x0.size() != ctx_.topo.n_x()) throw std::invalid_argument("MHE initial state has wrong length");
    history_.clear();
    t_ = 0;
    x_hat_ = project_to_bounds(x0, ctx_.bounds);
    Record r;
    r.u = u0;
    r.x_hat = x_hat_;
    set_transition(r, x_hat_, u0);
    r.C = Matrix::Zero(0, ctx_.topo.n_x());
    history_.push_back(std::move(r));
    prev_window_ = {ctx_.scaling.to_scaled(x_hat_)};
  }

  /// `u_prev` is implied by the previous call and only `u_now` is stored.
  const Vector& update(const Vector&, const Vector& u_now, const Vector& y,
                       const MeasurementSelector& sel) override {
    if (history_.empty()) throw std::logic_error("MHE used before init");
    if (y.size() != sel.size()) throw std::invalid_argument("measurement length does not match its selector");
    const auto& sc = ctx_.scaling;
    const int N = cfg_.horizon;
    const Eigen::Index n = ctx_.topo.n_x();
    ++t_;

    std::vector<Vector> prev_phys;
    prev_phys.reserve(prev_window_.size());
    for (const auto& z : prev_window_) prev_phys.push_back(sc.from_scaled(z));
    const Vector x_o = operating_point(prev_phys);

    Record r;
    r.u = u_now;
    set_transition(r, x_o, u_now);
    if (!sel.empty()) {
      const LinearizedMeasurement lm = model_.linearize_measurement(x_o, sel);
      r.C = sc.on_input_side(lm.C_tilde);
      r.resid = y - lm.c2;
    } else {
      r.C = Matrix::Zero(0, n);
      r.resid = Vector::Zero(0);
    }
    history_.push_back(std::move(r));
    // keep steps t-N-1 .. t
    while (static_cast<int>(history_.size()) > N + 2) history_.pop_front();

    const long t0 = std::max(0L, t_ - N);
    const int K = static_cast<int>(t_ - t0 + 1);
    const std::size_t first = history_.size() - static_cast<std::size_t>(K);

    Vector x_bar;
    if (t0 == 0) {
      x_bar = history_.front().x_hat;  // initial guess
    } else {
      const Record& before = history_[first - 1];
      x_bar = model_.predict(before.x_hat, before.u);
    }

    std::vector<HorizonEntry> window;
    window.reserve(K);
    for (int i = 0; i < K; ++i) {
      const Record& h = history_[first + i];
      window.push_back(HorizonEntry{h.A, h.d, h.C, h.resid});
    }
    last_.window_length = K;
    const QPProblem qp = assemble_qp(window, sc.to_scaled(x_bar), cfg_, ctx_.scaled_bounds);

    // warm start: previous window shifted, newest block predicted
    Vector warm(K * n);
    const int prev_len = static_cast<int>(prev_window_.size());
    const int drop = prev_len - (K - 1);
    for (int i = 0; i < K - 1; ++i) warm.segment(i * n, n) = prev_window_[static_cast<std::size_t>(i + drop)];
    {
      const Record& h = history_[first + K - 2];
      warm.segment((K - 1) * n, n) = h.A * prev_window_.back() + h.d;
    }

    QPOptions opt;
    opt.tol_kkt = cfg_.tol_kkt;
    opt.max_iter = cfg_.max_iter;
    last_.qp = solve_box_qp(qp, opt, &warm);
    if (!last_.qp.converged) ++flags_.qp_not_converged;

    prev_window_.clear();
    for (int i = 0; i < K; ++i) prev_window_.push_back(last_.qp.z.segment(i * n, n));
    x_hat_ = project_consistent(sc.from_scaled(prev_window_.back()), ctx_.bounds, ctx_.params);
    history_.back().x_hat = x_hat_;
    return x_hat_;
  }

  const Vector& estimate() const override { return x_hat_; }
  const EstimatorFlags& flags() const override { return flags_; }
  const MheStepInfo& last_step() const { return last_; }
  /// Solution of the latest window, oldest first, physical units.
  std::vector<Vector> window_solution() const {
    std::vector<Vector> out;
    for (const auto& z : prev_window_) out.push_back(ctx_.scaling.from_scaled(z));
    return out;
  }

 private:
  struct Record {
    Vector u;
    Vector x_hat;
    Matrix A;      // scaled transition to the next step
    Vector d;
    Matrix C;      // scaled measurement rows
    Vector resid;  // y - c2
  };

  void set_transition(Record& r, const Vector& x_o, const Vector& u) {
    const LinearizedModel lm = model_.linearize(x_o, u);
    if (lm.branch_tie) ++flags_.branch_tie;
    r.A = ctx_.scaling.similar(lm.A_tilde);
    r.d = ctx_.scaling.to_scaled(lm.B * u + lm.c1);
  }

  MheConfig cfg_;
  FilterContext ctx_;
  MheModel model_;
  std::deque<Record> history_;
  std::vector<Vector> prev_window_;  // scaled
  Vector x_hat_;
  long t_ = 0;
  EstimatorFlags flags_;
  MheStepInfo last_;
};

}  // namespace arz
