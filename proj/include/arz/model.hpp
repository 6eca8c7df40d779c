#pragma once

// Discrete-time second-order (ARZ) traffic model on a highway stretch with
// on-ramp merges and off-ramp diverges, discretized with a Godunov scheme.
//
// Units: densities in veh/km, speeds and driver characteristics in km/h,
// flows in veh/h, time step and segment length in hours and kilometres.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace arz {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Densities at or below this value are treated as this value wherever the
/// model divides by density.
inline constexpr double kDensityFloor = 1e-6;

/// Raised when a model update produces a non-finite component.
class ModelBlowup : public std::runtime_error {
 public:
  ModelBlowup(int index, const std::string& what)
      : std::runtime_error(what), index_(index) {}
  int index() const noexcept { return index_; }

 private:
  int index_;
};

struct ModelParams {
  double v_f = 102.0;            // free-flow speed [km/h]
  double rho_m = 345.0;          // maximum density [veh/km]
  double tau = 20.0;             // relaxation time [time steps]
  double gamma = 1.75;           // fundamental diagram exponent
  double T = 1.0 / 3600.0;       // time step [h]
  double l = 0.1;                // segment length [km]

  double courant() const { return v_f * T / l; }
  double dt_over_dx() const { return T / l; }

  void validate() const {
    const double fields[] = {v_f, rho_m, tau, gamma, T, l};
    const char* names[] = {"v_f", "rho_m", "tau", "gamma", "T", "l"};
    for (int i = 0; i < 6; ++i) {
      if (!std::isfinite(fields[i]) || fields[i] <= 0.0)
        throw std::invalid_argument(std::string("model parameter ") + names[i] +
                                    " must be finite and strictly positive");
    }
    if (courant() > 1.0 + 1e-12)
      throw std::invalid_argument("CFL condition violated: v_f*T/l = " +
                                  std::to_string(courant()) + " > 1");
  }

  /// 102 km/h, 345 veh/km, tau = 20 steps, gamma = 1.75, 1 s steps, 100 m cells.
  static ModelParams reference() { return ModelParams{}; }
};

struct OnRamp {
  int at = 0;  // mainline segment the ramp merges into (boundary at-1 -> at)
};

struct OffRamp {
  int at = 0;          // mainline segment the ramp diverges from (boundary at -> at+1)
  double alpha = 0.1;  // fraction of the outflow of `at` that takes the ramp
};

/// Mainline segments 1..N, then on-ramps N+1..N+N_I, then off-ramps.
/// Segment ids are 1-based everywhere in the public interface.
struct Topology {
  int n_mainline = 0;
  std::vector<OnRamp> on_ramps;
  std::vector<OffRamp> off_ramps;

  int n_on() const { return static_cast<int>(on_ramps.size()); }
  int n_off() const { return static_cast<int>(off_ramps.size()); }
  int n_segments() const { return n_mainline + n_on() + n_off(); }
  int n_x() const { return 2 * n_segments(); }
  int n_u() const { return 3 + 2 * n_on() + n_off(); }

  int on_ramp_segment(int j) const { return n_mainline + j + 1; }
  int off_ramp_segment(int j) const { return n_mainline + n_on() + j + 1; }
  bool is_mainline(int seg) const { return seg >= 1 && seg <= n_mainline; }
  bool is_valid_segment(int seg) const { return seg >= 1 && seg <= n_segments(); }

  static int rho_index(int seg) { return 2 * (seg - 1); }
  static int psi_index(int seg) { return 2 * (seg - 1) + 1; }

  /// Index into on_ramps of the ramp merging into mainline segment `seg`, or -1.
  int on_ramp_into(int seg) const {
    for (int j = 0; j < n_on(); ++j)
      if (on_ramps[j].at == seg) return j;
    return -1;
  }
  /// Index into off_ramps of the ramp diverging from mainline segment `seg`, or -1.
  int off_ramp_from(int seg) const {
    for (int j = 0; j < n_off(); ++j)
      if (off_ramps[j].at == seg) return j;
    return -1;
  }

  void validate() const {
    if (n_mainline < 1) throw std::invalid_argument("topology needs at least one mainline segment");
    // boundary b sits between mainline b and b+1
    std::vector<int> used(n_mainline + 1, 0);
    for (const auto& r : on_ramps) {
      if (r.at < 2 || r.at > n_mainline)
        throw std::invalid_argument("on-ramp must merge into a mainline segment in [2, N], got " +
                                    std::to_string(r.at));
      if (used[r.at - 1]++)
        throw std::invalid_argument("more than one ramp at mainline boundary " +
                                    std::to_string(r.at - 1) + "->" + std::to_string(r.at));
    }
    for (const auto& r : off_ramps) {
      if (r.at < 1 || r.at > n_mainline - 1)
        throw std::invalid_argument("off-ramp must diverge from a mainline segment in [1, N-1], got " +
                                    std::to_string(r.at));
      if (!(r.alpha > 0.0 && r.alpha < 1.0))
        throw std::invalid_argument("off-ramp split ratio must lie in (0, 1), got " +
                                    std::to_string(r.alpha));
      if (used[r.at]++)
        throw std::invalid_argument("more than one ramp at mainline boundary " +
                                    std::to_string(r.at) + "->" + std::to_string(r.at + 1));
    }
  }

  /// Nine mainline cells, one on-ramp into cell 6, off-ramps leaving cells 3 and 8.
  static Topology reference() {
    Topology t;
    t.n_mainline = 9;
    t.on_ramps = {OnRamp{6}};
    t.off_ramps = {OffRamp{3, 0.1}, OffRamp{8, 0.15}};
    return t;
  }
};

/// Boundary data in structured form; `to_vector` produces the flat input layout
/// [D_in, w_in, rho_out, (D_on_j, w_on_j)..., rho_off_out_l...].
struct BoundaryInputs {
  double demand_in = 0.0;
  double w_in = 0.0;
  double rho_out = 0.0;
  std::vector<double> ramp_demand;   // per on-ramp
  std::vector<double> ramp_w;        // per on-ramp
  std::vector<double> offramp_rho_out;

  Vector to_vector(const Topology& topo) const {
    if (static_cast<int>(ramp_demand.size()) != topo.n_on() ||
        static_cast<int>(ramp_w.size()) != topo.n_on() ||
        static_cast<int>(offramp_rho_out.size()) != topo.n_off())
      throw std::invalid_argument("boundary inputs do not match the topology's ramp counts");
    Vector u(topo.n_u());
    u[0] = demand_in;
    u[1] = w_in;
    u[2] = rho_out;
    for (int j = 0; j < topo.n_on(); ++j) {
      u[3 + 2 * j] = ramp_demand[j];
      u[4 + 2 * j] = ramp_w[j];
    }
    for (int j = 0; j < topo.n_off(); ++j) u[3 + 2 * topo.n_on() + j] = offramp_rho_out[j];
    return u;
  }
};

inline void validate_input(const Vector& u, const Topology& topo, const ModelParams& p) {
  if (u.size() != topo.n_u())
    throw std::invalid_argument("input vector has length " + std::to_string(u.size()) +
                                ", expected " + std::to_string(topo.n_u()));
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (!std::isfinite(u[i]) || u[i] < 0.0)
      throw std::invalid_argument("input entry " + std::to_string(i) + " must be finite and nonnegative");
  auto density_ok = [&](double r) { return r <= p.rho_m; };
  auto w_ok = [&](double w) { return w <= 2.0 * p.v_f; };
  if (!density_ok(u[2])) throw std::invalid_argument("rho_out exceeds rho_m");
  if (!w_ok(u[1])) throw std::invalid_argument("w_in exceeds 2 v_f");
  for (int j = 0; j < topo.n_on(); ++j)
    if (!w_ok(u[4 + 2 * j])) throw std::invalid_argument("on-ramp w_in exceeds 2 v_f");
  for (int j = 0; j < topo.n_off(); ++j)
    if (!density_ok(u[3 + 2 * topo.n_on() + j]))
      throw std::invalid_argument("off-ramp rho_out exceeds rho_m");
}

// ---------------------------------------------------------------------------
// Fundamental diagram

inline double pressure(double rho, const ModelParams& p) {
  if (!(rho >= 0.0)) throw std::domain_error("pressure: density must be nonnegative");
  return p.v_f * std::pow(rho / p.rho_m, p.gamma);
}

inline double pressure_derivative(double rho, const ModelParams& p) {
  if (!(rho >= 0.0)) throw std::domain_error("pressure: density must be nonnegative");
  return p.v_f * p.gamma * std::pow(rho / p.rho_m, p.gamma - 1.0) / p.rho_m;
}

inline double equilibrium_speed(double rho, const ModelParams& p) { return p.v_f - pressure(rho, p); }

/// Density maximizing the demand of traffic with driver characteristic w.
inline double sigma_crit(double w, const ModelParams& p) {
  if (!(w > 0.0)) throw std::domain_error("sigma_crit: driver characteristic must be positive");
  return p.rho_m * std::pow(w / (p.v_f * (1.0 + p.gamma)), 1.0 / p.gamma);
}

/// Flux a segment at density rho with characteristic w wants to send.
/// Clipped at zero where w < p(rho).
inline double demand(double rho, double w, const ModelParams& p) {
  if (!(rho >= 0.0)) throw std::domain_error("demand: density must be nonnegative");
  if (!(w > 0.0)) return 0.0;
  const double sigma = sigma_crit(w, p);
  const double value = rho <= sigma ? rho * (w - pressure(rho, p)) : sigma * (w - pressure(sigma, p));
  return std::max(0.0, value);
}

/// Flux a segment at density rho can accept from traffic with characteristic w_up.
inline double supply(double rho, double w_up, const ModelParams& p) {
  if (!(rho >= 0.0)) throw std::domain_error("supply: density must be nonnegative");
  if (!(w_up > 0.0)) return 0.0;
  const double sigma = sigma_crit(w_up, p);
  const double value = rho <= sigma ? sigma * (w_up - pressure(sigma, p)) : rho * (w_up - pressure(rho, p));
  return std::max(0.0, value);
}

// ---------------------------------------------------------------------------
// Junction fluxes

struct SegmentState {
  double rho = 0.0;
  double psi = 0.0;

  double w() const { return psi / std::max(rho, kDensityFloor); }
};

/// Which argument of a junction's min() is active, and how far the runner-up is.
struct BranchInfo {
  int active = 0;
  double gap = std::numeric_limits<double>::infinity();
};

namespace detail {

template <std::size_t K>
inline BranchInfo argmin_info(const double (&v)[K], const bool (&use)[K]) {
  BranchInfo info;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < K; ++i)
    if (use[i] && v[i] < best) {
      best = v[i];
      info.active = static_cast<int>(i);
    }
  for (std::size_t i = 0; i < K; ++i)
    if (use[i] && static_cast<int>(i) != info.active) info.gap = std::min(info.gap, v[i] - best);
  return info;
}

}  // namespace detail

struct OneToOneFlux {
  double q = 0.0;
  double phi = 0.0;
  BranchInfo branch;
};

/// Flux across a plain mainline boundary. `up_scale`/`down_scale` multiply the
/// sender's demand and receiver's supply (1 = unmodified fundamental diagram).
inline OneToOneFlux flux_one_to_one(const SegmentState& up, const SegmentState& down, const ModelParams& p,
                                    double up_scale = 1.0, double down_scale = 1.0) {
  OneToOneFlux out;
  const double w = up.w();
  const double d = up_scale * demand(up.rho, w, p);
  const double s = down_scale * supply(down.rho, w, p);
  const double args[2] = {d, s};
  const bool use[2] = {true, true};
  out.branch = detail::argmin_info(args, use);
  out.q = std::min(d, s);
  out.phi = out.q * w;
  return out;
}

struct MergeFlux {
  double q_main = 0.0;   // leaving the upstream mainline segment
  double q_ramp = 0.0;   // leaving the on-ramp
  double q_in = 0.0;     // entering the downstream mainline segment
  double phi_main = 0.0;
  double phi_ramp = 0.0;
  double phi_in = 0.0;
  double beta = 0.5;
  double w_mix = 0.0;
  BranchInfo branch;
};

/// Demand-proportional merge of a mainline segment and an on-ramp into the
/// next mainline segment. q_in is formed as q_main + q_ramp, so conservation
/// holds bit-exactly.
inline MergeFlux flux_merge(const SegmentState& main_up, const SegmentState& ramp, const SegmentState& down,
                            const ModelParams& p, double main_scale = 1.0, double ramp_scale = 1.0,
                            double down_scale = 1.0) {
  MergeFlux out;
  const double w_main = main_up.w();
  const double w_ramp = ramp.w();
  const double d_main = main_scale * demand(main_up.rho, w_main, p);
  const double d_ramp = ramp_scale * demand(ramp.rho, w_ramp, p);
  if (d_main + d_ramp <= 0.0) {
    out.beta = 0.5;
    out.w_mix = 0.5 * (w_main + w_ramp);
    return out;
  }
  const double beta = d_main / (d_main + d_ramp);
  out.beta = beta;
  out.w_mix = beta * w_main + (1.0 - beta) * w_ramp;
  const double s = down_scale * supply(down.rho, out.w_mix, p);

  if (beta >= 1.0) {
    // no ramp demand: the ramp-ratio term imposes no constraint
    const double args[2] = {s, d_main};
    const bool use[2] = {true, true};
    out.branch = detail::argmin_info(args, use);
    out.q_main = std::min(s, d_main);
    out.q_ramp = 0.0;
  } else if (beta <= 0.0) {
    const double args[2] = {s, d_ramp};
    const bool use[2] = {true, true};
    out.branch = detail::argmin_info(args, use);
    out.q_main = 0.0;
    out.q_ramp = std::min(s, d_ramp);
  } else {
    const double ratio_term = beta / (1.0 - beta) * d_ramp;
    out.q_main = std::min({beta * s, d_main, ratio_term});
    // ratio_term equals d_main algebraically, so only supply vs demand can switch
    const double args[2] = {beta * s, d_main};
    const bool use[2] = {true, true};
    out.branch = detail::argmin_info(args, use);
    const double q_total = out.q_main / beta;
    out.q_ramp = (1.0 - beta) * q_total;
  }
  out.q_in = out.q_main + out.q_ramp;
  out.phi_main = out.q_main * w_main;
  out.phi_ramp = out.q_ramp * w_ramp;
  out.phi_in = out.q_in * out.w_mix;
  return out;
}

struct DivergeFlux {
  double q_out = 0.0;     // leaving the upstream mainline segment
  double q_main = 0.0;    // entering the downstream mainline segment
  double q_ramp = 0.0;    // entering the off-ramp
  double phi_out = 0.0;
  double phi_main = 0.0;
  double phi_ramp = 0.0;
  BranchInfo branch;
};

/// Fixed-split diverge. Both receiving supplies use the sender's characteristic.
inline DivergeFlux flux_diverge(const SegmentState& up, const SegmentState& down, const SegmentState& offramp,
                                double alpha, const ModelParams& p, double up_scale = 1.0,
                                double down_scale = 1.0, double ramp_scale = 1.0) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("flux_diverge: alpha must lie in (0, 1)");
  DivergeFlux out;
  const double w = up.w();
  const double d = up_scale * demand(up.rho, w, p);
  const double s_ramp = ramp_scale * supply(offramp.rho, w, p);
  const double s_main = down_scale * supply(down.rho, w, p);
  const double args[3] = {d, s_ramp / alpha, s_main / (1.0 - alpha)};
  const bool use[3] = {true, true, true};
  out.branch = detail::argmin_info(args, use);
  out.q_out = std::min({args[0], args[1], args[2]});
  out.q_ramp = alpha * out.q_out;
  out.q_main = out.q_out - out.q_ramp;
  out.phi_out = out.q_out * w;
  out.phi_ramp = alpha * out.phi_out;
  out.phi_main = out.phi_out - out.phi_ramp;
  return out;
}

// ---------------------------------------------------------------------------
// Network fluxes

/// Per-segment incoming/outgoing fluxes (index = segment id - 1) plus the
/// flows crossing the network boundary.
struct FluxSet {
  std::vector<double> q_out, phi_out, q_in, phi_in;
  double q_enter_main = 0.0;      // q_0
  double phi_enter_main = 0.0;
  double q_exit_main = 0.0;       // q_N
  double phi_exit_main = 0.0;
  std::vector<double> q_enter_ramp;   // per on-ramp, from its upstream input
  std::vector<double> q_exit_ramp;    // per off-ramp, to its downstream output
  std::vector<BranchInfo> branches;   // one per junction, in a fixed order

  double net_boundary_inflow() const {
    double net = q_enter_main - q_exit_main;
    for (double q : q_enter_ramp) net += q;
    for (double q : q_exit_ramp) net -= q;
    return net;
  }

  double min_branch_gap() const {
    double g = std::numeric_limits<double>::infinity();
    for (const auto& b : branches) g = std::min(g, b.gap);
    return g;
  }
};

/// Per-segment multiplier applied to that segment's demand and supply.
/// Empty means 1 everywhere. Used to impose a local speed reduction.
using SegmentScale = std::span<const double>;

namespace detail {
inline double scale_of(SegmentScale scale, int seg) {
  return scale.empty() ? 1.0 : scale[static_cast<std::size_t>(seg - 1)];
}
inline SegmentState state_of(const Vector& x, int seg) {
  return SegmentState{x[Topology::rho_index(seg)], x[Topology::psi_index(seg)]};
}
}  // namespace detail

/// Boundary and junction fluxes for every segment of the network.
inline FluxSet compute_fluxes(const Vector& x, const Vector& u, const Topology& topo, const ModelParams& p,
                              SegmentScale scale = {}) {
  const int n_seg = topo.n_segments();
  if (x.size() != topo.n_x())
    throw std::invalid_argument("state vector has length " + std::to_string(x.size()) + ", expected " +
                                std::to_string(topo.n_x()));
  if (u.size() != topo.n_u())
    throw std::invalid_argument("input vector has length " + std::to_string(u.size()) + ", expected " +
                                std::to_string(topo.n_u()));
  if (!scale.empty() && static_cast<int>(scale.size()) != n_seg)
    throw std::invalid_argument("segment scale must have one entry per segment");

  using detail::scale_of;
  using detail::state_of;
  FluxSet fs;
  fs.q_out.assign(n_seg, 0.0);
  fs.phi_out.assign(n_seg, 0.0);
  fs.q_in.assign(n_seg, 0.0);
  fs.phi_in.assign(n_seg, 0.0);
  fs.q_enter_ramp.assign(topo.n_on(), 0.0);
  fs.q_exit_ramp.assign(topo.n_off(), 0.0);
  const int N = topo.n_mainline;

  // upstream boundary into segment 1
  {
    const double d_in = u[0];
    const double w_in = u[1];
    const double s1 = scale_of(scale, 1) * supply(std::max(x[0], 0.0), w_in, p);
    fs.branches.push_back(BranchInfo{d_in <= s1 ? 0 : 1, std::abs(d_in - s1)});
    fs.q_enter_main = std::min(d_in, s1);
    fs.phi_enter_main = fs.q_enter_main * w_in;
    fs.q_in[0] = fs.q_enter_main;
    fs.phi_in[0] = fs.phi_enter_main;
  }

  // mainline boundaries i -> i+1
  for (int i = 1; i < N; ++i) {
    const SegmentState up = state_of(x, i);
    const SegmentState down = state_of(x, i + 1);
    const int on = topo.on_ramp_into(i + 1);
    const int off = topo.off_ramp_from(i);
    if (on >= 0) {
      const int rseg = topo.on_ramp_segment(on);
      const MergeFlux m = flux_merge(up, state_of(x, rseg), down, p, scale_of(scale, i), scale_of(scale, rseg),
                                     scale_of(scale, i + 1));
      fs.q_out[i - 1] = m.q_main;
      fs.phi_out[i - 1] = m.phi_main;
      fs.q_out[rseg - 1] = m.q_ramp;
      fs.phi_out[rseg - 1] = m.phi_ramp;
      fs.q_in[i] = m.q_in;
      fs.phi_in[i] = m.phi_in;
      fs.branches.push_back(m.branch);
    } else if (off >= 0) {
      const int rseg = topo.off_ramp_segment(off);
      const DivergeFlux d = flux_diverge(up, down, state_of(x, rseg), topo.off_ramps[off].alpha, p,
                                         scale_of(scale, i), scale_of(scale, i + 1), scale_of(scale, rseg));
      fs.q_out[i - 1] = d.q_out;
      fs.phi_out[i - 1] = d.phi_out;
      fs.q_in[i] = d.q_main;
      fs.phi_in[i] = d.phi_main;
      fs.q_in[rseg - 1] = d.q_ramp;
      fs.phi_in[rseg - 1] = d.phi_ramp;
      fs.branches.push_back(d.branch);
    } else {
      const OneToOneFlux f = flux_one_to_one(up, down, p, scale_of(scale, i), scale_of(scale, i + 1));
      fs.q_out[i - 1] = f.q;
      fs.phi_out[i - 1] = f.phi;
      fs.q_in[i] = f.q;
      fs.phi_in[i] = f.phi;
      fs.branches.push_back(f.branch);
    }
  }

  // downstream boundary out of segment N; the exit supply uses the leaving traffic's w
  {
    const SegmentState last = state_of(x, N);
    const double w = last.w();
    const double d = scale_of(scale, N) * demand(last.rho, w, p);
    const double s = supply(u[2], w, p);
    fs.branches.push_back(BranchInfo{d <= s ? 0 : 1, std::abs(d - s)});
    fs.q_exit_main = std::min(d, s);
    fs.phi_exit_main = fs.q_exit_main * w;
    fs.q_out[N - 1] = fs.q_exit_main;
    fs.phi_out[N - 1] = fs.phi_exit_main;
  }

  // on-ramp entries
  for (int j = 0; j < topo.n_on(); ++j) {
    const int rseg = topo.on_ramp_segment(j);
    const double d_in = u[3 + 2 * j];
    const double w_in = u[4 + 2 * j];
    const double s = scale_of(scale, rseg) * supply(std::max(x[Topology::rho_index(rseg)], 0.0), w_in, p);
    fs.branches.push_back(BranchInfo{d_in <= s ? 0 : 1, std::abs(d_in - s)});
    fs.q_enter_ramp[j] = std::min(d_in, s);
    fs.q_in[rseg - 1] = fs.q_enter_ramp[j];
    fs.phi_in[rseg - 1] = fs.q_enter_ramp[j] * w_in;
  }

  // off-ramp exits
  for (int j = 0; j < topo.n_off(); ++j) {
    const int rseg = topo.off_ramp_segment(j);
    const SegmentState st = state_of(x, rseg);
    const double w = st.w();
    const double d = scale_of(scale, rseg) * demand(st.rho, w, p);
    const double s = supply(u[3 + 2 * topo.n_on() + j], w, p);
    fs.branches.push_back(BranchInfo{d <= s ? 0 : 1, std::abs(d - s)});
    fs.q_exit_ramp[j] = std::min(d, s);
    fs.q_out[rseg - 1] = fs.q_exit_ramp[j];
    fs.phi_out[rseg - 1] = fs.q_exit_ramp[j] * w;
  }
  return fs;
}

/// Upstream/downstream boundary fluxes only.
struct BoundaryFluxes {
  double q_0 = 0.0, phi_0 = 0.0, q_N = 0.0, phi_N = 0.0;
  std::vector<double> q_ramp_in, q_ramp_out;
};

inline BoundaryFluxes boundary_fluxes(const Vector& x, const Vector& u, const Topology& topo,
                                      const ModelParams& p) {
  const FluxSet fs = compute_fluxes(x, u, topo, p);
  return BoundaryFluxes{fs.q_enter_main, fs.phi_enter_main, fs.q_exit_main,
                        fs.phi_exit_main, fs.q_enter_ramp, fs.q_exit_ramp};
}

inline Vector flux_differences(const FluxSet& fs) {
  const int n_seg = static_cast<int>(fs.q_out.size());
  Vector f(2 * n_seg);
  for (int s = 0; s < n_seg; ++s) {
    f[2 * s] = fs.q_in[s] - fs.q_out[s];
    f[2 * s + 1] = fs.phi_in[s] - fs.phi_out[s];
  }
  return f;
}

/// The nonlinear part f(x, u) of x+ = A x + G f(x, u): incoming minus outgoing
/// flux per segment, in state-vector order.
inline Vector nonlinear_f(const Vector& x, const Vector& u, const Topology& topo, const ModelParams& p,
                          SegmentScale scale = {}) {
  return flux_differences(compute_fluxes(x, u, topo, p, scale));
}

/// Linear part of the update: identity on densities; relaxation on relative flow.
inline Matrix process_matrix_A(const Topology& topo, const ModelParams& p) {
  const int n = topo.n_x();
  Matrix A = Matrix::Zero(n, n);
  for (int s = 0; s < topo.n_segments(); ++s) {
    A(2 * s, 2 * s) = 1.0;
    A(2 * s + 1, 2 * s) = p.v_f / p.tau;
    A(2 * s + 1, 2 * s + 1) = 1.0 - 1.0 / p.tau;
  }
  return A;
}

inline Matrix process_matrix_G(const Topology& topo, const ModelParams& p) {
  return p.dt_over_dx() * Matrix::Identity(topo.n_x(), topo.n_x());
}

struct StateBounds {
  Vector lower;
  Vector upper;
};

/// [0, rho_m] on densities and [0, rho_m v_f] on relative flows.
inline StateBounds physical_bounds(const Topology& topo, const ModelParams& p) {
  StateBounds b{Vector::Zero(topo.n_x()), Vector(topo.n_x())};
  for (int s = 0; s < topo.n_segments(); ++s) {
    b.upper[2 * s] = p.rho_m;
    b.upper[2 * s + 1] = p.rho_m * p.v_f;
  }
  return b;
}

struct StepStats {
  int clamped = 0;
};

/// A x + G f(x, u) without clamping.
inline Vector step_unclamped(const Vector& x, const Vector& u, const Topology& topo, const ModelParams& p,
                             SegmentScale scale = {}) {
  const Vector f = nonlinear_f(x, u, topo, p, scale);
  const double g = p.dt_over_dx();
  const double relax = 1.0 - 1.0 / p.tau;
  const double source = p.v_f / p.tau;
  Vector next(x.size());
  for (int s = 0; s < topo.n_segments(); ++s) {
    next[2 * s] = x[2 * s] + g * f[2 * s];
    next[2 * s + 1] = relax * x[2 * s + 1] + g * f[2 * s + 1] + source * x[2 * s];
  }
  return next;
}

/// One Godunov update followed by clamping to the physical box. Clamp events
/// are added to `stats` when given.
inline Vector step(const Vector& x, const Vector& u, const Topology& topo, const ModelParams& p,
                   SegmentScale scale = {}, StepStats* stats = nullptr) {
  Vector next = step_unclamped(x, u, topo, p, scale);
  const double psi_max = p.rho_m * p.v_f;
  for (Eigen::Index i = 0; i < next.size(); ++i) {
    if (!std::isfinite(next[i]))
      throw ModelBlowup(static_cast<int>(i), "model update produced a non-finite value at state index " +
                                                 std::to_string(i));
    const double hi = (i % 2 == 0) ? p.rho_m : psi_max;
    const double clamped = std::clamp(next[i], 0.0, hi);
    if (clamped != next[i]) {
      if (stats) ++stats->clamped;
      next[i] = clamped;
    }
  }
  return next;
}

/// Density and speed for every segment: rows 2s = rho, 2s+1 = psi/rho - p(rho).
inline Vector measure_h(const Vector& x, const ModelParams& p) {
  Vector h(x.size());
  for (Eigen::Index s = 0; s < x.size() / 2; ++s) {
    const double rho = x[2 * s];
    const double r = std::max(rho, kDensityFloor);
    h[2 * s] = rho;
    h[2 * s + 1] = x[2 * s + 1] / r - pressure(r, p);
  }
  return h;
}

inline double segment_speed(double rho, double psi, const ModelParams& p) {
  const double r = std::max(rho, kDensityFloor);
  return psi / r - pressure(r, p);
}

/// Uniform equilibrium state (psi = rho v_f) at the given density on every segment.
inline Vector uniform_equilibrium(const Topology& topo, const ModelParams& p, double rho) {
  Vector x(topo.n_x());
  for (int s = 0; s < topo.n_segments(); ++s) {
    x[2 * s] = rho;
    x[2 * s + 1] = rho * p.v_f;
  }
  return x;
}

}  // namespace arz
