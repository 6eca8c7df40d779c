#pragma once

// Twin experiments: ground truth from the nonlinear model with a temporary
// local slowdown, synthetic measurements, estimator runs, error metrics and
// the parameter sweeps.

#include "arz/estimators.hpp"
#include "arz/mhe.hpp"
#include "arz/sensing.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace arz {

/// Demand and supply of one mainline segment are multiplied by `scale`
/// during steps [start, end).
struct JamSpec {
  int segment = 7;
  long start = 100;
  long end = 300;
  double scale = 0.3;
};

inline const std::vector<std::string>& estimator_names() {
  static const std::vector<std::string> names{"ekf", "ukf", "enkf", "mhe"};
  return names;
}

struct Scenario {
  std::string name = "reference_highway";
  Topology topo = Topology::reference();
  ModelParams params = ModelParams::reference();
  long duration = 500;      // t_f
  long warmup = 300;        // unjammed steps from an empty road before k = 0
  BoundaryInputs inputs;    // constant boundary data
  std::vector<Vector> input_series;  // optional override, one per step 0..duration
  std::optional<JamSpec> jam = JamSpec{};
  SensorSchedule sensors;
  double noise_std = 1.0;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double initial_density = 30.0;  // uniform equilibrium initial guess
  EstimatorConfig estimator;
  MheConfig mhe;
  std::vector<std::string> estimators = estimator_names();

  /// Reference highway with constant demand near 70% of capacity, the minimum
  /// fixed sensor set plus mobile sensors starting at {1, 3, 7}.
  static Scenario reference() {
    Scenario sc;
    sc.inputs.demand_in = 8800.0;
    sc.inputs.w_in = sc.params.v_f;
    sc.inputs.rho_out = 60.0;
    sc.inputs.ramp_demand = {1000.0};
    sc.inputs.ramp_w = {sc.params.v_f};
    sc.inputs.offramp_rho_out = {20.0, 20.0};
    sc.sensors.fixed_segments = SensorSchedule::minimum_fixed(sc.topo);
    sc.sensors.mobile_start = {1, 3, 7};
    return sc;
  }

  Vector input_at(long k) const {
    if (!input_series.empty()) return input_series[static_cast<std::size_t>(std::min<long>(k, duration))];
    return inputs.to_vector(topo);
  }

  void validate() const {
    params.validate();
    topo.validate();
    if (duration < 1) throw std::invalid_argument("scenario duration must be at least one step");
    if (warmup < 0) throw std::invalid_argument("warm-up length must be nonnegative");
    if (input_series.empty()) {
      validate_input(inputs.to_vector(topo), topo, params);
    } else {
      if (static_cast<long>(input_series.size()) != duration + 1)
        throw std::invalid_argument("input series must have duration + 1 entries");
      for (const auto& u : input_series) validate_input(u, topo, params);
    }
    if (jam) {
      if (!topo.is_mainline(jam->segment)) throw std::invalid_argument("jam segment must be a mainline segment");
      if (!(0 <= jam->start && jam->start < jam->end && jam->end <= duration))
        throw std::invalid_argument("jam window must satisfy 0 <= start < end <= duration");
      if (!(jam->scale > 0.0 && jam->scale <= 1.0)) throw std::invalid_argument("jam speed scale must lie in (0, 1]");
    }
    sensors.validate(topo);
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
      throw std::invalid_argument("noise std must be finite and nonnegative");
    if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
    if (!(initial_density >= 0.0 && initial_density <= params.rho_m))
      throw std::invalid_argument("initial density must lie in [0, rho_m]");
    estimator.validate();
    mhe.validate();
    for (const auto& e : estimators)
      if (std::find(estimator_names().begin(), estimator_names().end(), e) == estimator_names().end())
        throw std::invalid_argument("unknown estimator '" + e + "'");
  }
};

struct Truth {
  std::vector<Vector> x;  // steps 0..duration
  std::vector<Vector> u;
  int clamped = 0;
  /// Largest |change in vehicles - net boundary inflow * T| over all steps.
  double max_conservation_residual = 0.0;
};

/// Segment scale for step k, empty when no jam is active.
inline std::vector<double> jam_scale_at(const Scenario& sc, long k) {
  if (!sc.jam || k < sc.jam->start || k >= sc.jam->end || sc.jam->scale == 1.0) return {};
  std::vector<double> scale(static_cast<std::size_t>(sc.topo.n_segments()), 1.0);
  scale[static_cast<std::size_t>(sc.jam->segment - 1)] = sc.jam->scale;
  return scale;
}

inline double total_vehicles(const Vector& x, const ModelParams& p) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); i += 2) sum += x[i];
  return sum * p.l;
}

/// Warm-up from an empty road, then `duration` steps with the jam applied.
inline Truth generate_truth(const Scenario& sc) {
  Truth tr;
  StepStats stats;
  Vector x = Vector::Zero(sc.topo.n_x());
  const Vector u0 = sc.input_at(0);
  for (long k = 0; k < sc.warmup; ++k) x = step(x, u0, sc.topo, sc.params, {}, &stats);
  tr.x.reserve(static_cast<std::size_t>(sc.duration + 1));
  tr.x.push_back(x);
  for (long k = 0; k <= sc.duration; ++k) tr.u.push_back(sc.input_at(k));
  for (long k = 0; k < sc.duration; ++k) {
    const std::vector<double> scale = jam_scale_at(sc, k);
    const FluxSet fs = compute_fluxes(x, tr.u[k], sc.topo, sc.params, scale);
    Vector next;
    try {
      next = step(x, tr.u[k], sc.topo, sc.params, scale, &stats);
    } catch (const ModelBlowup& e) {
      throw std::runtime_error("truth simulation failed at step " + std::to_string(k) + ": " + e.what());
    }
    const double residual =
        total_vehicles(next, sc.params) - total_vehicles(x, sc.params) - sc.params.T * fs.net_boundary_inflow();
    tr.max_conservation_residual = std::max(tr.max_conservation_residual, std::abs(residual));
    x = std::move(next);
    tr.x.push_back(x);
  }
  tr.clamped = stats.clamped;
  return tr;
}

struct Rmse {
  double rho = 0.0;
  double v = 0.0;
};

/// Root mean squared density and speed errors over all segments and steps
/// 1..t_f (step 0 is the initial guess and is excluded).
inline Rmse rmse(const std::vector<Vector>& truth, const std::vector<Vector>& estimate, const ModelParams& p) {
  if (truth.size() != estimate.size()) throw std::invalid_argument("rmse: trajectories differ in length");
  if (truth.size() < 2) throw std::invalid_argument("rmse: need at least one step after the initial one");
  double s_rho = 0.0, s_v = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 1; k < truth.size(); ++k) {
    const Vector& a = truth[k];
    const Vector& b = estimate[k];
    for (Eigen::Index s = 0; s < a.size() / 2; ++s) {
      const double er = a[2 * s] - b[2 * s];
      const double ev = segment_speed(a[2 * s], a[2 * s + 1], p) - segment_speed(b[2 * s], b[2 * s + 1], p);
      s_rho += er * er;
      s_v += ev * ev;
      ++count;
    }
  }
  return Rmse{std::sqrt(s_rho / count), std::sqrt(s_v / count)};
}

/// Trailing mean over min(window, k + 1) entries.
inline std::vector<Vector> moving_average(const std::vector<Vector>& series, int window) {
  if (window < 1) throw std::invalid_argument("moving average window must be at least 1");
  std::vector<Vector> out;
  out.reserve(series.size());
  if (series.empty()) return out;
  const std::size_t w = static_cast<std::size_t>(window);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::size_t first = k + 1 > w ? k + 1 - w : 0;
    Vector sum = Vector::Zero(series[k].size());
    for (std::size_t j = first; j <= k; ++j) sum += series[j];
    out.push_back(sum / static_cast<double>(k + 1 - first));
  }
  return out;
}

inline std::unique_ptr<Estimator> make_estimator(const std::string& kind, const Scenario& sc, std::uint64_t seed) {
  EstimatorConfig cfg = sc.estimator;
  cfg.seed = seed ^ 0x9E3779B97F4A7C15ULL;
  if (kind == "ekf") return std::make_unique<KalmanEstimator>(FilterKind::ekf, cfg, sc.topo, sc.params);
  if (kind == "ukf") return std::make_unique<KalmanEstimator>(FilterKind::ukf, cfg, sc.topo, sc.params);
  if (kind == "enkf") return std::make_unique<KalmanEstimator>(FilterKind::enkf, cfg, sc.topo, sc.params);
  if (kind == "mhe") return std::make_unique<MheEstimator>(sc.mhe, sc.topo, sc.params);
  throw std::invalid_argument("unknown estimator '" + kind + "'");
}

struct RunResult {
  std::string estimator;
  std::uint64_t seed = 0;
  std::vector<Vector> truth;
  std::vector<Vector> estimate;
  std::vector<std::vector<int>> measured;  // per step; empty at step 0
  Rmse error;
  std::vector<double> step_seconds;
  EstimatorFlags flags;
  int truth_clamped = 0;
  /// Estimates outside [0, rho_m] x [0, rho_m v_f].
  long out_of_bounds = 0;

  double mean_step_seconds() const {
    if (step_seconds.empty()) return 0.0;
    double s = 0.0;
    for (double v : step_seconds) s += v;
    return s / static_cast<double>(step_seconds.size());
  }
};

inline long count_out_of_bounds(const std::vector<Vector>& traj, const StateBounds& b) {
  long n = 0;
  for (const auto& x : traj)
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (!(x[i] >= b.lower[i] && x[i] <= b.upper[i])) ++n;
  return n;
}

/// One twin experiment: measurements of `truth` at steps 1..t_f with noise
/// drawn from `seed`, fed to the named estimator.
inline RunResult run_estimation(const Scenario& sc, const Truth& truth, const std::string& kind,
                                std::uint64_t seed) {
  RunResult res;
  res.estimator = kind;
  res.seed = seed;
  res.truth = truth.x;
  res.truth_clamped = truth.clamped;
  std::mt19937_64 noise_rng(seed);
  auto est = make_estimator(kind, sc, seed);
  const Vector x0 = uniform_equilibrium(sc.topo, sc.params, sc.initial_density);
  est->init(x0, truth.u[0]);
  res.estimate.reserve(truth.x.size());
  res.estimate.push_back(est->estimate());
  res.measured.emplace_back();
  res.step_seconds.reserve(static_cast<std::size_t>(sc.duration));
  for (long k = 1; k <= sc.duration; ++k) {
    const std::vector<int> seg = sc.sensors.positions_at(k, sc.topo);
    const MeasurementSelector sel = build_observation(seg, sc.topo);
    const Vector y = synthesize_measurements(truth.x[k], sel, sc.noise_std, noise_rng, sc.params);
    const auto t0 = std::chrono::steady_clock::now();
    const Vector& xh = est->update(truth.u[k - 1], truth.u[k], y, sel);
    const auto t1 = std::chrono::steady_clock::now();
    res.step_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    res.estimate.push_back(xh);
    res.measured.push_back(seg);
  }
  res.flags = est->flags();
  res.error = rmse(res.truth, res.estimate, sc.params);
  res.out_of_bounds = count_out_of_bounds(res.estimate, physical_bounds(sc.topo, sc.params));
  return res;
}

inline RunResult run_scenario(const Scenario& sc, const std::string& kind, std::uint64_t seed) {
  return run_estimation(sc, generate_truth(sc), kind, seed);
}

/// Truncated observability Gramian of the model linearized about the
/// unjammed steady state (truth at k = 0), in scaled coordinates, for a
/// fixed set of measured segments.
inline GramianResult steady_state_gramian(const Scenario& sc, const std::vector<int>& segments, int terms = 200) {
  Scenario calm = sc;
  calm.jam.reset();
  calm.duration = 1;
  const Truth tr = generate_truth(calm);
  const StateScaling scaling = StateScaling::for_model(sc.topo, sc.params);
  const LinearizedModel lm = linearize_model(tr.x[0], tr.u[0], sc.topo, sc.params);
  const MeasurementSelector sel = build_observation(segments, sc.topo);
  Matrix C = Matrix::Zero(0, sc.topo.n_x());
  if (!sel.empty()) C = scaling.on_input_side(linearize_measurement(tr.x[0], sel, sc.params).C_tilde);
  return observability_gramian(scaling.similar(lm.A_tilde), C, terms);
}

// ---------------------------------------------------------------------------
// Sweeps

/// Order in which extra mainline sensors are added, most spread out first.
inline const std::vector<int>& placement_order() {
  static const std::vector<int> order{1, 3, 7, 5, 2, 4, 6, 8};
  return order;
}

struct SweepRow {
  std::string scenario;
  std::string estimator;
  int additional_sensors = 0;
  std::optional<int> period;  // nullopt = fixed positions
  std::vector<int> start;     // mobile start positions
  double noise_std = 0.0;
  int n_seeds = 0;
  double rmse_rho = 0.0;
  double rmse_v = 0.0;
  double mean_step_time_s = 0.0;
  std::string flags;
  long out_of_bounds = 0;
};

/// One cell of a sweep: a scenario variant and an estimator, averaged over seeds.
struct SweepCell {
  Scenario scenario;
  std::string estimator;
  int additional_sensors = 0;
};

inline SweepRow run_cell(const SweepCell& cell) {
  const Scenario& sc = cell.scenario;
  SweepRow row;
  row.scenario = sc.name;
  row.estimator = cell.estimator;
  row.additional_sensors = cell.additional_sensors;
  row.period = sc.sensors.rotation_period;
  row.start = sc.sensors.mobile_start;
  row.noise_std = sc.noise_std;
  std::string flags;
  try {
    const Truth truth = generate_truth(sc);
    double rho = 0.0, v = 0.0, t = 0.0;
    int flagged = 0;
    for (std::uint64_t seed : sc.seeds) {
      const RunResult r = run_estimation(sc, truth, cell.estimator, seed);
      rho += r.error.rho;
      v += r.error.v;
      t += r.mean_step_seconds();
      row.out_of_bounds += r.out_of_bounds;
      flagged += r.flags.total();
      ++row.n_seeds;
    }
    row.rmse_rho = rho / row.n_seeds;
    row.rmse_v = v / row.n_seeds;
    row.mean_step_time_s = t / row.n_seeds;
    if (flagged > 0) flags = "numerical_events=" + std::to_string(flagged);
    if (row.out_of_bounds > 0) flags += std::string(flags.empty() ? "" : ";") + "out_of_bounds";
  } catch (const std::exception& e) {
    row.rmse_rho = std::numeric_limits<double>::quiet_NaN();
    row.rmse_v = std::numeric_limits<double>::quiet_NaN();
    flags = std::string("failed: ") + e.what();
  }
  row.flags = flags;
  return row;
}

/// Runs cells on `jobs` threads; rows come back in cell order.
inline std::vector<SweepRow> run_cells(const std::vector<SweepCell>& cells, int jobs = 1) {
  std::vector<SweepRow> rows(cells.size());
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) rows[i] = run_cell(cells[i]);
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) rows[i] = run_cell(cells[i]);
    });
  for (auto& th : pool) th.join();
  return rows;
}

inline Scenario with_fixed_only(Scenario sc) {
  sc.sensors.mobile_start.clear();
  sc.sensors.rotation_period.reset();
  return sc;
}

/// Minimum fixed set plus the first `count` mainline slots of the placement
/// order, all fixed.
inline std::vector<SweepCell> sensor_count_cells(const Scenario& base, const std::vector<int>& counts) {
  std::vector<SweepCell> cells;
  for (int count : counts) {
    const auto& order = placement_order();
    std::vector<int> extra;
    for (int s : order)
      if (static_cast<int>(extra.size()) < count && base.topo.is_mainline(s) && s != base.topo.n_mainline)
        extra.push_back(s);
    if (count < 0 || static_cast<int>(extra.size()) != count)
      throw std::invalid_argument("sensor count " + std::to_string(count) + " is not available on this topology");
    Scenario sc = with_fixed_only(base);
    sc.sensors.fixed_segments = SensorSchedule::minimum_fixed(base.topo);
    sc.sensors.fixed_segments.insert(sc.sensors.fixed_segments.end(), extra.begin(), extra.end());
    sc.sensors.validate(sc.topo);
    for (const auto& e : base.estimators) cells.push_back(SweepCell{sc, e, count});
  }
  return cells;
}

/// Mobile sensors from the base schedule moved every `p` steps (nullopt = fixed).
inline std::vector<SweepCell> rotation_cells(const Scenario& base, const std::vector<std::optional<int>>& periods) {
  std::vector<SweepCell> cells;
  for (const auto& period : periods) {
    Scenario sc = base;
    sc.sensors.rotation_period = period;
    sc.sensors.validate(sc.topo);
    for (const auto& e : base.estimators)
      cells.push_back(SweepCell{sc, e, static_cast<int>(sc.sensors.mobile_start.size())});
  }
  return cells;
}

/// MHE over starting positions x rotation periods.
inline std::vector<SweepCell> spacing_cells(const Scenario& base, const std::vector<std::vector<int>>& starts,
                                            const std::vector<std::optional<int>>& periods) {
  std::vector<SweepCell> cells;
  for (const auto& start : starts) {
    for (const auto& period : periods) {
      Scenario sc = base;
      sc.sensors.mobile_start = start;
      sc.sensors.rotation_period = period;
      sc.sensors.validate(sc.topo);
      cells.push_back(SweepCell{sc, "mhe", static_cast<int>(start.size())});
    }
  }
  return cells;
}

inline std::vector<SweepCell> noise_cells(const Scenario& base, const std::vector<double>& stds) {
  std::vector<SweepCell> cells;
  for (double s : stds) {
    if (!(s >= 0.0)) throw std::invalid_argument("noise std must be nonnegative");
    Scenario sc = base;
    sc.noise_std = s;
    for (const auto& e : base.estimators)
      cells.push_back(SweepCell{sc, e, static_cast<int>(sc.sensors.mobile_start.size())});
  }
  return cells;
}

}  // namespace arz
