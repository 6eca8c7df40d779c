// arz_cli: simulate, estimate, sweep and gramian subcommands.
// Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.

#include "arz/config.hpp"
#include "arz/csv.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes `text` to `path` in one go so failures leave no partial file.
void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw arz::ConfigError("cannot open output file '" + path + "'");
  out << text;
  if (!out) throw arz::ConfigError("failed writing '" + path + "'");
}

double num(double v) { return std::stod(arz::fmt_num(v)); }

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(num(v)) : nlohmann::json(); }

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  int smooth = 0;
  std::string estimator = "mhe";
  std::string sweep;
};

arz::ScenarioFile load(const Options& o) {
  arz::ScenarioFile f = arz::load_scenario(o.config);
  if (o.seed) {
    // keep the seed count, shift the values
    const std::size_t n = f.scenario.seeds.size();
    f.scenario.seeds.clear();
    for (std::size_t i = 0; i < n; ++i) f.scenario.seeds.push_back(*o.seed + i);
    f.scenario.seed = *o.seed;
  }
  return f;
}

int cmd_simulate(const Options& o) {
  const arz::Scenario sc = load(o).scenario;
  arz::Truth tr;
  try {
    tr = arz::generate_truth(sc);
  } catch (const std::runtime_error& e) {
    throw NumericalFailure(e.what());
  }
  std::ostringstream csv;
  arz::write_trajectory_csv(csv, tr.x, sc.params);
  nlohmann::ordered_json summary;
  summary["scenario"] = sc.name;
  summary["steps"] = sc.duration;
  summary["segments"] = sc.topo.n_segments();
  summary["max_conservation_residual"] = num(tr.max_conservation_residual);
  summary["clamped_components"] = tr.clamped;
  write_file(o.out, csv.str());
  write_file(o.out + ".summary.json", summary.dump(2) + "\n");
  std::printf("wrote %s (%ld steps, %d segments)\n", o.out.c_str(), sc.duration, sc.topo.n_segments());
  return kOk;
}

int cmd_estimate(const Options& o) {
  const arz::Scenario sc = load(o).scenario;
  arz::RunResult r;
  try {
    r = arz::run_scenario(sc, o.estimator, sc.seed);
  } catch (const std::invalid_argument& e) {
    throw arz::ConfigError(e.what());
  } catch (const std::runtime_error& e) {
    throw NumericalFailure(e.what());
  }
  nlohmann::ordered_json summary;
  summary["scenario"] = sc.name;
  summary["estimator"] = o.estimator;
  summary["seed"] = sc.seed;
  summary["rmse_rho"] = number_or_null(r.error.rho);
  summary["rmse_v"] = number_or_null(r.error.v);
  summary["mean_step_time_s"] = num(r.mean_step_seconds());
  summary["flags"] = r.flags.describe();
  summary["out_of_bounds"] = r.out_of_bounds;
  std::vector<arz::Vector> written = r.estimate;
  if (o.smooth > 0) {
    written = arz::moving_average(r.estimate, o.smooth);
    const arz::Rmse sm = arz::rmse(r.truth, written, sc.params);
    summary["smooth_window"] = o.smooth;
    summary["rmse_rho_smoothed"] = number_or_null(sm.rho);
    summary["rmse_v_smoothed"] = number_or_null(sm.v);
  }
  std::ostringstream csv;
  arz::write_trajectory_csv(csv, written, sc.params);
  write_file(o.out, csv.str());
  write_file(o.out + ".summary.json", summary.dump(2) + "\n");
  std::printf("%s: rmse_rho=%.9g rmse_v=%.9g mean_step_time_s=%.9g\n", o.estimator.c_str(), r.error.rho,
              r.error.v, r.mean_step_seconds());
  return kOk;
}

int cmd_sweep(const Options& o) {
  const arz::ScenarioFile f = load(o);
  const arz::Scenario& sc = f.scenario;
  std::vector<arz::SweepCell> cells;
  try {
    if (o.sweep == "sensors")
      cells = arz::sensor_count_cells(sc, f.sweeps.counts);
    else if (o.sweep == "rotation")
      cells = arz::rotation_cells(sc, f.sweeps.rotation_periods);
    else if (o.sweep == "spacing")
      cells = arz::spacing_cells(sc, f.sweeps.spacing_starts, f.sweeps.spacing_periods);
    else
      cells = arz::noise_cells(sc, f.sweeps.noise_stds);
  } catch (const std::invalid_argument& e) {
    throw arz::ConfigError(e.what());
  }
  const auto rows = arz::run_cells(cells, o.jobs);
  std::ostringstream csv;
  arz::write_sweep_csv(csv, rows, 3600.0 * sc.params.T);
  write_file(o.out, csv.str());
  int failed = 0;
  for (const auto& r : rows)
    if (r.flags.rfind("failed", 0) == 0) ++failed;
  std::printf("wrote %s (%zu rows, %d failed)\n", o.out.c_str(), rows.size(), failed);
  return failed > 0 ? kNumericalError : kOk;
}

int cmd_gramian(const Options& o) {
  const arz::Scenario sc = load(o).scenario;
  arz::GramianResult g;
  try {
    g = arz::steady_state_gramian(sc, sc.sensors.fixed_segments);
  } catch (const std::runtime_error& e) {
    throw NumericalFailure(e.what());
  }
  std::string ids;
  for (int s : sc.sensors.fixed_segments) ids += (ids.empty() ? "" : " ") + std::to_string(s);
  std::printf("sensors: {%s}\n", ids.c_str());
  std::printf("min_eigenvalue: %.9g\n", g.min_eigenvalue);
  std::printf("threshold: %.9g\n", arz::kObservabilityThreshold);
  std::printf("verdict: %s\n", g.observable ? "observable" : "not observable");
  if (g.divergent) std::printf("warning: truncated sum is not converging\n");
  if (!o.out.empty()) {
    nlohmann::ordered_json j;
    j["sensors"] = sc.sensors.fixed_segments;
    j["min_eigenvalue"] = g.min_eigenvalue;
    j["threshold"] = arz::kObservabilityThreshold;
    j["observable"] = g.observable;
    j["divergent"] = g.divergent;
    write_file(o.out, j.dump(2) + "\n");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ARZ highway simulation and state estimation"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", o.config, "scenario JSON file")->required()->check(CLI::ExistingFile);
    auto* out = sub->add_option("--out", o.out, "output path");
    if (needs_out) out->required();
    sub->add_option("--seed", seed, "overrides the config seeds");
  };
  auto* sim = app.add_subcommand("simulate", "write the truth trajectory");
  add_common(sim, true);
  auto* est = app.add_subcommand("estimate", "run one estimator on twin data");
  add_common(est, true);
  est->add_option("--estimator", o.estimator, "ekf|ukf|enkf|mhe")
      ->check(CLI::IsMember({"ekf", "ukf", "enkf", "mhe"}));
  est->add_option("--smooth", o.smooth, "trailing moving-average window (steps)")->check(CLI::PositiveNumber);
  auto* sw = app.add_subcommand("sweep", "run a parameter sweep");
  add_common(sw, true);
  sw->add_option("--sweep", o.sweep, "sensors|rotation|spacing|noise")
      ->required()
      ->check(CLI::IsMember({"sensors", "rotation", "spacing", "noise"}));
  sw->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  auto* gr = app.add_subcommand("gramian", "observability of the fixed sensor set");
  add_common(gr, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  for (auto* sub : {sim, est, sw, gr})
    if (sub->parsed() && sub->count("--seed") > 0) o.seed = seed;

  try {
    if (sim->parsed()) return cmd_simulate(o);
    if (est->parsed()) return cmd_estimate(o);
    if (sw->parsed()) return cmd_sweep(o);
    return cmd_gramian(o);
  } catch (const arz::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const NumericalFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalError;
  }
}
