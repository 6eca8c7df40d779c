#pragma once

// Scenario files (JSON). Times are given in seconds and lengths in meters and
// converted to steps and kilometers here. Unknown keys are rejected so typos
// do not silently fall back to defaults.

#include "arz/scenarios.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace arz {

/// Any problem with a configuration file; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepSpec {
  std::vector<int> counts{0, 1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::optional<int>> rotation_periods{std::nullopt, 20, 10, 5, 2, 1};  // steps
  std::vector<std::vector<int>> spacing_starts{{1, 2, 3}, {1, 3, 5}, {1, 4, 7}};
  std::vector<std::optional<int>> spacing_periods{std::nullopt, 10, 1};
  std::vector<double> noise_stds{0.0, 1.0, 5.0, 10.0, 20.0, 40.0};
};

struct ScenarioFile {
  Scenario scenario;
  SweepSpec sweeps;
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_as(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
void read_opt(const json& obj, const char* key, const std::string& where, T& out) {
  if (obj.contains(key)) out = get_as<T>(obj, key, where);
}

/// Seconds to a whole number of steps.
inline long to_steps(double seconds, double T_s, const std::string& where) {
  if (!std::isfinite(seconds)) throw ConfigError(where + ": time must be finite");
  const double steps = seconds / T_s;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, std::abs(steps)))
    throw ConfigError(where + ": " + std::to_string(seconds) + " s is not a whole number of time steps");
  return static_cast<long>(rounded);
}

inline std::optional<int> read_period(const json& v, double T_s, const std::string& where) {
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw ConfigError(where + ": rotation period must be a number of seconds or null");
  const long p = to_steps(v.get<double>(), T_s, where);
  if (p < 1) throw ConfigError(where + ": rotation period must be at least one time step");
  return static_cast<int>(p);
}

inline std::vector<std::optional<int>> read_periods(const json& v, double T_s, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<std::optional<int>> out;
  for (const auto& e : v) out.push_back(read_period(e, T_s, where));
  return out;
}

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

/// CSV with a header row and one row of boundary inputs per step.
inline std::vector<Vector> read_input_series(const std::string& path, int n_u) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input series '" + path + "'");
  std::vector<Vector> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 || line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError(path + ": line " + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (static_cast<int>(vals.size()) != n_u)
      throw ConfigError(path + ": line " + std::to_string(lineno) + ": expected " + std::to_string(n_u) +
                        " columns, got " + std::to_string(vals.size()));
    rows.push_back(Eigen::Map<const Vector>(vals.data(), n_u));
  }
  return rows;
}

inline void read_estimators(const json& list, Scenario& sc) {
  if (!list.is_array() || list.empty()) throw ConfigError("estimators: expected a nonempty array");
  sc.estimators.clear();
  // q, r and p0 are shared by the three Kalman filters
  std::optional<double> q, r, p0;
  auto shared = [](const json& e, const char* key, std::optional<double>& slot, const std::string& where) {
    if (!e.contains(key)) return;
    const double v = get_as<double>(e, key, where);
    if (slot && *slot != v) throw ConfigError(where + ": '" + key + "' differs between Kalman filter entries");
    slot = v;
  };
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& e = list[i];
    const std::string where = "estimators[" + std::to_string(i) + "]";
    if (!e.is_object()) throw ConfigError(where + ": expected an object");
    const std::string kind = get_as<std::string>(e, "kind", where);
    if (std::find(sc.estimators.begin(), sc.estimators.end(), kind) != sc.estimators.end())
      throw ConfigError(where + ": estimator '" + kind + "' listed twice");
    if (kind == "ekf") {
      check_keys(e, where, {"kind", "q", "r", "p0"});
    } else if (kind == "ukf") {
      check_keys(e, where, {"kind", "q", "r", "p0", "alpha", "kappa", "beta"});
      read_opt(e, "alpha", where, sc.estimator.ukf_alpha);
      read_opt(e, "kappa", where, sc.estimator.ukf_kappa);
      read_opt(e, "beta", where, sc.estimator.ukf_beta);
    } else if (kind == "enkf") {
      check_keys(e, where, {"kind", "q", "r", "p0", "ensemble_size"});
      read_opt(e, "ensemble_size", where, sc.estimator.ensemble_size);
    } else if (kind == "mhe") {
      check_keys(e, where, {"kind", "horizon", "mu", "w1", "w2", "tol_kkt", "max_iter"});
      read_opt(e, "horizon", where, sc.mhe.horizon);
      read_opt(e, "mu", where, sc.mhe.mu);
      read_opt(e, "w1", where, sc.mhe.w1);
      read_opt(e, "w2", where, sc.mhe.w2);
      read_opt(e, "tol_kkt", where, sc.mhe.tol_kkt);
      read_opt(e, "max_iter", where, sc.mhe.max_iter);
    } else {
      throw ConfigError(where + ": unknown estimator '" + kind + "' (valid: ekf, ukf, enkf, mhe)");
    }
    if (kind != "mhe") {
      shared(e, "q", q, where);
      shared(e, "r", r, where);
      shared(e, "p0", p0, where);
    }
    sc.estimators.push_back(kind);
  }
  if (q) sc.estimator.q = *q;
  if (r) sc.estimator.r = *r;
  if (p0) sc.estimator.p0 = *p0;
}

}  // namespace detail

/// Parses a scenario document. Relative series paths resolve against `base_dir`.
inline ScenarioFile parse_scenario(const std::string& text, const std::string& origin = "<config>",
                                   const std::string& base_dir = ".") {
  using detail::check_keys;
  using detail::get_as;
  using detail::json;
  using detail::read_opt;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::string msg = e.what();
    const auto pos = msg.rfind(": ");
    throw ConfigError(origin + ": invalid JSON at " + detail::line_col(text, e.byte) + ": " +
                      (pos == std::string::npos ? msg : msg.substr(pos + 2)));
  }
  check_keys(root, origin,
             {"name", "params", "topology", "inputs", "jam", "sensors", "noise", "estimators", "duration_s",
              "warmup_s", "initial_density", "sweeps"});

  ScenarioFile file;
  Scenario sc = Scenario::reference();
  read_opt(root, "name", origin, sc.name);

  double T_s = 3600.0 * sc.params.T;
  if (root.contains("params")) {
    const json& m = root["params"];
    check_keys(m, "params", {"v_f", "rho_m", "tau", "gamma", "T_s", "l_m"});
    read_opt(m, "v_f", "params", sc.params.v_f);
    read_opt(m, "rho_m", "params", sc.params.rho_m);
    read_opt(m, "tau", "params", sc.params.tau);
    read_opt(m, "gamma", "params", sc.params.gamma);
    read_opt(m, "T_s", "params", T_s);
    sc.params.T = T_s / 3600.0;
    if (m.contains("l_m")) sc.params.l = get_as<double>(m, "l_m", "params") / 1000.0;
    if (!(T_s > 0.0)) throw ConfigError("params.T_s must be positive");
  }

  const bool custom_topology = root.contains("topology");
  if (custom_topology) {
    const json& t = root["topology"];
    check_keys(t, "topology", {"n_mainline", "on_ramps", "off_ramps"});
    Topology topo;
    topo.n_mainline = get_as<int>(t, "n_mainline", "topology");
    if (t.contains("on_ramps"))
      for (const auto& r : t["on_ramps"]) {
        check_keys(r, "topology.on_ramps[]", {"at"});
        topo.on_ramps.push_back(OnRamp{get_as<int>(r, "at", "topology.on_ramps[]")});
      }
    if (t.contains("off_ramps"))
      for (const auto& r : t["off_ramps"]) {
        check_keys(r, "topology.off_ramps[]", {"at", "alpha"});
        topo.off_ramps.push_back(
            OffRamp{get_as<int>(r, "at", "topology.off_ramps[]"), get_as<double>(r, "alpha", "topology.off_ramps[]")});
      }
    try {
      topo.validate();
    } catch (const std::exception& e) {
      throw ConfigError(origin + ": topology: " + e.what());
    }
    sc.topo = topo;
    sc.sensors.fixed_segments = SensorSchedule::minimum_fixed(topo);
    sc.sensors.mobile_start.clear();
    sc.inputs.ramp_demand.assign(topo.n_on(), 0.0);
    sc.inputs.ramp_w.assign(topo.n_on(), sc.params.v_f);
    sc.inputs.offramp_rho_out.assign(topo.n_off(), 0.0);
  }
  if (root.contains("params") && root["params"].contains("v_f")) {
    sc.inputs.w_in = sc.params.v_f;
    sc.inputs.ramp_w.assign(sc.topo.n_on(), sc.params.v_f);
  }

  if (root.contains("duration_s")) sc.duration = detail::to_steps(get_as<double>(root, "duration_s", origin), T_s, "duration_s");
  if (root.contains("warmup_s")) sc.warmup = detail::to_steps(get_as<double>(root, "warmup_s", origin), T_s, "warmup_s");

  if (root.contains("inputs")) {
    const json& in = root["inputs"];
    check_keys(in, "inputs", {"constant", "series"});
    if (in.contains("constant") == in.contains("series"))
      throw ConfigError("inputs: give exactly one of 'constant' or 'series'");
    if (in.contains("constant")) {
      const json& c = in["constant"];
      const std::string w = "inputs.constant";
      check_keys(c, w, {"demand_in", "w_in", "rho_out", "on_ramps", "off_ramps_rho_out"});
      read_opt(c, "demand_in", w, sc.inputs.demand_in);
      read_opt(c, "w_in", w, sc.inputs.w_in);
      read_opt(c, "rho_out", w, sc.inputs.rho_out);
      if (c.contains("on_ramps")) {
        const json& r = c["on_ramps"];
        if (!r.is_array() || static_cast<int>(r.size()) != sc.topo.n_on())
          throw ConfigError(w + ".on_ramps: need one entry per on-ramp");
        for (int j = 0; j < sc.topo.n_on(); ++j) {
          check_keys(r[j], w + ".on_ramps[]", {"demand", "w"});
          sc.inputs.ramp_demand[j] = get_as<double>(r[j], "demand", w + ".on_ramps[]");
          read_opt(r[j], "w", w + ".on_ramps[]", sc.inputs.ramp_w[j]);
        }
      }
      if (c.contains("off_ramps_rho_out")) {
        sc.inputs.offramp_rho_out = get_as<std::vector<double>>(c, "off_ramps_rho_out", w);
        if (static_cast<int>(sc.inputs.offramp_rho_out.size()) != sc.topo.n_off())
          throw ConfigError(w + ".off_ramps_rho_out: need one entry per off-ramp");
      }
    } else {
      std::filesystem::path p = get_as<std::string>(in, "series", "inputs");
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      sc.input_series = detail::read_input_series(p.string(), sc.topo.n_u());
    }
  }

  if (root.contains("jam")) {
    const json& j = root["jam"];
    if (j.is_null()) {
      sc.jam.reset();
    } else {
      check_keys(j, "jam", {"segment", "start_s", "end_s", "scale"});
      JamSpec jam;
      read_opt(j, "segment", "jam", jam.segment);
      if (j.contains("start_s")) jam.start = detail::to_steps(get_as<double>(j, "start_s", "jam"), T_s, "jam.start_s");
      if (j.contains("end_s")) jam.end = detail::to_steps(get_as<double>(j, "end_s", "jam"), T_s, "jam.end_s");
      read_opt(j, "scale", "jam", jam.scale);
      sc.jam = jam;
    }
  } else if (custom_topology) {
    sc.jam.reset();
  }

  if (root.contains("sensors")) {
    const json& s = root["sensors"];
    check_keys(s, "sensors", {"fixed", "mobile"});
    read_opt(s, "fixed", "sensors", sc.sensors.fixed_segments);
    if (s.contains("mobile")) {
      const json& m = s["mobile"];
      if (m.is_null()) {
        sc.sensors.mobile_start.clear();
        sc.sensors.rotation_period.reset();
      } else {
        check_keys(m, "sensors.mobile", {"count", "period_s", "start"});
        read_opt(m, "start", "sensors.mobile", sc.sensors.mobile_start);
        if (m.contains("count")) {
          const int count = get_as<int>(m, "count", "sensors.mobile");
          if (count < 0) throw ConfigError("sensors.mobile.count must be nonnegative");
          if (!m.contains("start")) {
            // well-distributed default placement
            sc.sensors.mobile_start.clear();
            for (int seg : placement_order())
              if (static_cast<int>(sc.sensors.mobile_start.size()) < count && sc.topo.is_mainline(seg) &&
                  std::find(sc.sensors.fixed_segments.begin(), sc.sensors.fixed_segments.end(), seg) ==
                      sc.sensors.fixed_segments.end())
                sc.sensors.mobile_start.push_back(seg);
          }
          if (static_cast<int>(sc.sensors.mobile_start.size()) != count)
            throw ConfigError("sensors.mobile: count " + std::to_string(count) + " does not match " +
                              std::to_string(sc.sensors.mobile_start.size()) + " start positions");
        }
        if (m.contains("period_s")) sc.sensors.rotation_period = detail::read_period(m["period_s"], T_s, "sensors.mobile.period_s");
      }
    }
  }

  if (root.contains("noise")) {
    const json& n = root["noise"];
    check_keys(n, "noise", {"std", "seeds"});
    read_opt(n, "std", "noise", sc.noise_std);
    read_opt(n, "seeds", "noise", sc.seeds);
    if (!sc.seeds.empty()) sc.seed = sc.seeds.front();
  }
  read_opt(root, "initial_density", origin, sc.initial_density);
  if (root.contains("estimators")) detail::read_estimators(root["estimators"], sc);

  if (root.contains("sweeps")) {
    const json& s = root["sweeps"];
    check_keys(s, "sweeps", {"sensors", "rotation", "spacing", "noise"});
    if (s.contains("sensors")) {
      check_keys(s["sensors"], "sweeps.sensors", {"counts"});
      read_opt(s["sensors"], "counts", "sweeps.sensors", file.sweeps.counts);
    }
    if (s.contains("rotation")) {
      check_keys(s["rotation"], "sweeps.rotation", {"periods_s"});
      if (s["rotation"].contains("periods_s"))
        file.sweeps.rotation_periods = detail::read_periods(s["rotation"]["periods_s"], T_s, "sweeps.rotation.periods_s");
    }
    if (s.contains("spacing")) {
      check_keys(s["spacing"], "sweeps.spacing", {"starts", "periods_s"});
      read_opt(s["spacing"], "starts", "sweeps.spacing", file.sweeps.spacing_starts);
      if (s["spacing"].contains("periods_s"))
        file.sweeps.spacing_periods = detail::read_periods(s["spacing"]["periods_s"], T_s, "sweeps.spacing.periods_s");
    }
    if (s.contains("noise")) {
      check_keys(s["noise"], "sweeps.noise", {"stds"});
      read_opt(s["noise"], "stds", "sweeps.noise", file.sweeps.noise_stds);
    }
  }

  try {
    sc.validate();
    // default starts may not fit a custom topology; check only what the file gives
    if (root.contains("sweeps") && root["sweeps"].contains("spacing") && root["sweeps"]["spacing"].contains("starts"))
      for (const auto& start : file.sweeps.spacing_starts) {
        SensorSchedule probe = sc.sensors;
        probe.mobile_start = start;
        probe.validate(sc.topo);
      }
    for (double s : file.sweeps.noise_stds)
      if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("sweeps.noise.stds must be finite and nonnegative");
  } catch (const std::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  file.scenario = std::move(sc);
  return file;
}

inline ScenarioFile load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_scenario(ss.str(), path, dir.empty() ? "." : dir.string());
}

}  // namespace arz
