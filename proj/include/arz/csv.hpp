#pragma once

// CSV writers. Floats use 9 significant digits so output is byte-stable.

#include "arz/scenarios.hpp"

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace arz {

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Quotes a field when it contains a separator, quote or newline.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline const char* trajectory_header() { return "step,segment_id,rho,psi,speed"; }

/// Rows for steps first_step..end; step 0 (the initial state or guess) is skipped by default.
inline void write_trajectory_csv(std::ostream& os, const std::vector<Vector>& traj, const ModelParams& p,
                                 std::size_t first_step = 1) {
  os << trajectory_header() << '\n';
  for (std::size_t k = first_step; k < traj.size(); ++k) {
    const Vector& x = traj[k];
    for (Eigen::Index s = 0; s < x.size() / 2; ++s) {
      const double rho = x[2 * s], psi = x[2 * s + 1];
      os << k << ',' << (s + 1) << ',' << fmt_num(rho) << ',' << fmt_num(psi) << ','
         << fmt_num(segment_speed(rho, psi, p)) << '\n';
    }
  }
}

inline const char* sweep_header() {
  return "scenario,estimator,additional_sensors,period_s,start,noise_std,n_seeds,rmse_rho,rmse_v,mean_step_time_s,flags";
}

/// `T_s` converts rotation periods from steps to seconds; fixed positions print as "inf".
inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, double T_s) {
  os << sweep_header() << '\n';
  for (const auto& r : rows) {
    std::string start;
    for (std::size_t i = 0; i < r.start.size(); ++i) start += (i ? " " : "") + std::to_string(r.start[i]);
    os << csv_field(r.scenario) << ',' << r.estimator << ',' << r.additional_sensors << ','
       << (r.period ? fmt_num(*r.period * T_s) : std::string("inf")) << ',' << csv_field(start) << ','
       << fmt_num(r.noise_std) << ',' << r.n_seeds << ',' << fmt_num(r.rmse_rho) << ',' << fmt_num(r.rmse_v) << ','
       << fmt_num(r.mean_step_time_s) << ',' << csv_field(r.flags) << '\n';
  }
}

}  // namespace arz
