#pragma once

// Sensor schedules (fixed and rotating), observation selectors, measurement
// noise and the truncated observability Gramian.

#include "arz/linearization.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace arz {

/// Fixed sensors plus a group of mobile (connected-vehicle) positions that
/// all advance one mainline segment every `rotation_period` steps.
struct SensorSchedule {
  std::vector<int> fixed_segments;
  std::vector<int> mobile_start;
  std::optional<int> rotation_period;  // steps between moves; nullopt = never

  /// Segments always carrying a sensor: the last mainline segment and every ramp.
  static std::vector<int> minimum_fixed(const Topology& topo) {
    std::vector<int> ids{topo.n_mainline};
    for (int j = 0; j < topo.n_on(); ++j) ids.push_back(topo.on_ramp_segment(j));
    for (int j = 0; j < topo.n_off(); ++j) ids.push_back(topo.off_ramp_segment(j));
    return ids;
  }

  /// Mainline segments a mobile sensor can visit, in travel order.
  std::vector<int> mobile_cycle(const Topology& topo) const {
    std::vector<int> cycle;
    for (int s = 1; s <= topo.n_mainline; ++s)
      if (std::find(fixed_segments.begin(), fixed_segments.end(), s) == fixed_segments.end())
        cycle.push_back(s);
    return cycle;
  }

  void validate(const Topology& topo) const {
    std::set<int> fixed;
    for (int s : fixed_segments) {
      if (!topo.is_valid_segment(s))
        throw std::invalid_argument("fixed sensor on unknown segment " + std::to_string(s));
      if (!fixed.insert(s).second)
        throw std::invalid_argument("duplicate fixed sensor segment " + std::to_string(s));
    }
    if (rotation_period && *rotation_period < 1)
      throw std::invalid_argument("rotation period must be at least one step");
    const auto cycle = mobile_cycle(topo);
    if (mobile_start.size() > cycle.size())
      throw std::invalid_argument("more mobile sensors (" + std::to_string(mobile_start.size()) +
                                  ") than non-fixed mainline segments (" + std::to_string(cycle.size()) + ")");
    std::set<int> mobile;
    for (int s : mobile_start) {
      if (!topo.is_mainline(s))
        throw std::invalid_argument("mobile sensor must start on a mainline segment, got " + std::to_string(s));
      if (fixed.count(s))
        throw std::invalid_argument("mobile sensor start " + std::to_string(s) + " coincides with a fixed sensor");
      if (!mobile.insert(s).second)
        throw std::invalid_argument("duplicate mobile sensor start " + std::to_string(s));
    }
  }

  /// Mobile positions at step k, in the order of `mobile_start`.
  std::vector<int> mobile_positions_at(long k, const Topology& topo) const {
    if (!rotation_period || mobile_start.empty()) return mobile_start;
    const auto cycle = mobile_cycle(topo);
    const long n = static_cast<long>(cycle.size());
    const long moves = k / *rotation_period;
    std::vector<int> out;
    out.reserve(mobile_start.size());
    for (int s : mobile_start) {
      const long idx = std::find(cycle.begin(), cycle.end(), s) - cycle.begin();
      out.push_back(cycle[static_cast<std::size_t>((idx + moves) % n)]);
    }
    return out;
  }

  /// All measured segments at step k, ascending.
  std::vector<int> positions_at(long k, const Topology& topo) const {
    std::vector<int> all = fixed_segments;
    const auto mobile = mobile_positions_at(k, topo);
    all.insert(all.end(), mobile.begin(), mobile.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
  }
};

/// Density and speed rows of the listed segments, in ascending segment order.
/// Duplicates are dropped and reported through `had_duplicates`.
inline MeasurementSelector build_observation(std::vector<int> segments, const Topology& topo,
                                             bool* had_duplicates = nullptr) {
  for (int s : segments)
    if (!topo.is_valid_segment(s)) throw std::invalid_argument("observation on unknown segment " + std::to_string(s));
  std::sort(segments.begin(), segments.end());
  const auto last = std::unique(segments.begin(), segments.end());
  if (had_duplicates) *had_duplicates = last != segments.end();
  segments.erase(last, segments.end());
  MeasurementSelector sel;
  for (int s : segments) {
    sel.rows.push_back(Topology::rho_index(s));
    sel.rows.push_back(Topology::psi_index(s));
  }
  return sel;
}

/// Zero-mean uniform noise with standard deviation `std`.
struct NoiseModel {
  double std = 1.0;
  std::uint64_t seed = 0;

  double half_width() const { return std * std::sqrt(3.0); }
};

/// C h(x_true) plus i.i.d. uniform noise on [-s sqrt3, s sqrt3] drawn from `rng`.
template <class Rng>
Vector synthesize_measurements(const Vector& x_true, const MeasurementSelector& sel, double noise_std, Rng& rng,
                               const ModelParams& p) {
  Vector y = sel.apply(measure_h(x_true, p));
  if (noise_std > 0.0) {
    const double a = noise_std * std::sqrt(3.0);
    std::uniform_real_distribution<double> dist(-a, a);
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += dist(rng);
  }
  return y;
}

inline constexpr double kObservabilityThreshold = 1e-9;

struct GramianResult {
  Matrix W;
  double min_eigenvalue = 0.0;
  double spectral_radius = 0.0;
  bool observable = false;
  /// Spectral radius of A beyond 1 (+1e-9) or term norms still growing over
  /// the last ten terms; the truncated sum is then not meaningful.
  bool divergent = false;
};

/// W = sum_{m < terms} (A^T)^m C^T C A^m.
inline GramianResult observability_gramian(const Matrix& A, const Matrix& C, int terms = 200,
                                           double threshold = kObservabilityThreshold) {
  if (A.rows() != A.cols()) throw std::invalid_argument("observability_gramian: A must be square");
  if (C.cols() != A.rows() && C.rows() > 0)
    throw std::invalid_argument("observability_gramian: C and A dimensions disagree");
  const Eigen::Index n = A.rows();
  GramianResult res;
  res.W = Matrix::Zero(n, n);
  Matrix M = C.rows() > 0 ? C : Matrix::Zero(1, n);
  std::vector<double> norms;
  norms.reserve(terms);
  for (int m = 0; m < terms; ++m) {
    const Matrix term = M.transpose() * M;
    res.W += term;
    norms.push_back(term.norm());
    M = M * A;
  }
  res.W = 0.5 * (res.W + res.W.transpose());
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(res.W, Eigen::EigenvaluesOnly);
  res.min_eigenvalue = eig.eigenvalues().minCoeff();
  res.spectral_radius = A.eigenvalues().cwiseAbs().maxCoeff();
  if (res.spectral_radius > 1.0 + 1e-9) res.divergent = true;
  if (terms > 10) {
    bool growing = true;
    for (int m = terms - 10; m < terms; ++m)
      if (!(norms[m] > norms[m - 1] && norms[m] > 0.0)) growing = false;
    if (growing) res.divergent = true;
  }
  res.observable = res.min_eigenvalue > threshold;
  return res;
}

}  // namespace arz
