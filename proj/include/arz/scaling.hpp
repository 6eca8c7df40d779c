#pragma once

#include "arz/model.hpp"

namespace arz {

/// Diagonal change of variables that divides relative-flow rows by v_f so
/// both state families are of the order of a density.
struct StateScaling {
  Vector factor;  // scaled = factor .* x

  static StateScaling for_model(const Topology& topo, const ModelParams& p) {
    StateScaling s;
    s.factor.resize(topo.n_x());
    for (int i = 0; i < topo.n_segments(); ++i) {
      s.factor[2 * i] = 1.0;
      s.factor[2 * i + 1] = 1.0 / p.v_f;
    }
    return s;
  }

  Vector to_scaled(const Vector& x) const { return x.cwiseProduct(factor); }
  Vector from_scaled(const Vector& xs) const { return xs.cwiseQuotient(factor); }

  /// S M S^-1 for a state-to-state matrix.
  Matrix similar(const Matrix& M) const {
    return factor.asDiagonal() * M * factor.cwiseInverse().asDiagonal();
  }
  /// M S^-1 for a matrix acting on states (e.g. a measurement Jacobian).
  Matrix on_input_side(const Matrix& M) const { return M * factor.cwiseInverse().asDiagonal(); }
  /// S M for a matrix producing states.
  Matrix on_output_side(const Matrix& M) const { return factor.asDiagonal() * M; }

  StateBounds bounds(const StateBounds& b) const { return StateBounds{to_scaled(b.lower), to_scaled(b.upper)}; }
};

}  // namespace arz
