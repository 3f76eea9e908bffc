#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/grid.hpp"
#include "tumor_ocp/potential.hpp"

namespace tumor_ocp {

/// Box bounds u_* ≤ u ≤ u^*, one slice per time step.
struct Box {
  Trajectory lower;
  Trajectory upper;

  static Box constant(const Grid& g, const TimeMesh& tm, double lo, double hi) {
    return Box{Trajectory(g, tm.n_steps(), lo), Trajectory(g, tm.n_steps(), hi)};
  }

  void validate() const {
    lower.require_compatible(upper, "box bounds");
    for (std::size_t k = 0; k < lower.size(); ++k) {
      if ((lower[k].array() > upper[k].array()).any())
        throw ConfigError("control bounds need u_* <= u^*, assumption (targets)");
    }
  }
};

/// Tracking targets φ_Q, σ_Q (n_steps+1 slices) and φ_Ω, σ_Ω.
struct Targets {
  Trajectory phi_Q;
  Trajectory sigma_Q;
  Vector phi_Omega;
  Vector sigma_Omega;

  static Targets zero(const Grid& g, const TimeMesh& tm) {
    return Targets{Trajectory(g, tm.n_steps() + 1), Trajectory(g, tm.n_steps() + 1),
                   Vector::Zero(g.n_nodes()), Vector::Zero(g.n_nodes())};
  }
};

struct InitialData {
  Vector mu0;
  Vector phi0;
  Vector sigma0;

  static InitialData zero(const Grid& g) {
    return InitialData{Vector::Zero(g.n_nodes()), Vector::Zero(g.n_nodes()), Vector::Zero(g.n_nodes())};
  }
};

/**
 * Model coefficients and data of the relaxed (alpha > 0) or limit (alpha = 0)
 * problem.  `b` holds the cost weights b0..b4 in that order.
 */
struct ModelParams {
  double alpha = 0.0;
  double beta = 1.0;
  double P = 1.0;
  std::array<double, 5> b{1.0, 0.0, 0.0, 0.0, 0.0};
  Potential potential;
  Targets targets;
  InitialData initial;
  Box bounds;

  double b0() const { return b[0]; }

  static ModelParams defaults(const Grid& g, const TimeMesh& tm) {
    return ModelParams{0.0,
                       1.0,
                       1.0,
                       {1.0, 0.0, 0.0, 0.0, 0.0},
                       Potential::regular_quartic(),
                       Targets::zero(g, tm),
                       InitialData::zero(g),
                       Box::constant(g, tm, -1.0, 1.0)};
  }

  /// Scalar assumptions only.
  void validate_scalars() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
      throw ConfigError("alpha must be >= 0 (alpha > 0 relaxed system, alpha = 0 limit system)");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be > 0, assumption (ab)");
    if (!(P > 0.0) || !std::isfinite(P)) throw ConfigError("P must be > 0, assumption (P)");
    bool any = false;
    for (double bi : b) {
      if (!(bi >= 0.0) || !std::isfinite(bi)) throw ConfigError("b0..b4 must be nonnegative, assumption (constants)");
      any = any || bi > 0.0;
    }
    if (!any) throw ConfigError("b0..b4 must not all be zero, assumption (constants)");
  }

  /// Scalar assumptions plus mesh consistency of every data field.
  void validate(const Grid& g, const TimeMesh& tm) const {
    validate_scalars();
    const auto nodal = static_cast<std::size_t>(tm.n_steps()) + 1;
    if (targets.phi_Q.grid() != g || targets.phi_Q.size() != nodal || targets.sigma_Q.grid() != g ||
        targets.sigma_Q.size() != nodal)
      throw StructuralError("targets phi_Q/sigma_Q do not match the space-time mesh");
    require_on_grid(g, targets.phi_Omega, "phi_Omega");
    require_on_grid(g, targets.sigma_Omega, "sigma_Omega");
    require_on_grid(g, initial.mu0, "mu0");
    require_on_grid(g, initial.phi0, "phi0");
    require_on_grid(g, initial.sigma0, "sigma0");
    if (bounds.lower.grid() != g || bounds.lower.size() != static_cast<std::size_t>(tm.n_steps()))
      throw StructuralError("control bounds do not match the space-time mesh");
    bounds.validate();
  }

  ModelParams with_alpha(double a) const {
    ModelParams p = *this;
    p.alpha = a;
    return p;
  }
};

/// A control trajectory inside its box; admissibility is checked on construction.
class Control {
 public:
  Control(Trajectory values, Trajectory lower, Trajectory upper)
      : values_(std::move(values)), lower_(std::move(lower)), upper_(std::move(upper)) {
    values_.require_compatible(lower_, "control vs lower bound");
    values_.require_compatible(upper_, "control vs upper bound");
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if ((lower_[k].array() > upper_[k].array()).any()) throw ConfigError("control bounds inverted");
      if ((values_[k].array() < lower_[k].array()).any() || (values_[k].array() > upper_[k].array()).any())
        throw ConfigError("control is not admissible (outside [u_*, u^*])");
    }
  }
  Control(Trajectory values, const Box& box) : Control(std::move(values), box.lower, box.upper) {}

  const Trajectory& values() const noexcept { return values_; }
  const Trajectory& lower() const noexcept { return lower_; }
  const Trajectory& upper() const noexcept { return upper_; }
  const Grid& grid() const noexcept { return values_.grid(); }
  std::size_t size() const noexcept { return values_.size(); }

 private:
  Trajectory values_;
  Trajectory lower_;
  Trajectory upper_;
};

}  // namespace tumor_ocp
