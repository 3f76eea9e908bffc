#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "tumor_ocp/errors.hpp"

namespace tumor_ocp {

/**
 * Double-well potential F(r) = c0 + c1 r + c2 r² + c3 r³ + c4 r⁴.
 *
 * Restricted to degree ≤ 4 so that |F''(r)| ≤ C1 (1 + r²) can hold.  The
 * default is the regular quartic ¼(r² - 1)².  Construction rejects higher
 * degrees and polynomials that go negative on the sampling interval.
 */
class Potential {
 public:
  enum class Kind { regular_quartic, custom };

  static constexpr double sample_min = -10.0;
  static constexpr double sample_max = 10.0;
  static constexpr int sample_count = 2001;

  Potential() : Potential(Kind::regular_quartic, {0.25, 0.0, -0.5, 0.0, 0.25}, 3.0) {}

  static Potential regular_quartic(double C1 = 3.0) {
    return Potential(Kind::regular_quartic, {0.25, 0.0, -0.5, 0.0, 0.25}, C1);
  }

  /// Coefficients in increasing degree. Trailing zeros beyond degree 4 are tolerated.
  static Potential custom(const std::vector<double>& coefficients, double C1 = 3.0) {
    std::array<double, 5> c{};
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
      if (i < c.size()) {
        c[i] = coefficients[i];
      } else if (coefficients[i] != 0.0) {
        throw ConfigError("potential degree must be <= 4 (assumption (F): regular potentials only)");
      }
    }
    return Potential(Kind::custom, c, C1);
  }

  /// F ≡ 0; used for linear test problems.
  static Potential zero() { return custom({0.0}); }

  Kind kind() const noexcept { return kind_; }
  double C1() const noexcept { return C1_; }
  const std::array<double, 5>& coefficients() const noexcept { return c_; }

  double F(double r) const { return c_[0] + r * (c_[1] + r * (c_[2] + r * (c_[3] + r * c_[4]))); }
  double dF(double r) const { return c_[1] + r * (2.0 * c_[2] + r * (3.0 * c_[3] + r * 4.0 * c_[4])); }
  double d2F(double r) const { return 2.0 * c_[2] + r * (6.0 * c_[3] + r * 12.0 * c_[4]); }
  double d3F(double r) const { return 6.0 * c_[3] + r * 24.0 * c_[4]; }

  /// Heuristic check of |F''(r)| ≤ C1(1 + r²) on the sampling grid of [-10, 10].
  bool validate_growth() const {
    for (int i = 0; i < sample_count; ++i) {
      const double r = sample_at(i);
      if (std::abs(d2F(r)) > C1_ * (1.0 + r * r)) return false;
    }
    return true;
  }

 private:
  Potential(Kind kind, std::array<double, 5> c, double C1) : kind_(kind), c_(c), C1_(C1) {
    if (!(C1 > 0.0)) throw ConfigError("potential.C1 must be > 0");
    for (double v : c_)
      if (!std::isfinite(v)) throw ConfigError("potential coefficients must be finite");
    for (int i = 0; i < sample_count; ++i) {
      if (F(sample_at(i)) < 0.0)
        throw ConfigError("potential must be nonnegative on [-10, 10]");
    }
  }

  static double sample_at(int i) {
    return sample_min + (sample_max - sample_min) * i / (sample_count - 1);
  }

  Kind kind_;
  std::array<double, 5> c_;
  double C1_;
};

inline std::string to_string(Potential::Kind k) {
  return k == Potential::Kind::regular_quartic ? "regular_quartic" : "custom";
}

}  // namespace tumor_ocp
