#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace tumor_ocp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched grids, meshes or slice counts.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A linear solve did not reach the requested tolerance.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual) : Error(what + suffix(residual)), residual_(residual) {}
  double residual() const noexcept { return residual_; }

  /// Same error with a location prefix, without repeating the residual.
  SolverError prefixed(const std::string& where) const { return SolverError(where + what(), residual_, 0); }

 private:
  SolverError(const std::string& full, double residual, int) : Error(full), residual_(residual) {}
  static std::string suffix(double r) {
    char buf[48];
    std::snprintf(buf, sizeof buf, " (residual %.3g)", r);
    return buf;
  }
  double residual_;
};

/// Non-finite values appeared in a solution.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or model parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Broken algorithmic contract (e.g. an accepted step increased the cost).
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tumor_ocp
