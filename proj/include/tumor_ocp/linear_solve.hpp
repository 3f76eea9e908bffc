#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include "tumor_ocp/errors.hpp"
#include "tumor_ocp/grid.hpp"

namespace tumor_ocp {

struct LinearSolveOptions {
  /// Bound on the normwise backward error ‖Ax-b‖∞ / (‖A‖∞‖x‖∞ + ‖b‖∞).
  double lin_tol = 1e-12;
  /// Node counts above this switch from sparse LU to BiCGSTAB.
  Eigen::Index direct_max_nodes = 10000;
  int max_iterations = 5000;
};

/// Assembles 3x3 block sparse matrices over n unknowns per block.
class BlockAssembler {
 public:
  explicit BlockAssembler(Eigen::Index n) : n_(n) {}

  void add_scaled(int bi, int bj, const SparseMatrix& A, double c) {
    for (int col = 0; col < A.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(A, col); it; ++it)
        t_.emplace_back(bi * n_ + it.row(), bj * n_ + it.col(), c * it.value());
  }
  void add_diag(int bi, int bj, double c) {
    for (Eigen::Index i = 0; i < n_; ++i) t_.emplace_back(bi * n_ + i, bj * n_ + i, c);
  }
  void add_diag(int bi, int bj, const Vector& d, double c = 1.0) {
    for (Eigen::Index i = 0; i < n_; ++i) t_.emplace_back(bi * n_ + i, bj * n_ + i, c * d[i]);
  }
  SparseMatrix build() {
    SparseMatrix A(3 * n_, 3 * n_);
    A.setFromTriplets(t_.begin(), t_.end());
    A.makeCompressed();
    t_.clear();
    return A;
  }

 private:
  Eigen::Index n_;
  std::vector<Eigen::Triplet<double>> t_;
};

inline double inf_norm(const SparseMatrix& A) {
  Vector rows = Vector::Zero(A.rows());
  for (int col = 0; col < A.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(A, col); it; ++it) rows[it.row()] += std::abs(it.value());
  return rows.size() ? rows.maxCoeff() : 0.0;
}

/**
 * Owns the factorization workspace for a fixed sparsity pattern.  Sparse LU
 * for small systems, BiCGSTAB with incomplete LUT otherwise; every solve is
 * checked against `lin_tol` and refined once if needed.
 */
class LinearSolver {
 public:
  LinearSolver(Eigen::Index n_nodes, LinearSolveOptions opts) : opts_(opts), direct_(n_nodes <= opts.direct_max_nodes) {}

  void factorize(SparseMatrix A) {
    A_ = std::move(A);
    a_norm_ = inf_norm(A_);
    if (direct_) {
      if (!analyzed_) {
        lu_.analyzePattern(A_);
        analyzed_ = true;
      }
      lu_.factorize(A_);
      if (lu_.info() != Eigen::Success) throw SolverError("sparse LU factorization failed", INFINITY);
    } else {
      it_ = std::make_unique<Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<double>>>();
      it_->setTolerance(opts_.lin_tol * 1e-2);
      it_->setMaxIterations(opts_.max_iterations);
      it_->compute(A_);
      if (it_->info() != Eigen::Success) throw SolverError("incomplete LUT preconditioner failed", INFINITY);
    }
  }

  Vector solve(const Vector& b) {
    Vector x = raw_solve(b);
    double res = backward_error(x, b);
    if (!(res <= opts_.lin_tol)) {
      x += raw_solve(b - A_ * x);
      res = backward_error(x, b);
    }
    if (!x.allFinite()) throw DivergenceError("linear solve produced non-finite values");
    if (!(res <= opts_.lin_tol)) throw SolverError("linear solve did not reach lin_tol", res);
    last_residual_ = res;
    return x;
  }

  double last_residual() const noexcept { return last_residual_; }
  bool direct() const noexcept { return direct_; }

 private:
  Vector raw_solve(const Vector& b) {
    if (direct_) return lu_.solve(b);
    return it_->solve(b);
  }

  double backward_error(const Vector& x, const Vector& b) const {
    const double r = (A_ * x - b).cwiseAbs().maxCoeff();
    const double scale = a_norm_ * x.cwiseAbs().maxCoeff() + b.cwiseAbs().maxCoeff();
    return scale > 0.0 ? r / scale : r;
  }

  LinearSolveOptions opts_;
  bool direct_;
  bool analyzed_ = false;
  SparseMatrix A_;
  double a_norm_ = 0.0;
  double last_residual_ = 0.0;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
  std::unique_ptr<Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<double>>> it_;
};

}  // namespace tumor_ocp
