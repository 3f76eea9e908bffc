#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "tumor_ocp/errors.hpp"

namespace tumor_ocp {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/**
 * Uniform node-centred tensor grid on the box [0, L_0] x ... x [0, L_{dim-1}].
 *
 * Nodes are stored row-major (last axis fastest).  Quadrature weights are the
 * tensor trapezoidal weights, so `weights().sum()` equals the measure of the
 * box and the mirror-ghost Neumann Laplacian is self-adjoint in the weighted
 * inner product.
 */
class Grid {
 public:
  Grid(int dim, std::array<double, 3> extent, std::array<int, 3> cells) : dim_(dim) {
    if (dim < 1 || dim > 3) throw StructuralError("grid dimension must be 1, 2 or 3");
    for (int a = 0; a < 3; ++a) {
      if (a < dim) {
        if (!(extent[a] > 0.0) || !std::isfinite(extent[a]))
          throw StructuralError("grid extent must be positive on axis " + std::to_string(a));
        if (cells[a] < 1) throw StructuralError("grid needs at least one cell on axis " + std::to_string(a));
        extent_[a] = extent[a];
        cells_[a] = cells[a];
      } else {
        extent_[a] = 0.0;
        cells_[a] = 0;
      }
    }
    build_weights();
  }

  static Grid line(double length, int cells) { return Grid(1, {length, 0.0, 0.0}, {cells, 0, 0}); }
  static Grid rectangle(double lx, double ly, int cx, int cy) { return Grid(2, {lx, ly, 0.0}, {cx, cy, 0}); }
  static Grid box(double lx, double ly, double lz, int cx, int cy, int cz) {
    return Grid(3, {lx, ly, lz}, {cx, cy, cz});
  }

  int dim() const noexcept { return dim_; }
  int cells(int axis) const { return cells_.at(axis); }
  int nodes(int axis) const { return axis < dim_ ? cells_.at(axis) + 1 : 1; }
  double extent(int axis) const { return extent_.at(axis); }
  double h(int axis) const { return extent_.at(axis) / cells_.at(axis); }
  Eigen::Index n_nodes() const noexcept { return n_nodes_; }
  Eigen::Index stride(int axis) const { return strides_.at(axis); }

  double measure() const {
    double m = 1.0;
    for (int a = 0; a < dim_; ++a) m *= extent_[a];
    return m;
  }

  /// Trapezoidal node weights; sum equals measure().
  const Vector& weights() const noexcept { return *weights_; }

  /// Per-axis node index of a linear index.
  std::array<int, 3> multi_index(Eigen::Index idx) const {
    std::array<int, 3> out{0, 0, 0};
    for (int a = dim_ - 1; a >= 0; --a) {
      out[a] = static_cast<int>(idx % nodes(a));
      idx /= nodes(a);
    }
    return out;
  }

  /// Node coordinate along `axis`.
  double coordinate(int axis, int i) const { return i * h(axis); }

  bool operator==(const Grid& o) const {
    return dim_ == o.dim_ && cells_ == o.cells_ && extent_ == o.extent_;
  }
  bool operator!=(const Grid& o) const { return !(*this == o); }

 private:
  void build_weights() {
    n_nodes_ = 1;
    for (int a = 0; a < 3; ++a) n_nodes_ *= nodes(a);
    strides_ = {1, 1, 1};
    for (int a = dim_ - 2; a >= 0; --a) strides_[a] = strides_[a + 1] * nodes(a + 1);
    auto w = std::make_shared<Vector>(n_nodes_);
    for (Eigen::Index i = 0; i < n_nodes_; ++i) {
      const auto mi = multi_index(i);
      double wi = 1.0;
      for (int a = 0; a < dim_; ++a) {
        wi *= h(a);
        if (mi[a] == 0 || mi[a] == cells_[a]) wi *= 0.5;
      }
      (*w)[i] = wi;
    }
    weights_ = std::move(w);
  }

  int dim_;
  std::array<double, 3> extent_{};
  std::array<int, 3> cells_{};
  std::array<Eigen::Index, 3> strides_{};
  Eigen::Index n_nodes_ = 0;
  std::shared_ptr<const Vector> weights_;
};

/// Uniform time mesh t_k = k T / n_steps, k = 0..n_steps.
class TimeMesh {
 public:
  TimeMesh(double T, int n_steps) : T_(T), n_steps_(n_steps) {
    if (!(T > 0.0) || !std::isfinite(T)) throw StructuralError("final time T must be positive");
    if (n_steps < 1) throw StructuralError("n_steps must be a positive integer");
  }
  double T() const noexcept { return T_; }
  int n_steps() const noexcept { return n_steps_; }
  double tau() const noexcept { return T_ / n_steps_; }
  /// Exact at both ends: time(0) == 0, time(n_steps) == T.
  double time(int k) const noexcept { return T_ * k / n_steps_; }
  bool operator==(const TimeMesh& o) const { return T_ == o.T_ && n_steps_ == o.n_steps_; }
  bool operator!=(const TimeMesh& o) const { return !(*this == o); }

 private:
  double T_;
  int n_steps_;
};

/// One time slice of a grid function.
struct Field {
  Grid grid;
  Vector values;

  Field(Grid g, Vector v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.n_nodes()) throw StructuralError("field length does not match grid node count");
  }
  static Field constant(const Grid& g, double c) { return Field(g, Vector::Constant(g.n_nodes(), c)); }
  bool finite() const { return values.allFinite(); }
};

/// Time-indexed sequence of slices of one variable.
class Trajectory {
 public:
  Trajectory(Grid grid, std::size_t n_slices, double fill = 0.0)
      : grid_(std::move(grid)), slices_(n_slices, Vector::Constant(grid_.n_nodes(), fill)) {}

  const Grid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return slices_.size(); }
  Vector& operator[](std::size_t k) { return slices_.at(k); }
  const Vector& operator[](std::size_t k) const { return slices_.at(k); }
  Field slice(std::size_t k) const { return Field(grid_, slices_.at(k)); }

  bool finite() const {
    return std::all_of(slices_.begin(), slices_.end(), [](const Vector& v) { return v.allFinite(); });
  }

  void require_compatible(const Trajectory& o, const char* what) const {
    if (grid_ != o.grid_ || size() != o.size())
      throw StructuralError(std::string("trajectory mismatch: ") + what);
  }

  Trajectory& operator+=(const Trajectory& o) {
    require_compatible(o, "operator+=");
    for (std::size_t k = 0; k < size(); ++k) slices_[k] += o.slices_[k];
    return *this;
  }
  Trajectory& operator-=(const Trajectory& o) {
    require_compatible(o, "operator-=");
    for (std::size_t k = 0; k < size(); ++k) slices_[k] -= o.slices_[k];
    return *this;
  }
  Trajectory& operator*=(double s) {
    for (auto& v : slices_) v *= s;
    return *this;
  }
  friend Trajectory operator+(Trajectory a, const Trajectory& b) { return a += b; }
  friend Trajectory operator-(Trajectory a, const Trajectory& b) { return a -= b; }
  friend Trajectory operator*(double s, Trajectory a) { return a *= s; }

  /// this += s * o
  void axpy(double s, const Trajectory& o) {
    require_compatible(o, "axpy");
    for (std::size_t k = 0; k < size(); ++k) slices_[k] += s * o.slices_[k];
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& v : slices_) m = std::max(m, v.size() ? v.cwiseAbs().maxCoeff() : 0.0);
    return m;
  }

 private:
  Grid grid_;
  std::vector<Vector> slices_;
};

inline void require_on_grid(const Grid& g, const Vector& v, const char* what) {
  if (v.size() != g.n_nodes()) throw StructuralError(std::string("vector not on grid: ") + what);
}

inline void require_same_grid(const Grid& a, const Grid& b) {
  if (a != b) throw StructuralError("fields live on different grids");
}

// ---------------------------------------------------------------------------
// Neumann Laplacian

/// Matrix-free mirror-ghost Laplacian, out = L f.
inline void neumann_laplacian_apply(const Grid& g, const Vector& f, Vector& out) {
  require_on_grid(g, f, "laplacian input");
  out.setZero(g.n_nodes());
  for (int a = 0; a < g.dim(); ++a) {
    const double inv_h2 = 1.0 / (g.h(a) * g.h(a));
    const Eigen::Index s = g.stride(a);
    const int n = g.nodes(a);
    for (Eigen::Index idx = 0; idx < g.n_nodes(); ++idx) {
      const int i = static_cast<int>((idx / s) % n);
      const double left = i > 0 ? f[idx - s] : f[idx + s];
      const double right = i < n - 1 ? f[idx + s] : f[idx - s];
      out[idx] += ((left + right) - 2.0 * f[idx]) * inv_h2;
    }
  }
}

inline Field neumann_laplacian_apply(const Grid& g, const Field& f) {
  require_same_grid(g, f.grid);
  Vector out;
  neumann_laplacian_apply(g, f.values, out);
  return Field(g, std::move(out));
}

/// Assembled (2 dim + 1)-point Neumann Laplacian; boundary rows carry the mirrored weight 2/h².
inline SparseMatrix neumann_laplacian_matrix(const Grid& g) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(g.n_nodes()) * (2 * g.dim() + 1));
  for (int a = 0; a < g.dim(); ++a) {
    const double inv_h2 = 1.0 / (g.h(a) * g.h(a));
    const Eigen::Index s = g.stride(a);
    const int n = g.nodes(a);
    for (Eigen::Index idx = 0; idx < g.n_nodes(); ++idx) {
      const int i = static_cast<int>((idx / s) % n);
      t.emplace_back(idx, i > 0 ? idx - s : idx + s, inv_h2);
      t.emplace_back(idx, i < n - 1 ? idx + s : idx - s, inv_h2);
      t.emplace_back(idx, idx, -2.0 * inv_h2);
    }
  }
  SparseMatrix L(g.n_nodes(), g.n_nodes());
  L.setFromTriplets(t.begin(), t.end());
  L.makeCompressed();
  return L;
}

// ---------------------------------------------------------------------------
// Inner products and norms

inline double inner(const Grid& g, const Vector& a, const Vector& b) {
  require_on_grid(g, a, "inner lhs");
  require_on_grid(g, b, "inner rhs");
  return (g.weights().array() * a.array() * b.array()).sum();
}

inline double inner(const Grid& g, const Field& a, const Field& b) {
  require_same_grid(g, a.grid);
  require_same_grid(g, b.grid);
  return inner(g, a.values, b.values);
}

/// Discrete integral over the domain.
inline double integral(const Grid& g, const Vector& a) {
  require_on_grid(g, a, "integral");
  return g.weights().dot(a);
}

/// Squared L2 norm of the forward-difference gradient.
inline double gradient_sq(const Grid& g, const Vector& f) {
  require_on_grid(g, f, "gradient");
  double total = 0.0;
  for (int a = 0; a < g.dim(); ++a) {
    const Eigen::Index s = g.stride(a);
    const int n = g.nodes(a);
    const double ha = g.h(a);
    for (Eigen::Index idx = 0; idx < g.n_nodes(); ++idx) {
      const auto mi = g.multi_index(idx);
      if (mi[a] == n - 1) continue;
      double w = ha;
      for (int b = 0; b < g.dim(); ++b) {
        if (b == a) continue;
        w *= g.h(b);
        if (mi[b] == 0 || mi[b] == g.cells(b)) w *= 0.5;
      }
      const double d = (f[idx + s] - f[idx]) / ha;
      total += w * d * d;
    }
  }
  return total;
}

struct Norms {
  double L2 = 0.0;
  double H1 = 0.0;
  double Linf = 0.0;
};

inline Norms norms(const Grid& g, const Vector& f) {
  Norms n;
  const double l2sq = inner(g, f, f);
  n.L2 = std::sqrt(l2sq);
  n.H1 = std::sqrt(l2sq + gradient_sq(g, f));
  n.Linf = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
  return n;
}

inline Norms norms(const Grid& g, const Field& f) {
  require_same_grid(g, f.grid);
  return norms(g, f.values);
}

// ---------------------------------------------------------------------------
// Space-time norms of trajectories sampled at the n_steps+1 nodes of a TimeMesh

inline double trapezoid_weight(const TimeMesh& tm, std::size_t k) {
  const bool end = k == 0 || k == static_cast<std::size_t>(tm.n_steps());
  return end ? 0.5 * tm.tau() : tm.tau();
}

inline void require_nodal(const TimeMesh& tm, const Trajectory& a) {
  if (a.size() != static_cast<std::size_t>(tm.n_steps()) + 1)
    throw StructuralError("trajectory must have n_steps+1 slices");
}

/// ‖a‖_{L∞(0,T;L²)}
inline double norm_linf_l2(const TimeMesh& tm, const Trajectory& a) {
  require_nodal(tm, a);
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, norms(a.grid(), a[k]).L2);
  return m;
}

/// ‖a‖_{L²(0,T;L²)} by the trapezoidal rule.
inline double norm_l2_l2(const TimeMesh& tm, const Trajectory& a) {
  require_nodal(tm, a);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += trapezoid_weight(tm, k) * inner(a.grid(), a[k], a[k]);
  return std::sqrt(s);
}

/// ‖a‖_{L²(0,T;H¹)} by the trapezoidal rule.
inline double norm_l2_h1(const TimeMesh& tm, const Trajectory& a) {
  require_nodal(tm, a);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double h1 = norms(a.grid(), a[k]).H1;
    s += trapezoid_weight(tm, k) * h1 * h1;
  }
  return std::sqrt(s);
}

// Controls are piecewise constant in time: slice k acts on (t_k, t_{k+1}].

inline void require_piecewise(const TimeMesh& tm, const Trajectory& a) {
  if (a.size() != static_cast<std::size_t>(tm.n_steps()))
    throw StructuralError("control trajectory must have n_steps slices");
}

/// Exact L²(Q) inner product of two piecewise-constant-in-time trajectories.
inline double inner_q(const TimeMesh& tm, const Trajectory& a, const Trajectory& b) {
  require_piecewise(tm, a);
  a.require_compatible(b, "inner_q");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += inner(a.grid(), a[k], b[k]);
  return tm.tau() * s;
}

inline double norm_q(const TimeMesh& tm, const Trajectory& a) { return std::sqrt(inner_q(tm, a, a)); }

}  // namespace tumor_ocp
