#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pbm/partition.hpp"

namespace pbm {

enum class BasisKind { PiecewisePoly, BSpline };

struct BasisSpec {
  BasisKind kind = BasisKind::BSpline;
  int order = 2;            // m: polynomial degree m - 1
  int derivative_cap = -1;  // highest admissible total derivative order; -1 means m - 1

  int cap() const { return derivative_cap < 0 ? order - 1 : derivative_cap; }
  void validate() const;
};

inline constexpr int kMaxOrder = 5;

/// Nonzero entries of a basis vector p^(v)(x); indices strictly increasing.
struct SparseVec {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t size() const { return indices.size(); }
  void clear() {
    indices.clear();
    values.clear();
  }
  double dot(std::span<const double> dense) const {
    double s = 0.0;
    for (std::size_t a = 0; a < indices.size(); ++a) s += values[a] * dense[indices[a]];
    return s;
  }
};

using MultiIndex = std::vector<int>;

inline int total_order(std::span<const int> v) {
  int s = 0;
  for (int a : v) s += a;
  return s;
}

/// K locally supported functions on a tensor partition: per-cell Legendre
/// polynomials (unconnected) or tensor-product clamped B-splines (connected).
class Basis {
 public:
  Basis(Partition partition, BasisSpec spec);

  const Partition& partition() const { return partition_; }
  const BasisSpec& spec() const { return spec_; }
  std::size_t dim() const { return partition_.dim(); }
  std::size_t size() const { return size_; }
  int order() const { return spec_.order; }
  /// m^d, the number of functions active on any cell.
  std::size_t active_per_cell() const { return per_cell_; }
  bool connected() const { return spec_.kind == BasisKind::BSpline && spec_.order > 1; }
  /// Largest basis-index distance between two functions active on a common cell.
  std::size_t bandwidth() const { return bandwidth_; }

  std::span<const std::uint32_t> active(std::size_t cell) const {
    return {active_.data() + cell * per_cell_, per_cell_};
  }
  const std::vector<std::size_t>& support(std::size_t k) const { return support_[k]; }

  /// Writes p^(v)(x) into `out` (buffers reused) and returns the cell of x.
  std::size_t eval_into(std::span<const double> x, std::span<const int> v, SparseVec& out) const;
  SparseVec eval(std::span<const double> x, std::span<const int> v) const;
  SparseVec eval(std::span<const double> x) const;
  /// Evaluation restricted to a known cell (x must lie in its closure).
  void eval_in_cell(std::size_t cell, std::span<const double> x, std::span<const int> v, SparseVec& out) const;

  /// Basis functions per coordinate (B-splines) or per cell (piecewise polynomials).
  std::size_t axis_size(std::size_t j) const { return axis_size_[j]; }

 private:
  void axis_values(std::size_t j, std::size_t axis_cell, double t, int deriv, double* out) const;

  Partition partition_;
  BasisSpec spec_;
  std::size_t size_ = 0;
  std::size_t per_cell_ = 0;
  std::size_t bandwidth_ = 0;
  std::vector<std::size_t> axis_size_;
  std::vector<std::vector<double>> full_knots_;  // clamped knot vectors (B-splines)
  std::vector<std::uint32_t> active_;
  std::vector<std::vector<std::size_t>> support_;
};

struct LocalBasisReport {
  double min_scaled_norm = 0.0;
  double max_scaled_norm = 0.0;
  double min_local_gram_eig = 0.0;
};

/// Monte Carlo check of the local-basis bounds: range of ||p^(v)(x)|| h^{|v|}
/// over n_mc uniform points, and the smallest eigenvalue over cells of the
/// per-cell Gram integral of the active functions divided by h^d.
LocalBasisReport check_local_basis(const Basis& basis, std::size_t n_mc, std::span<const int> v = {},
                                   std::uint64_t seed = 1);

/// Gauss-Legendre rule on [-1, 1] with `points` nodes (1..5).
void gauss_legendre(int points, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace pbm
