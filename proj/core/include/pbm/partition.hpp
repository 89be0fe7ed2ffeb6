#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pbm {

/// Axis-aligned box [lower, upper] in R^d.
struct Domain {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const { return lower.size(); }
  void validate() const;
  bool contains(std::span<const double> x) const;

  static Domain unit(std::size_t d);
};

enum class KnotRule { Uniform, Quantile };

struct CellGeometry {
  std::vector<double> lower;
  std::vector<double> upper;
  double diameter = 0.0;
};

/// Tensor-product partition of a rectangular domain. Cells are half-open boxes
/// [a, b) per coordinate; the topmost cell of every coordinate is closed.
/// Linear cell indices run with coordinate 0 fastest.
class Partition {
 public:
  Partition(Domain domain, std::vector<std::vector<double>> knots, double ratio_bound = 4.0);

  const Domain& domain() const { return domain_; }
  std::size_t dim() const { return domain_.dim(); }
  const std::vector<std::vector<double>>& knots() const { return knots_; }
  const std::vector<std::size_t>& cells_per_dim() const { return cells_per_dim_; }
  std::size_t cell_count() const { return cell_count_; }
  double mesh() const { return mesh_; }
  double min_diameter() const { return min_diam_; }
  double ratio_bound() const { return ratio_bound_; }

  /// Cell holding x; throws OutOfDomain outside the closed domain.
  std::size_t locate(std::span<const double> x) const;
  /// Per-coordinate interval index of scalar t along coordinate j.
  std::size_t locate_axis(std::size_t j, double t) const;

  CellGeometry cell_geometry(std::size_t cell) const;

  std::vector<std::size_t> unravel(std::size_t cell) const;
  std::size_t ravel(std::span<const std::size_t> multi) const;

 private:
  Domain domain_;
  std::vector<std::vector<double>> knots_;
  std::vector<std::size_t> cells_per_dim_;
  std::size_t cell_count_ = 0;
  double mesh_ = 0.0;
  double min_diam_ = 0.0;
  double ratio_bound_ = 4.0;
};

/// Builds a tensor partition. For KnotRule::Quantile, `data` holds row-major
/// n x d covariates and interior knots are lower empirical quantiles.
Partition build_tensor_partition(const Domain& domain, std::span<const std::size_t> cells_per_dim,
                                 KnotRule rule = KnotRule::Uniform,
                                 std::span<const double> data = {}, double ratio_bound = 4.0);

}  // namespace pbm
