#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace pbm {

struct SparseVec;

/// Symmetric matrix with entries only within |i - j| <= bandwidth. The lower
/// band is stored column by column, entry (i, j) at data[j * (b + 1) + i - j].
class BandedMatrix {
 public:
  BandedMatrix() = default;
  BandedMatrix(std::size_t n, std::size_t bandwidth);

  std::size_t size() const { return n_; }
  std::size_t bandwidth() const { return bw_; }

  double operator()(std::size_t i, std::size_t j) const;
  /// Lower-band reference; requires i >= j and i - j <= bandwidth.
  double& lower(std::size_t i, std::size_t j) { return data_[j * (bw_ + 1) + (i - j)]; }
  double lower(std::size_t i, std::size_t j) const { return data_[j * (bw_ + 1) + (i - j)]; }

  /// this += w * a a' for a sparse vector a.
  void add_outer(const SparseVec& a, double w);
  /// this += w * a b' + w * b a' restricted to the band (a, b sparse).
  void add_symmetric_outer(const SparseVec& a, const SparseVec& b, double w);
  void add_diagonal(double v);
  void scale(double s);
  void set_zero();
  double trace() const;
  double max_abs_diagonal() const;

  void multiply(std::span<const double> x, std::span<double> y) const;
  Eigen::MatrixXd to_dense() const;
  static BandedMatrix from_dense(const Eigen::MatrixXd& a, std::size_t bandwidth);

  const std::vector<double>& raw() const { return data_; }

 private:
  std::size_t n_ = 0;
  std::size_t bw_ = 0;
  std::vector<double> data_;
};

/// Lower Cholesky factor A = L L' of a banded SPD matrix; bandwidth preserved.
class BandedCholesky {
 public:
  /// Returns nullopt when a pivot is not positive (matrix not SPD).
  static std::optional<BandedCholesky> factor(const BandedMatrix& a);

  std::size_t size() const { return n_; }
  std::size_t bandwidth() const { return bw_; }
  double min_pivot() const { return min_pivot_; }

  void solve_lower(std::span<double> b) const;  // L z = b
  void solve_upper(std::span<double> b) const;  // L' x = z
  void solve(std::span<double> b) const { solve_lower(b), solve_upper(b); }
  /// y = L x
  void multiply_lower(std::span<const double> x, std::span<double> y) const;
  Eigen::MatrixXd inverse() const;

 private:
  double l(std::size_t i, std::size_t j) const { return data_[j * (bw_ + 1) + (i - j)]; }

  std::size_t n_ = 0;
  std::size_t bw_ = 0;
  double min_pivot_ = 0.0;
  std::vector<double> data_;
};

}  // namespace pbm
