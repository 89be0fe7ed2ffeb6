#include "pbm/banded.hpp"

#include <algorithm>
#include <cmath>

#include "pbm/basis.hpp"
#include "pbm/error.hpp"

namespace pbm {

BandedMatrix::BandedMatrix(std::size_t n, std::size_t bandwidth)
    : n_(n), bw_(std::min(bandwidth, n == 0 ? 0 : n - 1)), data_(n * (bw_ + 1), 0.0) {}

double BandedMatrix::operator()(std::size_t i, std::size_t j) const {
  if (i < j) std::swap(i, j);
  if (i - j > bw_) return 0.0;
  return lower(i, j);
}

void BandedMatrix::add_outer(const SparseVec& a, double w) {
  const std::size_t nnz = a.size();
  for (std::size_t s = 0; s < nnz; ++s) {
    const std::size_t i = a.indices[s];
    const double wi = w * a.values[s];
    for (std::size_t t = 0; t <= s; ++t) {
      const std::size_t j = a.indices[t];
      if (i - j <= bw_) data_[j * (bw_ + 1) + (i - j)] += wi * a.values[t];
    }
  }
}

void BandedMatrix::add_symmetric_outer(const SparseVec& a, const SparseVec& b, double w) {
  for (std::size_t s = 0; s < a.size(); ++s) {
    for (std::size_t t = 0; t < b.size(); ++t) {
      std::size_t i = a.indices[s];
      std::size_t j = b.indices[t];
      const double v = w * a.values[s] * b.values[t];
      if (i < j) std::swap(i, j);
      if (i - j > bw_) continue;
      // (i, j) and (j, i) both receive v; on the diagonal that is 2v.
      data_[j * (bw_ + 1) + (i - j)] += (i == j) ? 2.0 * v : v;
    }
  }
}

void BandedMatrix::add_diagonal(double v) {
  for (std::size_t j = 0; j < n_; ++j) data_[j * (bw_ + 1)] += v;
}

void BandedMatrix::scale(double s) {
  for (double& v : data_) v *= s;
}

void BandedMatrix::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

double BandedMatrix::trace() const {
  double t = 0.0;
  for (std::size_t j = 0; j < n_; ++j) t += data_[j * (bw_ + 1)];
  return t;
}

double BandedMatrix::max_abs_diagonal() const {
  double m = 0.0;
  for (std::size_t j = 0; j < n_; ++j) m = std::max(m, std::abs(data_[j * (bw_ + 1)]));
  return m;
}

void BandedMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t j = 0; j < n_; ++j) {
    y[j] += lower(j, j) * x[j];
    const std::size_t imax = std::min(n_ - 1, j + bw_);
    for (std::size_t i = j + 1; i <= imax; ++i) {
      const double a = lower(i, j);
      y[i] += a * x[j];
      y[j] += a * x[i];
    }
  }
}

Eigen::MatrixXd BandedMatrix::to_dense() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
  for (std::size_t j = 0; j < n_; ++j) {
    const std::size_t imax = std::min(n_ - 1, j + bw_);
    for (std::size_t i = j; i <= imax; ++i) {
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = lower(i, j);
      a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = lower(i, j);
    }
  }
  return a;
}

BandedMatrix BandedMatrix::from_dense(const Eigen::MatrixXd& a, std::size_t bandwidth) {
  require(a.rows() == a.cols(), ErrorCode::InvalidArgument, "banded matrix must be square");
  BandedMatrix b(static_cast<std::size_t>(a.rows()), bandwidth);
  for (std::size_t j = 0; j < b.n_; ++j) {
    const std::size_t imax = std::min(b.n_ - 1, j + b.bw_);
    for (std::size_t i = j; i <= imax; ++i)
      b.lower(i, j) = 0.5 * (a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                             a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
  }
  return b;
}

std::optional<BandedCholesky> BandedCholesky::factor(const BandedMatrix& a) {
  BandedCholesky c;
  c.n_ = a.size();
  c.bw_ = a.bandwidth();
  c.data_ = a.raw();
  c.min_pivot_ = INFINITY;
  const std::size_t n = c.n_;
  const std::size_t bw = c.bw_;
  auto at = [&](std::size_t i, std::size_t j) -> double& { return c.data_[j * (bw + 1) + (i - j)]; };
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t k0 = j > bw ? j - bw : 0;
    double d = at(j, j);
    for (std::size_t k = k0; k < j; ++k) d -= at(j, k) * at(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    c.min_pivot_ = std::min(c.min_pivot_, d);
    const double ljj = std::sqrt(d);
    at(j, j) = ljj;
    const std::size_t imax = std::min(n - 1, j + bw);
    for (std::size_t i = j + 1; i <= imax; ++i) {
      double s = at(i, j);
      const std::size_t kk = std::max(k0, i > bw ? i - bw : 0);
      for (std::size_t k = kk; k < j; ++k) s -= at(i, k) * at(j, k);
      at(i, j) = s / ljj;
    }
  }
  return c;
}

void BandedCholesky::solve_lower(std::span<double> b) const {
  for (std::size_t i = 0; i < n_; ++i) {
    double s = b[i];
    const std::size_t k0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t k = k0; k < i; ++k) s -= l(i, k) * b[k];
    b[i] = s / l(i, i);
  }
}

void BandedCholesky::solve_upper(std::span<double> b) const {
  for (std::size_t ii = n_; ii-- > 0;) {
    double s = b[ii];
    const std::size_t kmax = std::min(n_ - 1, ii + bw_);
    for (std::size_t k = ii + 1; k <= kmax; ++k) s -= l(k, ii) * b[k];
    b[ii] = s / l(ii, ii);
  }
}

void BandedCholesky::multiply_lower(std::span<const double> x, std::span<double> y) const {
  for (std::size_t i = 0; i < n_; ++i) {
    double s = 0.0;
    const std::size_t k0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t k = k0; k <= i; ++k) s += l(i, k) * x[k];
    y[i] = s;
  }
}

Eigen::MatrixXd BandedCholesky::inverse() const {
  const auto n = static_cast<Eigen::Index>(n_);
  Eigen::MatrixXd inv(n, n);
  std::vector<double> col(n_);
  for (std::size_t j = 0; j < n_; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    solve(col);
    for (std::size_t i = 0; i < n_; ++i) inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  return inv;
}

}  // namespace pbm
