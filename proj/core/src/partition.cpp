#include "pbm/partition.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pbm/error.hpp"

namespace pbm {

void Domain::validate() const {
  require(!lower.empty(), ErrorCode::DegenerateDomain, "domain has dimension 0");
  require(lower.size() == upper.size(), ErrorCode::DegenerateDomain, "lower/upper size mismatch");
  for (std::size_t j = 0; j < lower.size(); ++j) {
    require(std::isfinite(lower[j]) && std::isfinite(upper[j]) && lower[j] < upper[j],
            ErrorCode::DegenerateDomain, "lower >= upper in coordinate " + std::to_string(j));
  }
}

bool Domain::contains(std::span<const double> x) const {
  if (x.size() != lower.size()) return false;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!(x[j] >= lower[j] && x[j] <= upper[j])) return false;
  }
  return true;
}

Domain Domain::unit(std::size_t d) { return Domain{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)}; }

Partition::Partition(Domain domain, std::vector<std::vector<double>> knots, double ratio_bound)
    : domain_(std::move(domain)), knots_(std::move(knots)), ratio_bound_(ratio_bound) {
  domain_.validate();
  require(knots_.size() == domain_.dim(), ErrorCode::InvalidArgument, "one knot sequence per coordinate required");
  require(ratio_bound_ >= 1.0, ErrorCode::InvalidArgument, "quasi-uniformity bound must be >= 1");

  double max_sq = 0.0;
  double min_sq = 0.0;
  cell_count_ = 1;
  cells_per_dim_.clear();
  for (std::size_t j = 0; j < knots_.size(); ++j) {
    const auto& kj = knots_[j];
    require(kj.size() >= 2, ErrorCode::InvalidArgument, "knot sequence needs at least two entries");
    require(kj.front() == domain_.lower[j] && kj.back() == domain_.upper[j], ErrorCode::InvalidArgument,
            "knot sequence must start and end at the domain bounds");
    double wmax = 0.0;
    double wmin = INFINITY;
    for (std::size_t k = 1; k < kj.size(); ++k) {
      const double w = kj[k] - kj[k - 1];
      require(w > 0.0, ErrorCode::QuasiUniformityViolated,
              "knots not strictly increasing in coordinate " + std::to_string(j));
      wmax = std::max(wmax, w);
      wmin = std::min(wmin, w);
    }
    max_sq += wmax * wmax;
    min_sq += wmin * wmin;
    cells_per_dim_.push_back(kj.size() - 1);
    cell_count_ *= kj.size() - 1;
  }
  mesh_ = std::sqrt(max_sq);
  min_diam_ = std::sqrt(min_sq);
  require(mesh_ / min_diam_ <= ratio_bound_ * (1.0 + 1e-12), ErrorCode::QuasiUniformityViolated,
          "max/min cell diameter ratio " + std::to_string(mesh_ / min_diam_) + " exceeds bound " +
              std::to_string(ratio_bound_));
}

std::size_t Partition::locate_axis(std::size_t j, double t) const {
  const auto& kj = knots_[j];
  if (!(t >= kj.front() && t <= kj.back())) {
    fail(ErrorCode::OutOfDomain, "coordinate " + std::to_string(j) + " value " + std::to_string(t) +
                                     " outside [" + std::to_string(kj.front()) + ", " +
                                     std::to_string(kj.back()) + "]");
  }
  // first knot strictly greater than t; the closed top boundary maps to the last cell
  auto it = std::upper_bound(kj.begin(), kj.end(), t);
  std::size_t idx = static_cast<std::size_t>(it - kj.begin());
  if (idx == 0) idx = 1;
  if (idx >= kj.size()) idx = kj.size() - 1;
  return idx - 1;
}

std::size_t Partition::locate(std::span<const double> x) const {
  require(x.size() == dim(), ErrorCode::OutOfDomain, "point dimension mismatch");
  std::size_t cell = 0;
  std::size_t stride = 1;
  for (std::size_t j = 0; j < dim(); ++j) {
    cell += locate_axis(j, x[j]) * stride;
    stride *= cells_per_dim_[j];
  }
  return cell;
}

std::vector<std::size_t> Partition::unravel(std::size_t cell) const {
  std::vector<std::size_t> multi(dim());
  for (std::size_t j = 0; j < dim(); ++j) {
    multi[j] = cell % cells_per_dim_[j];
    cell /= cells_per_dim_[j];
  }
  return multi;
}

std::size_t Partition::ravel(std::span<const std::size_t> multi) const {
  std::size_t cell = 0;
  std::size_t stride = 1;
  for (std::size_t j = 0; j < dim(); ++j) {
    cell += multi[j] * stride;
    stride *= cells_per_dim_[j];
  }
  return cell;
}

CellGeometry Partition::cell_geometry(std::size_t cell) const {
  require(cell < cell_count_, ErrorCode::InvalidIndex,
          "cell " + std::to_string(cell) + " >= cell count " + std::to_string(cell_count_));
  const auto multi = unravel(cell);
  CellGeometry g;
  double sq = 0.0;
  for (std::size_t j = 0; j < dim(); ++j) {
    g.lower.push_back(knots_[j][multi[j]]);
    g.upper.push_back(knots_[j][multi[j] + 1]);
    const double w = g.upper.back() - g.lower.back();
    sq += w * w;
  }
  g.diameter = std::sqrt(sq);
  return g;
}

Partition build_tensor_partition(const Domain& domain, std::span<const std::size_t> cells_per_dim,
                                 KnotRule rule, std::span<const double> data, double ratio_bound) {
  domain.validate();
  const std::size_t d = domain.dim();
  require(cells_per_dim.size() == d, ErrorCode::InvalidArgument, "cells_per_dim must have one entry per coordinate");
  std::vector<std::vector<double>> knots(d);
  std::size_t n = 0;
  if (rule == KnotRule::Quantile) {
    require(!data.empty() && data.size() % d == 0, ErrorCode::InvalidArgument,
            "quantile knot rule needs row-major n x d data");
    n = data.size() / d;
  }
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t c = cells_per_dim[j];
    require(c >= 1, ErrorCode::InvalidArgument, "cells_per_dim entries must be >= 1");
    const double lo = domain.lower[j];
    const double hi = domain.upper[j];
    auto& kj = knots[j];
    kj.resize(c + 1);
    kj.front() = lo;
    kj.back() = hi;
    if (rule == KnotRule::Uniform) {
      for (std::size_t k = 1; k < c; ++k) kj[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(c);
    } else {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = data[i * d + j];
      std::sort(col.begin(), col.end());
      const auto distinct = static_cast<std::size_t>(std::unique(col.begin(), col.end()) - col.begin());
      require(distinct >= c + 1, ErrorCode::DataError,
              "coordinate " + std::to_string(j) + " has fewer than cells+1 distinct values");
      for (std::size_t i = 0; i < n; ++i) col[i] = data[i * d + j];
      std::sort(col.begin(), col.end());
      for (std::size_t k = 1; k < c; ++k) {
        // lower empirical quantile: ceil(k n / c)-th order statistic
        const std::size_t rank = (k * n + c - 1) / c;
        kj[k] = col[std::max<std::size_t>(rank, 1) - 1];
      }
    }
  }
  return Partition(domain, std::move(knots), ratio_bound);
}

}  // namespace pbm
