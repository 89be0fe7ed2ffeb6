#include "pbm/basis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "pbm/error.hpp"
#include "pbm/rng.hpp"

namespace pbm {

namespace {

// Monomial coefficients of the Legendre polynomials P_0..P_4 on [-1, 1].
constexpr std::array<std::array<double, kMaxOrder>, kMaxOrder> kLegendre{{
    {1.0, 0.0, 0.0, 0.0, 0.0},
    {0.0, 1.0, 0.0, 0.0, 0.0},
    {-0.5, 0.0, 1.5, 0.0, 0.0},
    {0.0, -1.5, 0.0, 2.5, 0.0},
    {0.375, 0.0, -3.75, 0.0, 4.375},
}};

double legendre_derivative(int k, int r, double s) {
  // d^r/ds^r of sum_a c_a s^a
  double acc = 0.0;
  for (int a = kMaxOrder - 1; a >= r; --a) {
    double falling = 1.0;
    for (int b = 0; b < r; ++b) falling *= static_cast<double>(a - b);
    acc = acc * s + kLegendre[k][a] * falling;
  }
  return acc;
}

// Nonzero B-spline basis derivatives at u in knot span `span` (clamped knots U).
void bspline_derivatives(const std::vector<double>& U, std::size_t span, int p, double u, int nd,
                         std::array<std::array<double, kMaxOrder>, kMaxOrder>& ders) {
  std::array<std::array<double, kMaxOrder>, kMaxOrder> ndu{};
  std::array<double, kMaxOrder> left{};
  std::array<double, kMaxOrder> right{};
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - U[span + 1 - j];
    right[j] = U[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];

  std::array<std::array<double, kMaxOrder>, 2> a{};
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double fac = p;
  for (int k = 1; k <= nd; ++k) {
    for (int j = 0; j <= p; ++j) ders[k][j] *= fac;
    fac *= (p - k);
  }
}

}  // namespace

void BasisSpec::validate() const {
  require(order >= 1 && order <= kMaxOrder, ErrorCode::UnsupportedOrder,
          "order " + std::to_string(order) + " outside [1, " + std::to_string(kMaxOrder) + "]");
  require(cap() >= 0 && cap() < order, ErrorCode::InvalidArgument, "derivative cap must satisfy 0 <= cap < order");
}

Basis::Basis(Partition partition, BasisSpec spec) : partition_(std::move(partition)), spec_(spec) {
  spec_.validate();
  const std::size_t d = partition_.dim();
  const auto m = static_cast<std::size_t>(spec_.order);
  per_cell_ = 1;
  for (std::size_t j = 0; j < d; ++j) per_cell_ *= m;

  const std::size_t cells = partition_.cell_count();
  active_.resize(cells * per_cell_);

  if (spec_.kind == BasisKind::PiecewisePoly) {
    size_ = cells * per_cell_;
    axis_size_.assign(d, 0);
    for (std::size_t c = 0; c < cells; ++c)
      for (std::size_t a = 0; a < per_cell_; ++a) active_[c * per_cell_ + a] = static_cast<std::uint32_t>(c * per_cell_ + a);
  } else {
    size_ = 1;
    axis_size_.resize(d);
    full_knots_.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      const auto& kj = partition_.knots()[j];
      axis_size_[j] = partition_.cells_per_dim()[j] + m - 1;
      size_ *= axis_size_[j];
      auto& U = full_knots_[j];
      U.assign(m - 1, kj.front());
      U.insert(U.end(), kj.begin(), kj.end());
      U.insert(U.end(), m - 1, kj.back());
    }
    std::vector<std::size_t> start(d);
    std::vector<std::size_t> offs(d);
    for (std::size_t c = 0; c < cells; ++c) {
      start = partition_.unravel(c);
      for (std::size_t a = 0; a < per_cell_; ++a) {
        std::size_t rem = a;
        std::size_t idx = 0;
        std::size_t stride = 1;
        for (std::size_t j = 0; j < d; ++j) {
          offs[j] = rem % m;
          rem /= m;
          idx += (start[j] + offs[j]) * stride;
          stride *= axis_size_[j];
        }
        active_[c * per_cell_ + a] = static_cast<std::uint32_t>(idx);
      }
    }
  }
  require(size_ < std::numeric_limits<std::uint32_t>::max(), ErrorCode::InvalidArgument, "basis too large");

  support_.assign(size_, {});
  bandwidth_ = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    const auto act = active(c);
    for (auto k : act) support_[k].push_back(c);
    bandwidth_ = std::max<std::size_t>(bandwidth_, act.back() - act.front());
  }
}

void Basis::axis_values(std::size_t j, std::size_t axis_cell, double t, int deriv, double* out) const {
  const int m = spec_.order;
  if (spec_.kind == BasisKind::PiecewisePoly) {
    const double a = partition_.knots()[j][axis_cell];
    const double b = partition_.knots()[j][axis_cell + 1];
    const double w = b - a;
    const double s = 2.0 * (t - a) / w - 1.0;
    const double scale = std::pow(2.0 / w, deriv);
    for (int k = 0; k < m; ++k) out[k] = legendre_derivative(k, deriv, s) * scale;
    return;
  }
  std::array<std::array<double, kMaxOrder>, kMaxOrder> ders{};
  bspline_derivatives(full_knots_[j], axis_cell + static_cast<std::size_t>(m) - 1, m - 1, t, deriv, ders);
  for (int k = 0; k < m; ++k) out[k] = ders[deriv][k];
}

void Basis::eval_in_cell(std::size_t cell, std::span<const double> x, std::span<const int> v, SparseVec& out) const {
  const std::size_t d = dim();
  const int m = spec_.order;
  require(v.empty() || v.size() == d, ErrorCode::InvalidArgument, "multi-index dimension mismatch");
  if (!v.empty()) {
    for (int a : v) require(a >= 0, ErrorCode::InvalidArgument, "negative derivative order");
    require(total_order(v) <= spec_.cap(), ErrorCode::DerivativeOrderTooHigh,
            "derivative order " + std::to_string(total_order(v)) + " exceeds cap " + std::to_string(spec_.cap()));
  }
  const auto multi = partition_.unravel(cell);
  std::array<std::array<double, kMaxOrder>, 8> vals{};
  std::vector<std::array<double, kMaxOrder>> heap;
  std::array<double, kMaxOrder>* axis = vals.data();
  if (d > vals.size()) {
    heap.resize(d);
    axis = heap.data();
  }
  for (std::size_t j = 0; j < d; ++j) axis_values(j, multi[j], x[j], v.empty() ? 0 : v[j], axis[j].data());

  const auto act = active(cell);
  out.indices.assign(act.begin(), act.end());
  out.values.resize(per_cell_);
  for (std::size_t a = 0; a < per_cell_; ++a) {
    std::size_t rem = a;
    double prod = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      prod *= axis[j][rem % static_cast<std::size_t>(m)];
      rem /= static_cast<std::size_t>(m);
    }
    out.values[a] = prod;
  }
}

std::size_t Basis::eval_into(std::span<const double> x, std::span<const int> v, SparseVec& out) const {
  const std::size_t cell = partition_.locate(x);
  eval_in_cell(cell, x, v, out);
  return cell;
}

SparseVec Basis::eval(std::span<const double> x, std::span<const int> v) const {
  SparseVec out;
  eval_into(x, v, out);
  return out;
}

SparseVec Basis::eval(std::span<const double> x) const { return eval(x, std::span<const int>{}); }

void gauss_legendre(int points, std::vector<double>& nodes, std::vector<double>& weights) {
  require(points >= 1 && points <= 5, ErrorCode::InvalidArgument, "Gauss-Legendre rule supports 1..5 points");
  switch (points) {
    case 1:
      nodes = {0.0};
      weights = {2.0};
      break;
    case 2: {
      const double a = 1.0 / std::sqrt(3.0);
      nodes = {-a, a};
      weights = {1.0, 1.0};
      break;
    }
    case 3: {
      const double a = std::sqrt(0.6);
      nodes = {-a, 0.0, a};
      weights = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
      break;
    }
    case 4: {
      const double a = std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(1.2));
      const double b = std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(1.2));
      const double wa = (18.0 + std::sqrt(30.0)) / 36.0;
      const double wb = (18.0 - std::sqrt(30.0)) / 36.0;
      nodes = {-b, -a, a, b};
      weights = {wb, wa, wa, wb};
      break;
    }
    default: {
      const double a = std::sqrt(5.0 - 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
      const double b = std::sqrt(5.0 + 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
      const double wa = (322.0 + 13.0 * std::sqrt(70.0)) / 900.0;
      const double wb = (322.0 - 13.0 * std::sqrt(70.0)) / 900.0;
      nodes = {-b, -a, 0.0, a, b};
      weights = {wb, wa, 128.0 / 225.0, wa, wb};
      break;
    }
  }
}

LocalBasisReport check_local_basis(const Basis& basis, std::size_t n_mc, std::span<const int> v, std::uint64_t seed) {
  require(n_mc >= 100, ErrorCode::InvalidArgument, "n_mc must be >= 100");
  const auto& part = basis.partition();
  const std::size_t d = basis.dim();
  const double h = part.mesh();
  const double hv = std::pow(h, v.empty() ? 0 : total_order(v));

  LocalBasisReport rep;
  rep.min_scaled_norm = INFINITY;
  rep.max_scaled_norm = 0.0;
  CounterRng rng(seed, stream_id(0xBA515));
  std::vector<double> x(d);
  SparseVec pv;
  for (std::size_t s = 0; s < n_mc; ++s) {
    for (std::size_t j = 0; j < d; ++j) {
      const double lo = part.domain().lower[j];
      const double hi = part.domain().upper[j];
      x[j] = lo + (hi - lo) * rng.uniform();
    }
    basis.eval_into(x, v, pv);
    double sq = 0.0;
    for (double val : pv.values) sq += val * val;
    const double nrm = std::sqrt(sq) * hv;
    rep.min_scaled_norm = std::min(rep.min_scaled_norm, nrm);
    rep.max_scaled_norm = std::max(rep.max_scaled_norm, nrm);
  }

  // Exact per-cell Gram integrals by tensor Gauss-Legendre quadrature.
  std::vector<double> nodes;
  std::vector<double> weights;
  const int q = basis.order();
  gauss_legendre(q, nodes, weights);
  const std::size_t W = basis.active_per_cell();
  std::size_t npts = 1;
  for (std::size_t j = 0; j < d; ++j) npts *= static_cast<std::size_t>(q);
  const double hd = std::pow(h, static_cast<double>(d));
  double min_eig = INFINITY;
  Eigen::MatrixXd gram(W, W);
  for (std::size_t c = 0; c < part.cell_count(); ++c) {
    const auto geo = part.cell_geometry(c);
    gram.setZero();
    for (std::size_t pt = 0; pt < npts; ++pt) {
      std::size_t rem = pt;
      double w = 1.0;
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t a = rem % static_cast<std::size_t>(q);
        rem /= static_cast<std::size_t>(q);
        const double half = 0.5 * (geo.upper[j] - geo.lower[j]);
        x[j] = geo.lower[j] + half * (nodes[a] + 1.0);
        w *= weights[a] * half;
      }
      basis.eval_in_cell(c, x, {}, pv);
      for (std::size_t a = 0; a < W; ++a)
        for (std::size_t b = 0; b < W; ++b) gram(a, b) += w * pv.values[a] * pv.values[b];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff() / hd);
  }
  rep.min_local_gram_eig = min_eig;
  return rep;
}

}  // namespace pbm
