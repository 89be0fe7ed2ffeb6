#include "pbm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pbm/error.hpp"
#include "pbm/rng.hpp"

namespace pbm {

PointList cell_grid(const Partition& partition, int per_cell) {
  require(per_cell >= 1, ErrorCode::InvalidArgument, "per_cell must be >= 1");
  const std::size_t d = partition.dim();
  std::vector<std::vector<double>> axes(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto& kn = partition.knots()[j];
    for (std::size_t c = 0; c + 1 < kn.size(); ++c)
      for (int k = 0; k < per_cell; ++k) axes[j].push_back(kn[c] + (k + 0.5) * (kn[c + 1] - kn[c]) / per_cell);
  }
  PointList pts;
  std::vector<std::size_t> at(d, 0);
  while (true) {
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = axes[j][at[j]];
    pts.push_back(std::move(x));
    std::size_t j = 0;
    while (j < d && ++at[j] == axes[j].size()) at[j++] = 0;
    if (j == d) break;
  }
  return pts;
}

EvalGrid make_grid(const Partition& partition, int per_cell, std::vector<double> q_points, MultiIndex v) {
  EvalGrid g;
  g.x_points = cell_grid(partition, per_cell);
  g.q_points = std::move(q_points);
  g.v = v.empty() ? MultiIndex(partition.dim(), 0) : std::move(v);
  return g;
}

bool BandResult::covers(std::span<const double> truth) const {
  require(truth.size() == lo.size(), ErrorCode::InvalidArgument, "truth has the wrong length");
  for (std::size_t k = 0; k < truth.size(); ++k)
    if (!(truth[k] >= lo[k] && truth[k] <= hi[k])) return false;
  return true;
}

std::vector<std::size_t> grid_levels(const FitResult& fit, const EvalGrid& grid) {
  require(grid.nx() > 0 && grid.nq() > 0, ErrorCode::InvalidArgument, "empty evaluation grid");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < grid.nq(); ++j) {
    out.push_back(fit.q_index(grid.q_points[j]));
    if (j) require(out[j] > out[j - 1], ErrorCode::InvalidArgument, "grid q levels must be strictly increasing");
  }
  return out;
}

namespace {

/// Z_hat(x, q) = p^(v)(x)' Q_q^{-1} g_q / sqrt(Omega_hat) with g drawn from the
/// block covariance Sigma_hat(q, q~) (generic) or as F B(q) (Brownian bridge).
class Sampler {
 public:
  Sampler(const SandwichSet& sand, const EvalGrid& grid, SimPath path) : sand_(sand), grid_(grid), path_(path) {
    const FitResult& fit = sand.fit();
    levels_ = grid_levels(fit, grid);
    require(static_cast<std::size_t>(total_order(grid.v)) <= static_cast<std::size_t>(fit.basis->spec().cap()),
            ErrorCode::DerivativeOrderTooHigh, "derivative order exceeds the basis cap");
    K_ = fit.K();
    rows_.reserve(grid.nx());
    for (const auto& x : grid.x_points) rows_.push_back(fit.basis->eval(x, grid.v));
    omega_.resize(grid.size());
    inv_sd_.resize(grid.size());
    for (std::size_t j = 0; j < grid.nq(); ++j) {
      const BandedMatrix& S = sand.Sigmahat(levels_[j], levels_[j]);
      std::vector<double> su(K_);
      for (std::size_t i = 0; i < grid.nx(); ++i) {
        const auto u = sand.solve_q(levels_[j], rows_[i]);
        S.multiply(u, su);
        const double om = std::inner_product(u.begin(), u.end(), su.begin(), 0.0);
        require(om > 0.0 && std::isfinite(om), ErrorCode::SingularQ,
                "Omega_hat is not positive at grid point " + std::to_string(grid.point(i, j)));
        omega_[grid.point(i, j)] = om;
        inv_sd_[grid.point(i, j)] = 1.0 / std::sqrt(om);
      }
    }
    if (path == SimPath::BrownianBridge) {
      const LossModel& loss = *fit.loss;
      require(loss.key() == "quantile" && loss.link().kind() == LinkKind::Identity, ErrorCode::WrongModel,
              "the Brownian-bridge path needs quantile regression with the identity link");
      scale_ = loss.link().scale();
    } else {
      build_factor();
    }
  }

  std::size_t points() const { return grid_.size(); }
  const std::vector<double>& omega() const { return omega_; }

  struct Work {
    Eigen::VectorXd xi;
    Eigen::VectorXd g;
    std::vector<double> w;
    std::vector<double> b;
    std::vector<double> wprev;
    std::vector<double> W;
  };

  void draw(CounterRng& rng, Work& ws, std::span<double> z) const {
    const std::size_t J = levels_.size();
    ws.w.resize(K_);
    if (path_ == SimPath::Generic) {
      const auto dim = static_cast<Eigen::Index>(K_ * J);
      ws.xi.resize(dim);
      for (Eigen::Index k = 0; k < dim; ++k) ws.xi[k] = rng.normal();
      if (triangular_) {
        ws.g.noalias() = factor_.triangularView<Eigen::Lower>() * ws.xi;
      } else {
        ws.g.noalias() = factor_ * ws.xi;
      }
      for (std::size_t j = 0; j < J; ++j) {
        std::copy(ws.g.data() + j * K_, ws.g.data() + (j + 1) * K_, ws.w.begin());
        finish_level(j, ws, z);
      }
      return;
    }
    // W(q_j) by independent increments, B(q) = W(q) - q W(1).
    const auto& qs = grid_.q_points;
    auto& W = ws.W;
    W.resize(K_ * J);
    double prev = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const double sd = std::sqrt(qs[j] - prev);
      for (std::size_t k = 0; k < K_; ++k) W[j * K_ + k] = (j ? W[(j - 1) * K_ + k] : 0.0) + sd * rng.normal();
      prev = qs[j];
    }
    ws.b.resize(K_);
    ws.wprev.resize(K_);
    const double sd1 = std::sqrt(std::max(1.0 - prev, 0.0));
    for (std::size_t k = 0; k < K_; ++k) ws.wprev[k] = W[(J - 1) * K_ + k] + sd1 * rng.normal();
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t k = 0; k < K_; ++k) ws.b[k] = W[j * K_ + k] - qs[j] * ws.wprev[k];
      sand_.gram_chol().multiply_lower(ws.b, ws.w);
      if (scale_ != 1.0)
        for (double& v : ws.w) v *= scale_;
      finish_level(j, ws, z);
    }
  }

 private:
  void finish_level(std::size_t j, Work& ws, std::span<double> z) const {
    sand_.chol(levels_[j]).solve(ws.w);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const std::size_t pt = grid_.point(i, j);
      z[pt] = rows_[i].dot(ws.w) * inv_sd_[pt];
    }
  }

  // Factor of the K J x K J block covariance, with jitter escalation and an
  // eigenvalue clip as the last resort.
  void build_factor() {
    const std::size_t J = levels_.size();
    const auto dim = static_cast<Eigen::Index>(K_ * J);
    Eigen::MatrixXd C(dim, dim);
    for (std::size_t a = 0; a < J; ++a)
      for (std::size_t b = a; b < J; ++b) {
        const Eigen::MatrixXd blk = sand_.Sigmahat(levels_[a], levels_[b]).to_dense();
        const auto ra = static_cast<Eigen::Index>(a * K_);
        const auto rb = static_cast<Eigen::Index>(b * K_);
        const auto k = static_cast<Eigen::Index>(K_);
        C.block(ra, rb, k, k) = blk;
        C.block(rb, ra, k, k) = blk.transpose();
      }
    const double scale = std::max(C.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
      triangular_ = true;
      return;
    }
    for (double jit = 1e-12; jit <= 1e-8 * 1.0001; jit *= 10.0) {
      Eigen::MatrixXd Cj = C;
      Cj.diagonal().array() += jit * scale;
      Eigen::LLT<Eigen::MatrixXd> l2(Cj);
      if (l2.info() == Eigen::Success) {
        factor_ = l2.matrixL();
        triangular_ = true;
        return;
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    require(es.info() == Eigen::Success, ErrorCode::CovarianceNotPSD, "eigen-decomposition of the grid covariance failed");
    const Eigen::VectorXd ev = es.eigenvalues();
    require(ev.minCoeff() >= -1e-3 * std::max(ev.maxCoeff(), 1e-300), ErrorCode::CovarianceNotPSD,
            "grid covariance is materially indefinite (min eigenvalue " + std::to_string(ev.minCoeff()) + ")");
    factor_ = es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
    triangular_ = false;
  }

  const SandwichSet& sand_;
  const EvalGrid& grid_;
  SimPath path_;
  std::vector<std::size_t> levels_;
  std::size_t K_ = 0;
  std::vector<SparseVec> rows_;
  std::vector<double> omega_;
  std::vector<double> inv_sd_;
  Eigen::MatrixXd factor_;
  bool triangular_ = true;
  double scale_ = 1.0;
};

constexpr std::uint64_t kStreamFirst = 0x5a17;
constexpr std::uint64_t kStreamSecond = 0x5a18;

std::vector<double> sup_draws(const Sampler& s, int n_draws, std::uint64_t seed) {
  std::vector<double> out(static_cast<std::size_t>(n_draws));
  const std::size_t P = s.points();
#pragma omp parallel
  {
    Sampler::Work ws;
    std::vector<double> z(P);
#pragma omp for schedule(static)
    for (int d = 0; d < n_draws; ++d) {
      CounterRng rng(seed, stream_id(kStreamFirst, static_cast<std::uint64_t>(d)));
      s.draw(rng, ws, z);
      double m = 0.0;
      for (std::size_t k = 0; k < P; ++k) m = std::max(m, std::abs(z[k]));
      out[static_cast<std::size_t>(d)] = m;
    }
  }
  return out;
}

BandResult finalize(const EvalGrid& grid, std::vector<double> center, std::vector<double> omega,
                    std::vector<double> se, std::vector<double> sups, const SimOptions& opts) {
  BandResult r;
  r.grid = grid;
  r.crit = critical_value(sups, opts.alpha);
  r.alpha = opts.alpha;
  r.n_draws = opts.n_draws;
  r.seed = opts.seed;
  r.sup_stats = summarize(sups);
  r.lo.resize(center.size());
  r.hi.resize(center.size());
  for (std::size_t k = 0; k < center.size(); ++k) {
    r.lo[k] = center[k] - r.crit * se[k];
    r.hi[k] = center[k] + r.crit * se[k];
  }
  r.mu_hat = std::move(center);
  r.omega_hat = std::move(omega);
  r.se = std::move(se);
  if (opts.keep_draws) r.sup_draws = std::move(sups);
  return r;
}

void check_sim(const SimOptions& opts) {
  require(opts.alpha > 0.0 && opts.alpha <= 0.5, ErrorCode::InvalidArgument, "alpha must lie in (0, 0.5]");
  require(opts.n_draws >= 1000, ErrorCode::InvalidArgument, "n_draws must be >= 1000");
}

std::vector<double> estimates(const FitResult& fit, const EvalGrid& grid, const MultiIndex& v) {
  const auto lv = grid_levels(fit, grid);
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.nx(); ++i) {
    const SparseVec p = fit.basis->eval(grid.x_points[i], v);
    for (std::size_t j = 0; j < grid.nq(); ++j) out[grid.point(i, j)] = p.dot(fit.beta[lv[j]]);
  }
  return out;
}

}  // namespace

double critical_value(std::span<const double> sup_draws, double alpha) {
  return lower_quantile(std::vector<double>(sup_draws.begin(), sup_draws.end()), 1.0 - alpha);
}

SupStats summarize(std::span<const double> draws) {
  SupStats s;
  if (draws.empty()) return s;
  const double n = static_cast<double>(draws.size());
  s.mean = std::accumulate(draws.begin(), draws.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : draws) ss += (v - s.mean) * (v - s.mean);
  s.sd = draws.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::vector<double> v(draws.begin(), draws.end());
  std::sort(v.begin(), v.end());
  auto oq = [&](double q) {
    auto r = static_cast<std::size_t>(std::ceil(q * n - 1e-9 * q * n));
    return v[std::clamp<std::size_t>(r, 1, v.size()) - 1];
  };
  s.q50 = oq(0.5);
  s.q90 = oq(0.9);
  s.q95 = oq(0.95);
  s.q99 = oq(0.99);
  return s;
}

std::vector<double> t_process(const SandwichSet& sand, const EvalGrid& grid,
                              std::optional<std::span<const double>> mu0) {
  const FitResult& fit = sand.fit();
  const auto lv = grid_levels(fit, grid);
  const auto mu = estimates(fit, grid, grid.v);
  if (mu0) require(mu0->size() == grid.size(), ErrorCode::InvalidArgument, "mu0 has the wrong length");
  const double n = static_cast<double>(fit.n());
  std::vector<double> t(grid.size());
  for (std::size_t i = 0; i < grid.nx(); ++i)
    for (std::size_t j = 0; j < grid.nq(); ++j) {
      const std::size_t k = grid.point(i, j);
      const double om = sand.omega(grid.x_points[i], grid.v, lv[j]);
      require(om > 0.0, ErrorCode::SingularQ, "Omega_hat is not positive");
      t[k] = (mu[k] - (mu0 ? (*mu0)[k] : 0.0)) / std::sqrt(om / n);
    }
  return t;
}

Eigen::MatrixXd draw_process(const SandwichSet& sand, const EvalGrid& grid, int n_draws, std::uint64_t seed,
                             SimPath path) {
  const Sampler s(sand, grid, path);
  Eigen::MatrixXd out(n_draws, static_cast<Eigen::Index>(grid.size()));
#pragma omp parallel
  {
    Sampler::Work ws;
    std::vector<double> z(grid.size());
#pragma omp for schedule(static)
    for (int d = 0; d < n_draws; ++d) {
      CounterRng rng(seed, stream_id(kStreamFirst, static_cast<std::uint64_t>(d)));
      s.draw(rng, ws, z);
      for (std::size_t k = 0; k < z.size(); ++k) out(d, static_cast<Eigen::Index>(k)) = z[k];
    }
  }
  return out;
}

BandResult simulate_band(const SandwichSet& sand, const EvalGrid& grid, const SimOptions& opts) {
  check_sim(opts);
  const Sampler s(sand, grid, opts.path);
  const double n = static_cast<double>(sand.n());
  auto center = estimates(sand.fit(), grid, grid.v);
  std::vector<double> se(grid.size());
  for (std::size_t k = 0; k < se.size(); ++k) se[k] = std::sqrt(s.omega()[k] / n);
  return finalize(grid, std::move(center), s.omega(), std::move(se), sup_draws(s, opts.n_draws, opts.seed), opts);
}

BandResult simulate_band_brownian_bridge(const SandwichSet& sand, const EvalGrid& grid, SimOptions opts) {
  opts.path = SimPath::BrownianBridge;
  return simulate_band(sand, grid, opts);
}

BandResult level_band(const SandwichSet& sand, const EvalGrid& grid, const SimOptions& opts, LevelMode mode) {
  require(total_order(grid.v) == 0, ErrorCode::InvalidArgument, "level bands need v = 0");
  BandResult r = simulate_band(sand, grid, opts);
  const Link& link = sand.fit().loss->link();
  for (std::size_t k = 0; k < r.mu_hat.size(); ++k) {
    const double m = r.mu_hat[k];
    if (mode == LevelMode::Delta) {
      r.se[k] *= std::abs(link.deta(m));
      r.mu_hat[k] = link.eta(m);
      r.lo[k] = r.mu_hat[k] - r.crit * r.se[k];
      r.hi[k] = r.mu_hat[k] + r.crit * r.se[k];
    } else {
      const double a = link.eta(r.lo[k]);
      const double b = link.eta(r.hi[k]);
      r.se[k] *= std::abs(link.deta(m));
      r.mu_hat[k] = link.eta(m);
      r.lo[k] = std::min(a, b);
      r.hi[k] = std::max(a, b);
    }
  }
  return r;
}

BandResult marginal_effect_band(const SandwichSet& sand, const EvalGrid& grid, const SimOptions& opts) {
  require(total_order(grid.v) == 1, ErrorCode::InvalidArgument, "marginal effects need |v| = 1");
  const FitResult& fit = sand.fit();
  require(fit.basis->spec().cap() >= 1, ErrorCode::DerivativeOrderTooHigh,
          "marginal effects need a basis of order >= 2");
  BandResult r = simulate_band(sand, grid, opts);
  const Link& link = fit.loss->link();
  const auto level = estimates(fit, grid, MultiIndex(grid.v.size(), 0));
  for (std::size_t k = 0; k < r.mu_hat.size(); ++k) {
    const double de = link.deta(level[k]);
    r.mu_hat[k] *= de;
    r.se[k] *= std::abs(de);
    r.lo[k] = r.mu_hat[k] - r.crit * r.se[k];
    r.hi[k] = r.mu_hat[k] + r.crit * r.se[k];
  }
  return r;
}

BandResult cte_band(const SandwichSet& sand1, const SandwichSet& sand2, const EvalGrid& grid, const SimOptions& opts) {
  check_sim(opts);
  require(total_order(grid.v) == 0, ErrorCode::InvalidArgument, "treatment-effect bands need v = 0");
  const FitResult& f1 = sand1.fit();
  const FitResult& f2 = sand2.fit();
  const auto& b1 = *f1.basis;
  const auto& b2 = *f2.basis;
  require(b1.size() == b2.size() && b1.spec().kind == b2.spec().kind && b1.spec().order == b2.spec().order &&
              b1.partition().knots() == b2.partition().knots(),
          ErrorCode::BasisMismatch, "treatment-effect fits must share the basis");
  require(f1.loss->key() == f2.loss->key() && f1.loss->link().name() == f2.loss->link().name(),
          ErrorCode::BasisMismatch, "treatment-effect fits must share the loss and link");

  const Sampler s1(sand1, grid, opts.path);
  const Sampler s2(sand2, grid, opts.path);
  const Link& link = f1.loss->link();
  const auto m1 = estimates(f1, grid, grid.v);
  const auto m2 = estimates(f2, grid, grid.v);
  const double n1 = static_cast<double>(f1.n());
  const double n2 = static_cast<double>(f2.n());
  const std::size_t P = grid.size();
  std::vector<double> center(P), omega(P), se(P), w1(P), w2(P);
  for (std::size_t k = 0; k < P; ++k) {
    const double a = std::abs(link.deta(m1[k])) * std::sqrt(s1.omega()[k] / n1);
    const double b = std::abs(link.deta(m2[k])) * std::sqrt(s2.omega()[k] / n2);
    center[k] = link.eta(m2[k]) - link.eta(m1[k]);
    se[k] = std::sqrt(a * a + b * b);
    omega[k] = se[k] * se[k];
    w1[k] = a / se[k];
    w2[k] = b / se[k];
  }
  std::vector<double> sups(static_cast<std::size_t>(opts.n_draws));
#pragma omp parallel
  {
    Sampler::Work ws;
    std::vector<double> z1(P), z2(P);
#pragma omp for schedule(static)
    for (int d = 0; d < opts.n_draws; ++d) {
      CounterRng r1(opts.seed, stream_id(kStreamFirst, static_cast<std::uint64_t>(d)));
      CounterRng r2(opts.seed, stream_id(kStreamSecond, static_cast<std::uint64_t>(d)));
      s1.draw(r1, ws, z1);
      s2.draw(r2, ws, z2);
      double m = 0.0;
      for (std::size_t k = 0; k < P; ++k) m = std::max(m, std::abs(w2[k] * z2[k] - w1[k] * z1[k]));
      sups[static_cast<std::size_t>(d)] = m;
    }
  }
  return finalize(grid, std::move(center), std::move(omega), std::move(se), std::move(sups), opts);
}

}  // namespace pbm
