#include "pbm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pbm/banded.hpp"
#include "pbm/error.hpp"

namespace pbm {

void Dataset::validate(const Domain& domain) const {
  require(d == domain.dim(), ErrorCode::DataError, "covariate dimension does not match the domain");
  require(X.size() == n() * d, ErrorCode::DataError, "X must be n x d");
  for (std::size_t i = 0; i < n(); ++i) {
    require(std::isfinite(y[i]), ErrorCode::DataError, "non-finite response in row " + std::to_string(i + 1));
    for (std::size_t j = 0; j < d; ++j)
      require(std::isfinite(X[i * d + j]), ErrorCode::DataError, "non-finite covariate in row " + std::to_string(i + 1));
    require(domain.contains(row(i)), ErrorCode::OutOfDomain, "row " + std::to_string(i + 1) + " outside the domain");
  }
}

void SolverOptions::validate() const {
  require(max_iter > 0, ErrorCode::InvalidArgument, "max_iter must be positive");
  require(grad_tol > 0.0, ErrorCode::InvalidArgument, "grad_tol must be positive");
  require(!box_R || *box_R > 0.0, ErrorCode::InvalidArgument, "box radius must be positive");
  require(!smoothing_tau0 || *smoothing_tau0 > 0.0, ErrorCode::InvalidArgument, "smoothing tau0 must be positive");
  require(smoothing_tau_min_rel > 0.0, ErrorCode::InvalidArgument, "smoothing floor must be positive");
  require(smoothing_decay > 0.0 && smoothing_decay < 1.0, ErrorCode::InvalidArgument, "smoothing decay must lie in (0,1)");
  require(polish_steps >= 0, ErrorCode::InvalidArgument, "polish_steps must be >= 0");
}

SparseVec Design::row(std::size_t i) const {
  SparseVec s;
  s.indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(i * width),
                   idx.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  s.values.assign(val.begin() + static_cast<std::ptrdiff_t>(i * width),
                  val.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  return s;
}

std::vector<double> Design::gram_diagonal() const {
  std::vector<double> g(K, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < width; ++a) g[idx[i * width + a]] += val[i * width + a] * val[i * width + a];
  for (double& v : g) v /= static_cast<double>(n);
  return g;
}

Design build_design(const Basis& basis, const Dataset& data) {
  Design D;
  D.n = data.n();
  D.K = basis.size();
  D.width = basis.active_per_cell();
  D.idx.resize(D.n * D.width);
  D.val.resize(D.n * D.width);
  D.cell.resize(D.n);
  SparseVec row;
  for (std::size_t i = 0; i < D.n; ++i) {
    D.cell[i] = static_cast<std::uint32_t>(basis.eval_into(data.row(i), {}, row));
    std::copy(row.indices.begin(), row.indices.end(), D.idx.begin() + static_cast<std::ptrdiff_t>(i * D.width));
    std::copy(row.values.begin(), row.values.end(), D.val.begin() + static_cast<std::ptrdiff_t>(i * D.width));
  }
  return D;
}

double lower_quantile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::InvalidArgument, "quantile of an empty sample");
  const auto N = values.size();
  const double qN = q * static_cast<double>(N);
  auto rank = static_cast<std::size_t>(std::ceil(qN - 1e-9 * std::max(1.0, qN)));
  rank = std::clamp<std::size_t>(rank, 1, N);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

namespace {

std::size_t design_bandwidth(const Design& D) {
  std::size_t bw = 0;
  for (std::size_t i = 0; i < D.n; ++i) {
    const auto ix = D.indices(i);
    const auto [lo, hi] = std::minmax_element(ix.begin(), ix.end());
    bw = std::max<std::size_t>(bw, *hi - *lo);
  }
  return bw;
}

double iqr(std::span<const double> y) {
  std::vector<double> v(y.begin(), y.end());
  const double r = lower_quantile(v, 0.75) - lower_quantile(v, 0.25);
  if (r > 0.0) return r;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi > *lo ? *hi - *lo : 1.0;
}

void project(std::vector<double>& b, std::optional<double> R) {
  if (!R) return;
  for (double& v : b) v = std::clamp(v, -*R, *R);
}

/// Objective, gradient and Hessian of E_n[rho(y_i, eta(p_i'b); q)] (or of its
/// smoothed surrogate when tau is set).
class LevelProblem {
 public:
  LevelProblem(const Design& D, std::span<const double> y, const LossModel& loss, double q, std::optional<double> tau)
      : D_(D), y_(y), loss_(loss), link_(loss.link()), q_(q), tau_(tau), inv_n_(1.0 / static_cast<double>(D.n)) {}

  double objective(std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < D_.n; ++i) {
      const double eta = link_.eta(D_.dot(i, b));
      s += tau_ ? loss_.rho_smooth(y_[i], eta, q_, *tau_) : loss_.rho(y_[i], eta, q_);
    }
    return s * inv_n_;
  }

  /// Returns the objective and fills the gradient in one pass.
  double objective_gradient(std::span<const double> b, std::vector<double>& g) const {
    std::fill(g.begin(), g.end(), 0.0);
    double f = 0.0;
    for (std::size_t i = 0; i < D_.n; ++i) {
      const double th = D_.dot(i, b);
      const double eta = link_.eta(th);
      f += tau_ ? loss_.rho_smooth(y_[i], eta, q_, *tau_) : loss_.rho(y_[i], eta, q_);
      const double ps = tau_ ? loss_.psi_smooth(y_[i], eta, q_, *tau_) : loss_.psi(y_[i], eta, q_);
      const double gi = ps * link_.deta(th) * inv_n_;
      const auto ix = D_.indices(i);
      const auto v = D_.values(i);
      for (std::size_t a = 0; a < D_.width; ++a) g[ix[a]] += gi * v[a];
    }
    return f * inv_n_;
  }

  void gradient_hessian(std::span<const double> b, std::vector<double>& g, BandedMatrix& H) const {
    std::fill(g.begin(), g.end(), 0.0);
    H.set_zero();
    const std::size_t bw = H.bandwidth();
    for (std::size_t i = 0; i < D_.n; ++i) {
      const double th = D_.dot(i, b);
      const double eta = link_.eta(th);
      const double de = link_.deta(th);
      double ps;
      double dp;
      if (tau_) {
        ps = loss_.psi_smooth(y_[i], eta, q_, *tau_);
        dp = loss_.dpsi_smooth(y_[i], eta, q_, *tau_);
      } else {
        ps = loss_.psi(y_[i], eta, q_);
        dp = loss_.dpsi(y_[i], eta, q_);
      }
      const double gi = ps * de * inv_n_;
      const double w = std::max(0.0, dp * de * de + ps * link_.ddeta(th)) * inv_n_;
      const auto ix = D_.indices(i);
      const auto v = D_.values(i);
      for (std::size_t a = 0; a < D_.width; ++a) {
        g[ix[a]] += gi * v[a];
        if (w == 0.0) continue;
        const double wa = w * v[a];
        for (std::size_t c = 0; c < D_.width; ++c) {
          if (ix[c] > ix[a] || ix[a] - ix[c] > bw) continue;
          H.lower(ix[a], ix[c]) += wa * v[c];
        }
      }
    }
  }

 private:
  const Design& D_;
  std::span<const double> y_;
  const LossModel& loss_;
  const Link& link_;
  double q_;
  std::optional<double> tau_;
  double inv_n_;
};

double scaled_sup(const std::vector<double>& g, const std::vector<double>& diag, std::span<const double> b,
                  std::optional<double> R, std::vector<std::uint8_t>* fixed) {
  double s = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    bool fx = false;
    if (R) {
      if (b[k] >= *R - 1e-14 && g[k] < 0.0) fx = true;
      if (b[k] <= -*R + 1e-14 && g[k] > 0.0) fx = true;
    }
    if (fixed) (*fixed)[k] = fx;
    if (!fx) s = std::max(s, std::abs(g[k]) / std::max(diag[k], 1e-300));
  }
  return s;
}

LevelSolve newton(const LevelProblem& P, const Design& D, const std::vector<double>& diag, std::size_t bw,
                  std::vector<double> beta, const SolverOptions& opts, std::optional<double> R) {
  const std::size_t K = D.K;
  project(beta, R);
  std::vector<double> g(K);
  std::vector<double> dir(K);
  std::vector<double> cand(K);
  std::vector<std::uint8_t> fixed(K, 0);
  BandedMatrix H(K, bw);
  double lambda = 0.0;
  double F = P.objective(beta);
  LevelSolve out;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    P.gradient_hessian(beta, g, H);
    const double sg = scaled_sup(g, diag, beta, R, &fixed);
    out.grad_norm = sg;
    if (sg <= opts.grad_tol) {
      out.converged = true;
      break;
    }
    for (std::size_t k = 0; k < K; ++k) {
      double& hk = H.lower(k, k);
      hk = std::max(hk, 1e-10) + lambda * diag[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (!fixed[k]) continue;
      const std::size_t jlo = k > bw ? k - bw : 0;
      for (std::size_t j = jlo; j < k; ++j) H.lower(k, j) = 0.0;
      for (std::size_t i = k + 1; i <= std::min(K - 1, k + bw); ++i) H.lower(i, k) = 0.0;
      H.lower(k, k) = 1.0;
    }
    auto chol = BandedCholesky::factor(H);
    if (!chol) {
      lambda = std::max(1e-6, lambda * 10.0);
      if (lambda > 1e12) break;
      continue;
    }
    for (std::size_t k = 0; k < K; ++k) dir[k] = fixed[k] ? 0.0 : -g[k];
    chol->solve(dir);
    bool accepted = false;
    double t = 1.0;
    int ls = 0;
    for (; ls < 40; ++ls) {
      for (std::size_t k = 0; k < K; ++k) cand[k] = beta[k] + t * dir[k];
      project(cand, R);
      double dec = 0.0;
      for (std::size_t k = 0; k < K; ++k) dec += g[k] * (cand[k] - beta[k]);
      const double Fc = P.objective(cand);
      if (std::isfinite(Fc) && Fc <= F + 1e-4 * std::min(dec, 0.0) + 1e-14 * (1.0 + std::abs(F))) {
        accepted = true;
        F = Fc;
        beta.swap(cand);
        break;
      }
      t *= 0.5;
    }
    if (accepted) {
      if (ls == 0) lambda = lambda < 1e-10 ? 0.0 : lambda * 0.1;
    } else {
      lambda = std::max(1e-6, lambda * 10.0);
      if (lambda > 1e12) break;
    }
  }
  out.iterations = it;
  out.beta = std::move(beta);
  out.objective = F;
  return out;
}

std::vector<double> pilot_start(const Design& D, std::span<const double> y, const LossModel& loss, double q,
                                std::size_t bw) {
  const Link& link = loss.link();
  const double lo = link.range_lo();
  const double hi = link.range_hi();
  std::vector<double> rhs(D.K, 0.0);
  BandedMatrix G(D.K, bw);
  const double inv_n = 1.0 / static_cast<double>(D.n);
  for (std::size_t i = 0; i < D.n; ++i) {
    double z = loss.working_response(y[i], q);
    if (std::isfinite(lo) && std::isfinite(hi)) {
      z = std::clamp(z, lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo));
    } else if (std::isfinite(lo)) {
      z = std::max(z, lo + 1e-3);
    } else if (std::isfinite(hi)) {
      z = std::min(z, hi - 1e-3);
    }
    const double th = link.inverse(z);
    const auto ix = D.indices(i);
    const auto v = D.values(i);
    for (std::size_t a = 0; a < D.width; ++a) {
      rhs[ix[a]] += th * v[a] * inv_n;
      for (std::size_t c = 0; c < D.width; ++c)
        if (ix[c] <= ix[a] && ix[a] - ix[c] <= bw) G.lower(ix[a], ix[c]) += v[a] * v[c] * inv_n;
    }
  }
  G.add_diagonal(1e-8 * std::max(G.trace() / static_cast<double>(D.K), 1e-300));
  auto chol = BandedCholesky::factor(G);
  if (!chol) return std::vector<double>(D.K, 0.0);
  chol->solve(rhs);
  return rhs;
}

// Root of the monotone score sum_i psi(y_i, eta(theta)) eta'(theta) v_i for a
// single-coefficient cell.
LevelSolve scalar_root(const Design& D, std::span<const double> y, const LossModel& loss, double q, double start,
                       std::optional<double> R) {
  const Link& link = loss.link();
  auto score = [&](double th) {
    double s = 0.0;
    for (std::size_t i = 0; i < D.n; ++i) {
      const double v = D.val[i];
      const double t = v * th;
      s += loss.psi(y[i], link.eta(t), q) * link.deta(t) * v;
    }
    return s / static_cast<double>(D.n);
  };
  const double bound = R ? *R : 1e8;
  LevelSolve out;
  double lo = std::clamp(start, -bound, bound);
  double hi = lo;
  double glo = score(lo);
  double ghi = glo;
  double step = 1.0;
  while (glo > 0.0 && lo > -bound) {
    hi = lo;
    ghi = glo;
    lo = std::max(lo - step, -bound);
    glo = score(lo);
    step *= 2.0;
  }
  step = 1.0;
  while (ghi < 0.0 && hi < bound) {
    lo = hi;
    glo = ghi;
    hi = std::min(hi + step, bound);
    ghi = score(hi);
    step *= 2.0;
  }
  double root;
  if (glo > 0.0) {
    root = lo;  // optimum pinned at the lower bound
    out.converged = R.has_value();
  } else if (ghi < 0.0) {
    root = hi;
    out.converged = R.has_value();
  } else {
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
      const double mid = lo + 0.5 * (hi - lo);
      if (mid <= lo || mid >= hi) break;
      const double gm = score(mid);
      if (gm < 0.0) {
        lo = mid;
      } else if (gm > 0.0) {
        hi = mid;
      } else {
        lo = hi = mid;
      }
      out.iterations = it + 1;
    }
    root = std::abs(score(lo)) <= std::abs(score(hi)) ? lo : hi;
    out.converged = true;
  }
  double diag = 0.0;
  for (std::size_t i = 0; i < D.n; ++i) diag += D.val[i] * D.val[i];
  diag /= static_cast<double>(D.n);
  const double gr = score(root);
  out.grad_norm = (R && std::abs(root) >= *R) ? 0.0 : std::abs(gr) / diag;
  out.beta = {root};
  LevelProblem P(D, y, loss, q, std::nullopt);
  out.objective = P.objective(out.beta);
  return out;
}

}  // namespace

LevelSolve solve_level(const Design& D, std::span<const double> y, const LossModel& loss, double q,
                       std::span<const double> warm, const SolverOptions& opts, std::optional<double> R) {
  const std::size_t bw = design_bandwidth(D);
  const auto diag = D.gram_diagonal();
  std::vector<double> beta = warm.empty() ? pilot_start(D, y, loss, q, bw) : std::vector<double>(warm.begin(), warm.end());

  if (loss.smooth()) {
    LevelProblem P(D, y, loss, q, std::nullopt);
    return newton(P, D, diag, bw, std::move(beta), opts, R);
  }

  // Staged smoothing, then subgradient polish on the exact objective.
  const double scale = iqr(y);
  double tau = opts.smoothing_tau0 ? *opts.smoothing_tau0 : 0.1 * scale;
  const double tau_min = opts.smoothing_tau_min_rel * scale;
  // A warm start from the neighbouring level skips the coarsest stages.
  if (!warm.empty()) tau = std::max(tau * std::pow(opts.smoothing_decay, 3), tau_min);
  LevelSolve stage;
  int total_iter = 0;
  double last_tau = tau;
  while (true) {
    LevelProblem P(D, y, loss, q, tau);
    stage = newton(P, D, diag, bw, std::move(beta), opts, R);
    total_iter += stage.iterations;
    beta = stage.beta;
    last_tau = tau;
    if (tau <= tau_min * (1.0 + 1e-12)) break;
    tau = std::max(tau * opts.smoothing_decay, tau_min);
  }

  // Diagonally scaled subgradient steps of size c / sqrt(t), keeping the best iterate.
  LevelProblem exact(D, y, loss, q, std::nullopt);
  std::vector<double> g(D.K);
  std::vector<double> cur = beta;
  std::vector<double> best = beta;
  double best_f = exact.objective_gradient(cur, g);
  for (int t = 1; t <= opts.polish_steps; ++t) {
    const double step = last_tau / std::sqrt(static_cast<double>(t));
    for (std::size_t k = 0; k < D.K; ++k) cur[k] -= step * g[k] / std::max(diag[k], 1e-300);
    project(cur, R);
    const double f = exact.objective_gradient(cur, g);
    if (f < best_f) {
      best_f = f;
      best = cur;
    }
  }
  LevelSolve out;
  out.beta = std::move(best);
  out.objective = best_f;
  out.converged = stage.converged;
  out.grad_norm = stage.grad_norm;
  out.iterations = total_iter;
  return out;
}

LevelSolve fit_per_cell(const Design& local, std::span<const double> y, const LossModel& loss, double q,
                        std::span<const double> warm, const SolverOptions& opts, std::optional<double> R) {
  const auto min_obs = static_cast<std::size_t>(opts.min_obs_per_cell < 0 ? 3 * static_cast<int>(local.width)
                                                                          : opts.min_obs_per_cell);
  require(local.n >= std::max<std::size_t>(min_obs, 1), ErrorCode::CellTooSparse,
          "cell has " + std::to_string(local.n) + " observations, needs " + std::to_string(min_obs));
  if (local.width == 1) {
    const bool unit = std::all_of(local.val.begin(), local.val.end(), [](double v) { return v == 1.0; });
    if (unit) {
      if (auto c = loss.constant_fit(y, q)) {
        LevelSolve out;
        double th = loss.link().inverse(*c);
        if (R) th = std::clamp(th, -*R, *R);
        out.beta = {th};
        out.converged = true;
        out.grad_norm = 0.0;
        LevelProblem P(local, y, loss, q, std::nullopt);
        out.objective = P.objective(out.beta);
        return out;
      }
    }
    if (loss.smooth() && loss.convex_in_theta()) {
      double start = warm.empty() ? 0.0 : warm[0];
      if (warm.empty()) start = pilot_start(local, y, loss, q, 0)[0];
      return scalar_root(local, y, loss, q, start, R);
    }
  }
  return solve_level(local, y, loss, q, warm, opts, R);
}

double FitResult::mu(std::span<const double> x, std::span<const int> v, std::size_t qi) const {
  return basis->eval(x, v).dot(beta[qi]);
}

std::size_t FitResult::q_index(double q) const {
  for (std::size_t k = 0; k < q_grid.size(); ++k)
    if (std::abs(q_grid[k] - q) <= 1e-12 * std::max(1.0, std::abs(q))) return k;
  fail(ErrorCode::InvalidArgument, "q = " + std::to_string(q) + " is not on the fit grid");
}

bool FitResult::all_converged() const {
  return std::all_of(converged.begin(), converged.end(), [](std::uint8_t c) { return c != 0; });
}

namespace {

struct CellRows {
  std::vector<std::vector<std::uint32_t>> rows;
};

CellRows group_rows(const Design& D, std::size_t cells) {
  CellRows g;
  g.rows.resize(cells);
  for (std::size_t i = 0; i < D.n; ++i) g.rows[D.cell[i]].push_back(static_cast<std::uint32_t>(i));
  return g;
}

void check_cell_counts(const Basis& basis, const CellRows& g, const SolverOptions& opts) {
  const auto min_obs = static_cast<std::size_t>(
      opts.min_obs_per_cell < 0 ? 3 * static_cast<int>(basis.active_per_cell()) : opts.min_obs_per_cell);
  for (std::size_t c = 0; c < g.rows.size(); ++c) {
    if (g.rows[c].size() >= std::max<std::size_t>(min_obs, 1)) continue;
    const auto geo = basis.partition().cell_geometry(c);
    std::string where;
    for (std::size_t j = 0; j < geo.lower.size(); ++j)
      where += (j ? " x " : "") + ("[" + std::to_string(geo.lower[j]) + ", " + std::to_string(geo.upper[j]) + "]");
    fail(ErrorCode::CellTooSparse, "cell " + std::to_string(c) + " " + where + " has " +
                                       std::to_string(g.rows[c].size()) + " observations, needs at least " +
                                       std::to_string(min_obs));
  }
}

Design local_design(const Design& D, const Basis& basis, std::size_t cell, const std::vector<std::uint32_t>& rows,
                    std::vector<double>& y_local, std::span<const double> y) {
  Design L;
  L.n = rows.size();
  L.K = D.width;
  L.width = D.width;
  L.idx.resize(L.n * L.width);
  L.val.resize(L.n * L.width);
  L.cell.assign(L.n, 0);
  y_local.resize(L.n);
  const auto act = basis.active(cell);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    y_local[r] = y[i];
    const auto ix = D.indices(i);
    const auto v = D.values(i);
    for (std::size_t a = 0; a < D.width; ++a) {
      const auto pos = static_cast<std::uint32_t>(std::find(act.begin(), act.end(), ix[a]) - act.begin());
      L.idx[r * L.width + a] = pos;
      L.val[r * L.width + a] = v[a];
    }
  }
  return L;
}

}  // namespace

double auto_box_radius(const Dataset& data, const Basis& basis, const LossModel& loss, std::span<const double> q_grid,
                       const SolverOptions& opts) {
  require(!q_grid.empty(), ErrorCode::InvalidArgument, "empty q-grid");
  Basis pilot(basis.partition(), BasisSpec{BasisKind::PiecewisePoly, 1, 0});
  const Design D = build_design(pilot, data);
  const auto groups = group_rows(D, pilot.partition().cell_count());
  SolverOptions po = opts;
  po.min_obs_per_cell = opts.min_obs_per_cell < 0 ? 3 : std::min(opts.min_obs_per_cell, 3);
  check_cell_counts(pilot, groups, po);
  double sup = 0.0;
  std::vector<double> yl;
  for (std::size_t c = 0; c < groups.rows.size(); ++c) {
    const Design L = local_design(D, pilot, c, groups.rows[c], yl, data.y);
    std::vector<double> warm;
    for (double q : q_grid) {
      const auto s = fit_per_cell(L, yl, loss, q, warm, po, std::nullopt);
      warm = s.beta;
      sup = std::max(sup, std::abs(s.beta[0]));
    }
  }
  return std::max(2.0 * sup, 1.0);
}

FitResult fit(const Dataset& data, std::shared_ptr<const Basis> basis, LossPtr loss, std::vector<double> q_grid,
              const SolverOptions& opts) {
  require(basis && loss, ErrorCode::InvalidArgument, "fit needs a basis and a loss");
  opts.validate();
  require(!q_grid.empty(), ErrorCode::InvalidArgument, "empty q-grid");
  for (std::size_t k = 0; k < q_grid.size(); ++k) {
    require(!opts.enforce_q_domain || loss->q_domain().contains(q_grid[k]), ErrorCode::InvalidArgument,
            "q = " + std::to_string(q_grid[k]) + " outside the loss q-domain");
    if (k) require(q_grid[k] > q_grid[k - 1], ErrorCode::InvalidArgument, "q-grid must be strictly increasing");
  }
  data.validate(basis->partition().domain());
  for (double v : data.y) loss->validate_response(v);
  if (opts.require_n_ge_K) {
    require(data.n() >= basis->size(), ErrorCode::DataError,
            "n = " + std::to_string(data.n()) + " is smaller than K = " + std::to_string(basis->size()));
  }

  FitResult res;
  res.basis = basis;
  res.loss = loss;
  res.options = opts;
  res.q_grid = std::move(q_grid);
  res.design = build_design(*basis, data);
  const auto groups = group_rows(res.design, basis->partition().cell_count());
  check_cell_counts(*basis, groups, opts);

  if (opts.box_R) {
    res.box_R = opts.box_R;
  } else if (!loss->convex_in_theta()) {
    require(opts.auto_box, ErrorCode::BoxRequired,
            "loss '" + loss->key() + "' is non-convex in theta under link " + loss->link().name() +
                "; set box_R or enable auto_box");
    res.box_R = auto_box_radius(data, *basis, *loss, res.q_grid, opts);
  }

  const std::size_t J = res.q_grid.size();
  const std::size_t K = basis->size();
  res.beta.assign(J, std::vector<double>(K, 0.0));
  res.converged.assign(J, 1);
  res.grad_norm.assign(J, 0.0);
  res.objective.assign(J, 0.0);
  res.iterations.assign(J, 0);

  if (!basis->connected()) {
    const std::size_t cells = groups.rows.size();
    std::vector<std::vector<LevelSolve>> per(cells);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(cells); ++cc) {
      const auto c = static_cast<std::size_t>(cc);
      std::vector<double> yl;
      const Design L = local_design(res.design, *basis, c, groups.rows[c], yl, data.y);
      std::vector<double> warm;
      per[c].reserve(J);
      for (std::size_t qi = 0; qi < J; ++qi) {
        per[c].push_back(fit_per_cell(L, yl, *loss, res.q_grid[qi], warm, opts, res.box_R));
        warm = per[c].back().beta;
      }
    }
    for (std::size_t c = 0; c < cells; ++c) {
      const auto act = basis->active(c);
      for (std::size_t qi = 0; qi < J; ++qi) {
        const auto& s = per[c][qi];
        for (std::size_t a = 0; a < act.size(); ++a) res.beta[qi][act[a]] = s.beta[a];
        res.converged[qi] = res.converged[qi] && s.converged;
        res.grad_norm[qi] = std::max(res.grad_norm[qi], s.grad_norm);
        res.iterations[qi] += s.iterations;
      }
    }
  } else {
    std::vector<double> warm;
    for (std::size_t qi = 0; qi < J; ++qi) {
      auto s = solve_level(res.design, data.y, *loss, res.q_grid[qi], warm, opts, res.box_R);
      res.converged[qi] = s.converged;
      res.grad_norm[qi] = s.grad_norm;
      res.iterations[qi] = s.iterations;
      res.beta[qi] = s.beta;
      warm = std::move(s.beta);
    }
  }

  for (std::size_t qi = 0; qi < J; ++qi) {
    double s = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i)
      s += loss->rho(data.y[i], loss->link().eta(res.index(i, qi)), res.q_grid[qi]);
    res.objective[qi] = s / static_cast<double>(data.n());
  }
  return res;
}

}  // namespace pbm
