#include "pbm/sandwich.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pbm/error.hpp"

namespace pbm {

namespace {

bool same_level(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); }

std::size_t tri_index(std::size_t i, std::size_t j, std::size_t J) {
  if (i > j) std::swap(i, j);
  return i * J - i * (i - 1) / 2 + (j - i);
}

}  // namespace

BandedMatrix compute_Qhat(const FitResult& fit, const FitContext& ctx, std::size_t qi) {
  const Design& D = fit.design;
  const Basis& basis = *fit.basis;
  const LossModel& loss = *fit.loss;
  const double q = fit.q_grid[qi];
  BandedMatrix Q(D.K, basis.bandwidth());
  const double inv_n = 1.0 / static_cast<double>(D.n);
  for (std::size_t i = 0; i < D.n; ++i) {
    const double th = fit.index(i, qi);
    const double de = loss.link().deta(th);
    const double w = loss.psi1_hat(ctx, i, q) * de * de * inv_n;
    const auto ix = D.indices(i);
    const auto v = D.values(i);
    for (std::size_t a = 0; a < D.width; ++a)
      for (std::size_t c = 0; c < D.width; ++c)
        if (ix[c] <= ix[a]) Q.lower(ix[a], ix[c]) += w * v[a] * v[c];
  }
  return Q;
}

BandedMatrix compute_Sigmahat(const FitResult& fit, const FitContext& ctx, std::size_t qi, std::size_t qj) {
  const Design& D = fit.design;
  const LossModel& loss = *fit.loss;
  const double q = fit.q_grid[qi];
  const double qt = fit.q_grid[qj];
  BandedMatrix S(D.K, fit.basis->bandwidth());
  const double inv_n = 1.0 / static_cast<double>(D.n);
  for (std::size_t i = 0; i < D.n; ++i) {
    const double w = loss.s_hat(ctx, i, q, qt) * loss.link().deta(fit.index(i, qi)) *
                     loss.link().deta(fit.index(i, qj)) * inv_n;
    const auto ix = D.indices(i);
    const auto v = D.values(i);
    for (std::size_t a = 0; a < D.width; ++a)
      for (std::size_t c = 0; c < D.width; ++c)
        if (ix[c] <= ix[a]) S.lower(ix[a], ix[c]) += w * v[a] * v[c];
  }
  return S;
}

BandedCholesky factor_Q(BandedMatrix& Q, const SandwichOptions& opts) {
  const double K = static_cast<double>(Q.size());
  Q.add_diagonal(opts.ridge_rel * std::max(Q.trace(), 0.0) / K);
  auto c = BandedCholesky::factor(Q);
  require(c.has_value(), ErrorCode::SingularQ, "Q_hat is not positive definite");
  require(c->min_pivot() >= opts.min_pivot, ErrorCode::SingularQ,
          "Q_hat is numerically singular (min pivot " + std::to_string(c->min_pivot()) + ")");
  return std::move(*c);
}

SandwichSet::SandwichSet(std::shared_ptr<const FitResult> fit, const Dataset& data, SandwichOptions opts)
    : fit_(std::move(fit)), y_(data.y) {
  require(fit_ != nullptr, ErrorCode::InvalidArgument, "sandwich needs a fit");
  require(data.n() == fit_->n(), ErrorCode::DataError, "dataset does not match the fit");
  const FitResult& f = *fit_;
  const std::size_t J = f.q_grid.size();

  std::vector<double> aux;
  for (double q : f.q_grid)
    for (double a : f.loss->auxiliary_levels(q, f.n())) {
      const bool on_grid = std::any_of(f.q_grid.begin(), f.q_grid.end(), [&](double g) { return same_level(g, a); });
      const bool seen = std::any_of(aux.begin(), aux.end(), [&](double g) { return same_level(g, a); });
      if (!on_grid && !seen) aux.push_back(a);
    }
  if (!aux.empty()) {
    std::sort(aux.begin(), aux.end());
    SolverOptions so = f.options;
    so.enforce_q_domain = false;
    if (f.box_R) so.box_R = f.box_R;
    aux_ = pbm::fit(data, f.basis, f.loss, aux, so);
  }

  const FitContext ctx = context();
  qhat_.resize(J);
  chol_.resize(J);
  sigma_.resize(J * (J + 1) / 2);
  for (std::size_t qi = 0; qi < J; ++qi) {
    qhat_[qi] = compute_Qhat(f, ctx, qi);
    chol_[qi] = factor_Q(qhat_[qi], opts);
    for (std::size_t qj = qi; qj < J; ++qj) sigma_[tri_index(qi, qj, J)] = compute_Sigmahat(f, ctx, qi, qj);
  }

  gram_ = BandedMatrix(f.K(), f.basis->bandwidth());
  const double inv_n = 1.0 / static_cast<double>(f.n());
  for (std::size_t i = 0; i < f.n(); ++i) {
    const auto ix = f.design.indices(i);
    const auto v = f.design.values(i);
    for (std::size_t a = 0; a < f.design.width; ++a)
      for (std::size_t c = 0; c < f.design.width; ++c)
        if (ix[c] <= ix[a]) gram_.lower(ix[a], ix[c]) += v[a] * v[c] * inv_n;
  }
  BandedMatrix g = gram_;
  gram_chol_ = factor_Q(g, opts);
}

const BandedMatrix& SandwichSet::Sigmahat(std::size_t qi, std::size_t qj) const {
  return sigma_[tri_index(qi, qj, levels())];
}

double SandwichSet::index(std::size_t i, double q) const {
  const auto& g = fit_->q_grid;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (same_level(g[k], q)) return fit_->index(i, k);
  if (aux_) {
    for (std::size_t k = 0; k < aux_->q_grid.size(); ++k)
      if (same_level(aux_->q_grid[k], q)) return aux_->index(i, k);
  }
  fail(ErrorCode::InvalidArgument, "q = " + std::to_string(q) + " has no fitted level");
}

FitContext SandwichSet::context() const {
  FitContext ctx;
  ctx.y = y_;
  ctx.index = [this](std::size_t i, double q) { return index(i, q); };
  return ctx;
}

double SandwichSet::qhat_min_eigenvalue(std::size_t qi) const { return eigenvalues(qhat_[qi]).front(); }

std::vector<double> SandwichSet::solve_q(std::size_t qi, const SparseVec& p) const {
  std::vector<double> u(K(), 0.0);
  for (std::size_t a = 0; a < p.indices.size(); ++a) u[p.indices[a]] = p.values[a];
  chol_[qi].solve(u);
  return u;
}

double SandwichSet::omega(std::span<const double> x, std::span<const int> v, std::size_t qi) const {
  const SparseVec p = fit_->basis->eval(x, v);
  const auto u = solve_q(qi, p);
  std::vector<double> su(K());
  Sigmahat(qi, qi).multiply(u, su);
  double s = 0.0;
  for (std::size_t k = 0; k < K(); ++k) s += u[k] * su[k];
  return s;
}

double compute_Omega(const SandwichSet& sand, std::span<const double> x, std::span<const int> v, std::size_t qi) {
  return sand.omega(x, v, qi);
}

namespace {

std::vector<double> score_vector(const FitResult& f, const Dataset& data, std::size_t qi,
                                 const BahadurReference* ref) {
  const LossModel& loss = *f.loss;
  const Link& link = loss.link();
  const Design& D = f.design;
  const double q = f.q_grid[qi];
  require(data.n() == D.n, ErrorCode::DataError, "dataset does not match the fit");
  std::vector<double> score(D.K, 0.0);
  const double inv_n = 1.0 / static_cast<double>(D.n);
  for (std::size_t i = 0; i < D.n; ++i) {
    const double th = ref && ref->index ? ref->index(i) : f.index(i, qi);
    const double gi = link.deta(th) * loss.psi(data.y[i], link.eta(th), q) * inv_n;
    const auto ix = D.indices(i);
    const auto val = D.values(i);
    for (std::size_t a = 0; a < D.width; ++a) score[ix[a]] += gi * val[a];
  }
  return score;
}

std::vector<double> evaluate(const FitResult& f, const PointList& x_grid, std::span<const int> v,
                             std::span<const double> coef) {
  std::vector<double> out(x_grid.size());
  for (std::size_t k = 0; k < x_grid.size(); ++k) out[k] = -f.basis->eval(x_grid[k], v).dot(coef);
  return out;
}

}  // namespace

std::vector<double> bahadur_linearization(const FitResult& f, const Dataset& data, const PointList& x_grid,
                                          std::span<const int> v, std::size_t qi, const BahadurReference& ref) {
  require(static_cast<bool>(ref.psi1), ErrorCode::InvalidArgument, "diagnostic Bahadur mode needs Psi_1");
  const Design& D = f.design;
  const Link& link = f.loss->link();
  auto score = score_vector(f, data, qi, &ref);
  BandedMatrix Q(D.K, f.basis->bandwidth());
  const double inv_n = 1.0 / static_cast<double>(D.n);
  for (std::size_t i = 0; i < D.n; ++i) {
    const double th = ref.index ? ref.index(i) : f.index(i, qi);
    const double de = link.deta(th);
    const double w = ref.psi1(i) * de * de * inv_n;
    const auto ix = D.indices(i);
    const auto val = D.values(i);
    for (std::size_t a = 0; a < D.width; ++a)
      for (std::size_t c = 0; c < D.width; ++c)
        if (ix[c] <= ix[a]) Q.lower(ix[a], ix[c]) += w * val[a] * val[c];
  }
  factor_Q(Q).solve(score);
  return evaluate(f, x_grid, v, score);
}

std::vector<double> bahadur_linearization(const SandwichSet& sand, const Dataset& data, const PointList& x_grid,
                                          std::span<const int> v, std::size_t qi, const BahadurReference* ref) {
  if (ref && ref->psi1) return bahadur_linearization(sand.fit(), data, x_grid, v, qi, *ref);
  auto score = score_vector(sand.fit(), data, qi, ref);
  sand.chol(qi).solve(score);
  return evaluate(sand.fit(), x_grid, v, score);
}

std::vector<double> banded_decay_report(const BandedMatrix& Q) {
  const Eigen::MatrixXd inv = Q.to_dense().inverse();
  const auto K = static_cast<std::size_t>(inv.rows());
  std::vector<double> out(K, 0.0);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j <= i; ++j) out[i - j] = std::max(out[i - j], std::abs(inv(i, j)));
  return out;
}

std::vector<double> banded_decay_report(const SandwichSet& sand, std::size_t qi) {
  const Eigen::MatrixXd inv = sand.chol(qi).inverse();
  const auto K = static_cast<std::size_t>(inv.rows());
  std::vector<double> out(K, 0.0);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j <= i; ++j) out[i - j] = std::max(out[i - j], std::abs(inv(i, j)));
  return out;
}

std::vector<double> eigenvalues(const BandedMatrix& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.to_dense(), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

}  // namespace pbm
