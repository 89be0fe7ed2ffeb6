#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pbm/banded.hpp"
#include "pbm/solver.hpp"

namespace pbm {

using PointList = std::vector<std::vector<double>>;

struct SandwichOptions {
  double ridge_rel = 1e-10;  // ridge = ridge_rel * trace(Q) / K
  double min_pivot = 1e-12;
};

/// Plug-in Q_hat(q), Sigma_hat(q, q~) and factorizations on the fit grid.
class SandwichSet {
 public:
  SandwichSet(std::shared_ptr<const FitResult> fit, const Dataset& data, SandwichOptions opts = {});

  const FitResult& fit() const { return *fit_; }
  std::shared_ptr<const FitResult> fit_ptr() const { return fit_; }
  std::size_t levels() const { return qhat_.size(); }
  std::size_t K() const { return fit_->K(); }
  std::size_t n() const { return fit_->n(); }

  const BandedMatrix& Qhat(std::size_t qi) const { return qhat_[qi]; }
  const BandedCholesky& chol(std::size_t qi) const { return chol_[qi]; }
  /// Sigma_hat(q_i, q_j); symmetric in (i, j).
  const BandedMatrix& Sigmahat(std::size_t qi, std::size_t qj) const;
  /// E_n[p p'] and its factor.
  const BandedMatrix& gram() const { return gram_; }
  const BandedCholesky& gram_chol() const { return gram_chol_; }

  /// Smallest eigenvalue of Q_hat(q) (dense; diagnostic).
  double qhat_min_eigenvalue(std::size_t qi) const;
  /// mu_hat(x_i, q) for a fit-grid or auxiliary level q.
  double index(std::size_t i, double q) const;
  FitContext context() const;

  /// u = Q_hat(q)^{-1} p^(v)(x) (dense, length K).
  std::vector<double> solve_q(std::size_t qi, const SparseVec& p) const;
  double omega(std::span<const double> x, std::span<const int> v, std::size_t qi) const;

 private:
  std::shared_ptr<const FitResult> fit_;
  std::vector<double> y_;
  std::optional<FitResult> aux_;
  std::vector<BandedMatrix> qhat_;
  std::vector<BandedCholesky> chol_;
  std::vector<BandedMatrix> sigma_;  // upper triangle (i <= j), row-major
  BandedMatrix gram_;
  BandedCholesky gram_chol_;
};

/// Q_hat = E_n[p p' Psi1_hat(x_i, q) eta'(mu_hat)^2] (unregularized).
BandedMatrix compute_Qhat(const FitResult& fit, const FitContext& ctx, std::size_t qi);
/// Sigma_hat = E_n[S_hat(x_i, q, q~) eta'(mu_hat(q)) eta'(mu_hat(q~)) p p'].
BandedMatrix compute_Sigmahat(const FitResult& fit, const FitContext& ctx, std::size_t qi, std::size_t qj);
/// Regularize (ridge) and factor; throws SingularQ.
BandedCholesky factor_Q(BandedMatrix& Q, const SandwichOptions& opts = {});

double compute_Omega(const SandwichSet& sand, std::span<const double> x, std::span<const int> v, std::size_t qi);

/// Diagnostic mode: scores psi(y_i, eta(index(i)); q) replace the fitted
/// residual scores, and Q is rebuilt from the true Psi_1 when `psi1` is set.
struct BahadurReference {
  std::function<double(std::size_t i)> index;
  std::function<double(std::size_t i)> psi1;  // Psi_1(x_i, eta(index(i)); q)
};

/// L^(v)(x, q) = -p^(v)(x)' Q^{-1} E_n[p eta' psi] on x_grid.
std::vector<double> bahadur_linearization(const SandwichSet& sand, const Dataset& data, const PointList& x_grid,
                                          std::span<const int> v, std::size_t qi,
                                          const BahadurReference* ref = nullptr);
/// Diagnostic mode without plug-ins; `ref.psi1` must be set.
std::vector<double> bahadur_linearization(const FitResult& fit, const Dataset& data, const PointList& x_grid,
                                          std::span<const int> v, std::size_t qi, const BahadurReference& ref);

/// max |[Q_hat^{-1}]_{jk}| for |j - k| = 0, 1, ..., K - 1.
std::vector<double> banded_decay_report(const BandedMatrix& Q);
std::vector<double> banded_decay_report(const SandwichSet& sand, std::size_t qi);

std::vector<double> eigenvalues(const BandedMatrix& A);

}  // namespace pbm
