#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pbm/basis.hpp"
#include "pbm/loss.hpp"

namespace pbm {

/// n observations of (x in R^d, y); X is row-major n x d.
struct Dataset {
  std::size_t d = 1;
  std::vector<double> X;
  std::vector<double> y;

  std::size_t n() const { return y.size(); }
  std::span<const double> row(std::size_t i) const { return {X.data() + i * d, d}; }
  void validate(const Domain& domain) const;
};

struct SolverOptions {
  int max_iter = 200;
  double grad_tol = 1e-8;              // on the scaled gradient sup-norm
  std::optional<double> box_R;         // explicit box radius
  bool auto_box = true;                // derive R when the composite loss is non-convex
  std::optional<double> smoothing_tau0;  // default 0.1 * IQR(y)
  double smoothing_tau_min_rel = 1e-4;   // last stage tau as a fraction of IQR(y)
  double smoothing_decay = 0.5;
  int polish_steps = 200;
  int min_obs_per_cell = -1;  // default 3 m^d
  bool require_n_ge_K = true;
  bool enforce_q_domain = true;  // off for auxiliary plug-in levels

  void validate() const;
};

/// Cached basis rows p(x_i): every row has exactly `width` stored entries.
struct Design {
  std::size_t n = 0;
  std::size_t K = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  std::vector<std::uint32_t> cell;

  std::span<const std::uint32_t> indices(std::size_t i) const { return {idx.data() + i * width, width}; }
  std::span<const double> values(std::size_t i) const { return {val.data() + i * width, width}; }
  double dot(std::size_t i, std::span<const double> beta) const {
    double s = 0.0;
    const std::uint32_t* ix = idx.data() + i * width;
    const double* v = val.data() + i * width;
    for (std::size_t a = 0; a < width; ++a) s += v[a] * beta[ix[a]];
    return s;
  }
  SparseVec row(std::size_t i) const;
  /// E_n[p_k(x_i)^2], used to scale gradients.
  std::vector<double> gram_diagonal() const;
};

Design build_design(const Basis& basis, const Dataset& data);

/// Coefficient process beta_hat(q) on an increasing q-grid.
struct FitResult {
  std::shared_ptr<const Basis> basis;
  LossPtr loss;
  SolverOptions options;
  std::vector<double> q_grid;
  std::vector<std::vector<double>> beta;  // |q_grid| x K
  std::vector<std::uint8_t> converged;
  std::vector<double> grad_norm;
  std::vector<double> objective;
  std::vector<int> iterations;
  std::optional<double> box_R;
  Design design;

  std::size_t n() const { return design.n; }
  std::size_t K() const { return design.K; }
  /// mu_hat(x_i, q_grid[qi])
  double index(std::size_t i, std::size_t qi) const { return design.dot(i, beta[qi]); }
  /// mu_hat^(v)(x, q_grid[qi])
  double mu(std::span<const double> x, std::span<const int> v, std::size_t qi) const;
  std::size_t q_index(double q) const;  // exact grid membership, throws otherwise
  bool all_converged() const;
};

/// Minimizes E_n[rho(y_i, eta(p(x_i)' b); q)] for every q on the grid, warm-starting
/// each level from the previous one.
FitResult fit(const Dataset& data, std::shared_ptr<const Basis> basis, LossPtr loss, std::vector<double> q_grid,
              const SolverOptions& opts = {});

struct LevelSolve {
  std::vector<double> beta;
  bool converged = false;
  double grad_norm = INFINITY;
  double objective = INFINITY;
  int iterations = 0;
};

/// Exact minimizer of one cell's local objective. `local` holds the cell rows
/// with local column indices 0..width-1.
LevelSolve fit_per_cell(const Design& local, std::span<const double> y, const LossModel& loss, double q,
                        std::span<const double> warm, const SolverOptions& opts, std::optional<double> box_R);

/// Generic damped (projected) Newton / staged smoothing solve on a design.
LevelSolve solve_level(const Design& design, std::span<const double> y, const LossModel& loss, double q,
                       std::span<const double> warm, const SolverOptions& opts, std::optional<double> box_R);

/// 2 x sup-norm of a per-cell piecewise-constant pilot fit over the q-grid, floored at 1.
double auto_box_radius(const Dataset& data, const Basis& basis, const LossModel& loss, std::span<const double> q_grid,
                       const SolverOptions& opts = {});

/// Lower empirical quantile: the ceil(q N)-th order statistic.
double lower_quantile(std::vector<double> values, double q);

}  // namespace pbm
