#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pbm/sandwich.hpp"

namespace pbm {

/// Evaluation points (x, q, v). Point index is qj * x_points.size() + xi.
struct EvalGrid {
  PointList x_points;
  std::vector<double> q_points;
  MultiIndex v;

  std::size_t nx() const { return x_points.size(); }
  std::size_t nq() const { return q_points.size(); }
  std::size_t size() const { return nx() * nq(); }
  std::size_t point(std::size_t xi, std::size_t qj) const { return qj * nx() + xi; }
};

/// `per_cell` equispaced interior points per cell and dimension (tensor grid).
PointList cell_grid(const Partition& partition, int per_cell);
EvalGrid make_grid(const Partition& partition, int per_cell, std::vector<double> q_points, MultiIndex v = {});

enum class SimPath { Generic, BrownianBridge };
enum class LevelMode { Delta, Transformed };

struct SimOptions {
  double alpha = 0.05;
  int n_draws = 20000;
  std::uint64_t seed = 1;
  SimPath path = SimPath::Generic;
  bool keep_draws = true;
};

struct SupStats {
  double mean = 0.0;
  double sd = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
  double q95 = 0.0;
  double q99 = 0.0;
};

struct BandResult {
  EvalGrid grid;
  std::vector<double> mu_hat;     // band center
  std::vector<double> omega_hat;  // Omega_hat (summed for treatment effects)
  std::vector<double> se;         // halfwidth / crit
  std::vector<double> lo;
  std::vector<double> hi;
  double crit = 0.0;
  double alpha = 0.05;
  int n_draws = 0;
  std::uint64_t seed = 0;
  SupStats sup_stats;
  std::vector<double> sup_draws;

  /// Every truth value inside [lo, hi].
  bool covers(std::span<const double> truth) const;
};

/// Positions of the grid levels on the fit grid (exact membership).
std::vector<std::size_t> grid_levels(const FitResult& fit, const EvalGrid& grid);

/// T(x, q) = (mu_hat^(v) - mu0^(v)) / sqrt(Omega_hat / n); without mu0 the
/// studentized estimate mu_hat / sqrt(Omega_hat / n).
std::vector<double> t_process(const SandwichSet& sand, const EvalGrid& grid,
                              std::optional<std::span<const double>> mu0 = std::nullopt);

/// Draws of Z_hat at every grid point: n_draws x grid.size().
Eigen::MatrixXd draw_process(const SandwichSet& sand, const EvalGrid& grid, int n_draws, std::uint64_t seed,
                             SimPath path = SimPath::Generic);

/// ceil((1 - alpha) N)-th order statistic of the sup draws.
double critical_value(std::span<const double> sup_draws, double alpha);
SupStats summarize(std::span<const double> sup_draws);

BandResult simulate_band(const SandwichSet& sand, const EvalGrid& grid, const SimOptions& opts);
BandResult simulate_band_brownian_bridge(const SandwichSet& sand, const EvalGrid& grid, SimOptions opts);
BandResult level_band(const SandwichSet& sand, const EvalGrid& grid, const SimOptions& opts,
                      LevelMode mode = LevelMode::Delta);
/// Grid v must be the unit vector e_k.
BandResult marginal_effect_band(const SandwichSet& sand, const EvalGrid& grid, const SimOptions& opts);
/// Band for eta(mu_2) - eta(mu_1) from fits on disjoint samples.
BandResult cte_band(const SandwichSet& sand1, const SandwichSet& sand2, const EvalGrid& grid, const SimOptions& opts);

}  // namespace pbm
