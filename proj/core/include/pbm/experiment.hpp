#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "pbm/dgp.hpp"
#include "pbm/inference.hpp"
#include "pbm/serialize.hpp"

namespace pbm {

/// Cells per dimension: "rate" round(c n^{1/(2m+d)}), "undersmooth"
/// round(c n^{1/(2m+d-0.5)}), or "fixed" count.
struct CellsRule {
  std::string rule = "rate";
  double constant = 3.0;
  std::size_t count = 8;

  std::size_t cells(std::size_t n, int order, std::size_t d) const;
};

/// Explicit points, or `count` equispaced points on [lo, hi] (defaults to the
/// loss q-domain).
struct QGridSpec {
  std::vector<double> points;
  std::optional<double> lo;
  std::optional<double> hi;
  int count = 25;

  std::vector<double> resolve(const LossModel& loss) const;
};

struct ExperimentConfig {
  std::string experiment = "coverage";  // coverage | rates | bahadur
  std::string dgp = "qr1d";
  std::size_t n = 2000;
  std::vector<std::size_t> n_ladder;
  LossSpec loss;
  std::string basis = "bspline";  // bspline | piecewise_poly
  int order = 2;
  CellsRule cells;
  QGridSpec q;
  MultiIndex v;
  std::string band = "index";  // index | level | level-transformed
  std::string path = "generic";  // generic | bridge
  double alpha = 0.05;
  int n_draws = 20000;
  int reps = 300;
  std::uint64_t seed = 1;
  int x_per_cell = 10;
  int bootstrap = 1000;
  double max_error_rate = 0.02;
  SolverOptions solver;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct RunReport {
  nlohmann::json config;      // resolved config, defaults included
  nlohmann::json reps;        // per-rep summaries
  nlohmann::json aggregate;
  double wall_seconds = 0.0;
  bool ok = true;             // false when too many reps failed

  nlohmann::json to_json() const;
};

/// Data, partition and basis for one replicate.
struct Replicate {
  Dataset data;
  std::shared_ptr<const Basis> basis;
};
Replicate make_replicate(const ExperimentConfig& c, const Dgp& dgp, std::size_t n, std::uint64_t rep);

RunReport run_coverage(const ExperimentConfig& c);
RunReport run_rates(const ExperimentConfig& c);
RunReport run_bahadur(const ExperimentConfig& c);
RunReport run_experiment(const ExperimentConfig& c);

/// Least-squares slope of log(y) on log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// Worker count from PBM_THREADS (0 or unset keeps the runtime default).
void apply_thread_env();

}  // namespace pbm
