#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "pbm/loss.hpp"
#include "pbm/partition.hpp"
#include "pbm/rng.hpp"
#include "pbm/solver.hpp"

namespace pbm {

/// Simulation designs with closed-form conditional laws. All draw x uniform on
/// [0,1]^d, so the design density is bounded away from zero, and every location
/// function is smooth with bounded derivatives.
///   qr1d    y = sin(2 pi x) + 0.5 (1 + 0.2 x) t_3
///   dr1d    y = sin(2 pi x) + 0.5 (1 + 0.2 x) N(0,1)
///   lp1d    y = sin(2 pi x) + 0.5 t_3
///   logit1d P(y = 1 | x) = logistic(sin(2 pi x))
///   logit2d P(y = 1 | x) = logistic(sin(2 pi x1) + 0.5 cos(2 pi x2))
class Dgp {
 public:
  virtual ~Dgp() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  Domain domain() const;
  virtual bool binary() const { return false; }

  /// Location index sin(2 pi x) (+ ...); for binary designs the log-odds.
  virtual double location(std::span<const double> x) const = 0;
  virtual double cdf(double y, std::span<const double> x) const = 0;
  /// Conditional density (continuous designs only).
  virtual double pdf(double y, std::span<const double> x) const = 0;
  virtual double quantile(double q, std::span<const double> x) const = 0;
  virtual double mean(std::span<const double> x) const = 0;

  /// Counter-based: the same (seed, rep) always yields the same sample.
  Dataset generate(std::size_t n, std::uint64_t seed, std::uint64_t rep) const;

 protected:
  virtual double draw_y(std::span<const double> x, CounterRng& rng) const = 0;
};

std::unique_ptr<Dgp> make_dgp(const std::string& name);

/// mu_0^(v)(x, q) in index space for a built-in loss on a built-in design.
double truth(const Dgp& dgp, const LossModel& loss, std::span<const double> x, double q, std::span<const int> v = {});

/// Conditional expected score Psi(x, eta; q) = E[psi(y, eta; q) | x] and its
/// eta-derivative Psi_1, where available in closed form.
struct ConditionalScore {
  double psi = 0.0;
  double psi1 = 0.0;
};
ConditionalScore conditional_score(const Dgp& dgp, const LossModel& loss, std::span<const double> x, double eta,
                                   double q);

/// beta*(q) solving E_n[p eta'(p'b) Psi(x_i, eta(p'b); q)] = 0 by Newton, started at `start`.
std::vector<double> pseudo_truth(const Dgp& dgp, const Dataset& data, const FitResult& fit, std::size_t qi,
                                 std::vector<double> start, int max_iter = 100, double tol = 1e-13);

}  // namespace pbm
