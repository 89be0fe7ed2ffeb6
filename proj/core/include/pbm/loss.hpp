#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pbm {

enum class LinkKind { Identity, Logit, Cloglog, Custom };

/// Strictly monotone inverse link eta(theta) with two derivatives. `scale`
/// composes theta -> scale * theta in front of the named link.
class Link {
 public:
  using Fn = std::function<double(double)>;

  static Link identity(double scale = 1.0);
  static Link logit(double scale = 1.0);
  static Link cloglog(double scale = 1.0);
  /// `inverse` may be empty, in which case it is found by bisection.
  static Link custom(std::string name, Fn eta, Fn deta, Fn ddeta, double range_lo, double range_hi, Fn inverse = {});

  LinkKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double scale() const { return scale_; }
  double range_lo() const { return lo_; }
  double range_hi() const { return hi_; }

  double eta(double theta) const;
  double deta(double theta) const;
  double ddeta(double theta) const;
  /// theta with eta(theta) = value; value must lie in the open range.
  double inverse(double value) const;

 private:
  LinkKind kind_ = LinkKind::Identity;
  std::string name_ = "identity";
  double scale_ = 1.0;
  double lo_ = -INFINITY;
  double hi_ = INFINITY;
  Fn eta_;
  Fn deta_;
  Fn ddeta_;
  Fn inverse_;
};

Link link_from_key(const std::string& key);

/// Read-only view of a fitted process handed to plug-in hooks.
struct FitContext {
  std::span<const double> y;
  /// Fitted index mu_hat(x_i, q); q is a fit-grid level or one of the model's
  /// auxiliary levels.
  std::function<double(std::size_t i, double q)> index;
  std::size_t n() const { return y.size(); }
};

struct QDomain {
  double lo = 0.0;
  double hi = 0.0;
  bool singleton() const { return lo == hi; }
  bool contains(double q) const { return q >= lo - 1e-12 && q <= hi + 1e-12; }
};

/// Loss rho(y, eta; q), its a.e. eta-derivative psi, and the plug-in hooks used
/// to estimate the curvature weight Psi_1 and the score covariance S_{q, q~}.
class LossModel {
 public:
  explicit LossModel(Link link) : link_(std::move(link)) {}
  virtual ~LossModel() = default;

  virtual std::string key() const = 0;
  const Link& link() const { return link_; }
  const QDomain& q_domain() const { return q_domain_; }
  bool convex_in_theta() const { return convex_; }
  bool smooth() const { return smooth_; }
  double holder_alpha() const { return alpha_; }

  virtual double rho(double y, double eta, double q) const = 0;
  virtual double psi(double y, double eta, double q) const = 0;
  /// a.e. derivative of psi in eta (0 where psi is piecewise constant).
  virtual double dpsi(double y, double eta, double q) const = 0;
  /// eta values where psi is discontinuous or not differentiable.
  virtual std::vector<double> kinks(double y, double q) const { return {}; }

  /// Smoothed surrogates used by the staged solver for non-smooth losses.
  virtual double rho_smooth(double y, double eta, double q, double /*tau*/) const { return rho(y, eta, q); }
  virtual double psi_smooth(double y, double eta, double q, double /*tau*/) const { return psi(y, eta, q); }
  virtual double dpsi_smooth(double y, double eta, double q, double /*tau*/) const { return dpsi(y, eta, q); }

  virtual double psi1_hat(const FitContext& ctx, std::size_t i, double q) const = 0;
  virtual double s_hat(const FitContext& ctx, std::size_t i, double q, double qt) const = 0;
  /// Extra q levels whose fits the psi1/s hooks read for level q.
  virtual std::vector<double> auxiliary_levels(double /*q*/, std::size_t /*n*/) const { return {}; }

  /// Closed-form eta-space minimizer of a constant fit to `y`, when one exists.
  virtual std::optional<double> constant_fit(std::span<const double> /*y*/, double /*q*/) const { return std::nullopt; }

  /// Response whose link-inverse seeds the solver (1(y <= q) for distribution regression).
  virtual double working_response(double y, double /*q*/) const { return y; }
  virtual void validate_response(double /*y*/) const {}

  /// Composite theta-derivatives of rho(y, eta(theta); q).
  double theta_gradient(double y, double theta, double q) const {
    return psi(y, link_.eta(theta), q) * link_.deta(theta);
  }

 protected:
  Link link_;
  QDomain q_domain_;
  bool convex_ = false;
  bool smooth_ = true;
  double alpha_ = 1.0;
};

using LossPtr = std::shared_ptr<const LossModel>;

enum class DensityBandwidth { Constant, Bofinger };

struct QuantileOptions {
  double eps0 = 0.05;
  /// delta_q = constant * n^{-1/5}, times Bofinger's q-profile
  /// [4.5 phi(z)^4 / (2 z^2 + 1)^2]^{1/5}, z = Phi^{-1}(q), unless the rule is Constant.
  double density_constant = 1.0;
  DensityBandwidth bandwidth = DensityBandwidth::Constant;
  double aux_floor = 0.01;        // auxiliary levels stay inside [floor, 1 - floor]
  double density_min = 1e-3;
  double density_max = 1e3;
};

LossPtr quantile_loss(Link link = Link::identity(), QuantileOptions opts = {});
LossPtr distribution_loss(Link link = Link::logit(), double A = 1.0);
LossPtr lp_loss(double p, Link link = Link::identity());
LossPtr logistic_loss(Link link = Link::logit());
LossPtr huber_loss(double q_min = 1.345, double q_max = 1.345, Link link = Link::identity());
LossPtr tukey_loss(double q_min = 4.685, double q_max = 4.685, Link link = Link::identity());

/// quantile | distribution | lp:<p> | logistic | huber | tukey, with link identity|logit|cloglog
/// (empty link key selects the model default).
LossPtr loss_from_key(const std::string& key, const std::string& link_key = "");

}  // namespace pbm
