#include "pbm/loss.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <string>

#include "pbm/error.hpp"
#include "pbm/solver.hpp"

namespace pbm {

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------- links

Link Link::identity(double scale) {
  Link l;
  l.kind_ = LinkKind::Identity;
  l.name_ = "identity";
  l.scale_ = scale;
  return l;
}

Link Link::logit(double scale) {
  Link l;
  l.kind_ = LinkKind::Logit;
  l.name_ = "logit";
  l.scale_ = scale;
  l.lo_ = 0.0;
  l.hi_ = 1.0;
  return l;
}

Link Link::cloglog(double scale) {
  Link l;
  l.kind_ = LinkKind::Cloglog;
  l.name_ = "cloglog";
  l.scale_ = scale;
  l.lo_ = 0.0;
  l.hi_ = 1.0;
  return l;
}

Link Link::custom(std::string name, Fn eta, Fn deta, Fn ddeta, double range_lo, double range_hi, Fn inverse) {
  require(eta && deta && ddeta, ErrorCode::InvalidArgument, "custom link needs eta and two derivatives");
  require(range_lo < range_hi, ErrorCode::InvalidArgument, "custom link range must be a nonempty interval");
  Link l;
  l.kind_ = LinkKind::Custom;
  l.name_ = std::move(name);
  l.lo_ = range_lo;
  l.hi_ = range_hi;
  l.eta_ = std::move(eta);
  l.deta_ = std::move(deta);
  l.ddeta_ = std::move(ddeta);
  l.inverse_ = std::move(inverse);
  return l;
}

double Link::eta(double theta) const {
  const double t = scale_ * theta;
  switch (kind_) {
    case LinkKind::Identity: return t;
    case LinkKind::Logit: return logistic(t);
    case LinkKind::Cloglog: return -std::expm1(-std::exp(t));
    case LinkKind::Custom: return eta_(t);
  }
  return t;
}

double Link::deta(double theta) const {
  const double t = scale_ * theta;
  switch (kind_) {
    case LinkKind::Identity: return scale_;
    case LinkKind::Logit: {
      const double e = logistic(t);
      return scale_ * e * (1.0 - e);
    }
    case LinkKind::Cloglog: return scale_ * std::exp(t - std::exp(t));
    case LinkKind::Custom: return scale_ * deta_(t);
  }
  return scale_;
}

double Link::ddeta(double theta) const {
  const double t = scale_ * theta;
  const double s2 = scale_ * scale_;
  switch (kind_) {
    case LinkKind::Identity: return 0.0;
    case LinkKind::Logit: {
      const double e = logistic(t);
      return s2 * e * (1.0 - e) * (1.0 - 2.0 * e);
    }
    case LinkKind::Cloglog: return s2 * std::exp(t - std::exp(t)) * (1.0 - std::exp(t));
    case LinkKind::Custom: return s2 * ddeta_(t);
  }
  return 0.0;
}

double Link::inverse(double value) const {
  require(value > lo_ && value < hi_, ErrorCode::ResponseOutOfRange,
          "value " + std::to_string(value) + " outside link range of " + name_);
  double t = 0.0;
  switch (kind_) {
    case LinkKind::Identity: t = value; break;
    case LinkKind::Logit: t = std::log(value / (1.0 - value)); break;
    case LinkKind::Cloglog: t = std::log(-std::log1p(-value)); break;
    case LinkKind::Custom: {
      if (inverse_) {
        t = inverse_(value);
        break;
      }
      double a = -1.0;
      double b = 1.0;
      const bool inc = deta_(0.0) > 0.0;
      auto below = [&](double x) { return inc ? eta_(x) < value : eta_(x) > value; };
      while (below(b) && b < 1e6) b *= 2.0;
      while (!below(a) && a > -1e6) a *= 2.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        (below(mid) ? a : b) = mid;
      }
      t = 0.5 * (a + b);
      break;
    }
  }
  return t / scale_;
}

Link link_from_key(const std::string& key) {
  if (key == "identity") return Link::identity();
  if (key == "logit") return Link::logit();
  if (key == "cloglog") return Link::cloglog();
  fail(ErrorCode::InvalidArgument, "unknown link '" + key + "' (identity|logit|cloglog)");
}

// ---------------------------------------------------------------- models

namespace {

class QuantileLoss final : public LossModel {
 public:
  QuantileLoss(Link link, QuantileOptions opts) : LossModel(std::move(link)), opts_(opts) {
    require(opts_.eps0 > 0.0 && opts_.eps0 < 0.5, ErrorCode::InvalidArgument, "eps0 must lie in (0, 0.5)");
    q_domain_ = {opts_.eps0, 1.0 - opts_.eps0};
    convex_ = link_.kind() == LinkKind::Identity;
    smooth_ = false;
    alpha_ = 1.0;
  }

  std::string key() const override { return "quantile"; }

  double rho(double y, double eta, double q) const override { return (q - (y < eta ? 1.0 : 0.0)) * (y - eta); }
  double psi(double y, double eta, double q) const override { return (y < eta ? 1.0 : 0.0) - q; }
  double dpsi(double, double, double) const override { return 0.0; }
  std::vector<double> kinks(double y, double) const override { return {y}; }

  // Moreau envelope of the check function with parameter tau.
  double rho_smooth(double y, double eta, double q, double tau) const override {
    const double r = y - eta;
    if (r >= q * tau) return q * r - 0.5 * q * q * tau;
    if (r <= -(1.0 - q) * tau) return (q - 1.0) * r - 0.5 * (1.0 - q) * (1.0 - q) * tau;
    return 0.5 * r * r / tau;
  }
  double psi_smooth(double y, double eta, double q, double tau) const override {
    const double r = y - eta;
    if (r >= q * tau) return -q;
    if (r <= -(1.0 - q) * tau) return 1.0 - q;
    return -r / tau;
  }
  double dpsi_smooth(double y, double eta, double q, double tau) const override {
    const double r = y - eta;
    return (r < q * tau && r > -(1.0 - q) * tau) ? 1.0 / tau : 0.0;
  }

  std::optional<double> constant_fit(std::span<const double> y, double q) const override {
    return lower_quantile(std::vector<double>(y.begin(), y.end()), q);
  }

  std::vector<double> auxiliary_levels(double q, std::size_t n) const override {
    double delta = opts_.density_constant * std::pow(static_cast<double>(n), -0.2);
    if (opts_.bandwidth == DensityBandwidth::Bofinger) {
      const boost::math::normal nd;
      const double z = boost::math::quantile(nd, q);
      const double phi = boost::math::pdf(nd, z);
      delta *= std::pow(4.5 * std::pow(phi, 4) / std::pow(2.0 * z * z + 1.0, 2), 0.2);
    }
    return {std::max(q - delta, opts_.aux_floor), std::min(q + delta, 1.0 - opts_.aux_floor)};
  }

  // Difference-quotient conditional density at the fitted quantile.
  double psi1_hat(const FitContext& ctx, std::size_t i, double q) const override {
    const auto lv = auxiliary_levels(q, ctx.n());
    const double dq = link_.eta(ctx.index(i, lv[1])) - link_.eta(ctx.index(i, lv[0]));
    const double f = dq > 0.0 ? (lv[1] - lv[0]) / dq : opts_.density_max;
    return std::clamp(f, opts_.density_min, opts_.density_max);
  }

  double s_hat(const FitContext&, std::size_t, double q, double qt) const override {
    return std::min(q, qt) - q * qt;
  }

 private:
  QuantileOptions opts_;
};

class DistributionLoss final : public LossModel {
 public:
  DistributionLoss(Link link, double A) : LossModel(std::move(link)) {
    require(link_.range_lo() >= 0.0 && link_.range_hi() <= 1.0, ErrorCode::LinkRangeInvalid,
            "distribution regression needs a link with range inside (0, 1), got " + link_.name());
    require(A > 0.0, ErrorCode::InvalidArgument, "threshold range A must be positive");
    q_domain_ = {-A, A};
    convex_ = link_.kind() == LinkKind::Identity;
    smooth_ = true;
    alpha_ = 1.0;
  }

  std::string key() const override { return "distribution"; }

  double rho(double y, double eta, double q) const override {
    const double r = (y <= q ? 1.0 : 0.0) - eta;
    return r * r;
  }
  double psi(double y, double eta, double q) const override { return -2.0 * ((y <= q ? 1.0 : 0.0) - eta); }
  double dpsi(double, double, double) const override { return 2.0; }

  double psi1_hat(const FitContext&, std::size_t, double) const override { return 2.0; }
  double s_hat(const FitContext& ctx, std::size_t i, double q, double qt) const override {
    const double lo = link_.eta(ctx.index(i, std::min(q, qt)));
    const double hi = link_.eta(ctx.index(i, std::max(q, qt)));
    return 4.0 * lo * (1.0 - hi);
  }
  double working_response(double y, double q) const override { return y <= q ? 1.0 : 0.0; }

 private:
};

class LpLoss final : public LossModel {
 public:
  LpLoss(double p, Link link) : LossModel(std::move(link)), p_(p) {
    require(p > 1.0 && p <= 2.0, ErrorCode::InvalidP, "p must lie in (1, 2], got " + std::to_string(p));
    q_domain_ = {0.0, 0.0};
    convex_ = link_.kind() == LinkKind::Identity;
    smooth_ = true;
    alpha_ = p - 1.0;
  }

  std::string key() const override {
    std::string s = std::to_string(p_);
    s.erase(s.find_last_not_of('0') + 1);
    if (s.back() == '.') s.pop_back();
    return "lp:" + s;
  }

  double rho(double y, double eta, double) const override { return std::pow(std::abs(y - eta), p_); }
  double psi(double y, double eta, double) const override {
    return p_ * std::pow(std::abs(y - eta), p_ - 1.0) * sgn(eta - y);
  }
  double dpsi(double y, double eta, double) const override {
    if (p_ == 2.0) return 2.0;
    return p_ * (p_ - 1.0) * std::pow(std::max(std::abs(y - eta), kMinResidual), p_ - 2.0);
  }
  std::vector<double> kinks(double y, double) const override {
    if (p_ == 2.0) return {};
    return {y};
  }

  // Psi_1 = p (p - 1) E|Y - eta|^{p-2}; the residual plug-in drops the sign factor.
  double psi1_hat(const FitContext& ctx, std::size_t i, double q) const override {
    const double e = ctx.y[i] - link_.eta(ctx.index(i, q));
    return dpsi(ctx.y[i], ctx.y[i] - e, q);
  }
  double s_hat(const FitContext& ctx, std::size_t i, double q, double) const override {
    const double v = psi(ctx.y[i], link_.eta(ctx.index(i, q)), q);
    return v * v;
  }

 private:
  static constexpr double kMinResidual = 1e-8;
  double p_;
};

class LogisticLoss final : public LossModel {
 public:
  explicit LogisticLoss(Link link) : LossModel(std::move(link)) {
    require(link_.range_lo() >= 0.0 && link_.range_hi() <= 1.0, ErrorCode::LinkRangeInvalid,
            "logistic loss needs a link with range inside (0, 1)");
    q_domain_ = {0.0, 0.0};
    convex_ = link_.kind() == LinkKind::Logit;
    smooth_ = true;
    alpha_ = 1.0;
  }

  std::string key() const override { return "logistic"; }

  double rho(double y, double eta, double) const override {
    const double e = clampe(eta);
    return -y * std::log(e) - (1.0 - y) * std::log1p(-e);
  }
  double psi(double y, double eta, double) const override {
    const double e = clampe(eta);
    return (e - y) / (e * (1.0 - e));
  }
  double dpsi(double y, double eta, double) const override {
    const double e = clampe(eta);
    return y / (e * e) + (1.0 - y) / ((1.0 - e) * (1.0 - e));
  }

  // Expected information: Psi_1 eta'^2 = eta (1 - eta) under the logit link.
  double psi1_hat(const FitContext& ctx, std::size_t i, double q) const override {
    const double e = clampe(link_.eta(ctx.index(i, q)));
    return 1.0 / (e * (1.0 - e));
  }
  double s_hat(const FitContext& ctx, std::size_t i, double q, double) const override {
    const double v = psi(ctx.y[i], link_.eta(ctx.index(i, q)), q);
    return v * v;
  }
  void validate_response(double y) const override {
    require(y >= 0.0 && y <= 1.0, ErrorCode::ResponseOutOfRange,
            "logistic responses must lie in [0, 1], got " + std::to_string(y));
  }

 private:
  static double clampe(double e) { return std::clamp(e, 1e-15, 1.0 - 1e-15); }
};

class HuberLoss final : public LossModel {
 public:
  HuberLoss(double q_min, double q_max, Link link) : LossModel(std::move(link)) {
    require(q_min > 0.0 && q_max >= q_min, ErrorCode::NonPositiveTuning, "Huber tuning range must be positive");
    q_domain_ = {q_min, q_max};
    convex_ = link_.kind() == LinkKind::Identity;
    smooth_ = true;
    alpha_ = 1.0;
  }

  std::string key() const override { return "huber"; }

  double rho(double y, double eta, double q) const override {
    const double r = std::abs(y - eta);
    return r <= q ? r * r : q * (2.0 * r - q);
  }
  double psi(double y, double eta, double q) const override {
    const double r = y - eta;
    return std::abs(r) <= q ? 2.0 * (eta - y) : 2.0 * q * sgn(eta - y);
  }
  double dpsi(double y, double eta, double q) const override { return std::abs(y - eta) <= q ? 2.0 : 0.0; }
  std::vector<double> kinks(double y, double q) const override { return {y - q, y + q}; }

  double psi1_hat(const FitContext& ctx, std::size_t i, double q) const override {
    return dpsi(ctx.y[i], link_.eta(ctx.index(i, q)), q);
  }
  double s_hat(const FitContext& ctx, std::size_t i, double q, double qt) const override {
    return psi(ctx.y[i], link_.eta(ctx.index(i, q)), q) * psi(ctx.y[i], link_.eta(ctx.index(i, qt)), qt);
  }
};

class TukeyLoss final : public LossModel {
 public:
  TukeyLoss(double q_min, double q_max, Link link) : LossModel(std::move(link)) {
    require(q_min > 0.0 && q_max >= q_min, ErrorCode::NonPositiveTuning, "Tukey tuning range must be positive");
    q_domain_ = {q_min, q_max};
    convex_ = false;
    smooth_ = true;
    alpha_ = 1.0;
  }

  std::string key() const override { return "tukey"; }

  double rho(double y, double eta, double q) const override {
    const double r = y - eta;
    if (std::abs(r) > q) return q * q;
    const double u = 1.0 - r * r / (q * q);
    return q * q * (1.0 - u * u * u);
  }
  double psi(double y, double eta, double q) const override {
    const double r = y - eta;
    if (std::abs(r) > q) return 0.0;
    const double u = 1.0 - r * r / (q * q);
    return 6.0 * (eta - y) * u * u;
  }
  double dpsi(double y, double eta, double q) const override {
    const double r = y - eta;
    if (std::abs(r) > q) return 0.0;
    const double u = 1.0 - r * r / (q * q);
    return 6.0 * u * u - 24.0 * r * r * u / (q * q);
  }
  std::vector<double> kinks(double y, double q) const override { return {y - q, y + q}; }

  double psi1_hat(const FitContext& ctx, std::size_t i, double q) const override {
    return dpsi(ctx.y[i], link_.eta(ctx.index(i, q)), q);
  }
  double s_hat(const FitContext& ctx, std::size_t i, double q, double qt) const override {
    return psi(ctx.y[i], link_.eta(ctx.index(i, q)), q) * psi(ctx.y[i], link_.eta(ctx.index(i, qt)), qt);
  }
};

}  // namespace

LossPtr quantile_loss(Link link, QuantileOptions opts) { return std::make_shared<QuantileLoss>(std::move(link), opts); }
LossPtr distribution_loss(Link link, double A) { return std::make_shared<DistributionLoss>(std::move(link), A); }
LossPtr lp_loss(double p, Link link) { return std::make_shared<LpLoss>(p, std::move(link)); }
LossPtr logistic_loss(Link link) { return std::make_shared<LogisticLoss>(std::move(link)); }
LossPtr huber_loss(double q_min, double q_max, Link link) {
  return std::make_shared<HuberLoss>(q_min, q_max, std::move(link));
}
LossPtr tukey_loss(double q_min, double q_max, Link link) {
  return std::make_shared<TukeyLoss>(q_min, q_max, std::move(link));
}

LossPtr loss_from_key(const std::string& key, const std::string& link_key) {
  auto link_or = [&](const char* dflt) { return link_from_key(link_key.empty() ? dflt : link_key); };
  if (key == "quantile") return quantile_loss(link_or("identity"));
  if (key == "distribution") return distribution_loss(link_or("logit"));
  if (key == "logistic") return logistic_loss(link_or("logit"));
  if (key == "huber") return huber_loss(1.345, 1.345, link_or("identity"));
  if (key == "tukey") return tukey_loss(4.685, 4.685, link_or("identity"));
  if (key.rfind("lp:", 0) == 0) {
    double p = 0.0;
    try {
      p = std::stod(key.substr(3));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "malformed lp key '" + key + "'");
    }
    return lp_loss(p, link_or("identity"));
  }
  fail(ErrorCode::InvalidArgument, "unknown loss '" + key + "' (quantile|distribution|lp:<p>|logistic|huber|tukey)");
}

}  // namespace pbm
