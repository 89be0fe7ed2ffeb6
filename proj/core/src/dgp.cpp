#include "pbm/dgp.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numbers>

#include "pbm/banded.hpp"
#include "pbm/error.hpp"
#include "pbm/rng.hpp"

namespace pbm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::uint64_t kDataStream = 0xda7a;

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double student3(CounterRng& rng) {
  const double z = rng.normal();
  const double a = rng.normal();
  const double b = rng.normal();
  const double c = rng.normal();
  return z / std::sqrt((a * a + b * b + c * c) / 3.0);
}

/// y = sin(2 pi x) + scale(x) * e with e symmetric about zero.
class LocationScale : public Dgp {
 public:
  LocationScale(std::string name, double slope, bool gaussian) : name_(std::move(name)), slope_(slope), gaussian_(gaussian) {}

  std::string name() const override { return name_; }
  std::size_t dim() const override { return 1; }
  double location(std::span<const double> x) const override { return std::sin(kTwoPi * x[0]); }
  double scale(std::span<const double> x) const { return 0.5 * (1.0 + slope_ * x[0]); }

  double cdf(double y, std::span<const double> x) const override {
    const double z = (y - location(x)) / scale(x);
    return gaussian_ ? boost::math::cdf(normal_, z) : boost::math::cdf(t3_, z);
  }
  double pdf(double y, std::span<const double> x) const override {
    const double s = scale(x);
    const double z = (y - location(x)) / s;
    return (gaussian_ ? boost::math::pdf(normal_, z) : boost::math::pdf(t3_, z)) / s;
  }
  double quantile(double q, std::span<const double> x) const override {
    const double z = gaussian_ ? boost::math::quantile(normal_, q) : boost::math::quantile(t3_, q);
    return location(x) + scale(x) * z;
  }
  double mean(std::span<const double> x) const override { return location(x); }

 protected:
  double draw_y(std::span<const double> x, CounterRng& rng) const override {
    return location(x) + scale(x) * (gaussian_ ? rng.normal() : student3(rng));
  }

 private:
  std::string name_;
  double slope_;
  bool gaussian_;
  boost::math::students_t t3_{3.0};
  boost::math::normal normal_{};
};

class Bernoulli : public Dgp {
 public:
  explicit Bernoulli(std::size_t d) : d_(d) {}

  std::string name() const override { return d_ == 1 ? "logit1d" : "logit2d"; }
  std::size_t dim() const override { return d_; }
  bool binary() const override { return true; }
  double location(std::span<const double> x) const override {
    double t = std::sin(kTwoPi * x[0]);
    if (d_ > 1) t += 0.5 * std::cos(kTwoPi * x[1]);
    return t;
  }
  double mean(std::span<const double> x) const override { return logistic(location(x)); }
  double cdf(double y, std::span<const double> x) const override {
    if (y < 0.0) return 0.0;
    if (y < 1.0) return 1.0 - mean(x);
    return 1.0;
  }
  double pdf(double, std::span<const double>) const override {
    fail(ErrorCode::InvalidArgument, "binary designs have no conditional density");
  }
  double quantile(double q, std::span<const double> x) const override { return q <= 1.0 - mean(x) ? 0.0 : 1.0; }

 protected:
  double draw_y(std::span<const double> x, CounterRng& rng) const override {
    return rng.uniform() < mean(x) ? 1.0 : 0.0;
  }

 private:
  std::size_t d_;
};

bool key_is(const LossModel& loss, const char* prefix) { return loss.key().rfind(prefix, 0) == 0; }

double lp_power(const LossModel& loss) { return std::stod(loss.key().substr(3)); }

bool symmetric_noise(const Dgp& dgp) { return !dgp.binary(); }

}  // namespace

Domain Dgp::domain() const {
  return Domain{std::vector<double>(dim(), 0.0), std::vector<double>(dim(), 1.0)};
}

Dataset Dgp::generate(std::size_t n, std::uint64_t seed, std::uint64_t rep) const {
  require(n >= 1, ErrorCode::InvalidArgument, "n must be positive");
  Dataset data;
  data.d = dim();
  data.X.resize(n * data.d);
  data.y.resize(n);
  CounterRng rng(seed, stream_id(kDataStream, rep));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < data.d; ++j) data.X[i * data.d + j] = rng.uniform();
    data.y[i] = draw_y(data.row(i), rng);
  }
  return data;
}

std::unique_ptr<Dgp> make_dgp(const std::string& name) {
  if (name == "qr1d") return std::make_unique<LocationScale>("qr1d", 0.2, false);
  if (name == "dr1d") return std::make_unique<LocationScale>("dr1d", 0.2, true);
  if (name == "lp1d") return std::make_unique<LocationScale>("lp1d", 0.0, false);
  if (name == "logit1d") return std::make_unique<Bernoulli>(1);
  if (name == "logit2d") return std::make_unique<Bernoulli>(2);
  fail(ErrorCode::InvalidArgument, "unknown design '" + name + "' (qr1d|dr1d|lp1d|logit1d|logit2d)");
}

namespace {

double truth_level(const Dgp& dgp, const LossModel& loss, std::span<const double> x, double q) {
  const Link& link = loss.link();
  if (key_is(loss, "quantile")) {
    require(!dgp.binary(), ErrorCode::InvalidArgument, "quantile truth needs a continuous design");
    return link.inverse(dgp.quantile(q, x));
  }
  if (key_is(loss, "distribution")) return link.inverse(dgp.cdf(q, x));
  if (key_is(loss, "logistic")) return link.inverse(dgp.mean(x));
  if (key_is(loss, "lp:")) {
    require(lp_power(loss) == 2.0 || symmetric_noise(dgp), ErrorCode::InvalidArgument,
            "Lp truth with p < 2 needs symmetric noise");
    return link.inverse(dgp.mean(x));
  }
  if (key_is(loss, "huber") || key_is(loss, "tukey")) {
    require(symmetric_noise(dgp), ErrorCode::InvalidArgument, "robust-loss truth needs symmetric noise");
    return link.inverse(dgp.mean(x));
  }
  fail(ErrorCode::InvalidArgument, "no truth for loss '" + loss.key() + "'");
}

}  // namespace

double truth(const Dgp& dgp, const LossModel& loss, std::span<const double> x, double q, std::span<const int> v) {
  const int order = v.empty() ? 0 : total_order(v);
  if (order == 0) return truth_level(dgp, loss, x, q);
  require(order == 1, ErrorCode::InvalidArgument, "truth derivatives are available for |v| <= 1");
  std::size_t k = 0;
  while (v[k] == 0) ++k;
  const double h = 1e-5;
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> b(x.begin(), x.end());
  a[k] = x[k] + h;
  b[k] = x[k] - h;
  return (truth_level(dgp, loss, a, q) - truth_level(dgp, loss, b, q)) / (2.0 * h);
}

ConditionalScore conditional_score(const Dgp& dgp, const LossModel& loss, std::span<const double> x, double eta,
                                   double q) {
  if (key_is(loss, "quantile")) return {dgp.cdf(eta, x) - q, dgp.pdf(eta, x)};
  if (key_is(loss, "distribution")) return {-2.0 * (dgp.cdf(q, x) - eta), 2.0};
  if (key_is(loss, "lp:") && lp_power(loss) == 2.0) return {2.0 * (eta - dgp.mean(x)), 2.0};
  if (key_is(loss, "logistic")) {
    const double m = dgp.mean(x);
    const double v = eta * (1.0 - eta);
    return {(eta - m) / v, (v - (eta - m) * (1.0 - 2.0 * eta)) / (v * v)};
  }
  fail(ErrorCode::InvalidArgument, "no closed-form conditional score for loss '" + loss.key() + "'");
}

std::vector<double> pseudo_truth(const Dgp& dgp, const Dataset& data, const FitResult& fit, std::size_t qi,
                                 std::vector<double> beta, int max_iter, double tol) {
  const Design& D = fit.design;
  const LossModel& loss = *fit.loss;
  const Link& link = loss.link();
  const double q = fit.q_grid[qi];
  const double inv_n = 1.0 / static_cast<double>(D.n);
  std::vector<double> g(D.K);
  const auto diag = D.gram_diagonal();
  for (int it = 0; it < max_iter; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    BandedMatrix H(D.K, fit.basis->bandwidth());
    for (std::size_t i = 0; i < D.n; ++i) {
      const double th = D.dot(i, beta);
      const double eta = link.eta(th);
      const double de = link.deta(th);
      const auto cs = conditional_score(dgp, loss, data.row(i), eta, q);
      const double gi = cs.psi * de * inv_n;
      const double w = (cs.psi1 * de * de + cs.psi * link.ddeta(th)) * inv_n;
      const auto ix = D.indices(i);
      const auto v = D.values(i);
      for (std::size_t a = 0; a < D.width; ++a) {
        g[ix[a]] += gi * v[a];
        for (std::size_t c = 0; c < D.width; ++c)
          if (ix[c] <= ix[a]) H.lower(ix[a], ix[c]) += w * v[a] * v[c];
      }
    }
    double sup = 0.0;
    for (std::size_t k = 0; k < D.K; ++k) sup = std::max(sup, std::abs(g[k]) / std::max(diag[k], 1e-300));
    if (sup <= tol) break;
    auto chol = BandedCholesky::factor(H);
    require(chol.has_value(), ErrorCode::NotConverged, "pseudo-truth Hessian is not positive definite");
    chol->solve(g);
    for (std::size_t k = 0; k < D.K; ++k) beta[k] -= g[k];
  }
  return beta;
}

}  // namespace pbm
