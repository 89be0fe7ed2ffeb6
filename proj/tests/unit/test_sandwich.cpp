#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "pbm/sandwich.hpp"

using namespace pbm;

namespace {

std::shared_ptr<const FitResult> fit_ptr(const Dataset& data, std::shared_ptr<const Basis> basis, LossPtr loss,
                                         std::vector<double> grid) {
  return std::make_shared<const FitResult>(fit(data, basis, loss, std::move(grid)));
}

Eigen::MatrixXd dense_design(const FitResult& f) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(f.n(), f.K());
  for (std::size_t i = 0; i < f.n(); ++i) {
    const auto ix = f.design.indices(i);
    const auto v = f.design.values(i);
    for (std::size_t a = 0; a < ix.size(); ++a) P(i, ix[a]) += v[a];
  }
  return P;
}

Dataset balanced_binary(std::size_t n) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.X.push_back((i + 0.5) / n);
    d.y.push_back(i % 2 ? 1.0 : 0.0);
  }
  return d;
}

}  // namespace

TEST_CASE("single-cell logistic sandwich") {
  const auto data = balanced_binary(40);
  const auto f = fit_ptr(data, testing::make_basis({1}, BasisKind::PiecewisePoly, 1), logistic_loss(), {0.0});
  const SandwichSet s(f, data);
  CHECK(s.Qhat(0)(0, 0) == doctest::Approx(0.25));
  CHECK(s.Sigmahat(0, 0)(0, 0) == doctest::Approx(0.25));
  const double x = 0.3;
  CHECK(s.omega({&x, 1}, {}, 0) == doctest::Approx(0.25 / 0.0625));
  const int v1 = 1;
  CHECK_CODE(s.omega({&x, 1}, {&v1, 1}, 0), ErrorCode::DerivativeOrderTooHigh);
}

TEST_CASE("plug-in matrices match their closed forms") {
  const auto data = testing::sine_data(600, 1, 0.5, 101);
  const auto basis = testing::make_basis({6}, BasisKind::BSpline, 2);

  SUBCASE("quantile") {
    const std::vector<double> grid{0.25, 0.5, 0.75};
    const auto f = fit_ptr(data, basis, quantile_loss(), grid);
    const SandwichSet s(f, data);
    const Eigen::MatrixXd P = dense_design(*f);
    const Eigen::MatrixXd G = P.transpose() * P / data.n();
    CHECK((s.gram().to_dense() - G).cwiseAbs().maxCoeff() < 1e-13);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) {
        const double sq = std::min(grid[a], grid[b]) - grid[a] * grid[b];
        CHECK((s.Sigmahat(a, b).to_dense() - sq * G).cwiseAbs().maxCoeff() < 1e-13);
        CHECK((s.Sigmahat(a, b).to_dense() - s.Sigmahat(b, a).to_dense().transpose()).norm() == 0.0);
      }
    CHECK(s.Sigmahat(0, 2)(0, 0) / s.gram()(0, 0) == doctest::Approx(0.0625));
  }

  SUBCASE("distribution") {
    const auto loss = distribution_loss(Link::logit(), 2.0);
    const auto f = fit_ptr(data, basis, loss, {0.0});
    const SandwichSet s(f, data);
    const auto ctx = s.context();
    const Eigen::MatrixXd P = dense_design(*f);
    Eigen::VectorXd w(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) {
      const double d = loss->link().deta(f->index(i, 0));
      w[i] = 2.0 * d * d;
    }
    const Eigen::MatrixXd Q = P.transpose() * w.asDiagonal() * P / data.n();
    CHECK((compute_Qhat(*f, ctx, 0).to_dense() - Q).cwiseAbs().maxCoeff() < 1e-13);
  }

  SUBCASE("logistic") {
    const auto ld = testing::logit_data(600, 0.0, 1.0, 102);
    const auto f = fit_ptr(ld, basis, logistic_loss(), {0.0});
    const SandwichSet s(f, ld);
    const Eigen::MatrixXd P = dense_design(*f);
    Eigen::VectorXd wq(ld.n()), ws(ld.n());
    for (std::size_t i = 0; i < ld.n(); ++i) {
      const double eta = 1.0 / (1.0 + std::exp(-f->index(i, 0)));
      wq[i] = eta * (1 - eta);
      ws[i] = (ld.y[i] - eta) * (ld.y[i] - eta);
    }
    const Eigen::MatrixXd Q = P.transpose() * wq.asDiagonal() * P / ld.n();
    const Eigen::MatrixXd S = P.transpose() * ws.asDiagonal() * P / ld.n();
    CHECK((compute_Qhat(*f, s.context(), 0).to_dense() - Q).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((s.Sigmahat(0, 0).to_dense() - S).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("piecewise-constant quantile variance has a closed form") {
  const auto data = testing::sine_data(800, 1, 0.5, 111);
  const auto basis = testing::make_basis({5}, BasisKind::PiecewisePoly, 1);
  const double q = 0.5;
  const auto f = fit_ptr(data, basis, quantile_loss(), {0.3, q, 0.7});
  const SandwichSet s(f, data);
  CHECK(s.Qhat(1).bandwidth() == 0);
  for (double x : {0.1, 0.5, 0.93}) {
    const std::size_t c = basis->partition().locate({&x, 1});
    double w = 0.0;
    for (double xi : data.X) w += basis->partition().locate({&xi, 1}) == c;
    w /= data.n();
    CHECK(s.Sigmahat(1, 1)(c, c) == doctest::Approx(q * (1 - q) * w).epsilon(1e-12));
    const double fhat = s.Qhat(1)(c, c) / w;
    CHECK(s.omega({&x, 1}, {}, 1) == doctest::Approx(q * (1 - q) / (w * fhat * fhat)).epsilon(1e-10));
  }
}

TEST_CASE("Omega agrees with the dense quadratic form") {
  const auto data = testing::sine_data(1000, 2, 0.5, 121);
  const auto basis = testing::make_basis({5, 4}, BasisKind::BSpline, 2);
  const auto f = fit_ptr(data, basis, quantile_loss(), {0.4, 0.6});
  const SandwichSet s(f, data);
  CHECK(s.K() <= 64u);
  for (std::size_t qi = 0; qi < 2; ++qi) {
    const Eigen::MatrixXd Q = s.Qhat(qi).to_dense();
    const Eigen::MatrixXd Qi = Q.inverse();
    const Eigen::MatrixXd S = s.Sigmahat(qi, qi).to_dense();
    for (const std::vector<double>& x : {std::vector<double>{0.2, 0.3}, {0.55, 0.9}, {1.0, 0.0}}) {
      const auto p = basis->eval(x);
      Eigen::VectorXd pd = Eigen::VectorXd::Zero(s.K());
      for (std::size_t a = 0; a < p.size(); ++a) pd[p.indices[a]] = p.values[a];
      const double ref = pd.dot(Qi * S * Qi * pd);
      CHECK(s.omega(x, {}, qi) == doctest::Approx(ref).epsilon(1e-9));
      const auto u = s.solve_q(qi, p);
      const Eigen::VectorXd ud = Qi * pd;
      for (std::size_t k = 0; k < s.K(); ++k) CHECK(std::abs(u[k] - ud[k]) <= 1e-9 * ud.cwiseAbs().maxCoeff());
      CHECK(s.omega(x, {}, qi) > 0.0);
    }
    CHECK(s.qhat_min_eigenvalue(qi) > 0.0);
  }
}

TEST_CASE("Bahadur linearization") {
  const auto data = testing::sine_data(500, 1, 0.5, 131);
  const auto basis = testing::make_basis({6}, BasisKind::BSpline, 3);
  const auto f = fit_ptr(data, basis, lp_loss(2.0), {0.0});
  const SandwichSet s(f, data);
  const PointList xs{{0.05}, {0.33}, {0.5}, {0.77}, {1.0}};

  // scores vanish when the reference index interpolates y
  BahadurReference zero{[&](std::size_t i) { return data.y[i]; }, [](std::size_t) { return 2.0; }};
  for (double L : bahadur_linearization(*f, data, xs, {}, 0, zero)) CHECK(L == 0.0);

  // squared loss: mu_hat - p' beta_star = L for any beta_star
  std::vector<double> bstar(basis->size());
  for (std::size_t k = 0; k < bstar.size(); ++k) bstar[k] = std::cos(1.0 + k);
  BahadurReference ref{[&](std::size_t i) { return f->design.dot(i, bstar); }, [](std::size_t) { return 2.0; }};
  const auto L = bahadur_linearization(*f, data, xs, {}, 0, ref);
  const auto Lplug = bahadur_linearization(s, data, xs, {}, 0, &ref);
  for (std::size_t a = 0; a < xs.size(); ++a) {
    const double diff = f->mu(xs[a], {}, 0) - basis->eval(xs[a]).dot(bstar);
    CHECK(std::abs(L[a] - diff) <= 1e-9);
    CHECK(std::abs(Lplug[a] - diff) <= 1e-8);
  }
  // the fitted scores satisfy the first-order condition, so L vanishes at beta_hat
  for (double v : bahadur_linearization(s, data, xs, {}, 0)) CHECK(std::abs(v) <= 1e-9);
}

TEST_CASE("single-cell quantile Bahadur term") {
  const auto data = testing::sine_data(300, 1, 1.0, 141);
  const auto f = fit_ptr(data, testing::make_basis({1}, BasisKind::PiecewisePoly, 1), quantile_loss(), {0.5});
  const SandwichSet s(f, data);
  const double ref_value = 0.1;
  BahadurReference ref{[&](std::size_t) { return ref_value; }, nullptr};
  double score = 0.0;
  for (double y : data.y) score += (y < ref_value ? 1.0 : 0.0) - 0.5;
  score /= data.n();
  const double fhat = s.Qhat(0)(0, 0);
  const auto L = bahadur_linearization(s, data, {{0.5}}, {}, 0, &ref);
  CHECK(L[0] == doctest::Approx(-score / fhat).epsilon(1e-6));
}

TEST_CASE("inverse decay") {
  // tridiagonal Toeplitz (diagonal 2, off-diagonal 1/2): inverse entries decay like (2 - sqrt 3)^|j-k|
  const std::size_t n = 40;
  BandedMatrix T(n, 1);
  for (std::size_t j = 0; j < n; ++j) {
    T.lower(j, j) = 2.0;
    if (j + 1 < n) T.lower(j + 1, j) = 0.5;
  }
  const auto r = banded_decay_report(T);
  for (std::size_t k = 2; k < 10; ++k) CHECK(r[k] / r[k - 1] == doctest::Approx(2.0 - std::sqrt(3.0)).epsilon(1e-3));

  BandedMatrix D(6, 0);
  for (std::size_t j = 0; j < 6; ++j) D.lower(j, j) = 1.0 + j;
  const auto rd = banded_decay_report(D);
  CHECK(rd[0] == doctest::Approx(1.0));
  for (std::size_t k = 1; k < rd.size(); ++k) CHECK(rd[k] == 0.0);

  const auto data = testing::sine_data(3000, 1, 0.5, 151);
  const auto f = fit_ptr(data, testing::make_basis({16}, BasisKind::BSpline, 2), quantile_loss(), {0.5});
  const SandwichSet s(f, data);
  const auto rs = banded_decay_report(s, 0);
  REQUIRE(rs.size() == s.K());
  for (std::size_t k = 2; k < rs.size(); ++k) CHECK(rs[k] < rs[k - 1]);
  const Eigen::MatrixXd inv = s.Qhat(0).to_dense().inverse();
  for (std::size_t k = 0; k < rs.size(); ++k) {
    double m = 0.0;
    for (std::size_t j = 0; j + k < s.K(); ++j) m = std::max(m, std::abs(inv(j + k, j)));
    CHECK(std::abs(rs[k] - m) <= 1e-9 * inv.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("Q eigenvalues scale with the cell volume") {
  const auto data = testing::sine_data(20000, 1, 0.5, 161);
  auto median_eig = [&](std::size_t cells) {
    const auto f = fit_ptr(data, testing::make_basis({cells}, BasisKind::BSpline, 2), lp_loss(2.0), {0.0});
    const SandwichSet s(f, data);
    auto e = eigenvalues(s.Qhat(0));
    std::sort(e.begin(), e.end());
    return e[e.size() / 2];
  };
  const double ratio = median_eig(20) / median_eig(10);
  CHECK(ratio >= 0.5 * 0.75);
  CHECK(ratio <= 0.5 * 1.25);
}

TEST_CASE("factor_Q rejects singular matrices") {
  BandedMatrix Z(4, 1);
  CHECK_CODE(factor_Q(Z), ErrorCode::SingularQ);
  BandedMatrix I(4, 1);
  I.add_diagonal(1.0);
  CHECK_NOTHROW(factor_Q(I));
}
