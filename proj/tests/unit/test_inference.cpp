#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "pbm/inference.hpp"

using namespace pbm;

namespace {

struct Fixture {
  Dataset data;
  std::shared_ptr<const FitResult> fit;
  std::unique_ptr<SandwichSet> sand;
};

Fixture make_fixture(Dataset data, std::shared_ptr<const Basis> basis, LossPtr loss, std::vector<double> grid) {
  Fixture f;
  f.data = std::move(data);
  f.fit = std::make_shared<const FitResult>(fit(f.data, basis, loss, std::move(grid)));
  f.sand = std::make_unique<SandwichSet>(f.fit, f.data);
  return f;
}

Fixture quantile_fixture(std::vector<double> grid, std::size_t cells = 8, int order = 2,
                         BasisKind kind = BasisKind::BSpline) {
  return make_fixture(testing::sine_data(1500, 1, 0.5, 201), testing::make_basis({cells}, kind, order),
                      quantile_loss(), std::move(grid));
}

SimOptions sim(int draws, std::uint64_t seed = 7) {
  SimOptions o;
  o.n_draws = draws;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("single-point critical value") {
  const auto f = quantile_fixture({0.5});
  EvalGrid g{{{0.4}}, {0.5}, {0}};
  const auto b = simulate_band(*f.sand, g, sim(200000));
  CHECK(std::abs(b.crit - 1.959964) <= 0.02);
  const auto bb = simulate_band_brownian_bridge(*f.sand, g, sim(200000));
  CHECK(std::abs(bb.crit - b.crit) <= 0.02);
}

TEST_CASE("two independent points") {
  const auto f = quantile_fixture({0.5}, 4, 1, BasisKind::PiecewisePoly);
  EvalGrid g{{{0.1}, {0.9}}, {0.5}, {0}};
  const auto b = simulate_band(*f.sand, g, sim(200000));
  // (2 Phi(c) - 1)^2 = 0.95
  CHECK(std::abs(b.crit - 2.236477) <= 0.02);
}

TEST_CASE("cross-level correlation of the quantile process") {
  const auto f = quantile_fixture({0.25, 0.75}, 4, 1, BasisKind::PiecewisePoly);
  EvalGrid g{{{0.3}}, {0.25, 0.75}, {0}};
  for (auto path : {SimPath::Generic, SimPath::BrownianBridge}) {
    const Eigen::MatrixXd Z = draw_process(*f.sand, g, 100000, 3, path);
    const Eigen::MatrixXd c = Z.rowwise() - Z.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / (Z.rows() - 1.0);
    CHECK(cov(0, 0) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(cov(1, 1) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(cov(0, 1) - 0.0625 / 0.1875) <= 0.02);
  }
}

TEST_CASE("draws are studentized") {
  const auto f = quantile_fixture({0.2, 0.5, 0.8});
  const auto g = make_grid(f.fit->basis->partition(), 2, {0.2, 0.5, 0.8});
  for (auto path : {SimPath::Generic, SimPath::BrownianBridge}) {
    const Eigen::MatrixXd Z = draw_process(*f.sand, g, 100000, 5, path);
    const Eigen::MatrixXd c = Z.rowwise() - Z.colwise().mean();
    const Eigen::VectorXd var = c.colwise().squaredNorm() / (Z.rows() - 1.0);
    CHECK(var.minCoeff() >= 0.95);
    CHECK(var.maxCoeff() <= 1.05);
  }
}

TEST_CASE("Brownian-bridge and generic paths agree") {
  std::vector<double> grid;
  for (int k = 0; k < 9; ++k) grid.push_back(0.1 + 0.1 * k);
  const auto f = quantile_fixture(grid);
  const auto g = make_grid(f.fit->basis->partition(), 3, grid);
  const auto a = simulate_band(*f.sand, g, sim(100000));
  const auto b = simulate_band_brownian_bridge(*f.sand, g, sim(100000));
  CHECK(std::abs(a.crit - b.crit) <= 0.03);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(a.omega_hat[k] == b.omega_hat[k]);

  const auto lp = make_fixture(testing::sine_data(500, 1, 0.5, 202), testing::make_basis({4}, BasisKind::BSpline, 2),
                               lp_loss(2.0), {0.0});
  EvalGrid lg{{{0.5}}, {0.0}, {0}};
  CHECK_CODE(simulate_band_brownian_bridge(*lp.sand, lg, sim(1000)), ErrorCode::WrongModel);
}

TEST_CASE("band invariants") {
  const std::vector<double> grid{0.25, 0.5, 0.75};
  const auto f = quantile_fixture(grid);
  const auto g = make_grid(f.fit->basis->partition(), 4, grid);
  const auto b = simulate_band(*f.sand, g, sim(5000));
  REQUIRE(b.lo.size() == g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(b.lo[k] < b.mu_hat[k]);
    CHECK(b.mu_hat[k] < b.hi[k]);
    CHECK(b.hi[k] - b.mu_hat[k] == doctest::Approx(b.crit * std::sqrt(b.omega_hat[k] / f.data.n())));
  }
  CHECK(b.covers(b.mu_hat));

  // seed determinism
  const auto b2 = simulate_band(*f.sand, g, sim(5000));
  CHECK(b2.crit == b.crit);
  CHECK(b2.sup_draws == b.sup_draws);
  CHECK(b2.lo == b.lo);

  // nested alphas on common draws
  SimOptions o = sim(5000);
  double prev = 0.0;
  for (double alpha : {0.5, 0.2, 0.1, 0.05, 0.01}) {
    o.alpha = alpha;
    const double c = simulate_band(*f.sand, g, o).crit;
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(critical_value(b.sup_draws, 0.05) == b.crit);

  // superset grids never lower the critical value
  EvalGrid sub = g;
  sub.x_points.resize(5);
  CHECK(simulate_band(*f.sand, sub, sim(5000)).crit <= b.crit);

  SimOptions bad = sim(100);
  CHECK_CODE(simulate_band(*f.sand, g, bad), ErrorCode::InvalidArgument);
  bad = sim(5000);
  bad.alpha = 0.7;
  CHECK_CODE(simulate_band(*f.sand, g, bad), ErrorCode::InvalidArgument);
  EvalGrid off = g;
  off.q_points = {0.3};
  CHECK_CODE(simulate_band(*f.sand, off, sim(5000)), ErrorCode::InvalidArgument);
}

TEST_CASE("critical value order statistic") {
  std::vector<double> d;
  for (int k = 1; k <= 1000; ++k) d.push_back(k);
  CHECK(critical_value(d, 0.05) == 950.0);
  CHECK(critical_value(d, 0.051) == 949.0);
  const auto s = summarize(d);
  CHECK(s.mean == doctest::Approx(500.5));
  CHECK(s.q50 == 500.0);
  CHECK(s.q99 == 990.0);
}

TEST_CASE("t-process") {
  const auto f = make_fixture(testing::sine_data(800, 1, 0.4, 211), testing::make_basis({6}, BasisKind::BSpline, 2),
                              lp_loss(2.0), {0.0});
  const auto g = make_grid(f.fit->basis->partition(), 3, {0.0});
  const auto b = simulate_band(*f.sand, g, sim(1000));
  for (double t : t_process(*f.sand, g, std::span<const double>(b.mu_hat))) CHECK(t == 0.0);

  auto scaled = f.data;
  for (double& y : scaled.y) y *= 2.0;
  const auto f2 = make_fixture(scaled, f.fit->basis, lp_loss(2.0), {0.0});
  const auto t1 = t_process(*f.sand, g);
  const auto t2 = t_process(*f2.sand, g);
  for (std::size_t k = 0; k < t1.size(); ++k) CHECK(std::abs(t1[k] - t2[k]) <= 1e-8 * std::max(1.0, std::abs(t1[k])));
}

TEST_CASE("t-statistic is approximately standard normal") {
  // logistic DGP with a constant-plus-linear index on a coarse basis (no bias)
  const auto basis = testing::make_basis({4}, BasisKind::BSpline, 2);
  const EvalGrid g{{{0.45}}, {0.0}, {0}};
  const double mu0 = -0.3 + 1.2 * 0.45;
  std::vector<double> ts;
  for (int r = 0; r < 500; ++r) {
    const auto f = make_fixture(testing::logit_data(2000, -0.3, 1.2, 1000 + r), basis, logistic_loss(), {0.0});
    ts.push_back(t_process(*f.sand, g, std::vector<double>{mu0})[0]);
  }
  double m = 0.0, s = 0.0;
  for (double t : ts) m += t;
  m /= ts.size();
  for (double t : ts) s += (t - m) * (t - m);
  s = std::sqrt(s / (ts.size() - 1));
  CHECK(std::abs(m) <= 0.1);
  CHECK(s >= 0.85);
  CHECK(s <= 1.15);
}

TEST_CASE("level bands") {
  const auto q = quantile_fixture({0.5});
  const auto g = make_grid(q.fit->basis->partition(), 2, {0.5});
  const auto base = simulate_band(*q.sand, g, sim(2000));
  const auto lvl = level_band(*q.sand, g, sim(2000));
  CHECK(lvl.lo == base.lo);
  CHECK(lvl.hi == base.hi);

  const auto lg = make_fixture(testing::logit_data(1500, 0.0, 0.0, 221), testing::make_basis({4}, BasisKind::BSpline, 2),
                               logistic_loss(), {0.0});
  const auto gl = make_grid(lg.fit->basis->partition(), 3, {0.0});
  const auto b = simulate_band(*lg.sand, gl, sim(2000));
  const auto d = level_band(*lg.sand, gl, sim(2000));
  const auto t = level_band(*lg.sand, gl, sim(2000), LevelMode::Transformed);
  for (std::size_t k = 0; k < gl.size(); ++k) {
    const double eta = 1.0 / (1.0 + std::exp(-b.mu_hat[k]));
    CHECK(d.mu_hat[k] == doctest::Approx(eta));
    CHECK(d.hi[k] - d.mu_hat[k] == doctest::Approx((b.hi[k] - b.mu_hat[k]) * eta * (1 - eta)));
    CHECK(t.lo[k] == doctest::Approx(1.0 / (1.0 + std::exp(-b.lo[k]))));
  }
  // event identity for the transformed band
  std::vector<double> shift(gl.size()), shifted_eta(gl.size());
  for (double delta : {0.0, 0.05, 0.2, -0.3}) {
    for (std::size_t k = 0; k < gl.size(); ++k) {
      shift[k] = b.mu_hat[k] + delta * (k % 3);
      shifted_eta[k] = 1.0 / (1.0 + std::exp(-shift[k]));
    }
    CHECK(b.covers(shift) == t.covers(shifted_eta));
  }
  EvalGrid gv = gl;
  gv.v = {1};
  CHECK_CODE(level_band(*lg.sand, gv, sim(2000)), ErrorCode::InvalidArgument);
}

TEST_CASE("marginal effects") {
  const auto pc = quantile_fixture({0.5}, 4, 1, BasisKind::PiecewisePoly);
  EvalGrid g1{{{0.3}}, {0.5}, {1}};
  CHECK_CODE(marginal_effect_band(*pc.sand, g1, sim(1000)), ErrorCode::DerivativeOrderTooHigh);

  const auto basis = testing::make_basis({5}, BasisKind::BSpline, 2);
  int inside = 0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    auto data = testing::sine_data(1000, 1, 0.5, 300 + r);
    for (std::size_t i = 0; i < data.n(); ++i) data.y[i] += 2.0 * data.X[i] - std::sin(6.283185307179586 * data.X[i]);
    const auto f = make_fixture(data, basis, lp_loss(2.0), {0.0});
    EvalGrid g{cell_grid(basis->partition(), 2), {0.0}, {1}};
    g.x_points.erase(g.x_points.begin());
    g.x_points.pop_back();
    const auto b = marginal_effect_band(*f.sand, g, sim(1000));
    bool ok = true;
    for (std::size_t k = 0; k < g.size(); ++k) ok = ok && std::abs(b.mu_hat[k] - 2.0) <= 3.0 * (b.hi[k] - b.mu_hat[k]);
    inside += ok;
  }
  CHECK(inside >= 0.9 * reps);
}

TEST_CASE("treatment-effect bands") {
  const auto basis = testing::make_basis({5}, BasisKind::BSpline, 2);
  const auto d1 = testing::sine_data(1000, 1, 0.5, 401);
  auto d2 = testing::sine_data(1000, 1, 0.5, 402);
  for (double& y : d2.y) y += 1.0;
  const auto f1 = make_fixture(d1, basis, lp_loss(2.0), {0.0});
  const auto f2 = make_fixture(d2, basis, lp_loss(2.0), {0.0});
  const auto g = make_grid(basis->partition(), 2, {0.0});
  const auto b = cte_band(*f1.sand, *f2.sand, g, sim(2000));
  const auto b1 = simulate_band(*f1.sand, g, sim(2000));
  const auto b2 = simulate_band(*f2.sand, g, sim(2000));
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(b.mu_hat[k] == doctest::Approx(b2.mu_hat[k] - b1.mu_hat[k]));
    CHECK(std::abs(b.se[k] * b.se[k] - (b1.se[k] * b1.se[k] + b2.se[k] * b2.se[k])) <= 1e-10 * b.se[k] * b.se[k]);
    CHECK(std::abs(b.mu_hat[k] - 1.0) <= b.hi[k] - b.mu_hat[k]);
  }
  const auto other = make_fixture(d1, testing::make_basis({6}, BasisKind::BSpline, 2), lp_loss(2.0), {0.0});
  CHECK_CODE(cte_band(*f1.sand, *other.sand, g, sim(1000)), ErrorCode::BasisMismatch);
  const auto hub = make_fixture(d1, basis, huber_loss(1.0, 1.0), {1.0});
  EvalGrid gh = g;
  CHECK_CODE(cte_band(*f1.sand, *hub.sand, gh, sim(1000)), ErrorCode::BasisMismatch);
}

TEST_CASE("evaluation grids") {
  const auto p = testing::unit_partition({2, 3});
  const auto pts = cell_grid(p, 2);
  CHECK(pts.size() == 4u * 6u);
  CHECK(pts[0][0] == doctest::Approx(0.125));
  CHECK(pts[0][1] == doctest::Approx(1.0 / 12.0));
  const auto g = make_grid(p, 1, {0.25, 0.5});
  CHECK(g.size() == 12u);
  CHECK(g.point(3, 1) == 9u);
  CHECK(g.v == MultiIndex{0, 0});
}
