// Acceptance checks: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pbm/dgp.hpp"
#include "pbm/error.hpp"
#include "pbm/experiment.hpp"
#include "pbm/inference.hpp"
#include "pbm/serialize.hpp"

using namespace pbm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class... T>
std::string cat(const T&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

std::shared_ptr<const Basis> unit_basis(std::vector<std::size_t> cells, BasisKind kind, int order) {
  const Domain dom = Domain::unit(cells.size());
  return std::make_shared<const Basis>(build_tensor_partition(dom, cells), BasisSpec{kind, order, -1});
}

// 1. piecewise-constant quantile fit vs per-cell order statistics
Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = make_dgp("qr1d")->generate(500, 1, 0);
  const auto basis = unit_basis({8}, BasisKind::PiecewisePoly, 1);
  const std::vector<double> grid{0.25, 0.5, 0.75};
  const auto f = fit(data, basis, quantile_loss(), grid);
  std::vector<std::vector<double>> cells(8);
  for (std::size_t i = 0; i < data.n(); ++i) cells[basis->partition().locate(data.row(i))].push_back(data.y[i]);
  double err = 0.0;
  for (std::size_t qi = 0; qi < grid.size(); ++qi)
    for (std::size_t c = 0; c < 8; ++c) {
      auto v = cells[c];
      std::sort(v.begin(), v.end());
      const double os = v[static_cast<std::size_t>(std::ceil(grid[qi] * v.size())) - 1];
      err = std::max(err, std::abs(f.beta[qi][c] - os));
    }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {err <= 1e-12 && secs < 1.0, cat("max |beta - order statistic| = ", err, ", ", fmt("%.3f", secs), " s")};
}

// 2. psi vs finite differences of rho for every loss, link derivative checks
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<LossPtr> models{quantile_loss(), distribution_loss(), lp_loss(1.5), logistic_loss(), huber_loss(0.5, 3.0),
                                    tukey_loss(1.0, 6.0)};
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (const auto& L : models) {
    const bool unit = L->link().range_hi() <= 1.0;
    int done = 0;
    while (done < 1000) {
      const auto& dom = L->q_domain();
      const double q = dom.lo + u(gen) * (dom.hi - dom.lo);
      const double y = L->key() == "logistic" ? u(gen) : 4.0 * u(gen) - 2.0;
      const double eta = unit ? 0.02 + 0.96 * u(gen) : 4.0 * u(gen) - 2.0;
      bool near = false;
      for (double k : L->kinks(y, q)) near = near || std::abs(eta - k) < 1e-3;
      if (near) continue;
      const double e = 1e-6;
      const double fd = (L->rho(y, eta + e, q) - L->rho(y, eta - e, q)) / (2 * e);
      const double psi = L->psi(y, eta, q);
      worst = std::max(worst, std::abs(psi - fd) / (1 + std::abs(psi)));
      ++done;
    }
  }
  double link_worst = 0.0;
  for (const auto& link : {Link::identity(), Link::logit(), Link::cloglog()})
    for (int k = 0; k <= 400; ++k) {
      const double t = -10.0 + 0.05 * k, e = 1e-5;
      const double d1 = (link.eta(t + e) - link.eta(t - e)) / (2 * e);
      const double d2 = (link.deta(t + e) - link.deta(t - e)) / (2 * e);
      link_worst = std::max(link_worst, std::abs(link.deta(t) - d1) / std::max(1e-3, std::abs(link.deta(t))));
      link_worst = std::max(link_worst, std::abs(link.ddeta(t) - d2) / std::max(1e-3, std::abs(link.ddeta(t))));
    }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 1e-6 && link_worst <= 1e-6 && secs < 1.0,
          cat("loss ", worst, ", link ", link_worst, ", ", fmt("%.3f", secs), " s")};
}

Outcome coverage(const ExperimentConfig& c) {
  const auto r = run_coverage(c);
  const double cov = r.aggregate["coverage"];
  return {r.ok && cov >= 0.90 && cov <= 0.99,
          cat("coverage ", fmt("%.4f", cov), " (se ", fmt("%.4f", r.aggregate["coverage_se"].get<double>()),
              ", reps ", r.aggregate["reps_ok"].get<double>(), ", mean crit ",
              fmt("%.3f", r.aggregate["mean_crit"].get<double>()), ", ", fmt("%.0f", r.wall_seconds), " s)")};
}

// 3. quantile bands on qr1d
Outcome quantile_coverage() {
  ExperimentConfig c;
  c.dgp = "qr1d";
  c.n = 2000;
  c.loss.key = "quantile";
  c.cells.rule = "undersmooth";
  c.cells.constant = 4.0;
  c.q.lo = 0.15;
  c.q.hi = 0.85;
  c.q.count = 25;
  c.x_per_cell = 10;
  c.path = "bridge";
  c.reps = 300;
  c.n_draws = 20000;
  return coverage(c);
}

// 4. logistic level bands on logit1d
Outcome logistic_coverage() {
  ExperimentConfig c;
  c.dgp = "logit1d";
  c.n = 2000;
  c.loss.key = "logistic";
  c.cells.rule = "undersmooth";
  c.cells.constant = 2.0;
  c.band = "level";
  c.x_per_cell = 10;
  c.reps = 300;
  c.n_draws = 20000;
  return coverage(c);
}

ExperimentConfig ladder(const std::string& dgp, const std::string& loss) {
  ExperimentConfig c;
  c.dgp = dgp;
  c.loss.key = loss;
  c.n_ladder = {500, 1000, 2000, 4000, 8000};
  c.cells.rule = "rate";
  c.cells.constant = 3.0;
  if (loss == "quantile") c.q.points = {0.25, 0.5, 0.75};
  c.x_per_cell = 10;
  return c;
}

// 5. log-log slopes of the sup and L2 errors
Outcome rate_slopes() {
  bool pass = true;
  std::string detail;
  for (auto [dgp, loss] : {std::pair{"qr1d", "quantile"}, std::pair{"logit1d", "logistic"}}) {
    auto c = ladder(dgp, loss);
    c.experiment = "rates";
    c.reps = 50;
    const auto r = run_rates(c);
    const double target = r.aggregate["target_slope"];
    const double s = r.aggregate["sup_slope"], l = r.aggregate["l2_slope"];
    pass = pass && r.ok && std::abs(s - target) <= 0.15 && std::abs(l - target) <= 0.15;
    detail += cat(dgp, ": sup ", fmt("%.3f", s), ", L2 ", fmt("%.3f", l), " (target ", fmt("%.2f", target), ", ",
                  fmt("%.0f", r.wall_seconds), " s); ");
  }
  return {pass, detail};
}

// 6. Bahadur remainder: decay for quantile, algebraic zero for squared loss
Outcome bahadur() {
  auto c = ladder("qr1d", "quantile");
  c.experiment = "bahadur";
  c.reps = 30;
  const auto r = run_bahadur(c);
  const double factor = r.aggregate["decay_factor"];
  std::string ratios;
  for (const auto& v : r.aggregate["median_ratio"]) ratios += fmt("%.4f ", v.get<double>());

  auto l = ladder("lp1d", "lp:2");
  l.experiment = "bahadur";
  l.reps = 5;
  const auto rl = run_bahadur(l);
  const double rem = rl.aggregate["max_sup_remainder"];
  return {r.ok && rl.ok && factor >= 2.0 && rem <= 1e-8,
          cat("quantile ratio by n: ", ratios, "factor ", fmt("%.3f", factor), "; squared-loss remainder ", rem)};
}

// 7. banded structure of Q_hat and its inverse
Outcome banded_structure() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dgp = make_dgp("qr1d");
  const auto data = dgp->generate(4000, 7, 0);
  auto sandwich = [&](std::size_t cells) {
    auto f = std::make_shared<const FitResult>(fit(data, unit_basis({cells}, BasisKind::BSpline, 2), quantile_loss(), {0.5}));
    return SandwichSet(f, data);
  };
  const auto s16 = sandwich(16);
  const auto decay = banded_decay_report(s16, 0);
  bool monotone = true;
  for (std::size_t k = 2; k < decay.size(); ++k) monotone = monotone && decay[k] < decay[k - 1];
  const Eigen::MatrixXd inv = s16.Qhat(0).to_dense().inverse();
  double dense_err = 0.0;
  for (std::size_t k = 0; k < decay.size(); ++k) {
    double m = 0.0;
    for (std::size_t j = 0; j + k < s16.K(); ++j) m = std::max(m, std::abs(inv(j + k, j)));
    dense_err = std::max(dense_err, std::abs(decay[k] - m) / inv.cwiseAbs().maxCoeff());
  }
  auto median_eig = [](const SandwichSet& s) {
    auto e = eigenvalues(s.Qhat(0));
    std::sort(e.begin(), e.end());
    return e[e.size() / 2];
  };
  const double ratio = median_eig(sandwich(20)) / median_eig(sandwich(10));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = monotone && dense_err <= 1e-9 && s16.K() <= 64 && std::abs(ratio / 0.5 - 1.0) <= 0.25 && secs < 10.0;
  return {pass, cat("decay ", monotone ? "monotone" : "NOT monotone", " over ", decay.size(), " bands, dense rel err ",
                    dense_err, ", eigenvalue ratio ", fmt("%.3f", ratio), " (2^-d = 0.5), ", fmt("%.2f", secs), " s")};
}

// 8. Omega_hat / n vs Monte Carlo variance of mu_hat, logistic
Outcome variance_calibration() {
  ExperimentConfig c;
  c.dgp = "logit1d";
  c.n = 2000;
  c.loss.key = "logistic";
  c.cells.rule = "undersmooth";
  c.cells.constant = 2.0;
  c.seed = 8;
  const auto dgp = make_dgp(c.dgp);
  const std::vector<double> xs{0.25, 0.5, 0.75};
  const int reps = 500;
  std::vector<std::vector<double>> mu(reps, std::vector<double>(3)), om(reps, std::vector<double>(3));
  int failures = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : failures)
  for (int r = 0; r < reps; ++r) {
    try {
      const auto rep = make_replicate(c, *dgp, c.n, static_cast<std::uint64_t>(r));
      auto f = std::make_shared<const FitResult>(fit(rep.data, rep.basis, make_loss(c.loss), {0.0}));
      const SandwichSet s(f, rep.data);
      for (std::size_t k = 0; k < 3; ++k) {
        const double x[] = {xs[k]};
        mu[r][k] = f->mu(x, {}, 0);
        om[r][k] = s.omega(x, {}, 0) / static_cast<double>(c.n);
      }
    } catch (const pbm::Error&) {
      ++failures;
    }
  }
  bool pass = failures == 0;
  std::string detail;
  for (std::size_t k = 0; k < 3; ++k) {
    double m = 0.0, v = 0.0, o = 0.0;
    for (int r = 0; r < reps; ++r) m += mu[r][k];
    m /= reps;
    for (int r = 0; r < reps; ++r) {
      v += (mu[r][k] - m) * (mu[r][k] - m);
      o += om[r][k];
    }
    v /= reps - 1;
    o /= reps;
    const double ratio = o / v;
    pass = pass && ratio >= 0.8 && ratio <= 1.25;
    detail += cat("x=", xs[k], ": ", fmt("%.3f", ratio), "; ");
  }
  return {pass, "mean Omega/n over MC variance at " + detail};
}

// 9. simulated critical values and the cross-level quantile covariance
Outcome gaussian_calibration() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = make_dgp("qr1d")->generate(2000, 9, 0);
  auto make = [&](std::shared_ptr<const Basis> b, std::vector<double> grid) {
    return SandwichSet(std::make_shared<const FitResult>(fit(data, b, quantile_loss(), std::move(grid))), data);
  };
  SimOptions so;
  so.n_draws = 200000;
  so.seed = 9;
  const auto s1 = make(unit_basis({8}, BasisKind::BSpline, 2), {0.5});
  const double c1 = simulate_band(s1, EvalGrid{{{0.4}}, {0.5}, {0}}, so).crit;
  const auto s2 = make(unit_basis({4}, BasisKind::PiecewisePoly, 1), {0.25, 0.5, 0.75});
  const double c2 = simulate_band(s2, EvalGrid{{{0.1}, {0.9}}, {0.5}, {0}}, so).crit;
  const Eigen::MatrixXd Z = draw_process(s2, EvalGrid{{{0.3}}, {0.25, 0.75}, {0}}, 200000, 9);
  const Eigen::MatrixXd cz = Z.rowwise() - Z.colwise().mean();
  const Eigen::MatrixXd cov = cz.transpose() * cz / (Z.rows() - 1.0);
  const double corr = cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = std::abs(c1 - 1.959964) <= 0.02 && std::abs(c2 - 2.236477) <= 0.02 &&
                    std::abs(corr - 0.0625 / 0.1875) <= 0.02 && secs < 60.0;
  return {pass, cat("single ", fmt("%.4f", c1), ", two-point ", fmt("%.4f", c2), ", corr(0.25,0.75) ", fmt("%.4f", corr),
                    " (0.0625/0.1875 = 0.3333), ", fmt("%.1f", secs), " s")};
}

// 10. theoretical side conditions are documented, not measured
Outcome side_conditions() {
  return {true, "documented: K^3/n rates, coupling constants and moment thresholds are not desk-reproducible"};
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_env();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},       {"gradient suite", gradient_suite},
      {"quantile band coverage", quantile_coverage},    {"logistic level band coverage", logistic_coverage},
      {"rate slopes", rate_slopes},                     {"Bahadur remainder decay", bahadur},
      {"banded structure", banded_structure},           {"variance calibration", variance_calibration},
      {"Gaussian simulation calibration", gaussian_calibration}, {"theoretical side conditions", side_conditions}};
  std::set<int> only;
  for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
