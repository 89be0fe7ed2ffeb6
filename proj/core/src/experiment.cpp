#include "pbm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "pbm/error.hpp"
#include "pbm/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pbm {

using nlohmann::json;

std::size_t CellsRule::cells(std::size_t n, int order, std::size_t d) const {
  const double dd = static_cast<double>(d);
  double c;
  if (rule == "fixed") {
    c = static_cast<double>(count);
  } else if (rule == "rate") {
    c = constant * std::pow(static_cast<double>(n), 1.0 / (2.0 * order + dd));
  } else if (rule == "undersmooth") {
    c = constant * std::pow(static_cast<double>(n), 1.0 / (2.0 * order + dd - 0.5));
  } else {
    fail(ErrorCode::InvalidArgument, "cells rule must be rate|undersmooth|fixed, got '" + rule + "'");
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(c)));
}

std::vector<double> QGridSpec::resolve(const LossModel& loss) const {
  if (!points.empty()) return points;
  const QDomain& dom = loss.q_domain();
  if (dom.singleton()) return {dom.lo};
  const double a = lo.value_or(dom.lo);
  const double b = hi.value_or(dom.hi);
  require(count >= 1, ErrorCode::InvalidArgument, "q-grid needs at least one point");
  if (count == 1) return {0.5 * (a + b)};
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) g[static_cast<std::size_t>(k)] = a + (b - a) * k / (count - 1);
  return g;
}

void ExperimentConfig::validate() const {
  require(experiment == "coverage" || experiment == "rates" || experiment == "bahadur", ErrorCode::InvalidArgument,
          "experiment must be coverage|rates|bahadur");
  require(reps >= 1, ErrorCode::InvalidArgument, "reps must be >= 1");
  require(basis == "bspline" || basis == "piecewise_poly", ErrorCode::InvalidArgument,
          "basis must be bspline|piecewise_poly");
  require(band == "index" || band == "level" || band == "level-transformed", ErrorCode::InvalidArgument,
          "band must be index|level|level-transformed");
  require(path == "generic" || path == "bridge", ErrorCode::InvalidArgument, "path must be generic|bridge");
  require(x_per_cell >= 1, ErrorCode::InvalidArgument, "x_per_cell must be >= 1");
  if (experiment != "coverage")
    require(n_ladder.size() >= 4, ErrorCode::InvalidArgument, "the n-ladder needs at least 4 values");
  solver.validate();
}

void to_json(json& j, const ExperimentConfig& c) {
  json q;
  if (!c.q.points.empty()) q["points"] = c.q.points;
  q["lo"] = c.q.lo ? json(*c.q.lo) : json(nullptr);
  q["hi"] = c.q.hi ? json(*c.q.hi) : json(nullptr);
  q["count"] = c.q.count;
  j = json{{"experiment", c.experiment},
           {"dgp", c.dgp},
           {"n", c.n},
           {"n_ladder", c.n_ladder},
           {"loss", c.loss},
           {"basis", {{"kind", c.basis}, {"order", c.order}}},
           {"cells", {{"rule", c.cells.rule}, {"constant", c.cells.constant}, {"count", c.cells.count}}},
           {"q_grid", q},
           {"v", c.v},
           {"band", c.band},
           {"path", c.path},
           {"alpha", c.alpha},
           {"n_draws", c.n_draws},
           {"reps", c.reps},
           {"seed", c.seed},
           {"x_per_cell", c.x_per_cell},
           {"bootstrap", c.bootstrap},
           {"max_error_rate", c.max_error_rate},
           {"solver", c.solver}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c.experiment = j.value("experiment", c.experiment);
  c.dgp = j.value("dgp", c.dgp);
  c.n = j.value("n", c.n);
  c.n_ladder = j.value("n_ladder", c.n_ladder);
  if (j.contains("loss")) {
    if (j["loss"].is_string()) {
      c.loss.key = j["loss"].get<std::string>();
    } else {
      c.loss = j["loss"].get<LossSpec>();
    }
  }
  if (j.contains("link")) c.loss.link = j["link"].get<std::string>();
  if (j.contains("basis")) {
    c.basis = j["basis"].value("kind", c.basis);
    c.order = j["basis"].value("order", c.order);
  }
  if (j.contains("cells")) {
    c.cells.rule = j["cells"].value("rule", c.cells.rule);
    c.cells.constant = j["cells"].value("constant", c.cells.constant);
    c.cells.count = j["cells"].value("count", c.cells.count);
  }
  if (j.contains("q_grid")) {
    const auto& q = j["q_grid"];
    if (q.is_array()) {
      c.q.points = q.get<std::vector<double>>();
    } else {
      c.q.points = q.value("points", c.q.points);
      if (q.contains("lo") && !q["lo"].is_null()) c.q.lo = q["lo"].get<double>();
      if (q.contains("hi") && !q["hi"].is_null()) c.q.hi = q["hi"].get<double>();
      c.q.count = q.value("count", c.q.count);
    }
  }
  c.v = j.value("v", c.v);
  c.band = j.value("band", c.band);
  c.path = j.value("path", c.path);
  c.alpha = j.value("alpha", c.alpha);
  c.n_draws = j.value("n_draws", c.n_draws);
  c.reps = j.value("reps", c.reps);
  c.seed = j.value("seed", c.seed);
  c.x_per_cell = j.value("x_per_cell", c.x_per_cell);
  c.bootstrap = j.value("bootstrap", c.bootstrap);
  c.max_error_rate = j.value("max_error_rate", c.max_error_rate);
  if (j.contains("solver")) c.solver = j["solver"].get<SolverOptions>();
}

json RunReport::to_json() const {
  return json{{"schema_version", kSchemaVersion},
              {"kind", "run_report"},
              {"config", config},
              {"reps", reps},
              {"aggregate", aggregate},
              {"wall_seconds", wall_seconds},
              {"ok", ok}};
}

Replicate make_replicate(const ExperimentConfig& c, const Dgp& dgp, std::size_t n, std::uint64_t rep) {
  Replicate r;
  r.data = dgp.generate(n, c.seed, stream_id(n, rep));
  const std::size_t per = c.cells.cells(n, c.order, dgp.dim());
  const std::vector<std::size_t> cells(dgp.dim(), per);
  Partition part = build_tensor_partition(dgp.domain(), cells);
  BasisSpec spec;
  spec.kind = c.basis == "bspline" ? BasisKind::BSpline : BasisKind::PiecewisePoly;
  spec.order = c.order;
  r.basis = std::make_shared<const Basis>(std::move(part), spec);
  return r;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::InvalidArgument, "slope needs two or more points");
  const std::size_t m = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    mx += std::log(x[k]);
    my += std::log(y[k]);
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double dx = std::log(x[k]) - mx;
    sxy += dx * (std::log(y[k]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

void apply_thread_env() {
#ifdef _OPENMP
  if (const char* s = std::getenv("PBM_THREADS")) {
    const int t = std::atoi(s);
    if (t > 0) omp_set_num_threads(t);
  }
#endif
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct RepOutcome {
  bool ok = false;
  ErrorCode code = ErrorCode::InvalidArgument;
  std::string error;
  json summary;
};

/// Runs body(rep) for every rep, in parallel, collecting pbm::Error failures.
template <class Body>
std::vector<RepOutcome> run_reps(int reps, Body&& body) {
  std::vector<RepOutcome> out(static_cast<std::size_t>(reps));
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < reps; ++r) {
    auto& o = out[static_cast<std::size_t>(r)];
    try {
      o.summary = body(static_cast<std::uint64_t>(r));
      o.ok = true;
    } catch (const Error& e) {
      o.code = e.code();
      o.error = e.what();
    }
  }
  return out;
}

std::size_t record(RunReport& report, const std::vector<RepOutcome>& out, double max_error_rate, json tag = {}) {
  std::size_t failed = 0;
  for (std::size_t r = 0; r < out.size(); ++r) {
    json s = out[r].ok ? out[r].summary : json{{"error", out[r].error}};
    s["rep"] = r;
    if (!tag.is_null()) s.update(tag);
    report.reps.push_back(std::move(s));
    if (!out[r].ok) ++failed;
  }
  if (static_cast<double>(failed) > max_error_rate * static_cast<double>(out.size())) report.ok = false;
  return failed;
}

// Raises the first replicate's error when no replicate at this n succeeded.
void require_some_ok(const std::vector<RepOutcome>& out, std::size_t n) {
  for (const auto& o : out)
    if (o.ok) return;
  const std::string first = out.empty() ? std::string() : out.front().error;
  throw Error(out.empty() ? ErrorCode::InvalidArgument : out.front().code,
              "every replicate failed at n = " + std::to_string(n) + " (first: " + first + ")");
}

std::vector<double> truth_on_grid(const Dgp& dgp, const LossModel& loss, const EvalGrid& g) {
  std::vector<double> t(g.size());
  for (std::size_t j = 0; j < g.nq(); ++j)
    for (std::size_t i = 0; i < g.nx(); ++i) t[g.point(i, j)] = truth(dgp, loss, g.x_points[i], g.q_points[j], g.v);
  return t;
}

}  // namespace

RunReport run_coverage(const ExperimentConfig& c) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config = c;
  report.reps = json::array();
  const auto dgp = make_dgp(c.dgp);

  auto outcome = run_reps(c.reps, [&](std::uint64_t rep) {
    const Replicate r = make_replicate(c, *dgp, c.n, rep);
    const LossPtr loss = make_loss(c.loss);
    const auto qgrid = c.q.resolve(*loss);
    auto fit = std::make_shared<const FitResult>(pbm::fit(r.data, r.basis, loss, qgrid, c.solver));
    const SandwichSet sand(fit, r.data);
    const EvalGrid grid = make_grid(r.basis->partition(), c.x_per_cell, qgrid, c.v);
    SimOptions so;
    so.alpha = c.alpha;
    so.n_draws = c.n_draws;
    so.seed = stream_id(c.seed, rep, 0x5eed);
    so.path = c.path == "bridge" ? SimPath::BrownianBridge : SimPath::Generic;
    so.keep_draws = false;
    auto truth = truth_on_grid(*dgp, *loss, grid);
    BandResult band;
    if (c.band == "index") {
      band = simulate_band(sand, grid, so);
    } else {
      band = level_band(sand, grid, so, c.band == "level" ? LevelMode::Delta : LevelMode::Transformed);
      for (double& t : truth) t = loss->link().eta(t);
    }
    double tmax = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k)
      tmax = std::max(tmax, std::abs(band.mu_hat[k] - truth[k]) / band.se[k]);
    return json{{"covered", band.covers(truth)},
                {"crit", band.crit},
                {"sup_t", tmax},
                {"K", r.basis->size()},
                {"converged", fit->all_converged()}};
  });
  const std::size_t failed = record(report, outcome, c.max_error_rate);
  double hits = 0.0, ok = 0.0, crit = 0.0;
  for (const auto& o : outcome) {
    if (!o.ok) continue;
    ok += 1.0;
    hits += o.summary["covered"].get<bool>() ? 1.0 : 0.0;
    crit += o.summary["crit"].get<double>();
  }
  const double cov = ok > 0 ? hits / ok : 0.0;
  report.aggregate = {{"coverage", cov},
                      {"coverage_se", ok > 0 ? std::sqrt(cov * (1.0 - cov) / ok) : 0.0},
                      {"nominal", 1.0 - c.alpha},
                      {"mean_crit", ok > 0 ? crit / ok : 0.0},
                      {"reps_ok", ok},
                      {"reps_failed", failed}};
  report.wall_seconds = seconds_since(t0);
  return report;
}

RunReport run_rates(const ExperimentConfig& c) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config = c;
  report.reps = json::array();
  const auto dgp = make_dgp(c.dgp);
  std::vector<double> ns, med_sup, med_l2;
  std::vector<std::vector<double>> sups, l2s;
  for (std::size_t n : c.n_ladder) {
    auto outcome = run_reps(c.reps, [&](std::uint64_t rep) {
      const Replicate r = make_replicate(c, *dgp, n, rep);
      const LossPtr loss = make_loss(c.loss);
      const auto qgrid = c.q.resolve(*loss);
      const FitResult fit = pbm::fit(r.data, r.basis, loss, qgrid, c.solver);
      const EvalGrid grid = make_grid(r.basis->partition(), c.x_per_cell, qgrid, c.v);
      const auto truth = truth_on_grid(*dgp, *loss, grid);
      double sup = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < grid.nx(); ++i) {
        const SparseVec p = r.basis->eval(grid.x_points[i], grid.v);
        for (std::size_t j = 0; j < grid.nq(); ++j) {
          const double e = p.dot(fit.beta[j]) - truth[grid.point(i, j)];
          sup = std::max(sup, std::abs(e));
          ss += e * e;
        }
      }
      return json{{"sup_error", sup},
                  {"l2_error", std::sqrt(ss / static_cast<double>(grid.size()))},
                  {"K", r.basis->size()},
                  {"converged", fit.all_converged()}};
    });
    record(report, outcome, c.max_error_rate, json{{"n", n}});
    std::vector<double> s, l;
    for (const auto& o : outcome)
      if (o.ok) {
        s.push_back(o.summary["sup_error"].get<double>());
        l.push_back(o.summary["l2_error"].get<double>());
      }
    require_some_ok(outcome, n);
    ns.push_back(static_cast<double>(n));
    med_sup.push_back(median(s));
    med_l2.push_back(median(l));
    sups.push_back(std::move(s));
    l2s.push_back(std::move(l));
  }

  // Percentile bootstrap over replicates within each n.
  std::vector<double> bs_sup, bs_l2;
  CounterRng rng(c.seed, stream_id(0xb007));
  for (int b = 0; b < c.bootstrap; ++b) {
    std::vector<double> ms, ml;
    for (std::size_t k = 0; k < ns.size(); ++k) {
      const std::size_t m = sups[k].size();
      std::vector<double> rs(m), rl(m);
      for (std::size_t t = 0; t < m; ++t) {
        const auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(m)) % m;
        rs[t] = sups[k][pick];
        rl[t] = l2s[k][pick];
      }
      ms.push_back(median(rs));
      ml.push_back(median(rl));
    }
    bs_sup.push_back(loglog_slope(ns, ms));
    bs_l2.push_back(loglog_slope(ns, ml));
  }
  auto ci = [&](std::vector<double> v) {
    if (v.empty()) return json::array();
    return json::array({lower_quantile(v, 0.025), lower_quantile(v, 0.975)});
  };
  const double target = -static_cast<double>(c.order) / (2.0 * c.order + static_cast<double>(dgp->dim()));
  report.aggregate = {{"n", ns},
                      {"median_sup_error", med_sup},
                      {"median_l2_error", med_l2},
                      {"sup_slope", loglog_slope(ns, med_sup)},
                      {"l2_slope", loglog_slope(ns, med_l2)},
                      {"sup_slope_ci", ci(bs_sup)},
                      {"l2_slope_ci", ci(bs_l2)},
                      {"target_slope", target}};
  report.wall_seconds = seconds_since(t0);
  return report;
}

RunReport run_bahadur(const ExperimentConfig& c) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config = c;
  report.reps = json::array();
  const auto dgp = make_dgp(c.dgp);
  std::vector<double> ns, med_ratio, med_rem, med_L;
  for (std::size_t n : c.n_ladder) {
    auto outcome = run_reps(c.reps, [&](std::uint64_t rep) {
      const Replicate r = make_replicate(c, *dgp, n, rep);
      const LossPtr loss = make_loss(c.loss);
      const Link& link = loss->link();
      const auto qgrid = c.q.resolve(*loss);
      const FitResult fit = pbm::fit(r.data, r.basis, loss, qgrid, c.solver);
      const PointList xs = cell_grid(r.basis->partition(), c.x_per_cell);
      const MultiIndex v = c.v.empty() ? MultiIndex(dgp->dim(), 0) : c.v;
      double sup_rem = 0.0, sup_L = 0.0;
      for (std::size_t qi = 0; qi < qgrid.size(); ++qi) {
        const auto star = pseudo_truth(*dgp, r.data, fit, qi, fit.beta[qi]);
        BahadurReference ref;
        ref.index = [&](std::size_t i) { return fit.design.dot(i, star); };
        ref.psi1 = [&](std::size_t i) {
          return conditional_score(*dgp, *loss, r.data.row(i), link.eta(fit.design.dot(i, star)), qgrid[qi]).psi1;
        };
        const auto L = bahadur_linearization(fit, r.data, xs, v, qi, ref);
        for (std::size_t k = 0; k < xs.size(); ++k) {
          const SparseVec p = r.basis->eval(xs[k], v);
          const double rem = p.dot(fit.beta[qi]) - p.dot(star) - L[k];
          sup_rem = std::max(sup_rem, std::abs(rem));
          sup_L = std::max(sup_L, std::abs(L[k]));
        }
      }
      return json{{"sup_remainder", sup_rem},
                  {"sup_linear", sup_L},
                  {"ratio", sup_L > 0.0 ? sup_rem / sup_L : 0.0},
                  {"converged", fit.all_converged()}};
    });
    record(report, outcome, c.max_error_rate, json{{"n", n}});
    std::vector<double> ratio, rem, lin;
    for (const auto& o : outcome)
      if (o.ok) {
        ratio.push_back(o.summary["ratio"].get<double>());
        rem.push_back(o.summary["sup_remainder"].get<double>());
        lin.push_back(o.summary["sup_linear"].get<double>());
      }
    require_some_ok(outcome, n);
    ns.push_back(static_cast<double>(n));
    med_ratio.push_back(median(ratio));
    med_rem.push_back(median(rem));
    med_L.push_back(median(lin));
  }
  report.aggregate = {{"n", ns},
                      {"median_ratio", med_ratio},
                      {"median_sup_remainder", med_rem},
                      {"median_sup_linear", med_L},
                      {"decay_factor", med_ratio.back() > 0.0 ? med_ratio.front() / med_ratio.back() : INFINITY},
                      {"max_sup_remainder", *std::max_element(med_rem.begin(), med_rem.end())}};
  report.wall_seconds = seconds_since(t0);
  return report;
}

RunReport run_experiment(const ExperimentConfig& c) {
  if (c.experiment == "coverage") return run_coverage(c);
  if (c.experiment == "rates") return run_rates(c);
  if (c.experiment == "bahadur") return run_bahadur(c);
  fail(ErrorCode::InvalidArgument, "unknown experiment '" + c.experiment + "'");
}

}  // namespace pbm
