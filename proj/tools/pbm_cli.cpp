// Command line front end: fit, band, check-basis, mc, version.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "pbm/error.hpp"
#include "pbm/experiment.hpp"

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      pbm::require(used == tok.size(), pbm::ErrorCode::InvalidArgument, "bad number '" + tok + "'");
    } catch (const std::logic_error&) {
      pbm::fail(pbm::ErrorCode::InvalidArgument, "bad number '" + tok + "'");
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  pbm::require(out.good(), pbm::ErrorCode::DataError, "cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  pbm::require(in.good(), pbm::ErrorCode::DataError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    pbm::fail(pbm::ErrorCode::DataError, path + ": " + e.what());
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct FitArgs {
  std::string data, loss = "quantile", link, basis = "bspline", knots = "uniform", q, out = "-";
  std::string cells = "8";
  int order = 2;
  int q_count = 25;
  double box_r = 0.0;
  int min_obs = -1;
  double density_constant = 1.0;
  bool allow_small_n = false;
};

int cmd_fit(const FitArgs& a) {
  pbm::Dataset data = pbm::read_csv_file(a.data);
  pbm::Domain dom{std::vector<double>(data.d, 0.0), std::vector<double>(data.d, 1.0)};
  for (std::size_t j = 0; j < data.d; ++j) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < data.n(); ++i) {
      lo = std::min(lo, data.X[i * data.d + j]);
      hi = std::max(hi, data.X[i * data.d + j]);
    }
    dom.lower[j] = lo;
    dom.upper[j] = hi;
  }
  auto counts = parse_list(a.cells);
  pbm::require(counts.size() == 1 || counts.size() == data.d, pbm::ErrorCode::InvalidArgument,
               "--cells takes one count or one per dimension");
  std::vector<std::size_t> cells(data.d);
  for (std::size_t j = 0; j < data.d; ++j) {
    const double c = counts.size() == 1 ? counts[0] : counts[j];
    pbm::require(c >= 1 && c == std::floor(c), pbm::ErrorCode::InvalidArgument, "cell counts must be positive integers");
    cells[j] = static_cast<std::size_t>(c);
  }
  pbm::require(a.knots == "uniform" || a.knots == "quantile", pbm::ErrorCode::InvalidArgument,
               "--knots must be uniform|quantile");
  auto part = pbm::build_tensor_partition(dom, cells,
                                          a.knots == "uniform" ? pbm::KnotRule::Uniform : pbm::KnotRule::Quantile,
                                          data.X);
  pbm::BasisSpec spec;
  pbm::require(a.basis == "bspline" || a.basis == "piecewise_poly", pbm::ErrorCode::InvalidArgument,
               "--basis must be bspline|piecewise_poly");
  spec.kind = a.basis == "bspline" ? pbm::BasisKind::BSpline : pbm::BasisKind::PiecewisePoly;
  spec.order = a.order;
  auto basis = std::make_shared<const pbm::Basis>(std::move(part), spec);

  pbm::LossSpec ls{a.loss, a.link, a.density_constant};
  const auto loss = pbm::make_loss(ls);
  pbm::QGridSpec qs;
  qs.count = a.q_count;
  if (!a.q.empty()) qs.points = parse_list(a.q);
  pbm::SolverOptions so;
  if (a.box_r > 0.0) so.box_R = a.box_r;
  so.min_obs_per_cell = a.min_obs;
  so.require_n_ge_K = !a.allow_small_n;
  const auto fit = pbm::fit(data, basis, loss, qs.resolve(*loss), so);
  write_text(a.out, pbm::fit_to_json(fit, data, ls).dump(2) + "\n");
  if (!fit.all_converged()) std::cerr << "warning: some q levels did not converge\n";
  return 0;
}

struct BandArgs {
  std::string fit, out = "-", q, mode = "index", path = "generic", v, format;
  double alpha = 0.05;
  int draws = 20000;
  std::uint64_t seed = 1;
  int per_cell = 10;
};

int cmd_band(const BandArgs& a) {
  const auto loaded = pbm::fit_from_json(read_json(a.fit));
  const auto& fit = *loaded.fit;
  pbm::SandwichSet sand(loaded.fit, loaded.data);
  std::vector<double> qs = a.q.empty() ? fit.q_grid : parse_list(a.q);
  pbm::MultiIndex v(loaded.data.d, 0);
  if (!a.v.empty()) {
    const auto vv = parse_list(a.v);
    pbm::require(vv.size() == loaded.data.d, pbm::ErrorCode::InvalidArgument, "--v needs one entry per dimension");
    for (std::size_t j = 0; j < vv.size(); ++j) v[j] = static_cast<int>(vv[j]);
  }
  const auto grid = pbm::make_grid(fit.basis->partition(), a.per_cell, qs, v);
  pbm::SimOptions so;
  so.alpha = a.alpha;
  so.n_draws = a.draws;
  so.seed = a.seed;
  so.keep_draws = false;
  pbm::require(a.path == "generic" || a.path == "bridge", pbm::ErrorCode::InvalidArgument,
               "--path must be generic|bridge");
  so.path = a.path == "bridge" ? pbm::SimPath::BrownianBridge : pbm::SimPath::Generic;
  pbm::BandResult band;
  if (a.mode == "index") {
    band = pbm::simulate_band(sand, grid, so);
  } else if (a.mode == "level") {
    band = pbm::level_band(sand, grid, so, pbm::LevelMode::Delta);
  } else if (a.mode == "level-transformed") {
    band = pbm::level_band(sand, grid, so, pbm::LevelMode::Transformed);
  } else if (a.mode == "marginal") {
    band = pbm::marginal_effect_band(sand, grid, so);
  } else {
    pbm::fail(pbm::ErrorCode::InvalidArgument, "--mode must be index|level|level-transformed|marginal");
  }
  const bool as_json = a.format == "json" || (a.format.empty() && ends_with(a.out, ".json"));
  if (as_json) {
    write_text(a.out, pbm::band_to_json(band).dump(2) + "\n");
  } else {
    std::ostringstream os;
    pbm::write_band_csv(os, band);
    write_text(a.out, os.str());
  }
  return 0;
}

struct BasisArgs {
  std::string basis = "bspline", cells = "8", v, out = "-";
  int order = 2;
  int n_mc = 100000;
  std::uint64_t seed = 1;
};

int cmd_check_basis(const BasisArgs& a) {
  const auto counts = parse_list(a.cells);
  pbm::require(!counts.empty(), pbm::ErrorCode::InvalidArgument, "--cells is empty");
  std::vector<std::size_t> cells;
  for (double c : counts) cells.push_back(static_cast<std::size_t>(c));
  const std::size_t d = cells.size();
  pbm::Domain dom{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  pbm::BasisSpec spec;
  spec.kind = a.basis == "bspline" ? pbm::BasisKind::BSpline : pbm::BasisKind::PiecewisePoly;
  spec.order = a.order;
  pbm::Basis basis(pbm::build_tensor_partition(dom, cells), spec);
  pbm::MultiIndex v(d, 0);
  if (!a.v.empty()) {
    const auto vv = parse_list(a.v);
    pbm::require(vv.size() == d, pbm::ErrorCode::InvalidArgument, "--v needs one entry per dimension");
    for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<int>(vv[j]);
  }
  pbm::require(a.n_mc >= 100, pbm::ErrorCode::InvalidArgument, "--n-mc must be >= 100");
  const auto r = pbm::check_local_basis(basis, static_cast<std::size_t>(a.n_mc), v, a.seed);
  const json j{{"schema_version", pbm::kSchemaVersion},
               {"kind", "basis_check"},
               {"K", basis.size()},
               {"h", basis.partition().mesh()},
               {"v", v},
               {"min_scaled_norm", r.min_scaled_norm},
               {"max_scaled_norm", r.max_scaled_norm},
               {"min_local_gram_eig", r.min_local_gram_eig}};
  write_text(a.out, j.dump(2) + "\n");
  return 0;
}

int cmd_mc(const std::string& kind, const std::string& config, const std::string& out) {
  pbm::ExperimentConfig c;
  const json j = read_json(config);
  try {
    c = j.get<pbm::ExperimentConfig>();
  } catch (const json::exception& e) {
    pbm::fail(pbm::ErrorCode::InvalidArgument, config + ": " + e.what());
  }
  c.experiment = kind;
  const auto report = pbm::run_experiment(c);
  write_text(out, report.to_json().dump(2) + "\n");
  if (!report.ok) {
    std::cerr << "error: more than " << c.max_error_rate * 100.0 << "% of replicates failed\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  pbm::apply_thread_env();
  CLI::App app{"Partitioning-based M-estimation with uniform inference"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "fit the coefficient process from x1..xd,y CSV data");
  fit->add_option("--data", fa.data, "input CSV")->required();
  fit->add_option("--loss", fa.loss, "quantile|distribution|lp:<p>|logistic|huber|tukey");
  fit->add_option("--link", fa.link, "identity|logit|cloglog");
  fit->add_option("--cells", fa.cells, "cells per dimension (one value or a comma list)");
  fit->add_option("--knots", fa.knots, "uniform|quantile");
  fit->add_option("--order", fa.order, "basis order m");
  fit->add_option("--basis", fa.basis, "bspline|piecewise_poly");
  fit->add_option("--q", fa.q, "comma separated q levels");
  fit->add_option("--q-count", fa.q_count, "equispaced q levels on the loss domain when --q is absent");
  fit->add_option("--box-R", fa.box_r, "box radius for non-convex losses");
  fit->add_option("--min-obs", fa.min_obs, "minimum observations per cell");
  fit->add_option("--density-constant", fa.density_constant, "quantile density bandwidth constant");
  fit->add_flag("--allow-small-n", fa.allow_small_n, "permit n < K");
  fit->add_option("--out", fa.out, "output JSON (default stdout)");

  BandArgs ba;
  auto* band = app.add_subcommand("band", "uniform confidence band from a fit JSON");
  band->add_option("--fit", ba.fit, "fit JSON")->required();
  band->add_option("--alpha", ba.alpha, "significance level");
  band->add_option("--draws", ba.draws, "Gaussian draws");
  band->add_option("--seed", ba.seed, "master seed");
  band->add_option("--q", ba.q, "subset of the fit q-grid");
  band->add_option("--v", ba.v, "derivative multi-index, comma separated");
  band->add_option("--per-cell", ba.per_cell, "x points per cell and dimension");
  band->add_option("--mode", ba.mode, "index|level|level-transformed|marginal");
  band->add_option("--path", ba.path, "generic|bridge");
  band->add_option("--format", ba.format, "csv|json (default from --out extension)");
  band->add_option("--out", ba.out, "output file (default stdout)");

  BasisArgs ka;
  auto* cb = app.add_subcommand("check-basis", "local basis diagnostics on the unit cube");
  cb->add_option("--basis", ka.basis, "bspline|piecewise_poly");
  cb->add_option("--order", ka.order, "basis order m");
  cb->add_option("--cells", ka.cells, "cells per dimension, comma separated");
  cb->add_option("--v", ka.v, "derivative multi-index");
  cb->add_option("--n-mc", ka.n_mc, "Monte Carlo points");
  cb->add_option("--seed", ka.seed, "seed");
  cb->add_option("--out", ka.out, "output JSON (default stdout)");

  std::string mc_kind, mc_config, mc_out = "-";
  auto* mc = app.add_subcommand("mc", "Monte Carlo experiments");
  mc->add_option("kind", mc_kind, "coverage|rates|bahadur")->required()->check(CLI::IsMember({"coverage", "rates", "bahadur"}));
  mc->add_option("--config", mc_config, "experiment config JSON")->required();
  mc->add_option("--out", mc_out, "report JSON (default stdout)");

  app.add_subcommand("version", "print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*fit) return cmd_fit(fa);
    if (*band) return cmd_band(ba);
    if (*cb) return cmd_check_basis(ka);
    if (*mc) return cmd_mc(mc_kind, mc_config, mc_out);
    std::cout << "pbm " << kVersion << "\n";
    return 0;
  } catch (const pbm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (pbm::classify(e.code())) {
      case pbm::ErrorClass::Usage:
        return 1;
      case pbm::ErrorClass::Data:
        return 2;
      case pbm::ErrorClass::Numerical:
        return 3;
    }
    return 3;
  }
}
