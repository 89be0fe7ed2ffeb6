#include "pbm/serialize.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pbm/error.hpp"

namespace pbm {

using nlohmann::json;

LossPtr make_loss(const LossSpec& spec) {
  if (spec.key == "quantile") {
    QuantileOptions o;
    o.density_constant = spec.density_constant;
    o.eps0 = spec.eps0;
    return quantile_loss(spec.link.empty() ? Link::identity() : link_from_key(spec.link), o);
  }
  return loss_from_key(spec.key, spec.link);
}

void to_json(json& j, const LossSpec& s) {
  j = json{{"key", s.key}, {"link", s.link}};
  if (s.key == "quantile") {
    j["density_constant"] = s.density_constant;
    j["eps0"] = s.eps0;
  }
}

void from_json(const json& j, LossSpec& s) {
  s.key = j.value("key", s.key);
  s.link = j.value("link", s.link);
  s.density_constant = j.value("density_constant", s.density_constant);
  s.eps0 = j.value("eps0", s.eps0);
}

void to_json(json& j, const SolverOptions& o) {
  j = json{{"max_iter", o.max_iter},
           {"grad_tol", o.grad_tol},
           {"auto_box", o.auto_box},
           {"smoothing_tau_min_rel", o.smoothing_tau_min_rel},
           {"smoothing_decay", o.smoothing_decay},
           {"polish_steps", o.polish_steps},
           {"min_obs_per_cell", o.min_obs_per_cell},
           {"require_n_ge_K", o.require_n_ge_K}};
  j["box_R"] = o.box_R ? json(*o.box_R) : json(nullptr);
  j["smoothing_tau0"] = o.smoothing_tau0 ? json(*o.smoothing_tau0) : json(nullptr);
}

void from_json(const json& j, SolverOptions& o) {
  o.max_iter = j.value("max_iter", o.max_iter);
  o.grad_tol = j.value("grad_tol", o.grad_tol);
  o.auto_box = j.value("auto_box", o.auto_box);
  o.smoothing_tau_min_rel = j.value("smoothing_tau_min_rel", o.smoothing_tau_min_rel);
  o.smoothing_decay = j.value("smoothing_decay", o.smoothing_decay);
  o.polish_steps = j.value("polish_steps", o.polish_steps);
  o.min_obs_per_cell = j.value("min_obs_per_cell", o.min_obs_per_cell);
  o.require_n_ge_K = j.value("require_n_ge_K", o.require_n_ge_K);
  if (j.contains("box_R") && !j["box_R"].is_null()) o.box_R = j["box_R"].get<double>();
  if (j.contains("smoothing_tau0") && !j["smoothing_tau0"].is_null())
    o.smoothing_tau0 = j["smoothing_tau0"].get<double>();
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    const auto a = cur.find_first_not_of(" \t\r");
    const auto b = cur.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? std::string() : cur.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  require(ec == std::errc() && ptr == last && !s.empty(), ErrorCode::DataError,
          "line " + std::to_string(line) + ": '" + s + "' is not a number");
  require(std::isfinite(v), ErrorCode::DataError, "line " + std::to_string(line) + ": non-finite value");
  return v;
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  require(lineno > 0 && !line.empty(), ErrorCode::DataError, "empty CSV input");
  const auto header = split(line);
  require(header.size() >= 2 && header.back() == "y", ErrorCode::DataError,
          "line " + std::to_string(lineno) + ": header must be x1,...,xd,y");
  for (std::size_t j = 0; j + 1 < header.size(); ++j)
    require(header[j] == "x" + std::to_string(j + 1), ErrorCode::DataError,
            "line " + std::to_string(lineno) + ": header column " + std::to_string(j + 1) + " must be x" +
                std::to_string(j + 1));
  Dataset data;
  data.d = header.size() - 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split(line);
    require(f.size() == header.size(), ErrorCode::DataError,
            "line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " fields, got " +
                std::to_string(f.size()));
    for (std::size_t j = 0; j < data.d; ++j) data.X.push_back(parse_number(f[j], lineno));
    data.y.push_back(parse_number(f.back(), lineno));
  }
  require(data.n() > 0, ErrorCode::DataError, "CSV has no data rows");
  return data;
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::DataError, "cannot open " + path);
  return read_csv(in);
}

void write_csv(std::ostream& out, const Dataset& data) {
  out << std::setprecision(17);
  for (std::size_t j = 0; j < data.d; ++j) out << "x" << j + 1 << ",";
  out << "y\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.d; ++j) out << data.X[i * data.d + j] << ",";
    out << data.y[i] << "\n";
  }
}

json fit_to_json(const FitResult& fit, const Dataset& data, const LossSpec& loss) {
  const Basis& b = *fit.basis;
  const Partition& part = b.partition();
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "fit";
  j["partition"] = {{"lower", part.domain().lower},
                    {"upper", part.domain().upper},
                    {"knots", part.knots()},
                    {"ratio_bound", part.ratio_bound()}};
  j["basis"] = {{"kind", b.spec().kind == BasisKind::BSpline ? "bspline" : "piecewise_poly"},
                {"order", b.spec().order},
                {"derivative_cap", b.spec().cap()},
                {"K", b.size()}};
  j["loss"] = loss;
  j["loss"]["link_scale"] = fit.loss->link().scale();
  j["options"] = fit.options;
  j["q_grid"] = fit.q_grid;
  j["beta"] = fit.beta;
  j["converged"] = std::vector<bool>(fit.converged.begin(), fit.converged.end());
  j["grad_norm"] = fit.grad_norm;
  j["objective"] = fit.objective;
  j["iterations"] = fit.iterations;
  j["box_R"] = fit.box_R ? json(*fit.box_R) : json(nullptr);
  j["data"] = {{"d", data.d}, {"X", data.X}, {"y", data.y}};
  return j;
}

LoadedFit fit_from_json(const json& j) {
  try {
    require(j.value("schema_version", 0) == kSchemaVersion, ErrorCode::DataError,
            "unsupported fit schema version " + std::to_string(j.value("schema_version", 0)));
    LoadedFit out;
    const auto& jp = j.at("partition");
    Partition part(Domain{jp.at("lower").get<std::vector<double>>(), jp.at("upper").get<std::vector<double>>()},
                   jp.at("knots").get<std::vector<std::vector<double>>>(), jp.value("ratio_bound", 4.0));
    const auto& jb = j.at("basis");
    BasisSpec spec;
    spec.kind = jb.at("kind").get<std::string>() == "bspline" ? BasisKind::BSpline : BasisKind::PiecewisePoly;
    spec.order = jb.at("order").get<int>();
    spec.derivative_cap = jb.value("derivative_cap", -1);
    auto basis = std::make_shared<const Basis>(std::move(part), spec);
    out.loss = j.at("loss").get<LossSpec>();
    out.data.d = j.at("data").at("d").get<std::size_t>();
    out.data.X = j.at("data").at("X").get<std::vector<double>>();
    out.data.y = j.at("data").at("y").get<std::vector<double>>();
    out.data.validate(basis->partition().domain());

    auto fit = std::make_shared<FitResult>();
    fit->basis = basis;
    fit->loss = make_loss(out.loss);
    fit->options = j.at("options").get<SolverOptions>();
    fit->q_grid = j.at("q_grid").get<std::vector<double>>();
    fit->beta = j.at("beta").get<std::vector<std::vector<double>>>();
    for (bool c : j.at("converged").get<std::vector<bool>>()) fit->converged.push_back(c ? 1 : 0);
    fit->grad_norm = j.at("grad_norm").get<std::vector<double>>();
    fit->objective = j.at("objective").get<std::vector<double>>();
    fit->iterations = j.at("iterations").get<std::vector<int>>();
    if (!j.at("box_R").is_null()) fit->box_R = j.at("box_R").get<double>();
    require(fit->beta.size() == fit->q_grid.size(), ErrorCode::DataError, "beta rows do not match the q-grid");
    for (const auto& row : fit->beta)
      require(row.size() == basis->size(), ErrorCode::DataError, "beta row length does not match K");
    fit->design = build_design(*basis, out.data);
    out.fit = std::move(fit);
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::DataError, std::string("malformed fit JSON: ") + e.what());
  }
}

void write_band_csv(std::ostream& out, const BandResult& band) {
  const auto& g = band.grid;
  const std::size_t d = g.x_points.empty() ? 0 : g.x_points.front().size();
  out << std::setprecision(17);
  for (std::size_t j = 0; j < d; ++j) out << "x" << j + 1 << ",";
  out << "q,center,lo,hi,omega\n";
  for (std::size_t qj = 0; qj < g.nq(); ++qj)
    for (std::size_t xi = 0; xi < g.nx(); ++xi) {
      const std::size_t k = g.point(xi, qj);
      for (double v : g.x_points[xi]) out << v << ",";
      out << g.q_points[qj] << "," << band.mu_hat[k] << "," << band.lo[k] << "," << band.hi[k] << ","
          << band.omega_hat[k] << "\n";
    }
}

json band_to_json(const BandResult& band) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "band";
  j["x_points"] = band.grid.x_points;
  j["q_points"] = band.grid.q_points;
  j["v"] = band.grid.v;
  j["center"] = band.mu_hat;
  j["lo"] = band.lo;
  j["hi"] = band.hi;
  j["omega"] = band.omega_hat;
  j["crit"] = band.crit;
  j["alpha"] = band.alpha;
  j["n_draws"] = band.n_draws;
  j["seed"] = band.seed;
  const auto& s = band.sup_stats;
  j["sup_stat"] = {{"mean", s.mean}, {"sd", s.sd}, {"q50", s.q50}, {"q90", s.q90}, {"q95", s.q95}, {"q99", s.q99}};
  return j;
}

}  // namespace pbm
