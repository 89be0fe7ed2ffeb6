#pragma once

#include <iosfwd>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>

#include "pbm/inference.hpp"
#include "pbm/solver.hpp"

namespace pbm {

inline constexpr int kSchemaVersion = 1;

/// Loss selection as typed on the command line.
struct LossSpec {
  std::string key = "quantile";
  std::string link;             // empty: model default
  double density_constant = 1.0;  // quantile only
  double eps0 = 0.05;             // quantile only
};

LossPtr make_loss(const LossSpec& spec);
void to_json(nlohmann::json& j, const LossSpec& s);
void from_json(const nlohmann::json& j, LossSpec& s);

void to_json(nlohmann::json& j, const SolverOptions& o);
void from_json(const nlohmann::json& j, SolverOptions& o);

/// CSV with header x1,...,xd,y. Malformed rows raise DataError naming the line.
Dataset read_csv(std::istream& in);
Dataset read_csv_file(const std::string& path);
void write_csv(std::ostream& out, const Dataset& data);

nlohmann::json fit_to_json(const FitResult& fit, const Dataset& data, const LossSpec& loss);

struct LoadedFit {
  Dataset data;
  LossSpec loss;
  std::shared_ptr<const FitResult> fit;
};
LoadedFit fit_from_json(const nlohmann::json& j);

/// Columns x1..xd,q,center,lo,hi,omega.
void write_band_csv(std::ostream& out, const BandResult& band);
nlohmann::json band_to_json(const BandResult& band);

}  // namespace pbm
