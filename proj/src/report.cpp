#include "krigscd/report.hpp"

#include <cmath>
#include <cstdio>

#include "krigscd/field_io.hpp"

namespace krigscd {

namespace {

constexpr const char* kModule = "report";

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const nlohmann::json& require(const nlohmann::json& j, const char* key, bool (nlohmann::json::*check)() const noexcept,
                              const char* type) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(kModule, std::string("missing key '") + key + "'");
  const nlohmann::json& v = j.at(key);
  if (!(v.*check)()) throw FormatError(kModule, std::string("key '") + key + "' must be " + type);
  return v;
}

}  // namespace

MetricRegion parse_metric_region(std::string_view name) {
  if (name == "all") return MetricRegion::all;
  if (name == "unknown") return MetricRegion::unknown;
  throw ConfigError(kModule, "metric region must be 'all' or 'unknown', got '" + std::string(name) + "'");
}

std::string_view to_string(MetricRegion region) { return region == MetricRegion::all ? "all" : "unknown"; }

MetricRow score_reconstruction(const Field& truth, const Reconstruction& recon, const ObservationMask& mask,
                               const ReportOptions& options) {
  require_same_shape(truth.shape(), recon.field.shape(), kModule);
  require_same_shape(truth.shape(), mask.shape(), kModule);
  const Grid truth_levels = quantize(truth.values);
  const Grid recon_levels = levels_on_truth_scale(truth, recon.field);
  const MaskGrid* exclude = options.region == MetricRegion::unknown ? &mask.known : nullptr;
  const PointwiseErrors err = pointwise_errors(truth_levels, recon_levels, exclude);
  const std::vector<std::int64_t> scales =
      options.lacunarity_scales.empty() ? default_lacunarity_scales(truth.shape()) : options.lacunarity_scales;

  MetricRow row;
  row.method = recon.method;
  row.coverage = mask.known_fraction();
  row.rmse = err.rmse;
  row.mae = err.mae;
  row.mre = err.mre;
  row.lacunarity_error = lacunarity_error(truth_levels, recon_levels, scales, options.lacunarity).error;
  row.krig_smooth = recon.krig_smooth;
  row.ensemble_size = recon.ensemble_size;
  return row;
}

MetricReport build_report(const Field& truth, const std::vector<Reconstruction>& recons, const ObservationMask& mask,
                          const ReportOptions& options) {
  MetricReport report;
  report.region = options.region;
  if (mask.recipe) report.recipe = *mask.recipe;
  for (const Reconstruction& r : recons) report.rows.push_back(score_reconstruction(truth, r, mask, options));
  return report;
}

nlohmann::ordered_json to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["schema"] = "krigscd.metrics";
  j["version"] = kReportSchemaVersion;
  j["region"] = std::string(to_string(report.region));
  j["mask_recipe"] = report.recipe ? to_json(*report.recipe) : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const MetricRow& r : report.rows) {
    nlohmann::ordered_json row;
    row["method"] = r.method;
    row["coverage"] = r.coverage;
    row["rmse"] = r.rmse;
    row["mae"] = r.mae;
    row["mre"] = r.mre;
    row["lacunarity_error"] = r.lacunarity_error;
    row["krig_smooth"] = r.krig_smooth;
    row["ensemble_size"] = r.ensemble_size;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j;
}

void validate_report_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError(kModule, "report must be a JSON object");
  if (require(j, "schema", &nlohmann::json::is_string, "a string").get<std::string>() != "krigscd.metrics")
    throw FormatError(kModule, "unexpected schema name");
  if (require(j, "version", &nlohmann::json::is_number_integer, "an integer").get<int>() != kReportSchemaVersion)
    throw FormatError(kModule, "unsupported report version");
  parse_metric_region(require(j, "region", &nlohmann::json::is_string, "a string").get<std::string>());
  if (!j.contains("mask_recipe")) throw FormatError(kModule, "missing key 'mask_recipe'");
  if (!j.at("mask_recipe").is_null()) {
    try {
      recipe_from_json(j.at("mask_recipe"));
    } catch (const Error& e) {
      throw FormatError(kModule, std::string("invalid mask_recipe: ") + e.what());
    }
  }
  const nlohmann::json& rows = require(j, "rows", &nlohmann::json::is_array, "an array");
  for (const nlohmann::json& row : rows) {
    require(row, "method", &nlohmann::json::is_string, "a string");
    for (const char* key : {"coverage", "rmse", "mae", "mre", "lacunarity_error"})
      require(row, key, &nlohmann::json::is_number, "a number");
    require(row, "krig_smooth", &nlohmann::json::is_boolean, "a boolean");
    require(row, "ensemble_size", &nlohmann::json::is_number_integer, "an integer");
    if (row.size() != 8) throw FormatError(kModule, "report row has unexpected keys");
    const double rmse = row["rmse"], mae = row["mae"], mre = row["mre"];
    if (mae < 0.0 || rmse < mae * (1.0 - 1e-12) || std::abs(mre) > 1.0)
      throw FormatError(kModule, "report row violates rmse >= mae >= 0, |mre| <= 1");
  }
  if (j.size() != 5) throw FormatError(kModule, "report has unexpected keys");
}

MetricReport report_from_json(const nlohmann::json& j) {
  validate_report_json(j);
  MetricReport report;
  report.region = parse_metric_region(j["region"].get<std::string>());
  if (!j["mask_recipe"].is_null()) report.recipe = recipe_from_json(j["mask_recipe"]);
  for (const nlohmann::json& row : j["rows"]) {
    MetricRow r;
    r.method = row["method"];
    r.coverage = row["coverage"];
    r.rmse = row["rmse"];
    r.mae = row["mae"];
    r.mre = row["mre"];
    r.lacunarity_error = row["lacunarity_error"];
    r.krig_smooth = row["krig_smooth"];
    r.ensemble_size = row["ensemble_size"];
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::string report_csv_header() { return "method,coverage,rmse,mae,mre,lacunarity_error,krig_smooth,ensemble_size"; }

std::string to_csv_row(const MetricRow& r) {
  return r.method + "," + format_number(r.coverage) + "," + format_number(r.rmse) + "," + format_number(r.mae) + "," +
         format_number(r.mre) + "," + format_number(r.lacunarity_error) + "," + (r.krig_smooth ? "true" : "false") +
         "," + std::to_string(r.ensemble_size);
}

std::string to_csv(const MetricReport& report) {
  std::string out = report_csv_header() + "\n";
  for (const MetricRow& r : report.rows) out += to_csv_row(r) + "\n";
  return out;
}

}  // namespace krigscd
