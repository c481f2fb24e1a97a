#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "krigscd/grid.hpp"
#include "krigscd/maskgen.hpp"
#include "krigscd/metrics.hpp"

namespace krigscd {

inline constexpr int kReportSchemaVersion = 1;

enum class MetricRegion { all, unknown };

MetricRegion parse_metric_region(std::string_view name);
std::string_view to_string(MetricRegion region);

struct MetricRow {
  std::string method;
  double coverage = 0.0;  // realized known fraction of the conditioning mask
  double rmse = 0.0;
  double mae = 0.0;
  double mre = 0.0;
  double lacunarity_error = 0.0;
  bool krig_smooth = false;
  int ensemble_size = 1;
};

struct MetricReport {
  MetricRegion region = MetricRegion::all;
  std::optional<MaskRecipe> recipe;
  std::vector<MetricRow> rows;
};

struct Reconstruction {
  std::string method;
  Field field;
  bool krig_smooth = false;
  int ensemble_size = 1;
};

struct ReportOptions {
  MetricRegion region = MetricRegion::all;
  LacunarityOptions lacunarity;
  std::vector<std::int64_t> lacunarity_scales;  // empty selects the defaults
};

MetricRow score_reconstruction(const Field& truth, const Reconstruction& recon, const ObservationMask& mask,
                               const ReportOptions& options = {});

MetricReport build_report(const Field& truth, const std::vector<Reconstruction>& recons, const ObservationMask& mask,
                          const ReportOptions& options = {});

nlohmann::ordered_json to_json(const MetricReport& report);
// Throws FormatError when `j` does not follow the report schema.
void validate_report_json(const nlohmann::json& j);
MetricReport report_from_json(const nlohmann::json& j);

std::string report_csv_header();
std::string to_csv_row(const MetricRow& row);
std::string to_csv(const MetricReport& report);

}  // namespace krigscd
