#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "krigscd/report.hpp"

namespace krigscd {

inline const std::vector<std::string> kAllMethods = {"krige", "idw", "cgs", "diffuse-base", "diffuse-krigscd"};

enum class MaskMode { independent, nested, ratio_sweep };

MaskMode parse_mask_mode(std::string_view name);
std::string_view to_string(MaskMode mode);

// Flat run configuration. JSON keys match the member names.
struct RunConfig {
  // Ground truth: a field file, or a synthetic Gaussian field when `field` is empty.
  std::string field;
  std::string field_format = "auto";
  std::int64_t synthetic_size = 32;
  double synthetic_sill = 1.0;
  double synthetic_range = 4.0;
  std::uint64_t synthetic_seed = 0;

  // Observation mask: a mask file, or generated recipes over the sweep axes.
  std::string mask;
  std::vector<double> fractions{0.1};
  std::vector<double> ratios{1.0};
  std::vector<std::uint64_t> seeds{0};
  std::string mask_mode = "independent";
  std::int64_t swath_width = 2;
  std::int64_t swath_length_min = 0;
  std::int64_t swath_length_max = 0;

  std::vector<std::string> methods = kAllMethods;

  std::string schedule = "linear";
  int diffusion_steps = 250;
  int respaced_steps = 150;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  // Multiplies both linear endpoints by 1000 / diffusion_steps.
  bool beta_rescale = true;
  double cosine_offset = 0.008;
  int resample_r = 10;
  int resample_j = 10;
  int n_ensemble = 10;
  double krig_percentile = 5.0;
  // "analytic" or "external:<shell command>".
  std::string denoiser = "analytic";
  std::int64_t denoiser_timeout_ms = 30000;

  std::int64_t kriging_max_neighbors = 64;
  int variogram_bins = 15;
  double variogram_max_lag = 0.0;
  std::int64_t sgs_max_neighbors = 32;
  double sgs_search_ranges = 3.0;
  double idw_power = 2.0;

  std::string metric_region = "all";
  double lacunarity_offset = 1.0;
  bool write_members = false;

  // Not part of the lockfile: neither changes any artifact byte.
  std::string outdir = "krigscd-out";
  int threads = 0;

  void validate() const;
};

// Applies the keys of `j` over `base`; unknown keys and mistyped values raise ConfigError.
RunConfig apply_config_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Fully resolved configuration written as config.lock.json.
nlohmann::ordered_json lock_json(const RunConfig& config);

struct CellOutcome {
  std::string method;
  double fraction = 0.0;  // requested fraction, or the realized one for a mask file
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path directory;  // relative to the output root
  bool ok = false;
  int exit_code = 0;
  std::string error;
  MetricRow row;
};

struct RunSummary {
  std::filesystem::path outdir;
  std::vector<CellOutcome> cells;

  std::int64_t failed() const;
  int first_exit_code() const;
};

enum class FailurePolicy { abort, continue_sweep };

// Runs every (mask, method) cell and writes the artifact tree. Output is staged beside `outdir` and moved
// into place on success; with FailurePolicy::abort any failing cell removes the staging tree and rethrows.
RunSummary run_pipeline(const RunConfig& config, FailurePolicy policy);

inline RunSummary run_reconstruct(const RunConfig& config) { return run_pipeline(config, FailurePolicy::abort); }
inline RunSummary run_sweep(const RunConfig& config) { return run_pipeline(config, FailurePolicy::continue_sweep); }

// Per-(method, fraction, ratio) mean and sample standard deviation across seeds.
std::string aggregate_csv(const std::vector<CellOutcome>& cells);
std::string rows_csv(const std::vector<CellOutcome>& cells);

// Directory component for a (fraction, ratio) pair, e.g. "0.1_0.5".
std::string cell_label(double fraction, double ratio);

}  // namespace krigscd
