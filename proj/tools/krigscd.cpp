#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "krigscd/field_io.hpp"
#include "krigscd/maskgen.hpp"
#include "krigscd/metrics.hpp"
#include "krigscd/pipeline.hpp"
#include "krigscd/report.hpp"
#include "krigscd/selftest.hpp"

namespace fs = std::filesystem;
using namespace krigscd;

namespace {

// Flag values that override the config file when given.
struct RunFlags {
  std::string config;
  std::optional<std::string> field, field_format, mask, mask_mode, schedule, denoiser, metric_region, outdir;
  std::optional<std::vector<double>> fractions, ratios;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::vector<std::string>> methods;
  std::optional<std::int64_t> synthetic_size, swath_width, max_neighbors, timeout_ms;
  std::optional<double> fraction, ratio, krig_percentile, idw_power;
  std::optional<std::uint64_t> seed, synthetic_seed;
  std::optional<int> steps, respaced, r, j, n_ensemble, threads;
  bool krig_smooth = false;
  bool write_members = false;
};

void add_common(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "Flat JSON run configuration (flags override its keys)");
  cmd->add_option("--field", f.field, "Ground-truth field (.pgm, .csv, .raw); synthetic when omitted");
  cmd->add_option("--field-format", f.field_format, "auto, pgm, csv or raw-f64");
  cmd->add_option("--synthetic-size", f.synthetic_size, "Side of the synthetic Gaussian field");
  cmd->add_option("--synthetic-seed", f.synthetic_seed, "Seed of the synthetic field");
  cmd->add_option("--mask", f.mask, "Mask PGM (nonzero = known); generated from recipes when omitted");
  cmd->add_option("--fraction", f.fraction, "Known fraction of the generated mask");
  cmd->add_option("--ratio", f.ratio, "In-situ share of the known pixels");
  cmd->add_option("--swath-width", f.swath_width, "Swath width in pixels");
  cmd->add_option("--seed", f.seed, "Seed for masks and stochastic methods");
  cmd->add_option("--outdir", f.outdir, "Output directory");
  cmd->add_option("--metric-region", f.metric_region, "Score all pixels or unknown pixels only")
      ->check(CLI::IsMember({"all", "unknown"}));
  cmd->add_option("--max-neighbors", f.max_neighbors, "Kriging neighbors per target (0 = all)");
  cmd->add_option("--threads", f.threads, "Worker threads (default KRIGSCD_THREADS or all cores)");
  cmd->add_flag("--write-members", f.write_members, "Write ensemble members as members/NNN.raw");
}

void add_ensemble(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--n-ensemble", f.n_ensemble, "Ensemble members");
}

void add_diffusion(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--schedule", f.schedule, "linear or cosine")->check(CLI::IsMember({"linear", "cosine"}));
  cmd->add_option("--steps", f.steps, "Diffusion steps T");
  cmd->add_option("--respaced", f.respaced, "Respaced sampling steps T'");
  cmd->add_option("-r,--resample-r", f.r, "Composed steps at each resampling timestep");
  cmd->add_option("-j,--resample-j", f.j, "Resampling period in timesteps");
  cmd->add_option("--krig-percentile", f.krig_percentile, "Kriging-variance percentile for smoothing");
  cmd->add_option("--denoiser", f.denoiser, "analytic or external:<command>");
  cmd->add_option("--denoiser-timeout-ms", f.timeout_ms, "Per-request timeout of an external denoiser");
}

nlohmann::json flags_to_json(const RunFlags& f) {
  nlohmann::json j = nlohmann::json::object();
  auto set = [&](const char* key, const auto& opt) {
    if (opt) j[key] = *opt;
  };
  set("field", f.field);
  set("field_format", f.field_format);
  set("synthetic_size", f.synthetic_size);
  set("synthetic_seed", f.synthetic_seed);
  set("mask", f.mask);
  set("mask_mode", f.mask_mode);
  set("fractions", f.fractions);
  set("ratios", f.ratios);
  set("seeds", f.seeds);
  set("methods", f.methods);
  set("swath_width", f.swath_width);
  set("schedule", f.schedule);
  set("diffusion_steps", f.steps);
  set("respaced_steps", f.respaced);
  set("resample_r", f.r);
  set("resample_j", f.j);
  set("n_ensemble", f.n_ensemble);
  set("krig_percentile", f.krig_percentile);
  set("denoiser", f.denoiser);
  set("denoiser_timeout_ms", f.timeout_ms);
  set("kriging_max_neighbors", f.max_neighbors);
  set("idw_power", f.idw_power);
  set("metric_region", f.metric_region);
  set("outdir", f.outdir);
  set("threads", f.threads);
  if (f.fraction) j["fractions"] = std::vector<double>{*f.fraction};
  if (f.ratio) j["ratios"] = std::vector<double>{*f.ratio};
  if (f.seed) j["seeds"] = std::vector<std::uint64_t>{*f.seed};
  if (f.write_members) j["write_members"] = true;
  return j;
}

RunConfig resolve(const RunFlags& f, const std::vector<std::string>& forced_methods) {
  RunConfig config;
  if (!f.config.empty()) config = load_config(f.config);
  config = apply_config_json(flags_to_json(f), config);
  if (!forced_methods.empty()) config.methods = forced_methods;
  return config;
}

int report_run(const RunSummary& summary) {
  for (const CellOutcome& c : summary.cells) {
    if (c.ok)
      std::cout << c.directory.string() << "  rmse " << c.row.rmse << "  mae " << c.row.mae << "  mre " << c.row.mre
                << "  lacunarity " << c.row.lacunarity_error << "\n";
    else
      std::cerr << "krigscd: cell " << c.directory.string() << " failed: " << c.error << "\n";
  }
  std::cout << "wrote " << summary.outdir.string() << "\n";
  return summary.first_exit_code();
}

int gen_mask(const MaskRecipe& recipe, const std::vector<double>& nested, const std::vector<double>& ratios,
             const fs::path& out) {
  auto emit = [](const ObservationMask& m, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_mask(m, path);
    fs::path recipe_path = path;
    recipe_path.replace_extension(".recipe.json");
    write_file_atomic(recipe_path, to_json(*m.recipe).dump(2) + "\n");
    std::cout << path.string() << "  known " << m.known_count() << " (" << m.known_fraction() << ")\n";
  };
  if (!nested.empty() && !ratios.empty()) throw ConfigError("cli", "--nested and --ratios are exclusive");
  if (!nested.empty()) {
    const std::vector<ObservationMask> family = generate_nested_family(recipe, nested);
    for (std::size_t i = 0; i < family.size(); ++i)
      emit(family[i], out / ("mask_" + cell_label(nested[i], recipe.insitu_ratio) + ".pgm"));
  } else if (!ratios.empty()) {
    const std::vector<ObservationMask> sweep = generate_ratio_sweep(recipe, ratios);
    for (std::size_t i = 0; i < sweep.size(); ++i)
      emit(sweep[i], out / ("mask_" + cell_label(recipe.target_fraction, ratios[i]) + ".pgm"));
  } else {
    emit(generate_mask(recipe), out);
  }
  return 0;
}

int metrics_command(const fs::path& truth_path, const std::vector<std::string>& recon_specs,
                    const std::string& mask_path, const std::string& region, const std::string& out,
                    const std::string& csv, const std::vector<std::string>& kid, std::int64_t ensemble_n) {
  if (!recon_specs.empty()) {
    const Field truth = read_field(truth_path);
    const ObservationMask mask =
        mask_path.empty() ? ObservationMask(MaskGrid::Zero(truth.values.rows(), truth.values.cols())) : read_mask(mask_path);
    std::vector<Reconstruction> recons;
    for (const std::string& spec : recon_specs) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("cli", "--recon expects method=path, got '" + spec + "'");
      recons.push_back({spec.substr(0, eq), read_field(spec.substr(eq + 1)), false, 1});
    }
    ReportOptions opts;
    opts.region = parse_metric_region(region);
    const MetricReport report = build_report(truth, recons, mask, opts);
    const std::string json = to_json(report).dump(2) + "\n";
    if (out.empty()) std::cout << json;
    else write_file_atomic(out, json);
    if (!csv.empty()) write_file_atomic(csv, to_csv(report));
  }
  if (!kid.empty()) std::cout << "kid " << kid_mmd(read_features(kid.at(0)), read_features(kid.at(1))) << "\n";
  if (ensemble_n > 0) std::cout << "ensemble_size_probability " << ensemble_size_probability(ensemble_n) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial field reconstruction from sparse observations"};
  app.require_subcommand(1);

  MaskRecipe recipe;
  std::int64_t mask_size = 0;
  std::vector<double> nested, mask_ratios;
  std::string mask_out = "mask.pgm";
  auto* gen = app.add_subcommand("gen-mask", "Generate a swath + in-situ observation mask");
  gen->add_option("--height", recipe.shape.height, "Grid height")->capture_default_str();
  gen->add_option("--width", recipe.shape.width, "Grid width")->capture_default_str();
  gen->add_option("--size", mask_size, "Square grid side (overrides height and width)");
  gen->add_option("--fraction", recipe.target_fraction, "Known fraction")->capture_default_str();
  gen->add_option("--ratio", recipe.insitu_ratio, "In-situ share of the known pixels")->capture_default_str();
  gen->add_option("--swath-width", recipe.swath_width_px, "Swath width in pixels")->capture_default_str();
  gen->add_option("--length-min", recipe.swath_length_min, "Minimum swath length (0 = side / 4)");
  gen->add_option("--length-max", recipe.swath_length_max, "Maximum swath length (0 = 3 side / 4)");
  gen->add_option("--seed", recipe.seed, "Mask seed")->capture_default_str();
  gen->add_option("--nested", nested, "Write a nested family for these fractions into --out (a directory)")->delimiter(',');
  gen->add_option("--ratios", mask_ratios, "Write a ratio sweep at --fraction into --out (a directory)")->delimiter(',');
  gen->add_option("-o,--out", mask_out, "Output mask path or directory")->capture_default_str();

  RunFlags krige_flags, idw_flags, cgs_flags, diffuse_flags, sweep_flags;
  auto* krige = app.add_subcommand("krige", "Ordinary kriging reconstruction");
  add_common(krige, krige_flags);
  auto* idw = app.add_subcommand("idw", "Inverse distance weighting reconstruction");
  add_common(idw, idw_flags);
  idw->add_option("--power", idw_flags.idw_power, "Distance exponent");
  auto* cgs = app.add_subcommand("cgs", "Regression trend + sequential Gaussian simulation ensemble");
  add_common(cgs, cgs_flags);
  add_ensemble(cgs, cgs_flags);
  auto* diffuse = app.add_subcommand("diffuse", "Mask-conditioned diffusion sampling ensemble");
  add_common(diffuse, diffuse_flags);
  add_ensemble(diffuse, diffuse_flags);
  add_diffusion(diffuse, diffuse_flags);
  diffuse->add_flag("--krig-smooth", diffuse_flags.krig_smooth, "Pre-smooth low-variance pixels by kriging");
  auto* sweep = app.add_subcommand("sweep", "Parametric sweep over fractions, ratios, seeds and methods");
  add_common(sweep, sweep_flags);
  add_ensemble(sweep, sweep_flags);
  add_diffusion(sweep, sweep_flags);
  sweep->add_option("--fractions", sweep_flags.fractions, "Known fractions")->delimiter(',');
  sweep->add_option("--ratios", sweep_flags.ratios, "In-situ shares")->delimiter(',');
  sweep->add_option("--seeds", sweep_flags.seeds, "Seeds")->delimiter(',');
  sweep->add_option("--methods", sweep_flags.methods, "Subset of krige idw cgs diffuse-base diffuse-krigscd")->delimiter(',');
  sweep->add_option("--mask-mode", sweep_flags.mask_mode, "independent, nested or ratio-sweep");

  std::string truth_path, metrics_mask, region = "all", metrics_out, metrics_csv;
  std::vector<std::string> recon_specs, kid;
  std::int64_t ensemble_n = 0;
  auto* metrics = app.add_subcommand("metrics", "Score reconstructions against a truth field");
  metrics->add_option("--truth", truth_path, "Ground-truth field");
  metrics->add_option("--recon", recon_specs, "Reconstruction as method=path (repeatable)");
  metrics->add_option("--mask", metrics_mask, "Mask used for unknown-only scoring");
  metrics->add_option("--region", region, "all or unknown")->check(CLI::IsMember({"all", "unknown"}));
  metrics->add_option("-o,--out", metrics_out, "Report JSON path (stdout when omitted)");
  metrics->add_option("--csv", metrics_csv, "Report CSV path");
  metrics->add_option("--kid", kid, "KID between two raw-f32 feature files")->expected(2);
  metrics->add_option("--ensemble-probability", ensemble_n, "Print 2 Phi(sqrt(n)) - 1");

  app.add_subcommand("selftest", "Run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    if (*gen) {
      if (mask_size > 0) recipe.shape = {mask_size, mask_size};
      return gen_mask(recipe, nested, mask_ratios, mask_out);
    }
    if (*krige) return report_run(run_reconstruct(resolve(krige_flags, {"krige"})));
    if (*idw) return report_run(run_reconstruct(resolve(idw_flags, {"idw"})));
    if (*cgs) return report_run(run_reconstruct(resolve(cgs_flags, {"cgs"})));
    if (*diffuse)
      return report_run(
          run_reconstruct(resolve(diffuse_flags, {diffuse_flags.krig_smooth ? "diffuse-krigscd" : "diffuse-base"})));
    if (*sweep) return report_run(run_sweep(resolve(sweep_flags, {})));
    if (*metrics) {
      if (recon_specs.empty() && kid.empty() && ensemble_n == 0)
        throw ConfigError("cli", "metrics needs --recon, --kid or --ensemble-probability");
      if (!recon_specs.empty() && truth_path.empty()) throw ConfigError("cli", "--recon requires --truth");
      return metrics_command(truth_path, recon_specs, metrics_mask, region, metrics_out, metrics_csv, kid, ensemble_n);
    }
    return run_selftest(std::cout) == 0 ? 0 : static_cast<int>(ErrorKind::numeric);
  } catch (const Error& e) {
    std::cerr << "krigscd: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "krigscd: io: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const std::exception& e) {
    std::cerr << "krigscd: " << e.what() << "\n";
    return 1;
  }
}
