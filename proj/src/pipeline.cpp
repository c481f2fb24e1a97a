#include "krigscd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>

#include "krigscd/baselines.hpp"
#include "krigscd/diffusion.hpp"
#include "krigscd/external_denoiser.hpp"
#include "krigscd/field_io.hpp"
#include "krigscd/kriging.hpp"
#include "krigscd/maskgen.hpp"
#include "krigscd/parallel.hpp"

namespace krigscd {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "cli";

// Binds a JSON key to a RunConfig member for both parsing and lockfile emission.
struct ConfigKey {
  const char* name;
  std::function<void(RunConfig&, const nlohmann::json&)> read;
  std::function<void(const RunConfig&, nlohmann::ordered_json&)> write;
  bool locked = true;
};

template <typename T>
ConfigKey bind(const char* name, T RunConfig::*member, bool locked = true) {
  return {name,
          [name, member](RunConfig& c, const nlohmann::json& v) {
            try {
              c.*member = v.get<T>();
            } catch (const nlohmann::json::exception&) {
              throw ConfigError(kModule, std::string("config key '") + name + "' has the wrong type");
            }
          },
          [name, member](const RunConfig& c, nlohmann::ordered_json& j) { j[name] = c.*member; }, locked};
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      bind("field", &RunConfig::field),
      bind("field_format", &RunConfig::field_format),
      bind("synthetic_size", &RunConfig::synthetic_size),
      bind("synthetic_sill", &RunConfig::synthetic_sill),
      bind("synthetic_range", &RunConfig::synthetic_range),
      bind("synthetic_seed", &RunConfig::synthetic_seed),
      bind("mask", &RunConfig::mask),
      bind("fractions", &RunConfig::fractions),
      bind("ratios", &RunConfig::ratios),
      bind("seeds", &RunConfig::seeds),
      bind("mask_mode", &RunConfig::mask_mode),
      bind("swath_width", &RunConfig::swath_width),
      bind("swath_length_min", &RunConfig::swath_length_min),
      bind("swath_length_max", &RunConfig::swath_length_max),
      bind("methods", &RunConfig::methods),
      bind("schedule", &RunConfig::schedule),
      bind("diffusion_steps", &RunConfig::diffusion_steps),
      bind("respaced_steps", &RunConfig::respaced_steps),
      bind("beta_min", &RunConfig::beta_min),
      bind("beta_max", &RunConfig::beta_max),
      bind("beta_rescale", &RunConfig::beta_rescale),
      bind("cosine_offset", &RunConfig::cosine_offset),
      bind("resample_r", &RunConfig::resample_r),
      bind("resample_j", &RunConfig::resample_j),
      bind("n_ensemble", &RunConfig::n_ensemble),
      bind("krig_percentile", &RunConfig::krig_percentile),
      bind("denoiser", &RunConfig::denoiser),
      bind("denoiser_timeout_ms", &RunConfig::denoiser_timeout_ms),
      bind("kriging_max_neighbors", &RunConfig::kriging_max_neighbors),
      bind("variogram_bins", &RunConfig::variogram_bins),
      bind("variogram_max_lag", &RunConfig::variogram_max_lag),
      bind("sgs_max_neighbors", &RunConfig::sgs_max_neighbors),
      bind("sgs_search_ranges", &RunConfig::sgs_search_ranges),
      bind("idw_power", &RunConfig::idw_power),
      bind("metric_region", &RunConfig::metric_region),
      bind("lacunarity_offset", &RunConfig::lacunarity_offset),
      bind("write_members", &RunConfig::write_members),
      bind("outdir", &RunConfig::outdir, false),
      bind("threads", &RunConfig::threads, false),
  };
  return keys;
}

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

struct MaskJob {
  double fraction = 0.0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::string label;
  ObservationMask mask;
};

struct MethodOutput {
  Field recon;
  std::vector<Field> members;
  std::optional<Field> variance;
  bool krig_smooth = false;
  int ensemble_size = 1;
};

Field load_truth(const RunConfig& c) {
  if (c.field.empty()) {
    const GaussianFieldPrior prior({c.synthetic_size, c.synthetic_size}, 0.0, {c.synthetic_sill, c.synthetic_range});
    Rng rng(c.synthetic_seed);
    return Field(prior.sample(rng));
  }
  const fs::path path(c.field);
  return c.field_format == "auto" ? read_field(path) : read_field(path, parse_field_format(c.field_format));
}

MaskRecipe make_recipe(const RunConfig& c, GridShape shape, double fraction, double ratio, std::uint64_t seed) {
  MaskRecipe r;
  r.shape = shape;
  r.target_fraction = fraction;
  r.insitu_ratio = ratio;
  r.swath_width_px = c.swath_width;
  r.swath_length_min = c.swath_length_min;
  r.swath_length_max = c.swath_length_max;
  r.seed = seed;
  r.validate();
  return r;
}

// Returns permutation indices that sort `v` ascending, stable.
std::vector<std::size_t> ascending_order(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

std::vector<MaskJob> build_masks(const RunConfig& c, GridShape shape) {
  std::vector<MaskJob> jobs;
  if (!c.mask.empty()) {
    ObservationMask mask = read_mask(c.mask);
    require_same_shape(shape, mask.shape(), kModule);
    for (std::uint64_t seed : c.seeds) jobs.push_back({mask.known_fraction(), 0.0, seed, "file", mask});
    return jobs;
  }

  const std::size_t nf = c.fractions.size(), nr = c.ratios.size(), ns = c.seeds.size();
  std::vector<std::optional<ObservationMask>> grid(nf * nr * ns);
  auto at = [&](std::size_t f, std::size_t r, std::size_t s) -> std::optional<ObservationMask>& {
    return grid[(f * nr + r) * ns + s];
  };
  const MaskMode mode = parse_mask_mode(c.mask_mode);
  for (std::size_t s = 0; s < ns; ++s) {
    if (mode == MaskMode::independent) {
      for (std::size_t f = 0; f < nf; ++f)
        for (std::size_t r = 0; r < nr; ++r)
          at(f, r, s) = generate_mask(make_recipe(c, shape, c.fractions[f], c.ratios[r], c.seeds[s]));
    } else if (mode == MaskMode::nested) {
      const std::vector<std::size_t> order = ascending_order(c.fractions);
      std::vector<double> sorted;
      for (std::size_t i : order) sorted.push_back(c.fractions[i]);
      for (std::size_t r = 0; r < nr; ++r) {
        std::vector<ObservationMask> family =
            generate_nested_family(make_recipe(c, shape, sorted.front(), c.ratios[r], c.seeds[s]), sorted);
        for (std::size_t k = 0; k < order.size(); ++k) at(order[k], r, s) = std::move(family[k]);
      }
    } else {
      for (std::size_t f = 0; f < nf; ++f) {
        std::vector<ObservationMask> sweep =
            generate_ratio_sweep(make_recipe(c, shape, c.fractions[f], c.ratios.front(), c.seeds[s]), c.ratios);
        for (std::size_t r = 0; r < nr; ++r) at(f, r, s) = std::move(sweep[r]);
      }
    }
  }
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t s = 0; s < ns; ++s)
        jobs.push_back({c.fractions[f], c.ratios[r], c.seeds[s], cell_label(c.fractions[f], c.ratios[r]),
                        std::move(*at(f, r, s))});
  return jobs;
}

NoiseSchedule build_schedule(const RunConfig& c) {
  NoiseSchedule parent;
  if (parse_schedule_kind(c.schedule) == ScheduleKind::cosine) {
    parent = cosine_schedule(c.diffusion_steps, c.cosine_offset);
  } else {
    const double scale = c.beta_rescale ? 1000.0 / c.diffusion_steps : 1.0;
    parent = linear_schedule(c.diffusion_steps, std::min(scale * c.beta_min, 0.999), std::min(scale * c.beta_max, 0.999));
  }
  return respace(parent, c.respaced_steps);
}

VariogramOptions variogram_options(const RunConfig& c) {
  VariogramOptions v;
  v.n_bins = c.variogram_bins;
  v.max_lag = c.variogram_max_lag;
  return v;
}

KrigingOptions kriging_options(const RunConfig& c, int threads) {
  KrigingOptions k;
  k.max_neighbors = static_cast<std::size_t>(c.kriging_max_neighbors);
  k.variogram = variogram_options(c);
  k.threads = threads;
  return k;
}

MethodOutput run_diffusion(const RunConfig& c, const Field& truth, const ObservationMask& mask, std::uint64_t seed,
                           bool smooth, int threads) {
  const ModelSpace space{truth.range()};
  const Field encoded(space.encode(truth.values));
  const ObservationSet obs = apply_mask(encoded, mask);
  const VariogramModel model = fit_variogram_or_white(obs, truth.shape(), variogram_options(c));
  const NoiseSchedule schedule = build_schedule(c);

  SamplerOptions opts;
  opts.resample_r = c.resample_r;
  opts.resample_j = c.resample_j;
  opts.krig_smooth = smooth;
  opts.krig_percentile = c.krig_percentile;
  opts.kriging_model = model;
  opts.kriging = kriging_options(c, threads);
  opts.threads = threads;

  std::unique_ptr<Denoiser> denoiser;
  ExternalDenoiser* external = nullptr;
  if (c.denoiser == "analytic") {
    denoiser = std::make_unique<AnalyticGaussianDenoiser>(GaussianFieldPrior(truth.shape(), obs.values.mean(), model));
  } else {
    auto ext = std::make_unique<ExternalDenoiser>(
        ExternalDenoiserConfig{c.denoiser.substr(9), std::chrono::milliseconds(c.denoiser_timeout_ms)});
    external = ext.get();
    denoiser = std::move(ext);
  }

  const DiffusionEnsemble result = ensemble_reconstruct(encoded, mask, *denoiser, schedule, opts, c.n_ensemble, seed);
  if (external && !external->latencies().empty()) {
    std::int64_t total = 0, worst = 0;
    for (auto l : external->latencies()) {
      total += l.count();
      worst = std::max<std::int64_t>(worst, l.count());
    }
    std::cerr << "krigscd: external denoiser " << external->latencies().size() << " calls, mean "
              << total / static_cast<std::int64_t>(external->latencies().size()) << " us, max " << worst << " us\n";
  }

  MethodOutput out;
  out.krig_smooth = smooth;
  out.ensemble_size = c.n_ensemble;
  for (const Field& m : result.ensemble.members) {
    Field decoded(space.decode(m.values), truth.units);
    for (Eigen::Index i = 0; i < decoded.values.size(); ++i)
      if (mask.known.data()[i]) decoded.values.data()[i] = truth.values.data()[i];
    out.members.push_back(std::move(decoded));
  }
  out.recon = ensemble_mean(out.members);
  return out;
}

MethodOutput run_method(const std::string& method, const RunConfig& c, const Field& truth,
                        const ObservationMask& mask, std::uint64_t seed, int threads) {
  MethodOutput out;
  if (method == "krige") {
    KrigedField k = krige_field(truth, mask, std::nullopt, kriging_options(c, threads));
    out.recon = std::move(k.estimate);
    out.variance = std::move(k.variance);
  } else if (method == "idw") {
    out.recon = idw_field(truth, mask, IDWParams{c.idw_power});
  } else if (method == "cgs") {
    CgsOptions opts;
    opts.sgs.max_neighbors = static_cast<std::size_t>(c.sgs_max_neighbors);
    opts.sgs.search_ranges = c.sgs_search_ranges;
    opts.variogram = variogram_options(c);
    opts.threads = threads;
    CgsResult r = cgs_reconstruct(truth, mask, c.n_ensemble, seed, opts);
    out.recon = std::move(r.ensemble.mean);
    out.members = std::move(r.ensemble.members);
    out.ensemble_size = c.n_ensemble;
  } else if (method == "diffuse-base" || method == "diffuse-krigscd") {
    out = run_diffusion(c, truth, mask, seed, method == "diffuse-krigscd", threads);
  } else {
    throw ConfigError(kModule, "unknown method '" + method + "'");
  }
  out.recon.units = truth.units;
  return out;
}

void write_cell(const fs::path& dir, const MethodOutput& out, const MetricReport& report, bool write_members) {
  fs::create_directories(dir);
  write_field(out.recon, dir / "recon.pgm", FieldFormat::pgm);
  write_field(out.recon, dir / "recon.raw", FieldFormat::raw_f64);
  if (out.variance) write_field(*out.variance, dir / "variance.raw", FieldFormat::raw_f64);
  if (write_members && !out.members.empty()) {
    fs::create_directories(dir / "members");
    for (std::size_t i = 0; i < out.members.size(); ++i) {
      char name[16];
      std::snprintf(name, sizeof name, "%03zu.raw", i);
      write_field(out.members[i], dir / "members" / name, FieldFormat::raw_f64);
    }
  }
  write_file_atomic(dir / "report.json", dump(to_json(report)));
}

void write_mask_artifact(const fs::path& root, const MaskJob& job) {
  const fs::path dir = root / "masks" / job.label;
  fs::create_directories(dir);
  const std::string stem = "seed" + std::to_string(job.seed);
  write_mask(job.mask, dir / (stem + ".pgm"));
  if (job.mask.recipe) write_file_atomic(dir / (stem + ".recipe.json"), dump(to_json(*job.mask.recipe)));
}

int exit_code_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    return err.exit_code();
  } catch (const fs::filesystem_error&) {
    return static_cast<int>(ErrorKind::data);
  } catch (...) {
    return 1;
  }
}

std::string message_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& err) {
    return err.what();
  } catch (...) {
    return "unknown error";
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void move_into_place(const fs::path& staging, const fs::path& outdir) {
  if (fs::exists(outdir)) {
    const fs::path old = outdir.string() + ".old";
    fs::remove_all(old);
    fs::rename(outdir, old);
    fs::rename(staging, outdir);
    fs::remove_all(old);
  } else {
    if (outdir.has_parent_path()) fs::create_directories(outdir.parent_path());
    fs::rename(staging, outdir);
  }
}

}  // namespace

MaskMode parse_mask_mode(std::string_view name) {
  if (name == "independent") return MaskMode::independent;
  if (name == "nested") return MaskMode::nested;
  if (name == "ratio-sweep") return MaskMode::ratio_sweep;
  throw ConfigError(kModule, "mask_mode must be independent, nested or ratio-sweep");
}

std::string_view to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::independent: return "independent";
    case MaskMode::nested: return "nested";
    case MaskMode::ratio_sweep: return "ratio-sweep";
  }
  return "independent";
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(kModule, what); };
  if (field.empty() && (synthetic_size < 2 || synthetic_size * synthetic_size > kMaxDensePriorPixels))
    fail("synthetic_size must lie in [2, 64]");
  if (!(synthetic_sill > 0.0) || !(synthetic_range > 0.0)) fail("synthetic_sill and synthetic_range must be positive");
  if (field_format != "auto") parse_field_format(field_format);
  if (fractions.empty() || ratios.empty() || seeds.empty()) fail("fractions, ratios and seeds must be nonempty");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) fail("fractions must lie in (0, 1]");
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) fail("ratios must lie in [0, 1]");
  parse_mask_mode(mask_mode);
  if (methods.empty()) fail("methods must be nonempty");
  for (const std::string& m : methods)
    if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end()) fail("unknown method '" + m + "'");
  parse_schedule_kind(schedule);
  if (diffusion_steps < 1) fail("diffusion_steps must be at least 1");
  if (respaced_steps < 1 || respaced_steps > diffusion_steps) fail("respaced_steps must lie in [1, diffusion_steps]");
  if (resample_r < 1 || resample_j < 1) fail("resample_r and resample_j must be at least 1");
  if (n_ensemble < 1) fail("n_ensemble must be at least 1");
  if (!(krig_percentile >= 0.0 && krig_percentile <= 100.0)) fail("krig_percentile must lie in [0, 100]");
  if (denoiser != "analytic" && (denoiser.rfind("external:", 0) != 0 || denoiser.size() <= 9))
    fail("denoiser must be 'analytic' or 'external:<command>'");
  if (denoiser_timeout_ms <= 0) fail("denoiser_timeout_ms must be positive");
  if (kriging_max_neighbors < 0 || sgs_max_neighbors < 1) fail("neighbor counts must be positive");
  if (variogram_bins < 1) fail("variogram_bins must be at least 1");
  if (!(sgs_search_ranges > 0.0)) fail("sgs_search_ranges must be positive");
  if (!(idw_power > 0.0) || !std::isfinite(idw_power)) fail("idw_power must be finite and positive");
  parse_metric_region(metric_region);
  if (!(lacunarity_offset >= 0.0)) fail("lacunarity_offset must be nonnegative");
  if (outdir.empty()) fail("outdir must be set");
  if (threads < 0) fail("threads must be nonnegative");
}

RunConfig apply_config_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError(kModule, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto& keys = config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return key == k.name; });
    if (it == keys.end()) throw ConfigError(kModule, "unknown config key '" + key + "'");
    it->read(base, value);
  }
  return base;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(kModule, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(kModule, path.string() + ": " + e.what());
  }
  return apply_config_json(j, std::move(base));
}

nlohmann::ordered_json lock_json(const RunConfig& config) {
  nlohmann::ordered_json j;
  for (const ConfigKey& k : config_keys())
    if (k.locked) k.write(config, j);
  return j;
}

std::string cell_label(double fraction, double ratio) { return format_g(fraction) + "_" + format_g(ratio); }

std::int64_t RunSummary::failed() const {
  return std::count_if(cells.begin(), cells.end(), [](const CellOutcome& c) { return !c.ok; });
}

int RunSummary::first_exit_code() const {
  for (const CellOutcome& c : cells)
    if (!c.ok) return c.exit_code;
  return 0;
}

std::string rows_csv(const std::vector<CellOutcome>& cells) {
  std::string out = "method,fraction,ratio,seed,status,coverage,rmse,mae,mre,lacunarity_error,krig_smooth,ensemble_size,error\n";
  for (const CellOutcome& c : cells) {
    out += c.method + "," + num(c.fraction) + "," + num(c.ratio) + "," + std::to_string(c.seed) + ",";
    if (c.ok) {
      out += "ok," + num(c.row.coverage) + "," + num(c.row.rmse) + "," + num(c.row.mae) + "," + num(c.row.mre) + "," +
             num(c.row.lacunarity_error) + "," + (c.row.krig_smooth ? "true" : "false") + "," +
             std::to_string(c.row.ensemble_size) + ",\n";
    } else {
      out += "failed,,,,,,,," + csv_escape(c.error) + "\n";
    }
  }
  return out;
}

std::string aggregate_csv(const std::vector<CellOutcome>& cells) {
  struct Acc {
    std::vector<MetricRow> rows;
    std::int64_t failed = 0;
  };
  std::vector<std::tuple<std::string, double, double>> order;
  std::map<std::tuple<std::string, double, double>, Acc> groups;
  for (const CellOutcome& c : cells) {
    const auto key = std::make_tuple(c.method, c.fraction, c.ratio);
    if (!groups.contains(key)) order.push_back(key);
    Acc& acc = groups[key];
    if (c.ok) acc.rows.push_back(c.row);
    else ++acc.failed;
  }
  auto stats = [](const std::vector<MetricRow>& rows, double MetricRow::*field) {
    if (rows.empty()) return std::string(",");
    double mean = 0.0;
    for (const MetricRow& r : rows) mean += r.*field;
    mean /= static_cast<double>(rows.size());
    double ss = 0.0;
    for (const MetricRow& r : rows) ss += (r.*field - mean) * (r.*field - mean);
    const double sd = rows.size() > 1 ? std::sqrt(ss / static_cast<double>(rows.size() - 1)) : 0.0;
    return num(mean) + "," + num(sd);
  };
  std::string out =
      "method,fraction,ratio,n_ok,n_failed,coverage_mean,coverage_std,rmse_mean,rmse_std,mae_mean,mae_std,"
      "mre_mean,mre_std,lacunarity_error_mean,lacunarity_error_std\n";
  for (const auto& key : order) {
    const Acc& acc = groups[key];
    out += std::get<0>(key) + "," + num(std::get<1>(key)) + "," + num(std::get<2>(key)) + "," +
           std::to_string(acc.rows.size()) + "," + std::to_string(acc.failed) + "," +
           stats(acc.rows, &MetricRow::coverage) + "," + stats(acc.rows, &MetricRow::rmse) + "," +
           stats(acc.rows, &MetricRow::mae) + "," + stats(acc.rows, &MetricRow::mre) + "," +
           stats(acc.rows, &MetricRow::lacunarity_error) + "\n";
  }
  return out;
}

RunSummary run_pipeline(const RunConfig& config, FailurePolicy policy) {
  config.validate();
  const fs::path outdir(config.outdir);
  const fs::path staging = outdir.string() + ".partial";

  RunSummary summary;
  summary.outdir = outdir;
  try {
    fs::remove_all(staging);
    fs::create_directories(staging);
    write_file_atomic(staging / "config.lock.json", dump(lock_json(config)));

    const Field truth = load_truth(config);
    write_field(truth, staging / "truth.raw", FieldFormat::raw_f64);
    const std::vector<MaskJob> masks = build_masks(config, truth.shape());
    for (const MaskJob& job : masks) write_mask_artifact(staging, job);

    ReportOptions report_opts;
    report_opts.region = parse_metric_region(config.metric_region);
    report_opts.lacunarity.mass_offset = config.lacunarity_offset;

    struct Task {
      const MaskJob* job;
      std::string method;
    };
    std::vector<Task> tasks;
    for (const std::string& method : config.methods)
      for (const MaskJob& job : masks) tasks.push_back({&job, method});

    const int total_threads = config.threads > 0 ? config.threads : default_thread_count();
    const int workers = std::max(1, std::min<int>(total_threads, static_cast<int>(tasks.size())));
    const int inner = workers > 1 ? 1 : total_threads;

    summary.cells.resize(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    parallel_for(
        static_cast<std::int64_t>(tasks.size()),
        [&](std::int64_t i) {
          const Task& task = tasks[static_cast<std::size_t>(i)];
          CellOutcome& cell = summary.cells[static_cast<std::size_t>(i)];
          cell.method = task.method;
          cell.fraction = task.job->fraction;
          cell.ratio = task.job->ratio;
          cell.seed = task.job->seed;
          cell.directory = fs::path(task.method) / task.job->label / ("seed" + std::to_string(task.job->seed));
          const fs::path dir = staging / cell.directory;
          try {
            const MethodOutput out = run_method(task.method, config, truth, task.job->mask, task.job->seed, inner);
            const MetricReport report = build_report(
                truth, {{task.method, out.recon, out.krig_smooth, out.ensemble_size}}, task.job->mask, report_opts);
            write_cell(dir, out, report, config.write_members);
            cell.row = report.rows.front();
            cell.ok = true;
          } catch (...) {
            std::error_code ec;
            fs::remove_all(dir, ec);
            cell.ok = false;
            errors[static_cast<std::size_t>(i)] = std::current_exception();
            cell.exit_code = exit_code_of(errors[static_cast<std::size_t>(i)]);
            cell.error = message_of(errors[static_cast<std::size_t>(i)]);
          }
        },
        workers);

    if (policy == FailurePolicy::abort)
      for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);

    MetricReport combined;
    combined.region = report_opts.region;
    for (const CellOutcome& c : summary.cells)
      if (c.ok) combined.rows.push_back(c.row);
    write_file_atomic(staging / "report.json", dump(to_json(combined)));
    write_file_atomic(staging / "rows.csv", rows_csv(summary.cells));
    write_file_atomic(staging / "summary.csv", aggregate_csv(summary.cells));
    move_into_place(staging, outdir);
  } catch (const fs::filesystem_error& e) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw IoError(kModule, e.what());
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  return summary;
}

}  // namespace krigscd
