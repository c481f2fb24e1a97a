#include "krigscd/diffusion.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "krigscd/field_io.hpp"
#include "krigscd/parallel.hpp"

namespace krigscd {

namespace {

constexpr const char* kModule = "diffusion";

void finish_schedule(NoiseSchedule& s) {
  const std::size_t n = s.betas.size();
  s.alphas.resize(n);
  s.posterior_variances.resize(n);
  if (s.alpha_bars.size() != n) {
    s.alpha_bars.resize(n);
    double prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      prod *= 1.0 - s.betas[i];
      s.alpha_bars[i] = prod;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    const double prev = i > 0 ? s.alpha_bars[i - 1] : 1.0;
    s.posterior_variances[i] = (1.0 - prev) / (1.0 - s.alpha_bars[i]) * s.betas[i];
  }
  if (s.timesteps.empty()) {
    s.timesteps.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.timesteps[i] = static_cast<int>(i + 1);
    s.parent_steps = static_cast<int>(n);
  }
}

Grid normal_grid(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Grid g(rows, cols);
  rng.fill_normal(g);
  return g;
}

}  // namespace

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw ConfigError(kModule, "unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

NoiseSchedule linear_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError(kModule, "schedule needs at least one step");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw ConfigError(kModule, "linear schedule needs 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.kind = ScheduleKind::linear;
  s.betas.resize(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps > 1 ? static_cast<double>(t - 1) / (steps - 1) : 0.0;
    s.betas[static_cast<std::size_t>(t - 1)] = beta_min + (beta_max - beta_min) * frac;
  }
  finish_schedule(s);
  return s;
}

NoiseSchedule default_linear_schedule(int steps) {
  if (steps < 1) throw ConfigError(kModule, "schedule needs at least one step");
  const double scale = 1000.0 / steps;
  return linear_schedule(steps, std::min(scale * 1e-4, 0.999), std::min(scale * 0.02, 0.999));
}

NoiseSchedule cosine_schedule(int steps, double offset) {
  if (steps < 1) throw ConfigError(kModule, "schedule needs at least one step");
  if (!(offset > 0.0)) throw ConfigError(kModule, "cosine offset must be positive");
  auto f = [&](double t) {
    const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.kind = ScheduleKind::cosine;
  s.betas.resize(static_cast<std::size_t>(steps));
  const double f0 = f(0.0);
  for (int t = 1; t <= steps; ++t) {
    const double abar = f(t) / f0;
    const double prev = f(t - 1) / f0;
    s.betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - abar / prev, 0.999);
  }
  finish_schedule(s);
  return s;
}

NoiseSchedule respace(const NoiseSchedule& parent, int steps) {
  const int total = parent.steps();
  if (steps < 1 || steps > total) throw ConfigError(kModule, "respacing must keep between 1 and T steps");
  if (steps == total) return parent;

  std::vector<int> picked;
  if (steps == 1) {
    picked.push_back(total);
  } else {
    const double stride = static_cast<double>(total - 1) / (steps - 1);
    for (int k = 0; k < steps; ++k) picked.push_back(1 + static_cast<int>(std::lround(k * stride)));
  }

  NoiseSchedule s;
  s.kind = parent.kind;
  double prev = 1.0;
  for (int t : picked) {
    const double abar = parent.alpha_bar(t);
    s.betas.push_back(1.0 - abar / prev);
    s.alpha_bars.push_back(abar);
    s.timesteps.push_back(parent.timesteps[static_cast<std::size_t>(t - 1)]);
    prev = abar;
  }
  s.parent_steps = parent.parent_steps;
  finish_schedule(s);
  return s;
}

Grid reverse_variance(int t, const NoiseSchedule& schedule, const std::optional<Grid>& v, Eigen::Index rows,
                      Eigen::Index cols) {
  const double beta = schedule.beta(t);
  const double tilde = schedule.posterior_variance(t);
  if (!v) return Grid::Constant(rows, cols, tilde);
  const double log_beta = std::log(beta);
  const double log_tilde = tilde > 0.0 ? std::log(tilde) : -std::numeric_limits<double>::infinity();
  return v->unaryExpr([&](double mix) {
    mix = std::clamp(mix, 0.0, 1.0);
    if (mix == 1.0) return beta;
    if (mix == 0.0) return tilde;
    return std::exp(mix * log_beta + (1.0 - mix) * log_tilde);
  });
}

Grid reverse_step(const Grid& x_t, int t, const DenoiserOutput& prediction, const NoiseSchedule& schedule,
                  const Grid& noise) {
  const double alpha = schedule.alpha(t);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(t));
  Grid mean = (x_t - coef * prediction.eps) / std::sqrt(alpha);
  if (t == 1) return mean;
  const Grid var = reverse_variance(t, schedule, prediction.v, x_t.rows(), x_t.cols());
  return (mean.array() + var.array().sqrt() * noise.array()).matrix();
}

GaussianFieldPrior::GaussianFieldPrior(Grid mean, VariogramModel model) : mean_(std::move(mean)), model_(model) {
  if (mean_.size() > kMaxDensePriorPixels)
    throw ConfigError(kModule, "dense Gaussian prior limited to " + std::to_string(kMaxDensePriorPixels) +
                                   " pixels; use an external denoiser for larger grids");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance());
  if (eig.info() != Eigen::Success) throw NumericError(kModule, "prior covariance eigendecomposition failed");
  auto spectrum = std::make_shared<Spectrum>();
  spectrum->vectors = eig.eigenvectors();
  spectrum->values = eig.eigenvalues().cwiseMax(0.0);
  spectrum_ = std::move(spectrum);
}

GaussianFieldPrior::GaussianFieldPrior(GridShape shape, double mean, VariogramModel model)
    : GaussianFieldPrior(Grid::Constant(shape.height, shape.width, mean), model) {}

Eigen::MatrixXd GaussianFieldPrior::covariance() const {
  const Eigen::Index n = mean_.size();
  const Eigen::Index w = mean_.cols();
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    cov(i, i) = model_.sill;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dr = static_cast<double>(i / w - j / w);
      const double dc = static_cast<double>(i % w - j % w);
      cov(i, j) = cov(j, i) = model_.covariance(std::hypot(dr, dc));
    }
  }
  return cov;
}

Grid GaussianFieldPrior::sample(Rng& rng) const {
  Eigen::VectorXd z(mean_.size());
  rng.fill_normal(z);
  const Eigen::VectorXd x = spectrum_->vectors * (spectrum_->values.cwiseSqrt().asDiagonal() * z);
  Grid out = mean_;
  out.reshaped<Eigen::RowMajor>() += x;
  return out;
}

Grid GaussianFieldPrior::posterior_mean(const Grid& x_t, double alpha_bar) const {
  const double s = std::sqrt(alpha_bar);
  const Eigen::VectorXd y = (x_t - s * mean_).reshaped<Eigen::RowMajor>();
  const Eigen::ArrayXd& lam = spectrum_->values.array();
  const Eigen::VectorXd gain = (s * lam / (alpha_bar * lam + (1.0 - alpha_bar))).matrix();
  const Eigen::VectorXd x = spectrum_->vectors * (gain.asDiagonal() * (spectrum_->vectors.transpose() * y));
  Grid out = mean_;
  out.reshaped<Eigen::RowMajor>() += x;
  return out;
}

Grid GaussianFieldPrior::posterior_noise(const Grid& x_t, double alpha_bar) const {
  // x_t - sqrt(abar) E[x0|x_t] = Q diag((1 - abar) / (abar lam + 1 - abar)) Q^T y, y = x_t - sqrt(abar) mu
  const double s = std::sqrt(alpha_bar);
  const Eigen::VectorXd y = (x_t - s * mean_).reshaped<Eigen::RowMajor>();
  const Eigen::ArrayXd& lam = spectrum_->values.array();
  const double noise_var = 1.0 - alpha_bar;
  const Eigen::VectorXd gain = (std::sqrt(noise_var) / (alpha_bar * lam + noise_var)).matrix();
  const Eigen::VectorXd e = spectrum_->vectors * (gain.asDiagonal() * (spectrum_->vectors.transpose() * y));
  Grid out(mean_.rows(), mean_.cols());
  out.reshaped<Eigen::RowMajor>() = e;
  return out;
}

DenoiserOutput analytic_gaussian_denoise(const Grid& x_t, int t, const GaussianFieldPrior& prior,
                                         const NoiseSchedule& schedule) {
  require_same_shape({x_t.rows(), x_t.cols()}, prior.shape(), kModule);
  return {prior.posterior_noise(x_t, schedule.alpha_bar(t)), std::nullopt};
}

DenoiserOutput AnalyticGaussianDenoiser::predict(const Grid& x_t, int t, const NoiseSchedule& schedule) {
  return analytic_gaussian_denoise(x_t, t, prior_, schedule);
}

namespace {

template <typename DrawX0>
LossEstimate simple_loss(Denoiser& denoiser, const NoiseSchedule& schedule, std::int64_t n_samples,
                         std::uint64_t seed, DrawX0&& draw_x0) {
  if (n_samples < 1) throw ConfigError(kModule, "loss estimate needs at least one sample");
  Rng rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const int t = static_cast<int>(rng.between(1, schedule.steps()));
    const Grid x0 = draw_x0(rng);
    const Grid eps = normal_grid(rng, x0.rows(), x0.cols());
    const Grid x_t = forward_sample(x0, t, schedule, eps);
    const DenoiserOutput out = denoiser.predict(x_t, t, schedule);
    const double loss = (eps - out.eps).squaredNorm() / static_cast<double>(eps.size());
    sum += loss;
    sum_sq += loss * loss;
  }
  const auto n = static_cast<double>(n_samples);
  LossEstimate est;
  est.samples = n_samples;
  est.mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * est.mean * est.mean) / (n - 1.0)) : 0.0;
  est.std_error = std::sqrt(var / n);
  return est;
}

}  // namespace

LossEstimate evaluate_simple_loss(Denoiser& denoiser, const GaussianFieldPrior& prior, const NoiseSchedule& schedule,
                                  std::int64_t n_samples, std::uint64_t seed) {
  return simple_loss(denoiser, schedule, n_samples, seed, [&](Rng& rng) { return prior.sample(rng); });
}

LossEstimate evaluate_simple_loss(Denoiser& denoiser, const std::vector<Grid>& dataset, const NoiseSchedule& schedule,
                                  std::int64_t n_samples, std::uint64_t seed) {
  if (dataset.empty()) throw InsufficientDataError(kModule, "loss estimate over an empty dataset");
  return simple_loss(denoiser, schedule, n_samples, seed,
                     [&](Rng& rng) { return dataset[static_cast<std::size_t>(rng.below(dataset.size()))]; });
}

namespace {

Field sample_conditioned(const Grid& cond_values, const MaskGrid& cond_mask, Denoiser& denoiser,
                         const NoiseSchedule& schedule, const SamplerOptions& options, std::uint64_t seed,
                         const std::string& units) {
  const Eigen::Index rows = cond_values.rows(), cols = cond_values.cols();
  const Grid m = cond_mask.cast<double>().matrix();
  const Grid keep = (1.0 - m.array()).matrix();
  const Grid x0_known = m.cwiseProduct(cond_values);

  Rng rng(seed);
  Grid x = normal_grid(rng, rows, cols);
  Grid x_prev = x;
  for (int t = schedule.steps(); t >= 1; --t) {
    const int inner = (t > 1 && t % options.resample_j == 0) ? options.resample_r : 1;
    for (int u = 1; u <= inner; ++u) {
      const Grid eps = t > 1 ? normal_grid(rng, rows, cols) : Grid::Zero(rows, cols);
      const Grid known = forward_sample(x0_known, t, schedule, eps);
      const DenoiserOutput pred = denoiser.predict(x, t, schedule);
      if (pred.eps.rows() != rows || pred.eps.cols() != cols) throw DenoiserError("prediction shape mismatch");
      const Grid z = t > 1 ? normal_grid(rng, rows, cols) : Grid::Zero(rows, cols);
      const Grid unknown = reverse_step(x, t, pred, schedule, z);
      x_prev = m.cwiseProduct(known) + keep.cwiseProduct(unknown);
      if (u < inner) {
        const double beta = schedule.beta(t);
        x = std::sqrt(1.0 - beta) * x_prev + std::sqrt(beta) * normal_grid(rng, rows, cols);
      }
    }
    x = x_prev;
  }
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (cond_mask.data()[i]) x.data()[i] = cond_values.data()[i];
  return Field(std::move(x), units);
}

void check_sampler(const Field& ground, const ObservationMask& mask, const SamplerOptions& options) {
  require_same_shape(ground.shape(), mask.shape(), kModule);
  if (mask.known_count() < 1) throw InsufficientDataError(kModule, "conditioning needs at least one known pixel");
  if (options.resample_r < 1 || options.resample_j < 1) throw ConfigError(kModule, "r and j must be at least 1");
}

}  // namespace

Field conditioned_sample(const Field& ground, const ObservationMask& mask, Denoiser& denoiser,
                         const NoiseSchedule& schedule, const SamplerOptions& options, std::uint64_t seed) {
  check_sampler(ground, mask, options);
  if (options.krig_smooth) {
    const SmoothedPair pair =
        krig_smooth(ground, mask, options.krig_percentile, options.kriging_model, options.kriging);
    return sample_conditioned(pair.field.values, pair.mask.known, denoiser, schedule, options, seed, ground.units);
  }
  return sample_conditioned(ground.values, mask.known, denoiser, schedule, options, seed, ground.units);
}

DiffusionEnsemble ensemble_reconstruct(const Field& ground, const ObservationMask& mask, Denoiser& denoiser,
                                       const NoiseSchedule& schedule, const SamplerOptions& options, int n_ensemble,
                                       std::uint64_t seed) {
  check_sampler(ground, mask, options);
  if (n_ensemble < 1) throw ConfigError(kModule, "n_ensemble must be at least 1");
  DiffusionEnsemble out;
  const Grid* values = &ground.values;
  const MaskGrid* known = &mask.known;
  if (options.krig_smooth) {
    out.smoothed = krig_smooth(ground, mask, options.krig_percentile, options.kriging_model, options.kriging);
    values = &out.smoothed->field.values;
    known = &out.smoothed->mask.known;
  }
  out.ensemble.members.resize(static_cast<std::size_t>(n_ensemble));
  parallel_for(
      n_ensemble,
      [&](std::int64_t i) {
        out.ensemble.members[static_cast<std::size_t>(i)] = sample_conditioned(
            *values, *known, denoiser, schedule, options, seed ^ static_cast<std::uint64_t>(i), ground.units);
      },
      denoiser.thread_safe() ? options.threads : 1);
  out.ensemble.mean = ensemble_mean(out.ensemble.members);
  return out;
}

Grid ModelSpace::encode(const Grid& values) const {
  return (quantize(values, range).array() / 127.5 - 1.0).matrix();
}

Grid ModelSpace::decode(const Grid& model_values) const {
  const double span = range.max - range.min;
  return model_values.unaryExpr([&](double x) { return range.min + (std::clamp(x, -1.0, 1.0) + 1.0) * 0.5 * span; });
}

}  // namespace krigscd
