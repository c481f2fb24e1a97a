#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "krigscd/baselines.hpp"
#include "krigscd/grid.hpp"
#include "krigscd/kriging.hpp"
#include "krigscd/rng.hpp"
#include "krigscd/variogram.hpp"

namespace krigscd {

enum class ScheduleKind { linear, cosine };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

// Variance schedule for t = 1..T; arrays are stored at index t - 1.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> posterior_variances;  // beta~_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
  std::vector<int> timesteps;               // parent-chain timestep (1-based) of every step
  int parent_steps = 0;

  int steps() const { return static_cast<int>(betas.size()); }
  double beta(int t) const { return betas[static_cast<std::size_t>(t - 1)]; }
  double alpha(int t) const { return alphas[static_cast<std::size_t>(t - 1)]; }
  double alpha_bar(int t) const { return alpha_bars[static_cast<std::size_t>(t - 1)]; }
  double alpha_bar_prev(int t) const { return t > 1 ? alpha_bar(t - 1) : 1.0; }
  double posterior_variance(int t) const { return posterior_variances[static_cast<std::size_t>(t - 1)]; }
};

// Betas affine in t from beta_min (t = 1) to beta_max (t = T).
NoiseSchedule linear_schedule(int steps, double beta_min, double beta_max);
// Linear schedule with the (1e-4, 0.02) endpoints rescaled by 1000 / T, so that short chains still
// end near pure noise.
NoiseSchedule default_linear_schedule(int steps);
// abar_t = f(t) / f(0), f(t) = cos^2(((t / T + s) / (1 + s)) pi / 2), betas clipped at 0.999.
NoiseSchedule cosine_schedule(int steps, double offset = 0.008);

// Evenly strided sub-chain of `steps` timesteps that keeps both endpoints of the parent.
NoiseSchedule respace(const NoiseSchedule& parent, int steps);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename D0, typename D1>
Grid forward_sample(const Eigen::MatrixBase<D0>& x0, int t, const NoiseSchedule& schedule,
                    const Eigen::MatrixBase<D1>& noise) {
  const double abar = schedule.alpha_bar(t);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * noise;
}

struct DenoiserOutput {
  Grid eps;
  std::optional<Grid> v;  // variance mixing weights in [0, 1]
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // `t` is a 1-based step of `schedule`. Must be deterministic in (x_t, t).
  virtual DenoiserOutput predict(const Grid& x_t, int t, const NoiseSchedule& schedule) = 0;
  // True when predict may be called concurrently from several threads.
  virtual bool thread_safe() const { return false; }
};

class ZeroDenoiser final : public Denoiser {
 public:
  DenoiserOutput predict(const Grid& x_t, int, const NoiseSchedule&) override {
    return {Grid::Zero(x_t.rows(), x_t.cols()), std::nullopt};
  }
  bool thread_safe() const override { return true; }
};

// Per-pixel reverse-process variance: exp(v log beta_t + (1 - v) log beta~_t), or beta~_t without v.
Grid reverse_variance(int t, const NoiseSchedule& schedule, const std::optional<Grid>& v, Eigen::Index rows,
                      Eigen::Index cols);

// mu = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) eps) / sqrt(alpha_t);  x_{t-1} = mu + sqrt(Sigma) z.
// The noise term is dropped at t = 1.
Grid reverse_step(const Grid& x_t, int t, const DenoiserOutput& prediction, const NoiseSchedule& schedule,
                  const Grid& noise);

inline constexpr std::int64_t kMaxDensePriorPixels = 64 * 64;

// Gaussian random field prior N(mean, Sigma0) with Sigma0_ij = c exp(-|x_i - x_j| / tau) over pixel centers.
class GaussianFieldPrior {
 public:
  // Eigenvalues of the covariance are clamped at zero.
  GaussianFieldPrior(Grid mean, VariogramModel model);
  GaussianFieldPrior(GridShape shape, double mean, VariogramModel model);

  const Grid& mean() const { return mean_; }
  const VariogramModel& model() const { return model_; }
  GridShape shape() const { return {mean_.rows(), mean_.cols()}; }

  Eigen::MatrixXd covariance() const;
  Grid sample(Rng& rng) const;
  // E[x0 | x_t] and E[eps | x_t] for x_t = sqrt(abar) x0 + sqrt(1 - abar) eps.
  Grid posterior_mean(const Grid& x_t, double alpha_bar) const;
  Grid posterior_noise(const Grid& x_t, double alpha_bar) const;

 private:
  struct Spectrum {
    Eigen::MatrixXd vectors;
    Eigen::VectorXd values;  // clamped at zero
  };

  Grid mean_;
  VariogramModel model_;
  std::shared_ptr<const Spectrum> spectrum_;
};

// Exact MMSE noise predictor for a Gaussian field prior; supplies no variance weights.
class AnalyticGaussianDenoiser final : public Denoiser {
 public:
  explicit AnalyticGaussianDenoiser(GaussianFieldPrior prior) : prior_(std::move(prior)) {}
  DenoiserOutput predict(const Grid& x_t, int t, const NoiseSchedule& schedule) override;
  bool thread_safe() const override { return true; }
  const GaussianFieldPrior& prior() const { return prior_; }

 private:
  GaussianFieldPrior prior_;
};

DenoiserOutput analytic_gaussian_denoise(const Grid& x_t, int t, const GaussianFieldPrior& prior,
                                         const NoiseSchedule& schedule);

struct LossEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t samples = 0;
};

// Monte-Carlo estimate of E ||eps - eps_theta(x_t, t)||^2 / N with t ~ U{1..T}, x0 from the prior.
LossEstimate evaluate_simple_loss(Denoiser& denoiser, const GaussianFieldPrior& prior, const NoiseSchedule& schedule,
                                  std::int64_t n_samples, std::uint64_t seed);
// Same with x0 drawn uniformly from a dataset.
LossEstimate evaluate_simple_loss(Denoiser& denoiser, const std::vector<Grid>& dataset, const NoiseSchedule& schedule,
                                  std::int64_t n_samples, std::uint64_t seed);

struct SamplerOptions {
  int resample_r = 10;  // composed steps at a resampling timestep
  int resample_j = 10;  // resampling period in timesteps
  bool krig_smooth = false;
  double krig_percentile = 5.0;
  std::optional<VariogramModel> kriging_model;  // fitted from the observations when absent
  KrigingOptions kriging;
  int threads = 0;
};

// Mask-conditioned reverse diffusion with resampling. Known pixels of the output equal the
// conditioning values exactly.
Field conditioned_sample(const Field& ground, const ObservationMask& mask, Denoiser& denoiser,
                         const NoiseSchedule& schedule, const SamplerOptions& options, std::uint64_t seed);

struct DiffusionEnsemble {
  Ensemble ensemble;
  std::optional<SmoothedPair> smoothed;
};

// Independent conditioned samples with sub-seeds seed ^ member; smoothing, when enabled, runs once.
DiffusionEnsemble ensemble_reconstruct(const Field& ground, const ObservationMask& mask, Denoiser& denoiser,
                                       const NoiseSchedule& schedule, const SamplerOptions& options, int n_ensemble,
                                       std::uint64_t seed);

// Affine map between a field's physical range and the [-1, 1] diffusion space, through 0-255 levels.
struct ModelSpace {
  ValueRange range;

  Grid encode(const Grid& values) const;
  Grid decode(const Grid& model_values) const;
};

}  // namespace krigscd
