#include "krigscd/variogram.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace krigscd {

namespace {

constexpr const char* kModule = "variogram";
constexpr int kGridSize = 16;

}  // namespace

std::int64_t EmpiricalVariogram::total_pairs() const {
  return std::accumulate(pairs.begin(), pairs.end(), std::int64_t{0});
}

double default_max_lag(GridShape shape) {
  return 0.5 * std::hypot(static_cast<double>(shape.height), static_cast<double>(shape.width));
}

EmpiricalVariogram empirical_semivariogram(const ObservationSet& obs, int n_bins, double max_lag) {
  if (obs.size() < 2) throw InsufficientDataError(kModule, "semivariogram needs at least 2 observations");
  if (n_bins < 1) throw ConfigError(kModule, "n_bins must be at least 1");
  if (!(max_lag > 0.0)) throw ConfigError(kModule, "max_lag must be positive");

  const double width = max_lag / n_bins;
  std::vector<double> lag_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> gamma_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::int64_t> count(static_cast<std::size_t>(n_bins), 0);

  const Eigen::Index n = obs.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (obs.coords.row(i) - obs.coords.row(j)).norm();
      if (d > max_lag) continue;
      const auto bin = std::min<std::size_t>(static_cast<std::size_t>(d / width), static_cast<std::size_t>(n_bins - 1));
      const double diff = obs.values(i) - obs.values(j);
      lag_sum[bin] += d;
      gamma_sum[bin] += 0.5 * diff * diff;
      ++count[bin];
    }
  }

  EmpiricalVariogram emp;
  emp.max_lag = max_lag;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    emp.lag.push_back(lag_sum[b] / static_cast<double>(count[b]));
    emp.gamma.push_back(gamma_sum[b] / static_cast<double>(count[b]));
    emp.pairs.push_back(count[b]);
  }
  return emp;
}

EmpiricalVariogram empirical_semivariogram(const ObservationSet& obs, GridShape shape, const VariogramOptions& options) {
  const double max_lag = options.max_lag > 0.0 ? options.max_lag : default_max_lag(shape);
  return empirical_semivariogram(obs, options.n_bins, max_lag);
}

double weighted_residual(const EmpiricalVariogram& emp, const VariogramModel& model) {
  double sse = 0.0;
  for (std::size_t k = 0; k < emp.size(); ++k) {
    const double r = emp.gamma[k] - model.gamma(emp.lag[k]);
    sse += static_cast<double>(emp.pairs[k]) * r * r;
  }
  return sse;
}

VariogramFit fit_exponential(const EmpiricalVariogram& emp) {
  if (emp.size() < 2) throw InsufficientDataError(kModule, "exponential fit needs at least 2 nonempty bins");
  const double gmax = *std::max_element(emp.gamma.begin(), emp.gamma.end());
  if (!(gmax > 0.0)) throw DegenerateFitError(kModule, "all empirical semivariances are zero");

  const double max_lag = emp.max_lag > 0.0 ? emp.max_lag : emp.lag.back();
  const double c_lo = 0.1 * gmax, c_hi = 2.0 * gmax;
  const double t_lo = 0.5, t_hi = std::max(1.0, 2.0 * max_lag);

  auto log_space = [](double lo, double hi, int i) {
    return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (kGridSize - 1));
  };

  VariogramFit fit;
  fit.residual = std::numeric_limits<double>::infinity();
  for (int ic = 0; ic < kGridSize; ++ic) {
    for (int it = 0; it < kGridSize; ++it) {
      const VariogramModel m{log_space(c_lo, c_hi, ic), log_space(t_lo, t_hi, it)};
      const double r = weighted_residual(emp, m);
      // Strict comparison keeps the first grid point (lowest c, then tau) on ties.
      if (r < fit.residual) {
        fit.residual = r;
        fit.model = m;
      }
    }
  }
  fit.grid_residual = fit.residual;

  // Gauss-Newton in (log c, log tau).
  const Eigen::Vector2d lower(std::log(c_lo / 100.0), std::log(t_lo / 100.0));
  const Eigen::Vector2d upper(std::log(c_hi * 100.0), std::log(t_hi * 100.0));
  Eigen::Vector2d p(std::log(fit.model.sill), std::log(fit.model.range));
  const auto n = static_cast<Eigen::Index>(emp.size());
  for (int iter = 0; iter < 200; ++iter) {
    const double c = std::exp(p(0)), tau = std::exp(p(1));
    Eigen::MatrixX2d jac(n, 2);
    Eigen::VectorXd res(n), w(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double h = emp.lag[static_cast<std::size_t>(k)];
      const double e = std::exp(-h / tau);
      const double g = -c * std::expm1(-h / tau);
      jac(k, 0) = g;
      jac(k, 1) = -c * (h / tau) * e;
      res(k) = emp.gamma[static_cast<std::size_t>(k)] - g;
      w(k) = static_cast<double>(emp.pairs[static_cast<std::size_t>(k)]);
    }
    Eigen::Matrix2d normal = jac.transpose() * w.asDiagonal() * jac;
    normal.diagonal() *= 1.0 + 1e-12;
    const Eigen::Vector2d rhs = jac.transpose() * (w.array() * res.array()).matrix();
    const Eigen::Vector2d step = normal.ldlt().solve(rhs);
    if (!step.allFinite()) break;

    double scale = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      const Eigen::Vector2d trial = (p + scale * step).cwiseMax(lower).cwiseMin(upper);
      const VariogramModel m{std::exp(trial(0)), std::exp(trial(1))};
      const double r = weighted_residual(emp, m);
      if (r < fit.residual) {
        const double gain = fit.residual - r;
        fit.residual = r;
        fit.model = m;
        p = trial;
        improved = gain > 1e-15 * std::max(r, 1e-300);
        break;
      }
    }
    fit.iterations = iter + 1;
    if (!improved) break;
  }
  return fit;
}

VariogramModel fit_variogram_or_white(const ObservationSet& obs, GridShape shape, const VariogramOptions& options) {
  const EmpiricalVariogram emp = empirical_semivariogram(obs, shape, options);
  if (emp.size() == 0) return {kWhiteSill, 1.0};
  const double gmax = *std::max_element(emp.gamma.begin(), emp.gamma.end());
  if (!(gmax > 0.0)) return {kWhiteSill, 1.0};
  if (emp.size() == 1) return {gmax, emp.max_lag / 3.0};
  return fit_exponential(emp).model;
}

}  // namespace krigscd
