#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "krigscd/grid.hpp"

namespace krigscd {

// Nugget-free exponential model: gamma(h) = c (1 - exp(-h / tau)), C(h) = c exp(-h / tau).
template <typename Scalar>
struct ExponentialVariogram {
  Scalar sill{1};
  Scalar range{1};

  Scalar covariance(Scalar h) const {
    using std::exp;
    return sill * exp(-h / range);
  }
  Scalar gamma(Scalar h) const {
    using std::expm1;
    return -sill * expm1(-h / range);
  }

  // Elementwise covariance over an array of distances.
  template <typename Derived>
  auto covariance(const Eigen::ArrayBase<Derived>& h) const {
    return sill * (-h / range).exp();
  }

  template <typename Other>
  ExponentialVariogram<Other> cast() const {
    return {static_cast<Other>(sill), static_cast<Other>(range)};
  }
};

using VariogramModel = ExponentialVariogram<double>;

inline double model_gamma(const VariogramModel& model, double h) { return model.gamma(h); }
inline double model_cov(const VariogramModel& model, double h) { return model.covariance(h); }

struct EmpiricalVariogram {
  std::vector<double> lag;          // mean pair distance per nonempty bin, strictly increasing
  std::vector<double> gamma;        // mean semivariance per bin
  std::vector<std::int64_t> pairs;  // pair count per bin
  double max_lag = 0.0;

  std::size_t size() const { return lag.size(); }
  std::int64_t total_pairs() const;
};

struct VariogramOptions {
  int n_bins = 15;
  // Nonpositive selects half the diagonal of the bounding grid.
  double max_lag = 0.0;
};

// Default maximum lag for a grid: half its diagonal.
double default_max_lag(GridShape shape);

EmpiricalVariogram empirical_semivariogram(const ObservationSet& obs, int n_bins, double max_lag);
EmpiricalVariogram empirical_semivariogram(const ObservationSet& obs, GridShape shape, const VariogramOptions& options = {});

struct VariogramFit {
  VariogramModel model;
  double residual = 0.0;       // weighted SSE at the returned model
  double grid_residual = 0.0;  // best weighted SSE over the initialization grid
  int iterations = 0;
};

// Pair-weighted least squares: 16x16 log grid then Gauss-Newton with step halving.
// Throws DegenerateFitError if every bin is zero.
VariogramFit fit_exponential(const EmpiricalVariogram& emp);

double weighted_residual(const EmpiricalVariogram& emp, const VariogramModel& model);

// Fit with the pipeline defaults; degenerate data yields a near-zero-sill model.
VariogramModel fit_variogram_or_white(const ObservationSet& obs, GridShape shape, const VariogramOptions& options = {});

inline constexpr double kWhiteSill = 1e-12;

}  // namespace krigscd
