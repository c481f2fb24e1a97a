#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "krigscd/grid.hpp"
#include "krigscd/kriging.hpp"
#include "krigscd/variogram.hpp"

namespace krigscd {

struct IDWParams {
  double power = 2.0;
};

// Weighted mean with w_i = d_i^-p; a target on an observation returns that value exactly.
template <typename Scalar, typename TargetDerived>
Scalar idw_estimate(const CoordsT<Scalar>& coords, const VectorX<Scalar>& values,
                    const Eigen::MatrixBase<TargetDerived>& target, Scalar power) {
  using std::pow;
  Scalar wsum{0}, zsum{0};
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const Scalar d = (coords.row(i) - target).norm();
    if (d == Scalar(0)) return values(i);
    const Scalar w = pow(d, -power);
    wsum += w;
    zsum += w * values(i);
  }
  return zsum / wsum;
}

// Rows of `targets` are (row, col) locations.
Eigen::VectorXd idw_interpolate(const ObservationSet& obs, const Coords& targets, const IDWParams& params = {});
Field idw_field(const Field& field, const ObservationMask& mask, const IDWParams& params = {});

// Plane m(s) = a + b x + c y with x = col / (W - 1), y = row / (H - 1).
struct TrendModel {
  Eigen::Vector3d coefficients = Eigen::Vector3d::Zero();
  double residual_mean = 0.0;
  double residual_std = 0.0;
  bool rank_deficient = false;
  GridShape shape{1, 1};
  Eigen::VectorXd residuals;

  double evaluate(double row, double col) const;
  Grid evaluate_grid() const;
};

// Trend design matrix rows [1, x, y] in normalized coordinates.
Eigen::MatrixX3d trend_design(const ObservationSet& obs, GridShape shape);

TrendModel fit_trend_ols(const ObservationSet& obs, GridShape shape);

struct SgsOptions {
  std::size_t max_neighbors = 32;
  // Search radius in multiples of the model range.
  double search_ranges = 3.0;
  JitterPolicy jitter;
};

// One sequential Gaussian simulation of the residual field. Residuals are standardized with
// their sample mean and standard deviation, simulated in a seed-determined random cell order
// with simple kriging against `model` (fitted on the standardized residuals) and transformed
// back. Conditioning cells carry their residuals exactly.
Field sgs_realization(const ObservationSet& residual_obs, const VariogramModel& model, GridShape shape,
                      std::uint64_t seed, const SgsOptions& options = {});

struct CgsOptions {
  SgsOptions sgs;
  VariogramOptions variogram;
  int threads = 0;
};

struct Ensemble {
  Field mean;
  std::vector<Field> members;
};

struct CgsResult {
  Ensemble ensemble;
  TrendModel trend;
  VariogramModel residual_model;
};

// Regression trend plus simulated residuals, one member per sub-seed.
CgsResult cgs_reconstruct(const Field& field, const ObservationMask& mask, int n_ensemble, std::uint64_t seed,
                          const CgsOptions& options = {});

Field ensemble_mean(const std::vector<Field>& members);

}  // namespace krigscd
