#include "krigscd/baselines.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>

#include "krigscd/neighbors.hpp"
#include "krigscd/parallel.hpp"
#include "krigscd/rng.hpp"

namespace krigscd {

namespace {

constexpr const char* kModule = "baselines";

double axis_scale(std::int64_t extent) { return extent > 1 ? 1.0 / static_cast<double>(extent - 1) : 0.0; }

}  // namespace

Eigen::VectorXd idw_interpolate(const ObservationSet& obs, const Coords& targets, const IDWParams& params) {
  if (obs.size() < 1) throw InsufficientDataError(kModule, "IDW needs at least one observation");
  if (!(params.power > 0.0) || !std::isfinite(params.power)) throw ConfigError(kModule, "IDW power must be finite and positive");
  Eigen::VectorXd out(targets.rows());
  for (Eigen::Index t = 0; t < targets.rows(); ++t)
    out(t) = idw_estimate<double>(obs.coords, obs.values, targets.row(t), params.power);
  return out;
}

Field idw_field(const Field& field, const ObservationMask& mask, const IDWParams& params) {
  if (!(params.power > 0.0) || !std::isfinite(params.power)) throw ConfigError(kModule, "IDW power must be finite and positive");
  const ObservationSet obs = apply_mask(field, mask);
  Field out(field.values, field.units);
  const GridShape shape = field.shape();
  for (std::int64_t r = 0; r < shape.height; ++r)
    for (std::int64_t c = 0; c < shape.width; ++c) {
      if (mask.known(r, c)) continue;
      out.values(r, c) = idw_estimate<double>(obs.coords, obs.values,
                                              Point2<double>(static_cast<double>(r), static_cast<double>(c)), params.power);
    }
  return out;
}

double TrendModel::evaluate(double row, double col) const {
  return coefficients(0) + coefficients(1) * col * axis_scale(shape.width) +
         coefficients(2) * row * axis_scale(shape.height);
}

Grid TrendModel::evaluate_grid() const {
  Grid g(shape.height, shape.width);
  for (std::int64_t r = 0; r < shape.height; ++r)
    for (std::int64_t c = 0; c < shape.width; ++c) g(r, c) = evaluate(static_cast<double>(r), static_cast<double>(c));
  return g;
}

Eigen::MatrixX3d trend_design(const ObservationSet& obs, GridShape shape) {
  Eigen::MatrixX3d a(obs.size(), 3);
  a.col(0).setOnes();
  a.col(1) = obs.coords.col(1) * axis_scale(shape.width);
  a.col(2) = obs.coords.col(0) * axis_scale(shape.height);
  return a;
}

TrendModel fit_trend_ols(const ObservationSet& obs, GridShape shape) {
  if (obs.size() < 1) throw InsufficientDataError(kModule, "trend fit needs observations");
  TrendModel trend;
  trend.shape = shape;
  const Eigen::MatrixX3d a = trend_design(obs, shape);
  Eigen::ColPivHouseholderQR<Eigen::MatrixX3d> qr(a);
  if (obs.size() >= 3 && qr.rank() == 3) {
    trend.coefficients = qr.solve(obs.values);
  } else {
    trend.rank_deficient = true;
    trend.coefficients = Eigen::Vector3d(obs.values.mean(), 0.0, 0.0);
  }
  trend.residuals = obs.values - a * trend.coefficients;
  const auto n = static_cast<double>(obs.size());
  trend.residual_mean = trend.residuals.mean();
  trend.residual_std =
      n > 1 ? std::sqrt((trend.residuals.array() - trend.residual_mean).square().sum() / (n - 1.0)) : 0.0;
  const double scale = std::max(1.0, obs.values.cwiseAbs().maxCoeff());
  if (trend.residual_std <= 1e-12 * scale) trend.residual_std = 0.0;
  return trend;
}

Field sgs_realization(const ObservationSet& residual_obs, const VariogramModel& model, GridShape shape,
                      std::uint64_t seed, const SgsOptions& options) {
  if (residual_obs.size() < 2) throw InsufficientDataError(kModule, "SGS needs at least 2 residual observations");
  const auto n = static_cast<double>(residual_obs.size());
  const double mu = residual_obs.values.mean();
  const double sigma = std::sqrt((residual_obs.values.array() - mu).square().sum() / (n - 1.0));

  Field out(Grid::Constant(shape.height, shape.width, mu));
  GridNeighbors conditioned(shape);
  Grid standardized = Grid::Zero(shape.height, shape.width);
  for (Eigen::Index i = 0; i < residual_obs.size(); ++i) {
    const auto r = static_cast<std::int64_t>(std::llround(residual_obs.coords(i, 0)));
    const auto c = static_cast<std::int64_t>(std::llround(residual_obs.coords(i, 1)));
    if (r < 0 || r >= shape.height || c < 0 || c >= shape.width)
      throw DataError(kModule, "residual observation outside the simulation grid");
    if (conditioned.contains(r, c)) throw DataError(kModule, "duplicate residual observation coordinates");
    conditioned.insert(r, c);
    out.values(r, c) = residual_obs.values(i);
    standardized(r, c) = sigma > 0.0 ? (residual_obs.values(i) - mu) / sigma : 0.0;
  }
  const double scale = std::max(1.0, residual_obs.values.cwiseAbs().maxCoeff());
  if (sigma <= 1e-12 * scale) return out;

  std::vector<std::int64_t> path;
  for (std::int64_t p = 0; p < shape.size(); ++p)
    if (!conditioned.contains(p / shape.width, p % shape.width)) path.push_back(p);
  Rng rng(seed);
  for (std::size_t i = path.size(); i > 1; --i) std::swap(path[i - 1], path[rng.below(i)]);

  const double radius = options.search_ranges * model.range;
  std::vector<std::int64_t> nb;
  for (std::int64_t p : path) {
    const std::int64_t row = p / shape.width, col = p % shape.width;
    nb.clear();
    conditioned.nearest(row, col, options.max_neighbors, radius, nb);
    Coords coords(static_cast<Eigen::Index>(nb.size()), 2);
    Eigen::VectorXd values(static_cast<Eigen::Index>(nb.size()));
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      coords(i, 0) = static_cast<double>(nb[k] / shape.width);
      coords(i, 1) = static_cast<double>(nb[k] % shape.width);
      values(i) = standardized.data()[nb[k]];
    }
    SimpleKrigingResult sk;
    try {
      sk = simple_kriging<double>(coords, values, Point2<double>(static_cast<double>(row), static_cast<double>(col)),
                                  model, options.jitter);
    } catch (const NumericError& e) {
      throw NumericError(kModule, "SGS cell " + std::to_string(p) + ": " + e.what());
    }
    const double draw = sk.mean + std::sqrt(sk.mse) * rng.normal();
    standardized.data()[p] = draw;
    out.values.data()[p] = draw * sigma + mu;
    conditioned.insert(row, col);
  }
  return out;
}

Field ensemble_mean(const std::vector<Field>& members) {
  if (members.empty()) throw InsufficientDataError(kModule, "ensemble mean of no members");
  Grid sum = Grid::Zero(members.front().values.rows(), members.front().values.cols());
  for (const Field& m : members) sum += m.values;
  return Field(sum / static_cast<double>(members.size()), members.front().units);
}

CgsResult cgs_reconstruct(const Field& field, const ObservationMask& mask, int n_ensemble, std::uint64_t seed,
                          const CgsOptions& options) {
  if (n_ensemble < 1) throw ConfigError(kModule, "n_ensemble must be at least 1");
  const ObservationSet obs = apply_mask(field, mask);
  const GridShape shape = field.shape();

  CgsResult result;
  result.trend = fit_trend_ols(obs, shape);
  const Grid trend_grid = result.trend.evaluate_grid();

  ObservationSet residuals{obs.coords, result.trend.residuals};
  result.residual_model = {1.0, 1.0};
  const bool simulate = result.trend.residual_std > 0.0 && obs.size() >= 2;
  if (simulate) {
    ObservationSet standardized{obs.coords, (residuals.values.array() - result.trend.residual_mean) /
                                                result.trend.residual_std};
    result.residual_model = fit_variogram_or_white(standardized, shape, options.variogram);
  }

  result.ensemble.members.resize(static_cast<std::size_t>(n_ensemble));
  parallel_for(
      n_ensemble,
      [&](std::int64_t i) {
        Field member(trend_grid, field.units);
        if (simulate) {
          const Field r = sgs_realization(residuals, result.residual_model, shape,
                                          seed ^ static_cast<std::uint64_t>(i), options.sgs);
          member.values += r.values;
        }
        for (Eigen::Index k = 0; k < obs.size(); ++k)
          member.values(static_cast<Eigen::Index>(obs.coords(k, 0)), static_cast<Eigen::Index>(obs.coords(k, 1))) =
              obs.values(k);
        result.ensemble.members[static_cast<std::size_t>(i)] = std::move(member);
      },
      options.threads);
  result.ensemble.mean = ensemble_mean(result.ensemble.members);
  return result;
}

}  // namespace krigscd
