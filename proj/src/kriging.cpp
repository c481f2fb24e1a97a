#include "krigscd/kriging.hpp"

#include <algorithm>
#include <cmath>

#include "krigscd/neighbors.hpp"
#include "krigscd/parallel.hpp"

namespace krigscd {

namespace {

constexpr const char* kModule = "kriging";

}  // namespace

KrigedField krige_field(const Field& field, const ObservationMask& mask, std::optional<VariogramModel> model,
                        const KrigingOptions& options) {
  require_same_shape(field.shape(), mask.shape(), kModule);
  if (mask.known_count() < 2) throw InsufficientDataError(kModule, "kriging needs at least 2 known pixels");

  const ObservationSet obs = collect_observations(field.values, mask.known);
  KrigedField out;
  out.model = model ? *model : fit_variogram_or_white(obs, field.shape(), options.variogram);
  out.estimate = Field(field.values, field.units);
  out.variance = Field(Grid::Zero(field.values.rows(), field.values.cols()), field.units.empty() ? "" : field.units + "^2");

  const GridNeighbors index(mask.known);
  const GridShape shape = field.shape();
  std::vector<std::int64_t> targets;
  for (std::int64_t i = 0; i < shape.size(); ++i)
    if (!mask.known.data()[i]) targets.push_back(i);

  parallel_for(
      static_cast<std::int64_t>(targets.size()),
      [&](std::int64_t t) {
        const std::int64_t p = targets[static_cast<std::size_t>(t)];
        const std::int64_t row = p / shape.width, col = p % shape.width;
        const std::vector<std::int64_t> nb = index.nearest(row, col, options.max_neighbors);
        Coords coords(static_cast<Eigen::Index>(nb.size()), 2);
        Eigen::VectorXd values(static_cast<Eigen::Index>(nb.size()));
        for (std::size_t i = 0; i < nb.size(); ++i) {
          const auto k = static_cast<Eigen::Index>(i);
          coords(k, 0) = static_cast<double>(nb[i] / shape.width);
          coords(k, 1) = static_cast<double>(nb[i] % shape.width);
          values(k) = field.values.data()[nb[i]];
        }
        try {
          const KrigingSolution sol = solve_ok_system<double>(
              coords, values, Point2<double>(static_cast<double>(row), static_cast<double>(col)), out.model,
              options.jitter);
          out.estimate.values.data()[p] = sol.estimate;
          out.variance.values.data()[p] = sol.variance;
        } catch (const NumericError& e) {
          throw NumericError(kModule, "pixel (" + std::to_string(row) + ", " + std::to_string(col) + "): " + e.what());
        }
      },
      options.threads);
  return out;
}

double nearest_rank_percentile(std::vector<double> sample, double percentile) {
  if (sample.empty()) throw InsufficientDataError(kModule, "percentile of an empty sample");
  if (!(percentile >= 0.0 && percentile <= 100.0)) throw ConfigError(kModule, "percentile must lie in [0, 100]");
  const auto m = static_cast<double>(sample.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * m - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sample.size());
  std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(rank - 1), sample.end());
  return sample[rank - 1];
}

SmoothedPair krig_smooth(const Field& field, const ObservationMask& mask, double percentile,
                         std::optional<VariogramModel> model, const KrigingOptions& options) {
  const KrigedField kriged = krige_field(field, mask, model, options);
  SmoothedPair out;
  out.field = field;
  out.mask = ObservationMask(mask.known);
  out.mask.recipe = mask.recipe;
  out.model = kriged.model;

  std::vector<double> unknown_var;
  for (Eigen::Index i = 0; i < mask.known.size(); ++i)
    if (!mask.known.data()[i]) unknown_var.push_back(kriged.variance.values.data()[i]);
  if (unknown_var.empty()) return out;

  out.threshold = nearest_rank_percentile(unknown_var, percentile);
  for (Eigen::Index i = 0; i < mask.known.size(); ++i) {
    if (mask.known.data()[i] || kriged.variance.values.data()[i] > out.threshold) continue;
    out.mask.known.data()[i] = true;
    out.field.values.data()[i] = kriged.estimate.values.data()[i];
    ++out.accepted;
  }
  return out;
}

}  // namespace krigscd
