#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "krigscd/errors.hpp"

namespace krigscd {

// Row-major dense grid; (row, col) indexing, row 0 at the top.
template <typename Scalar>
using GridT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Grid = GridT<double>;

using MaskGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Pixel coordinates stored as (row, col) in double precision.
template <typename Scalar>
using CoordsT = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;
using Coords = CoordsT<double>;

struct GridShape {
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t size() const { return height * width; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

struct Georeference {
  std::pair<double, double> origin{0.0, 0.0};
  std::pair<double, double> spacing{1.0, 1.0};
};

struct ValueRange {
  double min = 0.0;
  double max = 0.0;
};

struct Field {
  Grid values;
  std::string units;
  std::optional<Georeference> georef;

  Field() = default;
  explicit Field(Grid v, std::string u = {}) : values(std::move(v)), units(std::move(u)) {}

  GridShape shape() const { return {values.rows(), values.cols()}; }
  ValueRange range() const { return {values.minCoeff(), values.maxCoeff()}; }
};

struct MaskRecipe;

struct ObservationMask {
  MaskGrid known;
  std::shared_ptr<const MaskRecipe> recipe;

  ObservationMask() = default;
  explicit ObservationMask(MaskGrid k) : known(std::move(k)) {}

  GridShape shape() const { return {known.rows(), known.cols()}; }
  std::int64_t known_count() const { return known.count(); }
  double known_fraction() const {
    return static_cast<double>(known.count()) / static_cast<double>(known.size());
  }
};

// Known samples in pixel coordinates. Row i of coords is (row, col).
struct ObservationSet {
  Coords coords;
  Eigen::VectorXd values;

  Eigen::Index size() const { return values.size(); }
};

// Throws DataError when shapes differ.
void require_same_shape(GridShape a, GridShape b, const char* module);

ObservationSet apply_mask(const Field& field, const ObservationMask& mask);

// Extracts observations from an arbitrary grid under a mask, no minimum-count check.
ObservationSet collect_observations(const Grid& values, const MaskGrid& known);

}  // namespace krigscd
