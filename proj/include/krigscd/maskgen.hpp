#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "krigscd/grid.hpp"

namespace krigscd {

struct MaskRecipe {
  GridShape shape{64, 64};
  double target_fraction = 0.1;
  // Share of known pixels contributed by isolated in-situ points; the rest come from swaths.
  double insitu_ratio = 1.0;
  std::int64_t swath_width_px = 2;
  // Inclusive; zeros select the defaults (1/4 and 3/4 of the shorter side).
  std::int64_t swath_length_min = 0;
  std::int64_t swath_length_max = 0;
  std::uint64_t seed = 0;

  std::int64_t known_budget() const;
  std::int64_t insitu_budget() const;
  std::int64_t swath_budget() const { return known_budget() - insitu_budget(); }
  std::pair<std::int64_t, std::int64_t> length_range() const;
  void validate() const;
};

nlohmann::ordered_json to_json(const MaskRecipe& recipe);
MaskRecipe recipe_from_json(const nlohmann::json& j);

// One rasterized swath: pixel indices (row * width + col) in drawing order.
struct Swath {
  std::vector<std::int64_t> pixels;
};

// Rasterizes a thick segment: Bresenham center line with a width x width stamp per center pixel.
// Pixels are emitted in drawing order, unique, clipped to the grid.
Swath rasterize_swath(GridShape shape, double center_row, double center_col, double angle, double length,
                      std::int64_t width);

ObservationMask generate_mask(const MaskRecipe& recipe);

// Masks for increasing fractions where each mask contains the previous one.
std::vector<ObservationMask> generate_nested_family(const MaskRecipe& base, const std::vector<double>& fractions);

// Fixed total coverage with the in-situ share varied; swaths are removed whole, newest first.
std::vector<ObservationMask> generate_ratio_sweep(const MaskRecipe& base, const std::vector<double>& ratios);

}  // namespace krigscd
