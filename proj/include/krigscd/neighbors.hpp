#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "krigscd/grid.hpp"

namespace krigscd {

// Mutable set of occupied grid cells with exact k-nearest queries by expanding square rings.
// Ties in distance are broken by linear cell index, so results are deterministic.
class GridNeighbors {
 public:
  explicit GridNeighbors(GridShape shape);
  GridNeighbors(const MaskGrid& occupied);

  void insert(std::int64_t row, std::int64_t col);
  bool contains(std::int64_t row, std::int64_t col) const {
    return occupied_[static_cast<std::size_t>(row * shape_.width + col)] != 0;
  }
  std::int64_t count() const { return count_; }
  GridShape shape() const { return shape_; }

  // Appends up to k (0 = unlimited) nearest occupied cells within max_distance, nearest first.
  void nearest(std::int64_t row, std::int64_t col, std::size_t k, double max_distance,
               std::vector<std::int64_t>& out) const;

  std::vector<std::int64_t> nearest(std::int64_t row, std::int64_t col, std::size_t k,
                                    double max_distance = std::numeric_limits<double>::infinity()) const {
    std::vector<std::int64_t> out;
    nearest(row, col, k, max_distance, out);
    return out;
  }

 private:
  GridShape shape_;
  std::vector<std::uint8_t> occupied_;
  std::int64_t count_ = 0;
};

}  // namespace krigscd
