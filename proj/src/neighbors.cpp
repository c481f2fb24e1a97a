#include "krigscd/neighbors.hpp"

#include <algorithm>
#include <utility>

namespace krigscd {

GridNeighbors::GridNeighbors(GridShape shape)
    : shape_(shape), occupied_(static_cast<std::size_t>(shape.size()), 0) {}

GridNeighbors::GridNeighbors(const MaskGrid& occupied) : GridNeighbors(GridShape{occupied.rows(), occupied.cols()}) {
  for (Eigen::Index i = 0; i < occupied.size(); ++i)
    if (occupied.data()[i]) {
      occupied_[static_cast<std::size_t>(i)] = 1;
      ++count_;
    }
}

void GridNeighbors::insert(std::int64_t row, std::int64_t col) {
  auto& cell = occupied_[static_cast<std::size_t>(row * shape_.width + col)];
  if (!cell) {
    cell = 1;
    ++count_;
  }
}

void GridNeighbors::nearest(std::int64_t row, std::int64_t col, std::size_t k, double max_distance,
                            std::vector<std::int64_t>& out) const {
  using Candidate = std::pair<std::int64_t, std::int64_t>;  // (squared distance, cell index)
  std::vector<Candidate> cand;
  const double max_d2 = max_distance * max_distance;
  const std::int64_t max_ring = std::max(shape_.height, shape_.width);

  auto visit = [&](std::int64_t r, std::int64_t c) {
    if (r < 0 || r >= shape_.height || c < 0 || c >= shape_.width) return;
    const std::int64_t idx = r * shape_.width + c;
    if (!occupied_[static_cast<std::size_t>(idx)]) return;
    const std::int64_t d2 = (r - row) * (r - row) + (c - col) * (c - col);
    if (static_cast<double>(d2) <= max_d2) cand.emplace_back(d2, idx);
  };

  for (std::int64_t d = 0; d <= max_ring; ++d) {
    if (static_cast<double>(d) > max_distance) break;
    if (d == 0) {
      visit(row, col);
    } else {
      for (std::int64_t dc = -d; dc <= d; ++dc) {
        visit(row - d, col + dc);
        visit(row + d, col + dc);
      }
      for (std::int64_t dr = -d + 1; dr <= d - 1; ++dr) {
        visit(row + dr, col - d);
        visit(row + dr, col + d);
      }
    }
    if (k > 0 && cand.size() >= k) {
      std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
      // Cells outside ring d are at distance >= d + 1.
      if (cand[k - 1].first < (d + 1) * (d + 1)) break;
    }
  }

  std::sort(cand.begin(), cand.end());
  if (k > 0 && cand.size() > k) cand.resize(k);
  for (const auto& [d2, idx] : cand) out.push_back(idx);
}

}  // namespace krigscd
