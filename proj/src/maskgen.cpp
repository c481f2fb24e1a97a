#include "krigscd/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>

#include "krigscd/rng.hpp"

namespace krigscd {

namespace {

constexpr const char* kModule = "maskgen";

// Stream tags so swath geometry does not depend on the in-situ share.
constexpr std::uint64_t kSwathStream = 0x5357415448ULL;
constexpr std::uint64_t kInsituStream = 0x494E53495455ULL;

class MaskBuilder {
 public:
  explicit MaskBuilder(const MaskRecipe& recipe)
      : recipe_(recipe),
        shape_(recipe.shape),
        swath_rng_(substream(recipe.seed, kSwathStream)),
        insitu_rng_(substream(recipe.seed, kInsituStream)),
        known_(MaskGrid::Constant(shape_.height, shape_.width, false)) {}

  void grow_swaths(std::int64_t budget) {
    const auto [lmin, lmax] = recipe_.length_range();
    const std::int64_t max_draws = 200000 + 50 * shape_.size();
    while (swath_count_ < budget) {
      if (pending_.empty()) {
        if (++draws_ > max_draws)
          throw GeometryError(kModule, "swath budget " + std::to_string(budget) + " unreachable on " +
                                           std::to_string(shape_.height) + "x" + std::to_string(shape_.width));
        const double row = swath_rng_.uniform(0.0, static_cast<double>(shape_.height));
        const double col = swath_rng_.uniform(0.0, static_cast<double>(shape_.width));
        const double angle = swath_rng_.uniform(0.0, std::numbers::pi);
        const auto length = static_cast<double>(swath_rng_.between(lmin, lmax));
        Swath s = rasterize_swath(shape_, row, col, angle, length, recipe_.swath_width_px);
        if (s.pixels.empty()) continue;
        pending_.assign(s.pixels.begin(), s.pixels.end());
        swaths_.emplace_back();
      }
      const std::int64_t p = pending_.front();
      pending_.pop_front();
      bool& cell = known_.data()[p];
      if (cell) continue;
      cell = true;
      swaths_.back().push_back(p);
      ++swath_count_;
    }
  }

  void grow_insitu(std::int64_t budget) { add_insitu(budget - insitu_count_); }

  void add_insitu(std::int64_t count) {
    if (count <= 0) return;
    std::vector<std::int64_t> free;
    free.reserve(static_cast<std::size_t>(shape_.size()));
    for (std::int64_t i = 0; i < shape_.size(); ++i)
      if (!known_.data()[i]) free.push_back(i);
    if (static_cast<std::int64_t>(free.size()) < count)
      throw GeometryError(kModule, "not enough free pixels for in-situ budget");
    const auto n = static_cast<std::uint64_t>(free.size());
    for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(count); ++i) {
      const std::uint64_t j = i + insitu_rng_.below(n - i);
      std::swap(free[i], free[j]);
      known_.data()[free[i]] = true;
    }
    insitu_count_ += count;
  }

  // Drops every swath after the first `keep`, returning their pixels to the free pool.
  void truncate_swaths(std::size_t keep) {
    while (swaths_.size() > keep) {
      for (std::int64_t p : swaths_.back()) known_.data()[p] = false;
      swath_count_ -= static_cast<std::int64_t>(swaths_.back().size());
      swaths_.pop_back();
    }
    pending_.clear();
  }

  const std::vector<std::vector<std::int64_t>>& swaths() const { return swaths_; }

  ObservationMask snapshot(const MaskRecipe& recipe) const {
    ObservationMask mask(known_);
    mask.recipe = std::make_shared<const MaskRecipe>(recipe);
    return mask;
  }

 private:
  MaskRecipe recipe_;
  GridShape shape_;
  Rng swath_rng_;
  Rng insitu_rng_;
  MaskGrid known_;
  std::deque<std::int64_t> pending_;
  std::vector<std::vector<std::int64_t>> swaths_;
  std::int64_t swath_count_ = 0;
  std::int64_t insitu_count_ = 0;
  std::int64_t draws_ = 0;
};

}  // namespace

std::int64_t MaskRecipe::known_budget() const {
  return static_cast<std::int64_t>(std::llround(target_fraction * static_cast<double>(shape.size())));
}

std::int64_t MaskRecipe::insitu_budget() const {
  return static_cast<std::int64_t>(std::ceil(static_cast<double>(known_budget()) * insitu_ratio - 1e-9));
}

std::pair<std::int64_t, std::int64_t> MaskRecipe::length_range() const {
  const std::int64_t side = std::min(shape.height, shape.width);
  const std::int64_t lo = swath_length_min > 0 ? swath_length_min : std::max<std::int64_t>(1, side / 4);
  const std::int64_t hi = swath_length_max > 0 ? swath_length_max : std::max<std::int64_t>(lo, (3 * side) / 4);
  return {lo, hi};
}

void MaskRecipe::validate() const {
  if (shape.height < 1 || shape.width < 1) throw ConfigError(kModule, "mask shape must be positive");
  if (!(target_fraction > 0.0 && target_fraction <= 1.0))
    throw ConfigError(kModule, "target_fraction must lie in (0, 1]");
  if (!(insitu_ratio >= 0.0 && insitu_ratio <= 1.0)) throw ConfigError(kModule, "insitu_ratio must lie in [0, 1]");
  if (swath_width_px < 1) throw ConfigError(kModule, "swath_width_px must be positive");
  const auto [lo, hi] = length_range();
  if (lo < 1 || hi < lo) throw ConfigError(kModule, "invalid swath length range");
  if (known_budget() < 1)
    throw GeometryError(kModule, "target fraction yields no known pixels on a " + std::to_string(shape.height) + "x" +
                                     std::to_string(shape.width) + " grid");
}

nlohmann::ordered_json to_json(const MaskRecipe& recipe) {
  const auto [lo, hi] = recipe.length_range();
  nlohmann::ordered_json j;
  j["height"] = recipe.shape.height;
  j["width"] = recipe.shape.width;
  j["target_fraction"] = recipe.target_fraction;
  j["insitu_ratio"] = recipe.insitu_ratio;
  j["swath_width_px"] = recipe.swath_width_px;
  j["swath_length_min"] = lo;
  j["swath_length_max"] = hi;
  j["seed"] = recipe.seed;
  return j;
}

MaskRecipe recipe_from_json(const nlohmann::json& j) {
  static const char* const kKeys[] = {"height",           "width",           "target_fraction",
                                      "insitu_ratio",     "swath_width_px",  "swath_length_min",
                                      "swath_length_max", "seed"};
  for (const auto& [key, _] : j.items())
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) == std::end(kKeys))
      throw ConfigError(kModule, "unknown recipe key '" + key + "'");
  MaskRecipe r;
  try {
    r.shape.height = j.value("height", r.shape.height);
    r.shape.width = j.value("width", r.shape.width);
    r.target_fraction = j.value("target_fraction", r.target_fraction);
    r.insitu_ratio = j.value("insitu_ratio", r.insitu_ratio);
    r.swath_width_px = j.value("swath_width_px", r.swath_width_px);
    r.swath_length_min = j.value("swath_length_min", r.swath_length_min);
    r.swath_length_max = j.value("swath_length_max", r.swath_length_max);
    r.seed = j.value("seed", r.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(kModule, std::string("bad recipe value: ") + e.what());
  }
  r.validate();
  return r;
}

Swath rasterize_swath(GridShape shape, double center_row, double center_col, double angle, double length,
                      std::int64_t width) {
  const double half = 0.5 * length;
  const double dr = std::sin(angle);
  const double dc = std::cos(angle);
  std::int64_t r0 = std::llround(center_row - half * dr);
  std::int64_t c0 = std::llround(center_col - half * dc);
  const std::int64_t r1 = std::llround(center_row + half * dr);
  const std::int64_t c1 = std::llround(center_col + half * dc);

  Swath swath;
  std::vector<bool> seen(static_cast<std::size_t>(shape.size()), false);
  const std::int64_t lo = -(width - 1) / 2;
  const std::int64_t hi = width / 2;
  auto stamp = [&](std::int64_t r, std::int64_t c) {
    for (std::int64_t y = r + lo; y <= r + hi; ++y) {
      if (y < 0 || y >= shape.height) continue;
      for (std::int64_t x = c + lo; x <= c + hi; ++x) {
        if (x < 0 || x >= shape.width) continue;
        const std::int64_t p = y * shape.width + x;
        if (!seen[static_cast<std::size_t>(p)]) {
          seen[static_cast<std::size_t>(p)] = true;
          swath.pixels.push_back(p);
        }
      }
    }
  };

  const std::int64_t drow = std::abs(r1 - r0);
  const std::int64_t dcol = -std::abs(c1 - c0);
  const std::int64_t srow = r0 < r1 ? 1 : -1;
  const std::int64_t scol = c0 < c1 ? 1 : -1;
  std::int64_t err = drow + dcol;
  while (true) {
    stamp(r0, c0);
    if (r0 == r1 && c0 == c1) break;
    const std::int64_t e2 = 2 * err;
    if (e2 >= dcol) {
      err += dcol;
      r0 += srow;
    }
    if (e2 <= drow) {
      err += drow;
      c0 += scol;
    }
  }
  return swath;
}

ObservationMask generate_mask(const MaskRecipe& recipe) {
  return generate_nested_family(recipe, {recipe.target_fraction}).front();
}

std::vector<ObservationMask> generate_nested_family(const MaskRecipe& base, const std::vector<double>& fractions) {
  if (fractions.empty()) throw ConfigError(kModule, "nested family needs at least one fraction");
  for (std::size_t i = 1; i < fractions.size(); ++i)
    if (!(fractions[i] > fractions[i - 1])) throw ConfigError(kModule, "nested fractions must be strictly increasing");

  MaskBuilder builder(base);
  std::vector<ObservationMask> family;
  family.reserve(fractions.size());
  for (double fraction : fractions) {
    MaskRecipe level = base;
    level.target_fraction = fraction;
    level.validate();
    builder.grow_swaths(level.swath_budget());
    builder.grow_insitu(level.insitu_budget());
    family.push_back(builder.snapshot(level));
  }
  return family;
}

std::vector<ObservationMask> generate_ratio_sweep(const MaskRecipe& base, const std::vector<double>& ratios) {
  if (ratios.empty()) throw ConfigError(kModule, "ratio sweep needs at least one ratio");
  MaskRecipe swath_only = base;
  swath_only.insitu_ratio = 0.0;
  swath_only.validate();
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(kModule, "ratios must lie in [0, 1]");

  MaskBuilder builder(swath_only);
  const std::int64_t total = swath_only.known_budget();
  builder.grow_swaths(total);

  std::vector<std::int64_t> cumulative{0};
  for (const auto& s : builder.swaths()) cumulative.push_back(cumulative.back() + static_cast<std::int64_t>(s.size()));

  std::vector<std::size_t> order(ratios.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ratios[a] < ratios[b]; });

  std::vector<ObservationMask> out(ratios.size());
  std::int64_t insitu = 0;
  for (std::size_t idx : order) {
    MaskRecipe level = base;
    level.insitu_ratio = ratios[idx];
    const std::int64_t swath_target = level.swath_budget();
    std::size_t keep = 0;
    while (keep + 1 < cumulative.size() && cumulative[keep + 1] <= swath_target) ++keep;
    builder.truncate_swaths(keep);
    const std::int64_t want = total - cumulative[keep];
    builder.add_insitu(want - insitu);
    insitu = std::max(insitu, want);
    out[idx] = builder.snapshot(level);
  }
  return out;
}

}  // namespace krigscd
