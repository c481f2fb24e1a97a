#include "krigscd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "krigscd/field_io.hpp"

namespace krigscd {

namespace {

constexpr const char* kModule = "metrics";

}  // namespace

PointwiseErrors pointwise_errors(const Grid& truth_levels, const Grid& recon_levels, const MaskGrid* exclude) {
  require_same_shape({truth_levels.rows(), truth_levels.cols()}, {recon_levels.rows(), recon_levels.cols()}, kModule);
  if (exclude) require_same_shape({truth_levels.rows(), truth_levels.cols()}, {exclude->rows(), exclude->cols()}, kModule);
  double sq = 0.0, abs = 0.0, signed_sum = 0.0;
  std::int64_t n = 0;
  for (Eigen::Index i = 0; i < truth_levels.size(); ++i) {
    if (exclude && exclude->data()[i]) continue;
    const double d = truth_levels.data()[i] - recon_levels.data()[i];
    sq += d * d;
    abs += std::abs(d);
    signed_sum += d;
    ++n;
  }
  if (n == 0) throw InsufficientDataError(kModule, "no pixels left to score");
  const auto count = static_cast<double>(n);
  return {std::sqrt(sq / count), abs / count, signed_sum / count / 255.0};
}

Grid levels_on_truth_scale(const Field& truth, const Field& recon) {
  require_same_shape(truth.shape(), recon.shape(), kModule);
  return quantize(recon.values, truth.range());
}

PointwiseErrors pointwise_errors(const Field& truth, const Field& recon, const MaskGrid* exclude) {
  return pointwise_errors(quantize(truth.values), levels_on_truth_scale(truth, recon), exclude);
}

std::vector<std::int64_t> default_lacunarity_scales(GridShape shape) {
  std::vector<std::int64_t> scales;
  const std::int64_t limit = std::min(shape.height, shape.width) / 2;
  for (std::int64_t s = 1; s <= limit; s *= 2) scales.push_back(s);
  if (scales.empty()) scales.push_back(1);
  return scales;
}

LacunarityCurve lacunarity_curve(const Grid& image, const std::vector<std::int64_t>& scales,
                                 const LacunarityOptions& options) {
  const Eigen::Index h = image.rows(), w = image.cols();
  if (h == 0 || w == 0) throw DegenerateInputError(kModule, "lacunarity of an empty image");
  if ((image.array() < 0.0).any() || !image.allFinite())
    throw DegenerateInputError(kModule, "lacunarity needs finite nonnegative mass");
  if (!(options.mass_offset >= 0.0)) throw ConfigError(kModule, "mass offset must be nonnegative");

  Grid integral = Grid::Zero(h + 1, w + 1);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c)
      integral(r + 1, c + 1) = image(r, c) + options.mass_offset + integral(r, c + 1) + integral(r + 1, c) - integral(r, c);

  LacunarityCurve curve;
  for (std::int64_t s : scales) {
    if (s < 1 || s > h || s > w) throw ConfigError(kModule, "box size " + std::to_string(s) + " does not fit the image");
    double m1 = 0.0, m2 = 0.0;
    for (Eigen::Index r = 0; r + s <= h; ++r)
      for (Eigen::Index c = 0; c + s <= w; ++c) {
        const double mass = integral(r + s, c + s) - integral(r, c + s) - integral(r + s, c) + integral(r, c);
        m1 += mass;
        m2 += mass * mass;
      }
    const auto boxes = static_cast<double>((h - s + 1) * (w - s + 1));
    m1 /= boxes;
    m2 /= boxes;
    if (!(m1 > 0.0)) throw DegenerateInputError(kModule, "lacunarity undefined for zero mass");
    curve.scales.push_back(s);
    curve.values.push_back(m2 / (m1 * m1));
  }
  return curve;
}

LacunarityError lacunarity_error(const Grid& truth_levels, const Grid& recon_levels,
                                 const std::vector<std::int64_t>& scales, const LacunarityOptions& options) {
  require_same_shape({truth_levels.rows(), truth_levels.cols()}, {recon_levels.rows(), recon_levels.cols()}, kModule);
  LacunarityError out;
  out.truth = lacunarity_curve(truth_levels, scales, options);
  out.recon = lacunarity_curve(recon_levels, scales, options);
  double sum = 0.0;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const double d = out.truth.values[i] - out.recon.values[i];
    sum += d * d;
  }
  out.error = std::sqrt(sum);
  return out;
}

double kid_mmd(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated) {
  if (real.cols() != generated.cols()) throw DataError(kModule, "feature dimensions differ");
  if (real.rows() < 2 || generated.rows() < 2) throw InsufficientDataError(kModule, "KID needs at least 2 vectors per set");
  if (real.cols() < 1) throw DataError(kModule, "features have zero dimension");
  const auto d = static_cast<double>(real.cols());
  const auto n = static_cast<double>(real.rows());
  const auto m = static_cast<double>(generated.rows());
  auto kernel = [d](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) -> Eigen::MatrixXd {
    return ((a * b.transpose()).array() / d + 1.0).cube().matrix();
  };
  const Eigen::MatrixXd kxx = kernel(real, real);
  const Eigen::MatrixXd kyy = kernel(generated, generated);
  const Eigen::MatrixXd kxy = kernel(real, generated);
  const double xx = (kxx.sum() - kxx.trace()) / (n * (n - 1.0));
  const double yy = (kyy.sum() - kyy.trace()) / (m * (m - 1.0));
  return xx + yy - 2.0 * kxy.sum() / (n * m);
}

double ensemble_size_probability(std::int64_t n) {
  if (n < 1) throw ConfigError(kModule, "ensemble size must be at least 1");
  return std::erf(std::sqrt(static_cast<double>(n) / 2.0));
}

Eigen::MatrixXd read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError(kModule, path.string() + ": truncated feature header");
  std::uint32_t count, dim;
  std::memcpy(&count, bytes.data(), 4);
  std::memcpy(&dim, bytes.data() + 4, 4);
  const std::size_t expected = 8 + static_cast<std::size_t>(count) * dim * sizeof(float);
  if (bytes.size() != expected)
    throw FormatError(kModule, path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                                   std::to_string(bytes.size()));
  Eigen::MatrixXd out(count, dim);
  const char* p = bytes.data() + 8;
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint32_t j = 0; j < dim; ++j, p += sizeof(float)) {
      float f;
      std::memcpy(&f, p, sizeof f);
      if (!std::isfinite(f)) throw DataError(kModule, path.string() + ": non-finite feature value");
      out(i, j) = f;
    }
  return out;
}

void write_features(const Eigen::MatrixXd& features, const std::filesystem::path& path) {
  std::string bytes(8 + static_cast<std::size_t>(features.size()) * sizeof(float), '\0');
  const auto count = static_cast<std::uint32_t>(features.rows());
  const auto dim = static_cast<std::uint32_t>(features.cols());
  std::memcpy(bytes.data(), &count, 4);
  std::memcpy(bytes.data() + 4, &dim, 4);
  char* p = bytes.data() + 8;
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index j = 0; j < features.cols(); ++j, p += sizeof(float)) {
      const auto f = static_cast<float>(features(i, j));
      std::memcpy(p, &f, sizeof f);
    }
  write_file_atomic(path, bytes);
}

}  // namespace krigscd
