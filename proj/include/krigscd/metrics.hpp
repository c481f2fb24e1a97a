#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "krigscd/grid.hpp"

namespace krigscd {

struct PointwiseErrors {
  double rmse = 0.0;
  double mae = 0.0;
  double mre = 0.0;  // signed mean of (truth - recon) / 255
};

// Errors between two 0-255 level grids over all pixels, or over pixels where `exclude` is false.
PointwiseErrors pointwise_errors(const Grid& truth_levels, const Grid& recon_levels, const MaskGrid* exclude = nullptr);

// Truth is quantized with its own range and the reconstruction with the truth's range.
PointwiseErrors pointwise_errors(const Field& truth, const Field& recon, const MaskGrid* exclude = nullptr);

// Reconstruction levels on the truth's quantization scale, clamped to [0, 255].
Grid levels_on_truth_scale(const Field& truth, const Field& recon);

struct LacunarityOptions {
  // Added to every pixel before box masses are formed.
  double mass_offset = 1.0;
};

struct LacunarityCurve {
  std::vector<std::int64_t> scales;
  std::vector<double> values;
};

// Box sizes 1, 2, 4, ... up to min(H, W) / 2.
std::vector<std::int64_t> default_lacunarity_scales(GridShape shape);

// Gliding-box lacunarity <M^2> / <M>^2 over all s x s windows at stride 1.
LacunarityCurve lacunarity_curve(const Grid& image, const std::vector<std::int64_t>& scales,
                                 const LacunarityOptions& options = {});

struct LacunarityError {
  double error = 0.0;  // sqrt(sum_s (truth(s) - recon(s))^2)
  LacunarityCurve truth;
  LacunarityCurve recon;
};

LacunarityError lacunarity_error(const Grid& truth_levels, const Grid& recon_levels,
                                 const std::vector<std::int64_t>& scales, const LacunarityOptions& options = {});

// Unbiased squared MMD with the kernel (u.v / d + 1)^3. Rows are feature vectors.
double kid_mmd(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated);

// 2 Phi(sqrt(n)) - 1.
double ensemble_size_probability(std::int64_t n);

// Features as raw float32: u32 count, u32 dim, then count * dim values.
Eigen::MatrixXd read_features(const std::filesystem::path& path);
void write_features(const Eigen::MatrixXd& features, const std::filesystem::path& path);

}  // namespace krigscd
