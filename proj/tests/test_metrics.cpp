#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "krigscd/field_io.hpp"
#include "krigscd/metrics.hpp"
#include "krigscd/report.hpp"
#include "krigscd/rng.hpp"

using namespace krigscd;

namespace {

// Brute-force gliding box: every s x s window summed directly.
double brute_lacunarity(const Grid& img, std::int64_t s, double offset) {
  double m1 = 0.0, m2 = 0.0;
  int boxes = 0;
  for (Eigen::Index r = 0; r + s <= img.rows(); ++r)
    for (Eigen::Index c = 0; c + s <= img.cols(); ++c) {
      const double mass = (img.block(r, c, s, s).array() + offset).sum();
      m1 += mass;
      m2 += mass * mass;
      ++boxes;
    }
  m1 /= boxes;
  m2 /= boxes;
  return m2 / (m1 * m1);
}

// Composite Simpson integration of the standard normal density over [0, x].
double phi_integral(double x) {
  const int n = 20000;
  const double h = x / n;
  auto pdf = [](double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); };
  double sum = pdf(0.0) + pdf(x);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return sum * h / 3.0;
}

Grid random_levels(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Grid g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>(rng.below(256));
  return g;
}

}  // namespace

TEST_CASE("pointwise errors: identities and extremes") {
  const Grid a = Grid::Constant(4, 4, 100.0);
  const PointwiseErrors same = pointwise_errors(a, a);
  CHECK(same.rmse == 0.0);
  CHECK(same.mae == 0.0);
  CHECK(same.mre == 0.0);

  const PointwiseErrors ext = pointwise_errors(Grid::Constant(3, 3, 255.0), Grid::Zero(3, 3));
  CHECK(ext.rmse == 255.0);
  CHECK(ext.mae == 255.0);
  CHECK(ext.mre == 1.0);

  Grid t(1, 2), r(1, 2);
  t << 0, 255;
  r << 255, 0;
  const PointwiseErrors cancel = pointwise_errors(t, r);
  CHECK(cancel.rmse == 255.0);
  CHECK(cancel.mae == 255.0);
  CHECK(cancel.mre == 0.0);
}

TEST_CASE("pointwise error inequalities on random pairs") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Grid a = random_levels(rng, 5, 6), b = random_levels(rng, 5, 6);
    const PointwiseErrors e = pointwise_errors(a, b);
    CHECK(e.rmse >= e.mae);
    CHECK(e.mae >= 0.0);
    CHECK(std::abs(e.mre) <= e.mae / 255.0 + 1e-15);
  }
}

TEST_CASE("unknown-only scoring skips excluded pixels") {
  Grid t(1, 3), r(1, 3);
  t << 10, 20, 30;
  r << 10, 20, 0;
  MaskGrid known(1, 3);
  known << false, false, true;
  CHECK(pointwise_errors(t, r, &known).rmse == 0.0);
  CHECK(pointwise_errors(t, r).mae == 10.0);
  const MaskGrid everything = MaskGrid::Ones(1, 3);
  CHECK_THROWS_AS(pointwise_errors(t, r, &everything), InsufficientDataError);
  CHECK_THROWS_AS(pointwise_errors(t, Grid::Zero(3, 1)), DataError);
}

TEST_CASE("field errors quantize the reconstruction on the truth's scale") {
  Grid t(1, 2), r(1, 2);
  t << 0.0, 1.0;
  r << -5.0, 1.0;
  const PointwiseErrors e = pointwise_errors(Field(t), Field(r));
  CHECK(e.rmse == 0.0);  // clamped to level 0
}

TEST_CASE("lacunarity: constants, checkerboard and the brute-force oracle") {
  const auto scales = default_lacunarity_scales({16, 16});
  CHECK(scales == std::vector<std::int64_t>{1, 2, 4, 8});
  for (double level : {0.0, 1.0, 128.0, 255.0}) {
    const LacunarityCurve c = lacunarity_curve(Grid::Constant(16, 16, level), scales);
    for (double v : c.values) CHECK(v == 1.0);
  }

  Grid checker(8, 8);
  for (Eigen::Index r = 0; r < 8; ++r)
    for (Eigen::Index c = 0; c < 8; ++c) checker(r, c) = (r + c) % 2 ? 255.0 : 0.0;
  // Without the offset, s = 1 recovers 1 + Var / Mean^2 of the pixel values.
  CHECK(lacunarity_curve(checker, {1}, {0.0}).values[0] == doctest::Approx(2.0));
  const double shifted = 1.0 + (127.5 * 127.5) / (128.5 * 128.5);
  CHECK(lacunarity_curve(checker, {1}).values[0] == doctest::Approx(shifted));
  const LacunarityError err = lacunarity_error(checker, Grid::Constant(8, 8, 128.0), {1}, {0.0});
  CHECK(err.error == doctest::Approx(1.0));

  Rng rng(3);
  const Grid img = random_levels(rng, 13, 10);
  const LacunarityCurve curve = lacunarity_curve(img, {1, 2, 4});
  for (std::size_t i = 0; i < 3; ++i) CHECK(curve.values[i] == doctest::Approx(brute_lacunarity(img, curve.scales[i], 1.0)));
  for (double v : curve.values) CHECK(v >= 1.0);

  CHECK(lacunarity_error(img, img, {1, 2}).error == 0.0);
  CHECK_THROWS_AS(lacunarity_curve(Grid::Zero(4, 4), {1}, {0.0}), DegenerateInputError);
  CHECK_THROWS_AS(lacunarity_curve(img, {16}), ConfigError);
}

TEST_CASE("KID hand-expanded 2x2 case") {
  Eigen::MatrixXd x(2, 3), y(2, 3);
  x << 1, 0, 2, 0, 1, 1;
  y << 2, 2, 0, -1, 0, 1;
  const double d = 3.0;
  auto k = [d](const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v) { return std::pow(u.dot(v) / d + 1.0, 3); };
  const double xx = (k(x.row(0), x.row(1)) + k(x.row(1), x.row(0))) / 2.0;
  const double yy = (k(y.row(0), y.row(1)) + k(y.row(1), y.row(0))) / 2.0;
  const double xy = (k(x.row(0), y.row(0)) + k(x.row(0), y.row(1)) + k(x.row(1), y.row(0)) + k(x.row(1), y.row(1))) / 4.0;
  CHECK(std::abs(kid_mmd(x, y) - (xx + yy - 2.0 * xy)) <= 1e-10);
  CHECK_THROWS_AS(kid_mmd(x, Eigen::MatrixXd::Zero(2, 2)), DataError);
  CHECK_THROWS_AS(kid_mmd(x.topRows(1), y), InsufficientDataError);
}

TEST_CASE("KID: same-distribution null and shifted separation") {
  Rng rng(7);
  auto sample = [&](int n, double shift) {
    Eigen::MatrixXd m(n, 8);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() + shift;
    return m;
  };
  const Eigen::MatrixXd x = sample(500, 0.0), y = sample(500, 0.0);
  const double null_kid = kid_mmd(x, y);
  // Bootstrap spread of the estimator under the null.
  std::vector<double> reps;
  for (int b = 0; b < 20; ++b) reps.push_back(kid_mmd(sample(500, 0.0), sample(500, 0.0)));
  double mean = 0.0, ss = 0.0;
  for (double v : reps) mean += v / reps.size();
  for (double v : reps) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (reps.size() - 1));
  CHECK(std::abs(null_kid) <= 3.0 * sd);
  CHECK(kid_mmd(x, (x.array() + 10.0).matrix()) > 100.0 * sd);
}

TEST_CASE("KID is unbiased over random half splits") {
  Rng rng(9);
  Eigen::MatrixXd pool(200, 4);
  for (Eigen::Index i = 0; i < pool.size(); ++i) pool.data()[i] = rng.normal();
  double sum = 0.0, sum_sq = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    std::vector<int> idx(200);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 199; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    Eigen::MatrixXd a(100, 4), b(100, 4);
    for (int i = 0; i < 100; ++i) {
      a.row(i) = pool.row(idx[i]);
      b.row(i) = pool.row(idx[100 + i]);
    }
    const double v = kid_mmd(a, b);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
  CHECK(std::abs(mean) <= 4.0 * se);
}

TEST_CASE("ensemble size probability against numeric integration") {
  CHECK(ensemble_size_probability(1) == doctest::Approx(0.682689).epsilon(1e-5));
  CHECK(std::abs(ensemble_size_probability(10) - 0.998433) <= 1e-5);
  for (int n : {1, 4, 10, 25}) CHECK(std::abs(ensemble_size_probability(n) - 2.0 * phi_integral(std::sqrt(n))) <= 1e-6);
  for (int n = 1; n < 30; ++n) CHECK(ensemble_size_probability(n + 1) >= ensemble_size_probability(n));
  CHECK(ensemble_size_probability(100) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ensemble_size_probability(0), ConfigError);
}

TEST_CASE("feature files round-trip and reject bad lengths") {
  const auto dir = std::filesystem::temp_directory_path() / "krigscd_test_metrics";
  std::filesystem::create_directories(dir);
  Eigen::MatrixXd f(3, 2);
  f << 1, 2, 3, 4, 5, 6.5;
  write_features(f, dir / "f.bin");
  CHECK(read_features(dir / "f.bin") == f);
  write_file_atomic(dir / "bad.bin", std::string("\x02\0\0\0\x02\0\0\0", 8));
  CHECK_THROWS_AS(read_features(dir / "bad.bin"), FormatError);
}

TEST_CASE("report: identical reconstruction gives an all-zero row and JSON round-trips") {
  Rng rng(5);
  Grid g(16, 16);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform(0.0, 3.0);
  MaskGrid m = MaskGrid::Zero(16, 16);
  m(2, 3) = m(10, 11) = true;
  ObservationMask mask(m);
  MaskRecipe recipe;
  recipe.shape = {16, 16};
  recipe.target_fraction = 0.01;
  mask.recipe = std::make_shared<const MaskRecipe>(recipe);

  const MetricReport report = build_report(Field(g), {{"idw", Field(g), false, 1}}, mask);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].rmse == 0.0);
  CHECK(report.rows[0].mae == 0.0);
  CHECK(report.rows[0].lacunarity_error == 0.0);
  CHECK(report.rows[0].coverage == doctest::Approx(2.0 / 256.0));

  const nlohmann::ordered_json j = to_json(report);
  validate_report_json(nlohmann::json::parse(j.dump()));
  const MetricReport back = report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.recipe->target_fraction == 0.01);

  nlohmann::json broken = nlohmann::json::parse(j.dump());
  broken["rows"][0].erase("rmse");
  CHECK_THROWS_AS(validate_report_json(broken), FormatError);
  nlohmann::json extra = nlohmann::json::parse(j.dump());
  extra["comment"] = 1;
  CHECK_THROWS_AS(validate_report_json(extra), FormatError);

  const std::string csv = to_csv(report);
  CHECK(csv.rfind(report_csv_header() + "\n", 0) == 0);
  CHECK(csv.find("idw,") != std::string::npos);
}
