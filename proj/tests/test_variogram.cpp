#include "doctest.h"

#include <cmath>
#include <limits>

#include "krigscd/rng.hpp"
#include "krigscd/variogram.hpp"

using namespace krigscd;

namespace {

// Bins filled directly from the model, so the fit target is noiseless.
EmpiricalVariogram model_bins(const VariogramModel& model, int n, double max_lag) {
  EmpiricalVariogram emp;
  emp.max_lag = max_lag;
  for (int i = 0; i < n; ++i) {
    const double h = (i + 0.5) * max_lag / n;
    emp.lag.push_back(h);
    emp.gamma.push_back(model.gamma(h));
    emp.pairs.push_back(100 + 7 * i);
  }
  return emp;
}

}  // namespace

TEST_CASE("gamma plus covariance equals the sill") {
  const VariogramModel m{2.0, 8.0};
  for (double h : {0.0, 1e-9, 0.3, 1.0, 8.0, 40.0, 1e3}) {
    CHECK(m.gamma(h) + m.covariance(h) == doctest::Approx(2.0).epsilon(4 * std::numeric_limits<double>::epsilon()));
  }
  CHECK(m.gamma(0.0) == 0.0);
  CHECK(m.covariance(0.0) == 2.0);
  CHECK(m.gamma(8.0) == doctest::Approx(2.0 * (1.0 - std::exp(-1.0))));
}

TEST_CASE("empirical semivariogram of a two-point set") {
  ObservationSet obs;
  obs.coords.resize(2, 2);
  obs.coords << 0, 0, 0, 3;
  obs.values.resize(2);
  obs.values << 1.0, 4.0;
  const EmpiricalVariogram emp = empirical_semivariogram(obs, 5, 10.0);
  REQUIRE(emp.size() == 1);
  CHECK(emp.lag[0] == 3.0);
  CHECK(emp.gamma[0] == 4.5);  // (4 - 1)^2 / 2
  CHECK(emp.pairs[0] == 1);
}

TEST_CASE("empirical bins against a brute-force pair loop") {
  Rng rng(21);
  ObservationSet obs;
  const int n = 40;
  obs.coords.resize(n, 2);
  obs.values.resize(n);
  for (int i = 0; i < n; ++i) {
    obs.coords.row(i) << static_cast<double>(rng.below(20)), static_cast<double>(rng.below(20));
    obs.values(i) = rng.normal();
  }
  const int bins = 6;
  const double max_lag = 12.0;
  const EmpiricalVariogram emp = empirical_semivariogram(obs, bins, max_lag);

  std::vector<double> sum_h(bins), sum_g(bins);
  std::vector<std::int64_t> count(bins);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = (obs.coords.row(i) - obs.coords.row(j)).norm();
      if (d > max_lag) continue;
      const int b = std::min(bins - 1, static_cast<int>(d / (max_lag / bins)));
      sum_h[b] += d;
      sum_g[b] += 0.5 * std::pow(obs.values(i) - obs.values(j), 2);
      ++count[b];
    }
  std::size_t k = 0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    REQUIRE(k < emp.size());
    CHECK(emp.pairs[k] == count[b]);
    CHECK(emp.lag[k] == doctest::Approx(sum_h[b] / count[b]));
    CHECK(emp.gamma[k] == doctest::Approx(sum_g[b] / count[b]));
    ++k;
  }
  CHECK(k == emp.size());
}

TEST_CASE("fit recovers noiseless exponential parameters") {
  for (const VariogramModel truth : {VariogramModel{2.0, 8.0}, VariogramModel{0.5, 3.0}, VariogramModel{10.0, 20.0}}) {
    const VariogramFit fit = fit_exponential(model_bins(truth, 15, 3.0 * truth.range));
    CHECK(fit.model.sill == doctest::Approx(truth.sill).epsilon(1e-3));
    CHECK(fit.model.range == doctest::Approx(truth.range).epsilon(1e-3));
    CHECK(fit.residual <= fit.grid_residual);
  }
}

TEST_CASE("weighted residual is zero at the generating model") {
  const VariogramModel truth{2.0, 8.0};
  const EmpiricalVariogram emp = model_bins(truth, 10, 30.0);
  CHECK(weighted_residual(emp, truth) == doctest::Approx(0.0));
  CHECK(weighted_residual(emp, {2.0, 9.0}) > 0.0);
}

TEST_CASE("degenerate variogram inputs") {
  EmpiricalVariogram flat = model_bins({1.0, 1.0}, 5, 10.0);
  std::fill(flat.gamma.begin(), flat.gamma.end(), 0.0);
  CHECK_THROWS_AS(fit_exponential(flat), DegenerateFitError);

  ObservationSet one;
  one.coords = Coords::Zero(1, 2);
  one.values = Eigen::VectorXd::Ones(1);
  CHECK_THROWS_AS(empirical_semivariogram(one, 5, 10.0), InsufficientDataError);

  ObservationSet constant;
  constant.coords.resize(3, 2);
  constant.coords << 0, 0, 0, 1, 2, 2;
  constant.values = Eigen::VectorXd::Constant(3, 4.0);
  const VariogramModel white = fit_variogram_or_white(constant, {4, 4});
  CHECK(white.sill == kWhiteSill);
}

TEST_CASE("default max lag is half the grid diagonal") {
  CHECK(default_max_lag({30, 40}) == doctest::Approx(25.0));
}
