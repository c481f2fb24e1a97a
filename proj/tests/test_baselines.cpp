#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>

#include "krigscd/baselines.hpp"
#include "krigscd/maskgen.hpp"
#include "krigscd/rng.hpp"

using namespace krigscd;

namespace {

ObservationSet random_obs(Rng& rng, int n, double extent) {
  ObservationSet obs;
  obs.coords.resize(n, 2);
  obs.values.resize(n);
  for (int i = 0; i < n; ++i) {
    obs.coords.row(i) << rng.uniform(0.0, extent), rng.uniform(0.0, extent);
    obs.values(i) = rng.uniform(-5.0, 5.0);
  }
  return obs;
}

Field smooth_field(GridShape shape, Rng& rng) {
  Grid g(shape.height, shape.width);
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = 0.1 * r - 0.05 * c + std::cos(0.4 * r) + 0.1 * rng.normal();
  return Field(g);
}

}  // namespace

TEST_CASE("IDW is exact at data points and bounded by the data range") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const ObservationSet obs = random_obs(rng, 1 + static_cast<int>(rng.below(8)), 10.0);
    Coords targets(6, 2);
    for (int t = 0; t < 5; ++t) targets.row(t) << rng.uniform(-2.0, 12.0), rng.uniform(-2.0, 12.0);
    targets.row(5) = obs.coords.row(0);
    const Eigen::VectorXd est = idw_interpolate(obs, targets, {rng.uniform(0.5, 4.0)});
    CHECK(est(5) == obs.values(0));
    for (int t = 0; t < 5; ++t) {
      CHECK(est(t) >= obs.values.minCoeff() - 1e-12);
      CHECK(est(t) <= obs.values.maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("IDW with two equidistant points averages them") {
  ObservationSet obs;
  obs.coords.resize(2, 2);
  obs.coords << 0, 0, 0, 2;
  obs.values.resize(2);
  obs.values << 1.0, 5.0;
  Coords t(1, 2);
  t << 0, 1;
  CHECK(idw_interpolate(obs, t)(0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(idw_interpolate(obs, t, {0.0}), ConfigError);
  CHECK_THROWS_AS(idw_interpolate(obs, t, {-1.0}), ConfigError);
}

TEST_CASE("OLS trend matches the normal equations") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const GridShape shape{20, 30};
    ObservationSet obs;
    const int n = 10 + static_cast<int>(rng.below(30));
    obs.coords.resize(n, 2);
    obs.values.resize(n);
    for (int i = 0; i < n; ++i) {
      obs.coords.row(i) << static_cast<double>(rng.below(20)), static_cast<double>(rng.below(30));
      obs.values(i) = rng.normal();
    }
    const TrendModel t = fit_trend_ols(obs, shape);
    const Eigen::MatrixX3d a = trend_design(obs, shape);
    const Eigen::Vector3d normal = (a.transpose() * a).ldlt().solve(a.transpose() * obs.values);
    if (t.rank_deficient) continue;
    CHECK((t.coefficients - normal).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(t.residuals.mean() == doctest::Approx(0.0).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("trend recovers an exact plane and evaluates in normalized coordinates") {
  const GridShape shape{11, 21};
  ObservationSet obs;
  obs.coords.resize(4, 2);
  obs.coords << 0, 0, 10, 0, 0, 20, 5, 7;
  obs.values.resize(4);
  for (int i = 0; i < 4; ++i) obs.values(i) = 1.0 + 2.0 * obs.coords(i, 1) / 20.0 - 3.0 * obs.coords(i, 0) / 10.0;
  const TrendModel t = fit_trend_ols(obs, shape);
  CHECK(t.coefficients(0) == doctest::Approx(1.0));
  CHECK(t.coefficients(1) == doctest::Approx(2.0));
  CHECK(t.coefficients(2) == doctest::Approx(-3.0));
  CHECK(t.residual_std == 0.0);
  CHECK(t.evaluate(10.0, 20.0) == doctest::Approx(0.0));
}

TEST_CASE("collinear observations fall back to a mean trend") {
  ObservationSet obs;
  obs.coords.resize(3, 2);
  obs.coords << 2, 0, 2, 1, 2, 2;
  obs.values.resize(3);
  obs.values << 1, 2, 6;
  const TrendModel t = fit_trend_ols(obs, {5, 5});
  CHECK(t.rank_deficient);
  CHECK(t.coefficients(0) == doctest::Approx(3.0));
}

TEST_CASE("SGS honors conditioning data and is seed-deterministic") {
  Rng rng(3);
  const GridShape shape{16, 16};
  ObservationSet obs;
  obs.coords.resize(12, 2);
  obs.values.resize(12);
  for (int i = 0; i < 12; ++i) {
    obs.coords.row(i) << static_cast<double>(i), static_cast<double>((5 * i) % 16);
    obs.values(i) = rng.normal() * 3.0 + 1.0;
  }
  const VariogramModel model{1.0, 4.0};
  const Field a = sgs_realization(obs, model, shape, 42);
  const Field b = sgs_realization(obs, model, shape, 42);
  const Field c = sgs_realization(obs, model, shape, 43);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  for (int i = 0; i < 12; ++i) CHECK(a.values(static_cast<Eigen::Index>(obs.coords(i, 0)),
                                             static_cast<Eigen::Index>(obs.coords(i, 1))) == obs.values(i));
  CHECK(a.values.allFinite());
}

TEST_CASE("CGS members honor observations exactly") {
  Rng rng(4);
  const Field f = smooth_field({20, 20}, rng);
  MaskRecipe recipe;
  recipe.shape = {20, 20};
  recipe.target_fraction = 0.1;
  recipe.insitu_ratio = 0.5;
  recipe.seed = 2;
  const ObservationMask mask = generate_mask(recipe);
  const CgsResult r = cgs_reconstruct(f, mask, 5, 7);
  REQUIRE(r.ensemble.members.size() == 5);
  for (const Field& m : r.ensemble.members)
    for (Eigen::Index i = 0; i < f.values.size(); ++i)
      if (mask.known.data()[i]) CHECK(m.values.data()[i] == f.values.data()[i]);
  CHECK(r.ensemble.members[0].values != r.ensemble.members[1].values);
  CHECK(cgs_reconstruct(f, mask, 5, 7).ensemble.mean.values == r.ensemble.mean.values);
}

TEST_CASE("exact-fit data yields the trend for every member") {
  const GridShape shape{8, 8};
  Grid g(8, 8);
  for (Eigen::Index r = 0; r < 8; ++r)
    for (Eigen::Index c = 0; c < 8; ++c) g(r, c) = 2.0 + 0.5 * r;
  MaskGrid m = MaskGrid::Zero(8, 8);
  m(0, 0) = m(7, 7) = m(3, 5) = m(6, 1) = true;
  const CgsResult r = cgs_reconstruct(Field(g), ObservationMask(m), 3, 0);
  for (const Field& member : r.ensemble.members) CHECK((member.values - g).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ensemble mean of one member is that member") {
  Field f(Grid::Constant(3, 3, 2.5));
  CHECK(ensemble_mean({f}).values == f.values);
  CHECK_THROWS_AS(ensemble_mean({}), InsufficientDataError);
}
