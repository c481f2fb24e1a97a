#include "krigscd/selftest.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "krigscd/diffusion.hpp"
#include "krigscd/kriging.hpp"
#include "krigscd/metrics.hpp"
#include "krigscd/rng.hpp"

namespace krigscd {

namespace {

bool kriging_matches_dense_solve() {
  Rng rng(11);
  const VariogramModel model{1.5, 3.0};
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5));
    Coords coords(n, 2);
    for (int i = 0; i < n; ++i) coords.row(i) << rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0);
    const Eigen::VectorXd values = Eigen::VectorXd::NullaryExpr(n, [&] { return rng.normal(); });
    const Point2<double> target(rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0));
    const KrigingSolution sol = solve_ok_system<double>(coords, values, target, model, {});

    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(n + 1, n + 1);
    Eigen::VectorXd b = Eigen::VectorXd::Ones(n + 1);
    a(n, n) = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a(i, j) = model.covariance((coords.row(i) - coords.row(j)).norm());
      b(i) = model.covariance((coords.row(i) - target).norm());
    }
    const Eigen::VectorXd x = a.fullPivLu().solve(b);
    if ((x.head(n) - sol.weights).cwiseAbs().maxCoeff() > 1e-8) return false;
  }
  return true;
}

bool respacing_telescopes() {
  const NoiseSchedule parent = default_linear_schedule(250);
  const NoiseSchedule sub = respace(parent, 150);
  double prod = 1.0;
  for (double beta : sub.betas) prod *= 1.0 - beta;
  return sub.steps() == 150 && std::abs(prod - parent.alpha_bar(250)) <= 1e-10;
}

bool scalar_denoiser_is_conjugate() {
  const GaussianFieldPrior prior(GridShape{1, 1}, 0.0, {2.0, 1.0});
  const double abar = 0.3, x = 0.7;
  const Grid mean = prior.posterior_mean(Grid::Constant(1, 1, x), abar);
  const double expected = std::sqrt(abar) * 2.0 * x / (abar * 2.0 + 1.0 - abar);
  return std::abs(mean(0, 0) - expected) <= 1e-12;
}

bool ensemble_probability() { return std::abs(ensemble_size_probability(10) - 0.998433) <= 1e-5; }

bool kid_hand_case() {
  Eigen::MatrixXd x(2, 2), y(2, 2);
  x << 1, 0, 0, 1;
  y << 1, 1, 2, 0;
  auto k = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) { return std::pow(u.dot(v) / 2.0 + 1.0, 3); };
  const double xx = 2.0 * k(x.row(0), x.row(1)) / 2.0;
  const double yy = 2.0 * k(y.row(0), y.row(1)) / 2.0;
  double xy = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) xy += k(x.row(i), y.row(j));
  return std::abs(kid_mmd(x, y) - (xx + yy - 2.0 * xy / 4.0)) <= 1e-10;
}

bool constant_lacunarity() {
  const LacunarityCurve curve = lacunarity_curve(Grid::Constant(16, 16, 77.0), default_lacunarity_scales({16, 16}));
  for (double v : curve.values)
    if (v != 1.0) return false;
  return true;
}

}  // namespace

int run_selftest(std::ostream& out) {
  const std::vector<std::pair<const char*, std::function<bool()>>> checks = {
      {"kriging weights vs dense augmented solve", kriging_matches_dense_solve},
      {"respacing telescoping product", respacing_telescopes},
      {"scalar Gaussian posterior mean", scalar_denoiser_is_conjugate},
      {"ensemble size probability n=10", ensemble_probability},
      {"KID 2x2 hand expansion", kid_hand_case},
      {"constant-image lacunarity", constant_lacunarity},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    bool ok = false;
    try {
      ok = check();
    } catch (const std::exception& e) {
      out << "error in " << name << ": " << e.what() << "\n";
    }
    out << (ok ? "PASS " : "FAIL ") << name << "\n";
    failures += ok ? 0 : 1;
  }
  return failures;
}

}  // namespace krigscd
