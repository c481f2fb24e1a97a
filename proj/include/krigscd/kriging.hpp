#pragma once

#include <optional>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "krigscd/grid.hpp"
#include "krigscd/variogram.hpp"

namespace krigscd {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Point2 = Eigen::Matrix<Scalar, 1, 2>;

// Diagonal jitter added to covariance matrices, relative to the sill.
// Escalates by `factor` from `initial` until the factorization succeeds or `max` is exceeded.
struct JitterPolicy {
  double initial = 1e-10;
  double max = 1e-6;
  double factor = 10.0;
};

template <typename Scalar>
struct KrigingSolutionT {
  Scalar estimate{0};
  Scalar variance{0};
  VectorX<Scalar> weights;
  Scalar lagrange{0};
  Scalar jitter{0};  // absolute diagonal jitter that was used
};
using KrigingSolution = KrigingSolutionT<double>;

template <typename Scalar>
MatrixX<Scalar> pairwise_distances(const CoordsT<Scalar>& coords) {
  const Eigen::Index n = coords.rows();
  MatrixX<Scalar> d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = Scalar(0);
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (coords.row(i) - coords.row(j)).norm();
  }
  return d;
}

template <typename Scalar>
VectorX<Scalar> distances_to(const CoordsT<Scalar>& coords, const Point2<Scalar>& target) {
  return (coords.rowwise() - target).rowwise().norm();
}

// Cholesky of cov + jitter*I with the escalation policy. Throws NumericError past the cap.
template <typename Scalar>
Eigen::LLT<MatrixX<Scalar>> factor_with_jitter(const MatrixX<Scalar>& cov, Scalar sill, const JitterPolicy& policy,
                                               Scalar* used_jitter = nullptr) {
  const Eigen::Index n = cov.rows();
  Eigen::LLT<MatrixX<Scalar>> plain(cov);
  if (plain.info() == Eigen::Success) {
    if (used_jitter) *used_jitter = Scalar(0);
    return plain;
  }
  for (double rel = policy.initial; rel <= policy.max * (1.0 + 1e-9); rel *= policy.factor) {
    const Scalar jitter = static_cast<Scalar>(rel) * sill;
    Eigen::LLT<MatrixX<Scalar>> llt(cov + jitter * MatrixX<Scalar>::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      if (used_jitter) *used_jitter = jitter;
      return llt;
    }
    if (!(rel > 0.0) || !(policy.factor > 1.0)) break;
  }
  throw NumericError("kriging", "covariance matrix of size " + std::to_string(n) +
                                    " not positive definite after jitter escalation to " + std::to_string(policy.max) +
                                    " x sill");
}

// Ordinary kriging in covariance form:
//   [Sigma 1; 1^T 0] [w; lambda] = [C; 1],  z* = w^T z,  sigma^2 = c - w^T C - lambda.
// Solved through the Cholesky factor of Sigma and the scalar Schur complement of the constraint.
template <typename Scalar>
KrigingSolutionT<Scalar> solve_ok_system(const CoordsT<Scalar>& coords, const VectorX<Scalar>& values,
                                         const Point2<Scalar>& target, const ExponentialVariogram<Scalar>& model,
                                         const JitterPolicy& policy = {}) {
  const Eigen::Index n = coords.rows();
  if (n < 1) throw InsufficientDataError("kriging", "ordinary kriging needs at least one neighbor");

  const MatrixX<Scalar> sigma = model.covariance(pairwise_distances(coords).array()).matrix();
  const VectorX<Scalar> c0 = model.covariance(distances_to(coords, target).array()).matrix();

  KrigingSolutionT<Scalar> sol;
  const auto llt = factor_with_jitter<Scalar>(sigma, model.sill, policy, &sol.jitter);
  const VectorX<Scalar> a = llt.solve(c0);
  const VectorX<Scalar> b = llt.solve(VectorX<Scalar>::Ones(n));
  const Scalar bsum = b.sum();
  if (!(bsum > Scalar(0)))
    throw NumericError("kriging", "degenerate unbiasedness constraint in ordinary kriging system");
  sol.lagrange = (a.sum() - Scalar(1)) / bsum;
  sol.weights = a - sol.lagrange * b;
  sol.estimate = sol.weights.dot(values);
  const Scalar var = model.sill - sol.weights.dot(c0) - sol.lagrange;
  sol.variance = var > Scalar(0) ? var : Scalar(0);
  return sol;
}

template <typename Scalar>
struct SimpleKrigingResultT {
  Scalar mean{0};
  Scalar mse{0};
  VectorX<Scalar> weights;
};
using SimpleKrigingResult = SimpleKrigingResultT<double>;

// Zero-mean simple kriging: Sigma lambda = c, mean = lambda^T r, MSE = c(0) - c^T lambda (clamped at 0).
template <typename Scalar>
SimpleKrigingResultT<Scalar> simple_kriging(const CoordsT<Scalar>& coords, const VectorX<Scalar>& values,
                                            const Point2<Scalar>& target, const ExponentialVariogram<Scalar>& model,
                                            const JitterPolicy& policy = {}) {
  SimpleKrigingResultT<Scalar> out;
  if (coords.rows() == 0) {
    out.mse = model.sill;
    return out;
  }
  const MatrixX<Scalar> sigma = model.covariance(pairwise_distances(coords).array()).matrix();
  const VectorX<Scalar> c0 = model.covariance(distances_to(coords, target).array()).matrix();
  const auto llt = factor_with_jitter<Scalar>(sigma, model.sill, policy);
  out.weights = llt.solve(c0);
  out.mean = out.weights.dot(values);
  const Scalar mse = model.sill - c0.dot(out.weights);
  out.mse = mse > Scalar(0) ? mse : Scalar(0);
  return out;
}

struct KrigingOptions {
  // Nearest known pixels per target; 0 solves with every known pixel.
  std::size_t max_neighbors = 64;
  JitterPolicy jitter;
  VariogramOptions variogram;
  int threads = 0;
};

struct KrigedField {
  Field estimate;
  Field variance;
  VariogramModel model;
};

// Ordinary kriging of every unknown pixel; known pixels keep their value with zero variance.
KrigedField krige_field(const Field& field, const ObservationMask& mask, std::optional<VariogramModel> model = {},
                        const KrigingOptions& options = {});

struct SmoothedPair {
  Field field;
  ObservationMask mask;
  double threshold = 0.0;
  std::int64_t accepted = 0;
  VariogramModel model;
};

// Nearest-rank percentile over a sample (rank = ceil(p/100 * m), at least 1).
double nearest_rank_percentile(std::vector<double> sample, double percentile);

// Promotes unknown pixels whose kriging variance is at or below the percentile threshold
// to known pixels carrying their kriged estimates.
SmoothedPair krig_smooth(const Field& field, const ObservationMask& mask, double percentile = 5.0,
                         std::optional<VariogramModel> model = {}, const KrigingOptions& options = {});

}  // namespace krigscd
