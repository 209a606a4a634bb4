#include <algorithm>
#include <cmath>
#include <numeric>

#include "bdh/analysis.hpp"

namespace bdh {

namespace {

DenseMatrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  DenseMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

double markov_lowrank_experiment(std::size_t n, std::size_t r, std::size_t d, std::uint64_t seed,
                                 LowRankVariant variant) {
  if (r < 1 || r > n) throw ParameterError("out-degree r must lie in [1, n]");
  if (d < 2) throw ParameterError("d must be >= 2");
  Rng rng(seed);
  // Random walk matrix: r distinct targets per row, weight 1/r each.
  DenseMatrix G = DenseMatrix::Zero(n, n);
  std::vector<std::size_t> cols(n);
  std::iota(cols.begin(), cols.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < r; ++k) std::swap(cols[k], cols[k + rng() % (n - k)]);
    for (std::size_t k = 0; k < r; ++k) G(i, cols[k]) = 1.0 / static_cast<double>(r);
  }

  // D* E* = G' P P^T with P of rank d-1; at d >= n the projection is the identity.
  DenseMatrix M;
  if (d >= n) {
    M = G;
  } else {
    const auto k = d - 1;
    const DenseMatrix P = gaussian(n, k, 1.0 / std::sqrt(static_cast<double>(k)), rng);
    M = (G * P) * P.transpose();
  }

  DenseMatrix out;
  if (variant == LowRankVariant::Linear) {
    out = M;
  } else {
    // Bias coordinate: +1 in D, -eps* in E, with eps* the worst entrywise
    // error of the projection over all basis inputs.
    const double eps = (G - M).cwiseAbs().maxCoeff();
    out = (M.array() - eps).cwiseMax(0.0).matrix();
  }
  // Column k is the response to basis input e_k.
  return (G - out).cwiseAbs().colwise().sum().maxCoeff();
}

FScoreSample fscore_experiment(std::size_t a, std::size_t b, std::size_t c, std::size_t n, std::size_t d,
                               std::uint64_t seed) {
  if (a == 0 || b == 0) throw ParameterError("A and B must be nonempty");
  if (c > a || c > b || a + b - c > n) throw ParameterError("set sizes are not realizable in n hidden nodes");
  if (d == 0) throw ParameterError("d must be positive");
  Rng rng(seed);
  // A = [0, a), B = [a - c, a - c + b); only rows of P touching A or B matter.
  const std::size_t used = a + b - c;
  const DenseMatrix P = gaussian(used, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  Eigen::RowVectorXd pu = Eigen::RowVectorXd::Zero(d), pd = Eigen::RowVectorXd::Zero(d);
  for (std::size_t k = 0; k < a; ++k) pu += P.row(k) / std::sqrt(static_cast<double>(a));
  for (std::size_t k = a - c; k < used; ++k) pd += P.row(k) / std::sqrt(static_cast<double>(b));
  FScoreSample s;
  s.w = pu.dot(pd);
  s.rho = static_cast<double>(c) / std::sqrt(static_cast<double>(a) * static_cast<double>(b));
  return s;
}

double attention_capacity_experiment(std::size_t n, std::size_t d, std::size_t t, std::uint64_t seed, KeyMode mode) {
  if (n == 0 || d == 0 || t == 0) throw ParameterError("n, d and t must be positive");
  if (mode == KeyMode::Orthogonal && t > n) throw ParameterError("at most n orthogonal keys fit in R^n");
  Rng rng(seed);
  // Ideal keys are orthonormal, so the exact read of key q is value q. The
  // stored keys are their images under a random linear (hence sign-symmetric)
  // projection, normalized to unit length.
  DenseMatrix K;
  if (mode == KeyMode::Orthogonal) {
    K = DenseMatrix::Identity(t, n);
  } else {
    K = gaussian(t, n, 1.0, rng);
    K.rowwise().normalize();
  }
  DenseMatrix V = gaussian(t, d, 1.0, rng);
  V.rowwise().normalize();
  const DenseMatrix state = V.transpose() * K;          // d x n
  const DenseMatrix read = K * state.transpose();       // t x d
  return (read - V).rowwise().norm().mean();
}

std::vector<double> lsh_bucketize(const std::vector<double>& v, const DenseMatrix& lambdas, double threshold) {
  if (static_cast<std::size_t>(lambdas.cols()) != v.size()) throw DimensionError("lambdas must have one column per input coordinate");
  const Eigen::VectorXd proj = lambdas * Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  std::vector<double> out(proj.size());
  for (Eigen::Index i = 0; i < proj.size(); ++i) out[i] = proj[i] >= threshold ? 1.0 : 0.0;
  return out;
}

}  // namespace bdh
