#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <vector>

#include <Eigen/SVD>
#include <Eigen/SparseCore>

#include "argsearch/common.hpp"

namespace argsearch {

// ---------------------------------------------------------------------------
// LSA (truncated SVD)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LsaModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix components;       // k x V, orthonormal rows
  Vector singular_values;  // length k, non-increasing

  Eigen::Index rank() const { return components.rows(); }
  Eigen::Index features() const { return components.cols(); }
};

enum class LsaSolver { kAuto, kDense, kBlockPower };

struct LsaOptions {
  LsaSolver solver = LsaSolver::kAuto;
  /// Inputs with both dimensions below this use a dense SVD under kAuto.
  Eigen::Index dense_below = 200;
  double tol = 1e-8;
  int max_iter = 5000;
  Eigen::Index oversample = 10;
  std::uint64_t seed = 0x15a;
};

namespace detail {

/// Flips each row so that its largest-magnitude entry (first on ties) is positive.
template <typename Matrix>
void canonicalize_signs(Matrix& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < rows.cols(); ++c) {
      if (std::abs(rows(r, c)) > std::abs(rows(r, best))) best = c;
    }
    if (rows(r, best) < 0) rows.row(r) *= -1;
  }
}

template <typename Matrix>
Matrix orthonormalize(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  return qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
}

}  // namespace detail

/// Rank-k truncated SVD of `x`; components are the top right singular vectors.
template <typename Derived>
LsaModel<typename Derived::Scalar> lsa_fit(const Eigen::MatrixBase<Derived>& x_in, Eigen::Index k,
                                           const LsaOptions& options = {}) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Matrix x = x_in;
  const Eigen::Index n = x.rows();
  const Eigen::Index v = x.cols();
  if (k < 1 || k > std::min(n, v)) {
    throw ConfigError("LSA rank " + std::to_string(k) + " outside [1, " +
                      std::to_string(std::min(n, v)) + "]");
  }

  LsaModel<Scalar> model;
  const bool dense = options.solver == LsaSolver::kDense ||
                     (options.solver == LsaSolver::kAuto && n < options.dense_below &&
                      v < options.dense_below);
  if (dense) {
    Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinV);
    model.components = svd.matrixV().leftCols(k).transpose();
    model.singular_values = svd.singularValues().head(k);
    detail::canonicalize_signs(model.components);
    return model;
  }

  // Block power (subspace) iteration with QR re-orthogonalization and a
  // Rayleigh-Ritz step; converged when every wanted triplet satisfies
  // ||X^T u - s v|| <= tol * s_max.
  const Eigen::Index block = std::min(k + options.oversample, std::min(n, v));
  Rng rng(options.seed);
  Matrix basis(v, block);
  for (Eigen::Index c = 0; c < block; ++c) {
    for (Eigen::Index r = 0; r < v; ++r) basis(r, c) = static_cast<Scalar>(rng.normal());
  }
  basis = detail::orthonormalize(basis);

  Matrix right;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sigma;
  for (int iter = 0;; ++iter) {
    const Matrix projected = x * basis;  // n x block
    Eigen::BDCSVD<Matrix> small(projected, Eigen::ComputeThinU | Eigen::ComputeThinV);
    right = basis * small.matrixV();
    sigma = small.singularValues();
    const Matrix left = small.matrixU();

    const Scalar smax = sigma(0);
    if (smax == Scalar(0)) break;
    const Matrix residual =
        x.transpose() * left.leftCols(k) - right.leftCols(k) * sigma.head(k).asDiagonal();
    const Scalar worst = residual.colwise().norm().maxCoeff();
    if (worst <= static_cast<Scalar>(options.tol) * smax) break;
    if (iter + 1 >= options.max_iter) {
      throw NumericError("LSA block power iteration did not converge");
    }
    basis = detail::orthonormalize(Matrix(x.transpose() * left));
  }
  model.components = right.leftCols(k).transpose();
  model.singular_values = sigma.head(k);
  detail::canonicalize_signs(model.components);
  return model;
}

/// Projects rows of `x` onto the LSA components: X * components^T.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> lsa_transform(
    const LsaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != model.features()) {
    throw DataError("LSA transform expects " + std::to_string(model.features()) +
                    " columns, got " + std::to_string(x.cols()));
  }
  return x * model.components.transpose();
}

/// Binary format: "LSA1", u64 k, u64 V, k singular values, k*V row-major
/// component entries; all little-endian float64.
void save_lsa(const LsaModel<double>& model, const std::filesystem::path& path);
LsaModel<double> load_lsa(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// UMAP
// ---------------------------------------------------------------------------

struct UmapConfig {
  Eigen::Index n_neighbors = 15;
  Eigen::Index n_components = 5;
  double min_dist = 0.1;
  double spread = 1.0;
  int n_epochs = 200;
  double negative_sample_rate = 5.0;
  double learning_rate = 1.0;
  double repulsion_strength = 1.0;
  std::uint64_t seed = 0;
};

struct UmapCurve {
  double a = 1.0;
  double b = 1.0;
};

/// Least-squares fit of 1 / (1 + a d^(2b)) to the min_dist/spread reference
/// curve on 300 points in [0, 3 * spread].
UmapCurve fit_umap_curve(double min_dist, double spread);

/// k nearest neighbours (self excluded) under Euclidean distance; ties broken
/// by lower index.
struct KnnGraph {
  std::vector<std::vector<Eigen::Index>> indices;
  std::vector<std::vector<double>> distances;
};
KnnGraph exact_knn(const Eigen::MatrixXd& x, Eigen::Index k);

/// Symmetric fuzzy membership graph (fuzzy union of the calibrated directed
/// memberships).
Eigen::SparseMatrix<double> fuzzy_membership_graph(const Eigen::MatrixXd& x,
                                                   Eigen::Index n_neighbors);

/// Embeds the unique rows of `x` (exact duplicates are collapsed and share
/// one output row).
Eigen::MatrixXd umap_embed(const Eigen::MatrixXd& x, const UmapConfig& config);

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> umap_fit_transform(
    const Eigen::MatrixBase<Derived>& x, const UmapConfig& config) {
  using Scalar = typename Derived::Scalar;
  return umap_embed(x.template cast<double>(), config).template cast<Scalar>();
}

}  // namespace argsearch
