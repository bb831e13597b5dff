#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "argsearch/dimred.hpp"
#include "argsearch/io.hpp"
#include "support/tempdir.hpp"

using namespace argsearch;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double reconstruction_error(const Eigen::MatrixXd& x, const LsaModel<double>& m) {
  const Eigen::MatrixXd z = lsa_transform(m, x);
  return (x - z * m.components).norm();
}

Eigen::MatrixXd blobs(int per_blob, int dims, double separation, std::uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  Eigen::MatrixXd x(2 * per_blob, dims);
  labels.clear();
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < per_blob; ++i) {
      const int r = b * per_blob + i;
      for (int d = 0; d < dims; ++d) x(r, d) = rng.normal() + (d == 0 ? b * separation : 0.0);
      labels.push_back(b);
    }
  }
  return x;
}

// Ranks from pairwise distances, then the standard trustworthiness sum.
double trustworthiness(const Eigen::MatrixXd& high, const Eigen::MatrixXd& low, int k) {
  const auto n = high.rows();
  const auto order = [&](const Eigen::MatrixXd& x, Eigen::Index i) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) idx.push_back(j);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return (x.row(i) - x.row(a)).squaredNorm() < (x.row(i) - x.row(b)).squaredNorm();
    });
    return idx;
  };
  double penalty = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto hi = order(high, i);
    const auto lo = order(low, i);
    std::vector<Eigen::Index> rank(static_cast<std::size_t>(n), 0);
    for (std::size_t r = 0; r < hi.size(); ++r) rank[static_cast<std::size_t>(hi[r])] = static_cast<Eigen::Index>(r + 1);
    for (int r = 0; r < k; ++r) {
      const auto j = lo[static_cast<std::size_t>(r)];
      const auto rr = rank[static_cast<std::size_t>(j)];
      if (rr > k) penalty += static_cast<double>(rr - k);
    }
  }
  const double nn = static_cast<double>(n);
  return 1.0 - 2.0 / (nn * k * (2.0 * nn - 3.0 * k - 1.0)) * penalty;
}

}  // namespace

TEST_CASE("LSA on a rank-one matrix") {
  const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(6, 1.0, 2.0);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(4, -1.0, 3.0);
  const Eigen::MatrixXd x = u * v.transpose();
  const auto m = lsa_fit(x, 1);
  CHECK(reconstruction_error(x, m) <= 1e-8 * x.norm());
}

TEST_CASE("LSA of the identity") {
  const auto m = lsa_fit(Eigen::MatrixXd::Identity(3, 3), 3);
  CHECK(m.singular_values.isApprox(Eigen::Vector3d::Ones(), 1e-12));
}

TEST_CASE("LSA matches a Jacobi SVD oracle") {
  const Eigen::MatrixXd x = random_matrix(8, 5, 1);
  const auto m = lsa_fit(x, 2);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  CHECK(std::abs(reconstruction_error(x, m) - s.tail(3).norm()) <= 1e-6);
  CHECK(m.singular_values.isApprox(s.head(2), 1e-10));

  // Transforming the training matrix gives U * Sigma (up to the canonical sign).
  const Eigen::MatrixXd z = lsa_transform(m, x);
  for (int c = 0; c < 2; ++c) {
    const Eigen::VectorXd us = svd.matrixU().col(c) * s(c);
    const double sign = svd.matrixV().col(c).dot(m.components.row(c).transpose()) > 0 ? 1.0 : -1.0;
    CHECK((z.col(c) - sign * us).norm() <= 1e-6);
  }
}

TEST_CASE("LSA invariants") {
  const Eigen::MatrixXd x = random_matrix(12, 9, 2);
  double previous = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 1; k <= 9; ++k) {
    const auto m = lsa_fit(x, k);
    CHECK((m.components * m.components.transpose() - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() <= 1e-8);
    for (Eigen::Index i = 1; i < k; ++i) CHECK(m.singular_values(i) <= m.singular_values(i - 1));
    for (Eigen::Index r = 0; r < k; ++r) {
      Eigen::Index arg = 0;
      m.components.row(r).cwiseAbs().maxCoeff(&arg);
      CHECK(m.components(r, arg) > 0.0);
    }
    const double err = reconstruction_error(x, m);
    CHECK(err <= previous + 1e-10);
    previous = err;
  }
  CHECK_THROWS_AS(lsa_fit(x, 0), ConfigError);
  CHECK_THROWS_AS(lsa_fit(x, 10), ConfigError);
}

TEST_CASE("block power solver agrees with the dense solver") {
  const Eigen::MatrixXd x = random_matrix(60, 40, 3);
  LsaOptions power;
  power.solver = LsaSolver::kBlockPower;
  LsaOptions dense;
  dense.solver = LsaSolver::kDense;
  const auto a = lsa_fit(x, 4, power);
  const auto b = lsa_fit(x, 4, dense);
  CHECK(a.singular_values.isApprox(b.singular_values, 1e-8));
  CHECK((a.components - b.components).cwiseAbs().maxCoeff() <= 1e-6);

  // Large inputs take the iterative path under kAuto.
  const Eigen::MatrixXd big = random_matrix(250, 210, 4);
  const auto c = lsa_fit(big, 3);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(big);
  CHECK(c.singular_values.isApprox(svd.singularValues().head(3), 1e-8));
}

TEST_CASE("LSA transform edge cases") {
  const Eigen::MatrixXd x = random_matrix(7, 6, 5);
  const auto m = lsa_fit(x, 3);
  CHECK(lsa_transform(m, Eigen::MatrixXd::Zero(2, 6)).isZero(0));
  const Eigen::MatrixXd first = m.components.row(0);
  const Eigen::MatrixXd z = lsa_transform(m, first);
  CHECK(std::abs(z(0, 0) - 1.0) <= 1e-10);
  CHECK(std::abs(z(0, 1)) <= 1e-10);
  CHECK(std::abs(z(0, 2)) <= 1e-10);
  CHECK_THROWS_AS(lsa_transform(m, Eigen::MatrixXd::Zero(2, 5)), DataError);

  const Eigen::MatrixXf xf = x.cast<float>();
  const auto mf = lsa_fit(xf, 2);
  CHECK(mf.singular_values.cast<double>().isApprox(m.singular_values.head(2), 1e-4));
}

TEST_CASE("LSA binary round trip") {
  TempDir dir;
  const auto m = lsa_fit(random_matrix(9, 7, 6), 4);
  save_lsa(m, dir / "m.lsa");
  const auto r = load_lsa(dir / "m.lsa");
  CHECK(r.components == m.components);
  CHECK(r.singular_values == m.singular_values);
  const std::string bytes = io::read_text(dir / "m.lsa");
  CHECK(bytes.substr(0, 4) == "LSA1");
  CHECK(bytes.size() == 4 + 8 + 8 + 8 * (4 + 4 * 7));
  io::write_text(dir / "bad.lsa", "LSA2" + bytes.substr(4));
  CHECK_THROWS_AS(load_lsa(dir / "bad.lsa"), DataError);
  io::write_text(dir / "short.lsa", bytes.substr(0, 40));
  CHECK_THROWS_AS(load_lsa(dir / "short.lsa"), DataError);
}

TEST_CASE("UMAP curve parameters") {
  const UmapCurve c = fit_umap_curve(0.1, 1.0);
  CHECK(c.a == doctest::Approx(1.5769).epsilon(1e-3));
  CHECK(c.b == doctest::Approx(0.8951).epsilon(1e-3));
}

TEST_CASE("fuzzy membership graph is symmetric and bounded") {
  const Eigen::MatrixXd x = random_matrix(30, 4, 7);
  const Eigen::SparseMatrix<double> g = fuzzy_membership_graph(x, 6);
  const Eigen::MatrixXd d = g;
  CHECK((d - d.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.minCoeff() >= 0.0);
  CHECK(d.maxCoeff() <= 1.0);
  CHECK(d.diagonal().isZero(0));
  // Every point keeps at least its nearest neighbour at full strength.
  for (Eigen::Index i = 0; i < d.rows(); ++i) CHECK(d.row(i).maxCoeff() == doctest::Approx(1.0));
}

TEST_CASE("exact k-NN excludes self and breaks ties by index") {
  Eigen::MatrixXd x(4, 1);
  x << 0.0, 1.0, -1.0, 3.0;
  const KnnGraph g = exact_knn(x, 2);
  CHECK(g.indices[0] == std::vector<Eigen::Index>{1, 2});
  CHECK(g.distances[0][1] == 1.0);
  CHECK(g.indices[3][0] == 1);
}

TEST_CASE("UMAP separates two blobs") {
  std::vector<int> labels;
  const Eigen::MatrixXd x = blobs(20, 5, 10.0, 8, labels);
  UmapConfig cfg;
  cfg.n_components = 2;
  cfg.seed = 42;
  const Eigen::MatrixXd y = umap_fit_transform(x, cfg);
  REQUIRE(y.rows() == 40);
  REQUIRE(y.cols() == 2);
  CHECK(y.allFinite());
  int correct = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    Eigen::Index best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      if (j == i) continue;
      const double d = (y.row(i) - y.row(j)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    correct += labels[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(i)];
  }
  CHECK(correct == 40);
}

TEST_CASE("UMAP trustworthiness on separated blobs") {
  // Output dimension matches the blobs' intrinsic dimension; squeezing
  // isotropic 5-d blobs into 2-d costs any UMAP layout about 0.92.
  std::vector<int> labels;
  const Eigen::MatrixXd x = blobs(20, 5, 10.0, 8, labels);
  UmapConfig cfg;
  cfg.seed = 42;
  CHECK(trustworthiness(x, umap_fit_transform(x, cfg), 5) >= 0.95);
}

TEST_CASE("UMAP determinism and duplicates") {
  Eigen::MatrixXd x = random_matrix(25, 6, 9);
  x.row(7) = x.row(3);
  x.row(20) = x.row(3);
  UmapConfig cfg;
  cfg.n_neighbors = 5;
  cfg.seed = 3;
  const Eigen::MatrixXd a = umap_fit_transform(x, cfg);
  const Eigen::MatrixXd b = umap_fit_transform(x, cfg);
  CHECK(a == b);
  CHECK((a.row(3) - a.row(7)).norm() <= 1e-6);
  CHECK((a.row(3) - a.row(20)).norm() <= 1e-6);
  cfg.seed = 4;
  CHECK(umap_fit_transform(x, cfg) != a);
}

TEST_CASE("UMAP argument checks") {
  const Eigen::MatrixXd x = random_matrix(10, 3, 10);
  UmapConfig cfg;
  cfg.n_neighbors = 10;
  CHECK_THROWS_AS(umap_fit_transform(x, cfg), ConfigError);
  cfg.n_neighbors = 1;
  CHECK_THROWS_AS(umap_fit_transform(x, cfg), ConfigError);
  cfg.n_neighbors = 4;
  cfg.n_components = 1;
  CHECK_THROWS_AS(umap_fit_transform(x, cfg), ConfigError);
  cfg.n_components = 2;
  const Eigen::MatrixXd same = Eigen::MatrixXd::Ones(10, 3);
  CHECK(umap_fit_transform(same, cfg).isZero(0));
}
