#include "argsearch/dimred.hpp"

#include <map>

#include "argsearch/io.hpp"

namespace argsearch {

void save_lsa(const LsaModel<double>& model, const std::filesystem::path& path) {
  io::BinaryWriter out(path);
  out.magic("LSA1");
  out.u64(static_cast<std::uint64_t>(model.rank()));
  out.u64(static_cast<std::uint64_t>(model.features()));
  for (Eigen::Index i = 0; i < model.rank(); ++i) out.f64(model.singular_values(i));
  for (Eigen::Index r = 0; r < model.rank(); ++r) {
    for (Eigen::Index c = 0; c < model.features(); ++c) out.f64(model.components(r, c));
  }
  out.close();
}

LsaModel<double> load_lsa(const std::filesystem::path& path) {
  io::BinaryReader in(path);
  in.expect_magic("LSA1");
  const auto k = static_cast<Eigen::Index>(in.u64());
  const auto v = static_cast<Eigen::Index>(in.u64());
  LsaModel<double> model;
  model.singular_values.resize(k);
  model.components.resize(k, v);
  for (Eigen::Index i = 0; i < k; ++i) model.singular_values(i) = in.f64();
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < v; ++c) model.components(r, c) = in.f64();
  }
  if (!in.at_end()) throw DataError("trailing bytes in " + path.string());
  return model;
}

UmapCurve fit_umap_curve(double min_dist, double spread) {
  if (min_dist < 0.0 || spread <= 0.0) throw ConfigError("invalid UMAP min_dist/spread");
  constexpr int kPoints = 300;
  Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(kPoints, 0.0, 3.0 * spread);
  Eigen::VectorXd ys(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    ys(i) = xs(i) < min_dist ? 1.0 : std::exp(-(xs(i) - min_dist) / spread);
  }

  // Levenberg-Marquardt on (a, b) from (1, 1).
  Eigen::Vector2d p(1.0, 1.0);
  const auto residuals = [&](const Eigen::Vector2d& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r.resize(kPoints);
    if (jac) jac->resize(kPoints, 2);
    for (int i = 0; i < kPoints; ++i) {
      const double x = xs(i);
      const double x2b = x > 0.0 ? std::pow(x, 2.0 * q(1)) : 0.0;
      const double denom = 1.0 + q(0) * x2b;
      r(i) = 1.0 / denom - ys(i);
      if (jac) {
        (*jac)(i, 0) = -x2b / (denom * denom);
        (*jac)(i, 1) = x > 0.0 ? -q(0) * x2b * 2.0 * std::log(x) / (denom * denom) : 0.0;
      }
    }
  };
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  residuals(p, r, &jac);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  for (int iter = 0; iter < 500; ++iter) {
    const Eigen::Matrix2d jtj = jac.transpose() * jac;
    const Eigen::Vector2d jtr = jac.transpose() * r;
    Eigen::Matrix2d damped = jtj;
    damped.diagonal() += lambda * jtj.diagonal();
    const Eigen::Vector2d step = damped.ldlt().solve(-jtr);
    const Eigen::Vector2d candidate = p + step;
    Eigen::VectorXd r_new;
    residuals(candidate, r_new, nullptr);
    const double cost_new = r_new.squaredNorm();
    if (cost_new < cost) {
      p = candidate;
      residuals(p, r, &jac);
      const double improvement = cost - cost_new;
      cost = cost_new;
      lambda = std::max(lambda * 0.1, 1e-12);
      if (improvement <= 1e-15 * std::max(cost, 1e-30) && step.norm() < 1e-12) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  return {p(0), p(1)};
}

KnnGraph exact_knn(const Eigen::MatrixXd& x, Eigen::Index k) {
  const Eigen::Index n = x.rows();
  if (k < 1 || k >= n) throw ConfigError("k-NN needs 1 <= k < n");
  KnnGraph graph;
  graph.indices.resize(static_cast<std::size_t>(n));
  graph.distances.resize(static_cast<std::size_t>(n));
  std::vector<std::pair<double, Eigen::Index>> row(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      row[m++] = {(x.row(i) - x.row(j)).norm(), j};
    }
    std::partial_sort(row.begin(), row.begin() + k, row.end());
    auto& idx = graph.indices[static_cast<std::size_t>(i)];
    auto& dst = graph.distances[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < k; ++t) {
      dst.push_back(row[static_cast<std::size_t>(t)].first);
      idx.push_back(row[static_cast<std::size_t>(t)].second);
    }
  }
  return graph;
}

namespace {

constexpr double kSmoothTolerance = 1e-5;
constexpr double kMinDistScale = 1e-3;
constexpr int kBisectionSteps = 64;

// Per-point (rho, sigma) calibration: sum_j exp(-max(0, d_j - rho) / sigma)
// equals log2(k).
std::pair<std::vector<double>, std::vector<double>> calibrate(const KnnGraph& knn) {
  const std::size_t n = knn.distances.size();
  const std::size_t k = knn.distances.front().size();
  const double target = std::log2(static_cast<double>(k));
  double global_mean = 0.0;
  for (const auto& d : knn.distances) {
    global_mean += std::accumulate(d.begin(), d.end(), 0.0);
  }
  global_mean /= static_cast<double>(n * k);

  std::vector<double> rho(n, 0.0);
  std::vector<double> sigma(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = knn.distances[i];
    for (double v : d) {
      if (v > 0.0) {
        rho[i] = v;
        break;
      }
    }
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double mid = 1.0;
    for (int step = 0; step < kBisectionSteps; ++step) {
      double psum = 0.0;
      for (double v : d) {
        const double gap = v - rho[i];
        psum += gap > 0.0 ? std::exp(-gap / mid) : 1.0;
      }
      if (std::abs(psum - target) < kSmoothTolerance) break;
      if (psum > target) {
        hi = mid;
        mid = 0.5 * (lo + hi);
      } else {
        lo = mid;
        mid = std::isinf(hi) ? mid * 2.0 : 0.5 * (lo + hi);
      }
    }
    const double local_mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(k);
    const double floor = kMinDistScale * (rho[i] > 0.0 ? local_mean : global_mean);
    sigma[i] = std::max(mid, floor);
  }
  return {rho, sigma};
}

struct Edge {
  Eigen::Index head;
  Eigen::Index tail;
  double weight;
};

double clip(double g) { return std::clamp(g, -4.0, 4.0); }

// Rows of `x` grouped by exact equality; returns representative per row and
// the unique matrix in first-occurrence order.
std::pair<std::vector<Eigen::Index>, Eigen::MatrixXd> collapse_duplicates(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (x(a, c) != x(b, c)) return x(a, c) < x(b, c);
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), less);
  std::vector<Eigen::Index> first(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool same = i > 0 && !less(order[i - 1], order[i]) && !less(order[i], order[i - 1]);
    first[static_cast<std::size_t>(order[i])] = same ? first[static_cast<std::size_t>(order[i - 1])] : order[i];
  }
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(n), -1);
  std::vector<Eigen::Index> rep(static_cast<std::size_t>(n));
  Eigen::Index unique = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto f = static_cast<std::size_t>(first[static_cast<std::size_t>(i)]);
    if (slot[f] < 0) slot[f] = unique++;
    rep[static_cast<std::size_t>(i)] = slot[f];
  }
  Eigen::MatrixXd ux(unique, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) ux.row(rep[static_cast<std::size_t>(i)]) = x.row(i);
  return {rep, ux};
}

}  // namespace

Eigen::SparseMatrix<double> fuzzy_membership_graph(const Eigen::MatrixXd& x,
                                                   Eigen::Index n_neighbors) {
  const Eigen::Index n = x.rows();
  const KnnGraph knn = exact_knn(x, n_neighbors);
  const auto [rho, sigma] = calibrate(knn);
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (std::size_t t = 0; t < knn.indices[ui].size(); ++t) {
      const double gap = knn.distances[ui][t] - rho[ui];
      const double w = gap > 0.0 ? std::exp(-gap / sigma[ui]) : 1.0;
      triplets.emplace_back(i, knn.indices[ui][t], w);
    }
  }
  Eigen::SparseMatrix<double> directed(n, n);
  directed.setFromTriplets(triplets.begin(), triplets.end());
  const Eigen::SparseMatrix<double> transposed = directed.transpose();
  Eigen::SparseMatrix<double> graph =
      directed + transposed - Eigen::SparseMatrix<double>(directed.cwiseProduct(transposed));
  graph.prune(0.0);
  return graph;
}

Eigen::MatrixXd umap_embed(const Eigen::MatrixXd& x, const UmapConfig& config) {
  const Eigen::Index n = x.rows();
  if (config.n_neighbors < 2) throw ConfigError("UMAP n_neighbors must be >= 2");
  if (config.n_neighbors >= n) {
    throw ConfigError("UMAP n_neighbors (" + std::to_string(config.n_neighbors) +
                      ") must be smaller than the number of points (" + std::to_string(n) + ")");
  }
  if (config.n_components < 2) throw ConfigError("UMAP n_components must be >= 2");
  if (config.n_epochs < 1) throw ConfigError("UMAP n_epochs must be >= 1");

  const auto [rep, ux] = collapse_duplicates(x);
  const Eigen::Index nu = ux.rows();
  const Eigen::Index dim = config.n_components;
  Eigen::MatrixXd layout = Eigen::MatrixXd::Zero(nu, dim);

  if (nu > 1) {
    const Eigen::Index k = std::min(config.n_neighbors, nu - 1);
    const Eigen::SparseMatrix<double> graph = fuzzy_membership_graph(ux, k);

    std::vector<Edge> edges;
    double max_w = 0.0;
    for (Eigen::Index col = 0; col < graph.outerSize(); ++col) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(graph, col); it; ++it) {
        edges.push_back({it.row(), it.col(), it.value()});
        max_w = std::max(max_w, it.value());
      }
    }
    const double cutoff = max_w / static_cast<double>(config.n_epochs);
    std::erase_if(edges, [&](const Edge& e) { return e.weight < cutoff; });

    const UmapCurve curve = fit_umap_curve(config.min_dist, config.spread);
    const double a = curve.a;
    const double b = curve.b;

    Rng rng(config.seed);
    for (Eigen::Index i = 0; i < nu; ++i) {
      for (Eigen::Index c = 0; c < dim; ++c) layout(i, c) = rng.uniform(-10.0, 10.0);
    }

    const std::size_t m = edges.size();
    std::vector<double> per_sample(m), next_sample(m), per_negative(m), next_negative(m);
    for (std::size_t e = 0; e < m; ++e) {
      per_sample[e] = max_w / edges[e].weight;
      next_sample[e] = per_sample[e];
      per_negative[e] = per_sample[e] / config.negative_sample_rate;
      next_negative[e] = per_negative[e];
    }

    Eigen::VectorXd delta(dim);
    for (int epoch = 0; epoch < config.n_epochs; ++epoch) {
      const double alpha =
          config.learning_rate * (1.0 - static_cast<double>(epoch) / config.n_epochs);
      const auto now = static_cast<double>(epoch);
      for (std::size_t e = 0; e < m; ++e) {
        if (next_sample[e] > now) continue;
        const Eigen::Index j = edges[e].head;
        const Eigen::Index t = edges[e].tail;

        delta = layout.row(j) - layout.row(t);
        double d2 = delta.squaredNorm();
        double coeff = 0.0;
        if (d2 > 0.0) {
          coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
        }
        for (Eigen::Index c = 0; c < dim; ++c) {
          const double g = clip(coeff * delta(c));
          layout(j, c) += g * alpha;
          layout(t, c) -= g * alpha;
        }
        next_sample[e] += per_sample[e];

        const auto n_neg = static_cast<long>((now - next_negative[e]) / per_negative[e]);
        for (long p = 0; p < n_neg; ++p) {
          const auto other = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(nu)));
          delta = layout.row(j) - layout.row(other);
          d2 = delta.squaredNorm();
          if (d2 > 0.0) {
            coeff = 2.0 * config.repulsion_strength * b /
                    ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
          } else if (j == other) {
            continue;
          } else {
            coeff = 0.0;
          }
          for (Eigen::Index c = 0; c < dim; ++c) {
            const double g = coeff > 0.0 ? clip(coeff * delta(c)) : 4.0;
            layout(j, c) += g * alpha;
          }
        }
        next_negative[e] += static_cast<double>(n_neg) * per_negative[e];
      }
    }
  }

  Eigen::MatrixXd out(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = layout.row(rep[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace argsearch
