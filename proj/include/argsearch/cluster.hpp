#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "argsearch/common.hpp"

namespace argsearch {

/// Per-item cluster ids; non-noise ids are dense 0..n_clusters-1 and noise
/// items carry kNoiseId.
struct ClusterAssignment {
  Labels labels;
  int n_clusters = 0;

  std::size_t noise_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoiseId));
  }
};

/// Relabels non-noise ids densely in order of first occurrence.
inline ClusterAssignment densify(const Labels& raw) {
  ClusterAssignment out;
  out.labels.reserve(raw.size());
  std::map<int, int> remap;
  for (int l : raw) {
    if (l == kNoiseId) {
      out.labels.push_back(kNoiseId);
      continue;
    }
    auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
    out.labels.push_back(it->second);
  }
  out.n_clusters = static_cast<int>(remap.size());
  return out;
}

// ---------------------------------------------------------------------------
// argmax labelling
// ---------------------------------------------------------------------------

/// Label of row i is its argmax column (lowest index on ties); all-zero rows
/// are noise.
template <typename Derived>
ClusterAssignment argmax_label(const Eigen::MatrixBase<Derived>& x) {
  Labels raw(static_cast<std::size_t>(x.rows()), kNoiseId);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (x.row(r).isZero(0)) continue;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < x.cols(); ++c) {
      if (x(r, c) > x(r, best)) best = c;
    }
    raw[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return densify(raw);
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KmeansConfig {
  Eigen::Index k = 8;
  int max_iter = 300;
  double tol = 1e-4;
  /// Independent seedings; the run with the lowest inertia is kept.
  int n_init = 10;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct KmeansResult {
  ClusterAssignment assignment;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> centroids;  // k x d, in label order
  Scalar inertia = 0;
  /// Inertia after each assignment step.
  std::vector<Scalar> inertia_trace;
  int iterations = 0;
};

namespace detail {

template <typename Matrix>
Eigen::Index nearest_row(const Matrix& centers, const auto& point, typename Matrix::Scalar& d2) {
  Eigen::Index best = 0;
  d2 = (centers.row(0) - point).squaredNorm();
  for (Eigen::Index c = 1; c < centers.rows(); ++c) {
    const auto d = (centers.row(c) - point).squaredNorm();
    if (d < d2) {
      d2 = d;
      best = c;
    }
  }
  return best;
}

/// Greedy k-means++: each new centre is the best of 2 + floor(ln k) D^2-sampled
/// candidates.
template <typename Matrix>
Matrix kmeans_plus_plus(const Matrix& x, Eigen::Index k, Rng& rng) {
  using Scalar = typename Matrix::Scalar;
  const Eigen::Index n = x.rows();
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  Matrix centers(k, x.cols());
  const auto first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  centers.row(0) = x.row(first);
  std::vector<Scalar> closest(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    closest[static_cast<std::size_t>(i)] = (x.row(i) - centers.row(0)).squaredNorm();
  }
  std::vector<Scalar> cumulative(static_cast<std::size_t>(n));
  for (Eigen::Index c = 1; c < k; ++c) {
    std::partial_sum(closest.begin(), closest.end(), cumulative.begin());
    const Scalar total = cumulative.back();
    Eigen::Index best_candidate = -1;
    Scalar best_potential = std::numeric_limits<Scalar>::infinity();
    for (int t = 0; t < trials; ++t) {
      Eigen::Index cand;
      if (total > 0) {
        const Scalar r = static_cast<Scalar>(rng.uniform()) * total;
        cand = static_cast<Eigen::Index>(std::upper_bound(cumulative.begin(), cumulative.end(), r) -
                                         cumulative.begin());
        cand = std::min(cand, n - 1);
      } else {
        cand = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      }
      Scalar potential = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        potential += std::min(closest[static_cast<std::size_t>(i)],
                              Scalar((x.row(i) - x.row(cand)).squaredNorm()));
      }
      if (potential < best_potential) {
        best_potential = potential;
        best_candidate = cand;
      }
    }
    centers.row(c) = x.row(best_candidate);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = closest[static_cast<std::size_t>(i)];
      d = std::min(d, Scalar((x.row(i) - centers.row(c)).squaredNorm()));
    }
  }
  return centers;
}

/// One Lloyd run from a greedy k-means++ start drawn from `rng`.
template <typename Matrix>
KmeansResult<typename Matrix::Scalar> kmeans_single(const Matrix& x, const KmeansConfig& config, Rng& rng) {
  using Scalar = typename Matrix::Scalar;
  const Eigen::Index n = x.rows();
  const Eigen::Index k = config.k;
  Matrix centers = kmeans_plus_plus(x, k, rng);
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n));
  std::vector<Scalar> dist(static_cast<std::size_t>(n));
  KmeansResult<Scalar> result;

  const auto assign_all = [&] {
    Scalar inertia = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Scalar d2;
      assign[static_cast<std::size_t>(i)] = detail::nearest_row(centers, x.row(i), d2);
      dist[static_cast<std::size_t>(i)] = d2;
      inertia += d2;
    }
    result.inertia_trace.push_back(inertia);
    return inertia;
  };

  Scalar inertia = assign_all();
  for (int iter = 0; iter < config.max_iter; ++iter) {
    Matrix sums = Matrix::Zero(k, x.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += x.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    Matrix updated(k, x.cols());
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        updated.row(c) = sums.row(c) / static_cast<Scalar>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      taken[static_cast<std::size_t>(far)] = true;
      updated.row(c) = x.row(far);
    }
    const Scalar shift = (updated - centers).rowwise().norm().maxCoeff();
    centers = std::move(updated);
    inertia = assign_all();
    result.iterations = iter + 1;
    if (shift <= static_cast<Scalar>(config.tol)) break;
  }

  Labels raw(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    raw[static_cast<std::size_t>(i)] = static_cast<int>(assign[static_cast<std::size_t>(i)]);
  }
  result.assignment = densify(raw);
  // Reorder centroids to follow the dense labels; never-used centres trail.
  std::vector<Eigen::Index> order;
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  for (int l : raw) {
    if (!used[static_cast<std::size_t>(l)]) {
      used[static_cast<std::size_t>(l)] = true;
      order.push_back(l);
    }
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (!used[static_cast<std::size_t>(c)]) order.push_back(c);
  }
  result.centroids.resize(k, x.cols());
  for (Eigen::Index c = 0; c < k; ++c) result.centroids.row(c) = centers.row(order[static_cast<std::size_t>(c)]);
  result.inertia = inertia;
  return result;
}

}  // namespace detail

/// Lloyd's algorithm from `n_init` seeded greedy k-means++ starts, keeping the
/// lowest final inertia. Empty clusters are re-seeded with the point farthest
/// from its assigned centroid. Labels are dense by first occurrence.
template <typename Derived>
KmeansResult<typename Derived::Scalar> kmeans(const Eigen::MatrixBase<Derived>& x_in,
                                              const KmeansConfig& config) {
  using Matrix = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Matrix x = x_in;
  const Eigen::Index n = x.rows();
  const Eigen::Index k = config.k;
  if (k < 1) throw ConfigError("k-means requires k >= 1");
  if (k > n) {
    throw ConfigError("k-means k (" + std::to_string(k) + ") exceeds point count (" +
                      std::to_string(n) + ")");
  }
  if (config.tol < 0) throw ConfigError("k-means tol must be >= 0");
  if (config.n_init < 1) throw ConfigError("k-means n_init must be >= 1");

  Rng rng(config.seed);
  auto best = detail::kmeans_single(x, config, rng);
  for (int run = 1; run < config.n_init; ++run) {
    auto next = detail::kmeans_single(x, config, rng);
    if (next.inertia < best.inertia) best = std::move(next);
  }
  return best;
}

// ---------------------------------------------------------------------------
// HDBSCAN
// ---------------------------------------------------------------------------

struct HdbscanConfig {
  Eigen::Index min_cluster_size = 2;
  /// Neighbour rank for the core distance, counting the point itself.
  Eigen::Index min_samples = 2;
};

struct MstEdge {
  Eigen::Index a;
  Eigen::Index b;
  double weight;
};

/// One row of the condensed cluster tree. Children below `n_points` are points.
struct CondensedRow {
  Eigen::Index parent;
  Eigen::Index child;
  double lambda;
  Eigen::Index child_size;
};

struct HdbscanResult {
  ClusterAssignment assignment;
  Eigen::VectorXd membership;  // in [0,1]; 0 for noise
  Eigen::VectorXd core_distances;
  std::vector<MstEdge> mst;
  std::vector<CondensedRow> condensed;
};

/// Distance to the min_samples-th nearest point, the point itself included.
template <typename Derived>
Eigen::VectorXd core_distances(const Eigen::MatrixBase<Derived>& x, Eigen::Index min_samples) {
  const Eigen::Index n = x.rows();
  Eigen::VectorXd core(n);
  std::vector<double> row(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      row[static_cast<std::size_t>(j)] = static_cast<double>((x.row(i) - x.row(j)).norm());
    }
    row[static_cast<std::size_t>(i)] = 0.0;
    const auto kth = row.begin() + (min_samples - 1);
    std::nth_element(row.begin(), kth, row.end());
    core(i) = *kth;
  }
  return core;
}

/// Prim's algorithm over mutual reachability max(core(a), core(b), d(a,b)).
template <typename Derived>
std::vector<MstEdge> mutual_reachability_mst(const Eigen::MatrixBase<Derived>& x,
                                             const Eigen::VectorXd& core) {
  const Eigen::Index n = x.rows();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  std::vector<bool> in_tree(static_cast<std::size_t>(n), false);
  std::vector<double> best(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> from(static_cast<std::size_t>(n), 0);
  Eigen::Index current = 0;
  in_tree[0] = true;
  for (Eigen::Index step = 1; step < n; ++step) {
    Eigen::Index next = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (in_tree[uj]) continue;
      const double d = static_cast<double>((x.row(current) - x.row(j)).norm());
      const double mr = std::max({core(current), core(j), d});
      if (mr < best[uj]) {
        best[uj] = mr;
        from[uj] = current;
      }
      if (next < 0 || best[uj] < best[static_cast<std::size_t>(next)]) next = j;
    }
    in_tree[static_cast<std::size_t>(next)] = true;
    edges.push_back({from[static_cast<std::size_t>(next)], next, best[static_cast<std::size_t>(next)]});
    current = next;
  }
  return edges;
}

/// Builds the condensed tree, selects clusters by excess of mass (root
/// excluded) and labels points. `mst` must span `n` points.
HdbscanResult hdbscan_from_mst(Eigen::Index n, std::vector<MstEdge> mst,
                               Eigen::Index min_cluster_size);

template <typename Derived>
HdbscanResult hdbscan(const Eigen::MatrixBase<Derived>& x, const HdbscanConfig& config) {
  if (config.min_cluster_size < 2) throw ConfigError("HDBSCAN min_cluster_size must be >= 2");
  if (config.min_samples < 1) throw ConfigError("HDBSCAN min_samples must be >= 1");
  const Eigen::Index n = x.rows();
  if (n < config.min_cluster_size) {
    throw DataError("HDBSCAN needs at least min_cluster_size (" +
                    std::to_string(config.min_cluster_size) + ") points, got " + std::to_string(n));
  }
  Eigen::VectorXd core = core_distances(x, std::min(config.min_samples, n));
  std::vector<MstEdge> mst = mutual_reachability_mst(x, core);
  HdbscanResult result = hdbscan_from_mst(n, mst, config.min_cluster_size);
  result.core_distances = std::move(core);
  result.mst = std::move(mst);
  return result;
}

}  // namespace argsearch
