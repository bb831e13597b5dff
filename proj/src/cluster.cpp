#include "argsearch/cluster.hpp"

#include <set>

namespace argsearch {

namespace {

struct Merge {
  Eigen::Index left;
  Eigen::Index right;
  double distance;
  Eigen::Index size;
};

class UnionFind {
 public:
  explicit UnionFind(Eigen::Index n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), Eigen::Index{0});
  }
  Eigen::Index find(Eigen::Index x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      auto& p = parent_[static_cast<std::size_t>(x)];
      p = parent_[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  }
  /// Attaches the set of `child` beneath the set of `parent`.
  void attach(Eigen::Index parent, Eigen::Index child) {
    parent_[static_cast<std::size_t>(find(child))] = find(parent);
  }

 private:
  std::vector<Eigen::Index> parent_;
};

// Single-linkage dendrogram; merge m creates node n + m.
std::vector<Merge> single_linkage(Eigen::Index n, std::vector<MstEdge> mst) {
  std::stable_sort(mst.begin(), mst.end(),
                   [](const MstEdge& a, const MstEdge& b) { return a.weight < b.weight; });
  UnionFind uf(2 * n - 1);
  std::vector<Eigen::Index> size(static_cast<std::size_t>(2 * n - 1), 1);
  std::vector<Merge> merges;
  merges.reserve(mst.size());
  for (const auto& e : mst) {
    const Eigen::Index ra = uf.find(e.a);
    const Eigen::Index rb = uf.find(e.b);
    const Eigen::Index node = n + static_cast<Eigen::Index>(merges.size());
    const Eigen::Index s = size[static_cast<std::size_t>(ra)] + size[static_cast<std::size_t>(rb)];
    merges.push_back({ra, rb, e.weight, s});
    size[static_cast<std::size_t>(node)] = s;
    uf.attach(node, ra);
    uf.attach(node, rb);
  }
  return merges;
}

double lambda_of(double distance) {
  return distance > 0.0 ? 1.0 / distance : std::numeric_limits<double>::infinity();
}

std::vector<CondensedRow> condense(Eigen::Index n, const std::vector<Merge>& merges,
                                   Eigen::Index min_cluster_size) {
  const Eigen::Index root = 2 * n - 2;
  const auto size_of = [&](Eigen::Index node) {
    return node < n ? Eigen::Index{1} : merges[static_cast<std::size_t>(node - n)].size;
  };
  const auto leaves_of = [&](Eigen::Index node) {
    std::vector<Eigen::Index> leaves;
    std::vector<Eigen::Index> stack{node};
    while (!stack.empty()) {
      const Eigen::Index cur = stack.back();
      stack.pop_back();
      if (cur < n) {
        leaves.push_back(cur);
      } else {
        const auto& m = merges[static_cast<std::size_t>(cur - n)];
        stack.push_back(m.right);
        stack.push_back(m.left);
      }
    }
    return leaves;
  };

  std::vector<Eigen::Index> relabel(static_cast<std::size_t>(2 * n - 1), -1);
  relabel[static_cast<std::size_t>(root)] = n;
  Eigen::Index next_label = n + 1;
  std::vector<CondensedRow> rows;

  std::deque<Eigen::Index> queue{root};
  while (!queue.empty()) {
    const Eigen::Index node = queue.front();
    queue.pop_front();
    if (node < n) continue;
    const auto& m = merges[static_cast<std::size_t>(node - n)];
    const double lambda = lambda_of(m.distance);
    const Eigen::Index label = relabel[static_cast<std::size_t>(node)];
    const Eigen::Index left_size = size_of(m.left);
    const Eigen::Index right_size = size_of(m.right);
    const bool left_big = left_size >= min_cluster_size;
    const bool right_big = right_size >= min_cluster_size;

    const auto fall_out = [&](Eigen::Index child) {
      for (Eigen::Index leaf : leaves_of(child)) rows.push_back({label, leaf, lambda, 1});
    };

    if (left_big && right_big) {
      for (Eigen::Index child : {m.left, m.right}) {
        relabel[static_cast<std::size_t>(child)] = next_label++;
        rows.push_back({label, relabel[static_cast<std::size_t>(child)], lambda, size_of(child)});
        queue.push_back(child);
      }
    } else if (!left_big && !right_big) {
      fall_out(m.left);
      fall_out(m.right);
    } else {
      const Eigen::Index big = left_big ? m.left : m.right;
      const Eigen::Index small = left_big ? m.right : m.left;
      fall_out(small);
      relabel[static_cast<std::size_t>(big)] = label;
      queue.push_back(big);
    }
  }
  return rows;
}

// Stability contribution (lambda - birth) * size with inf - inf treated as 0.
double excess(double lambda, double birth, Eigen::Index size) {
  if (std::isinf(lambda) && std::isinf(birth)) return 0.0;
  return (lambda - birth) * static_cast<double>(size);
}

}  // namespace

HdbscanResult hdbscan_from_mst(Eigen::Index n, std::vector<MstEdge> mst,
                               Eigen::Index min_cluster_size) {
  HdbscanResult result;
  result.membership = Eigen::VectorXd::Zero(n);
  if (n == 0) return result;

  const bool collapsed =
      std::all_of(mst.begin(), mst.end(), [](const MstEdge& e) { return e.weight == 0.0; });
  if (n == 1 || collapsed) {
    // Every point coincides: one cluster at infinite density.
    result.assignment.labels.assign(static_cast<std::size_t>(n), 0);
    result.assignment.n_clusters = 1;
    result.membership.setOnes();
    return result;
  }

  const std::vector<Merge> merges = single_linkage(n, std::move(mst));
  result.condensed = condense(n, merges, min_cluster_size);
  const auto& rows = result.condensed;
  const Eigen::Index root = n;

  Eigen::Index max_label = root;
  for (const auto& r : rows) max_label = std::max(max_label, r.child >= n ? r.child : max_label);
  const auto n_nodes = static_cast<std::size_t>(max_label - root + 1);
  const auto slot = [&](Eigen::Index cluster) { return static_cast<std::size_t>(cluster - root); };

  std::vector<double> birth(n_nodes, 0.0);
  std::vector<std::vector<Eigen::Index>> children(n_nodes);
  for (const auto& r : rows) {
    if (r.child >= n) {
      birth[slot(r.child)] = r.lambda;
      children[slot(r.parent)].push_back(r.child);
    }
  }
  std::vector<double> stability(n_nodes, 0.0);
  for (const auto& r : rows) {
    stability[slot(r.parent)] += excess(r.lambda, birth[slot(r.parent)], r.child_size);
  }

  // Excess-of-mass selection, children (higher labels) before parents.
  std::vector<bool> selected(n_nodes, false);
  for (Eigen::Index c = max_label; c > root; --c) {
    double subtree = 0.0;
    for (Eigen::Index ch : children[slot(c)]) subtree += stability[slot(ch)];
    const double own = stability[slot(c)];
    if (!children[slot(c)].empty() && subtree > own * (1.0 + 1e-12)) {
      stability[slot(c)] = subtree;
    } else {
      selected[slot(c)] = true;
      std::vector<Eigen::Index> stack(children[slot(c)].begin(), children[slot(c)].end());
      while (!stack.empty()) {
        const Eigen::Index d = stack.back();
        stack.pop_back();
        selected[slot(d)] = false;
        stack.insert(stack.end(), children[slot(d)].begin(), children[slot(d)].end());
      }
    }
  }

  // Points resolve to their nearest selected ancestor; otherwise noise.
  UnionFind uf(max_label + 1);
  for (const auto& r : rows) {
    if (r.child >= n && selected[slot(r.child)]) continue;
    uf.attach(r.parent, r.child);
  }
  Labels raw(static_cast<std::size_t>(n), kNoiseId);
  std::vector<double> point_lambda(static_cast<std::size_t>(n), 0.0);
  for (const auto& r : rows) {
    if (r.child < n) point_lambda[static_cast<std::size_t>(r.child)] = r.lambda;
  }
  std::vector<double> max_lambda(n_nodes, 0.0);
  for (Eigen::Index p = 0; p < n; ++p) {
    const Eigen::Index top = uf.find(p);
    if (top > root && selected[slot(top)]) {
      raw[static_cast<std::size_t>(p)] = static_cast<int>(top);
      max_lambda[slot(top)] = std::max(max_lambda[slot(top)], point_lambda[static_cast<std::size_t>(p)]);
    }
  }
  for (Eigen::Index p = 0; p < n; ++p) {
    const int l = raw[static_cast<std::size_t>(p)];
    if (l == kNoiseId) continue;
    const double mx = max_lambda[slot(l)];
    const double lp = point_lambda[static_cast<std::size_t>(p)];
    if (std::isinf(mx)) {
      result.membership(p) = std::isinf(lp) ? 1.0 : 0.0;
    } else {
      result.membership(p) = mx > 0.0 ? std::min(lp, mx) / mx : 1.0;
    }
  }
  result.assignment = densify(raw);
  return result;
}

}  // namespace argsearch
