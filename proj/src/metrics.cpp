#include "argsearch/metrics.hpp"

#include <cmath>
#include <map>
#include <set>

namespace argsearch {

std::string to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::kSingleCluster: return "single_cluster";
    case NoiseMode::kSingletons: return "singletons";
    case NoiseMode::kExclude: return "exclude";
  }
  return "unknown";
}

NoiseMode noise_mode_from_string(std::string_view s) {
  if (s == "single_cluster" || s == "with_noise_single_cluster") return NoiseMode::kSingleCluster;
  if (s == "singletons") return NoiseMode::kSingletons;
  if (s == "exclude" || s == "exclude_noise") return NoiseMode::kExclude;
  throw ConfigError("unknown noise mode '" + std::string(s) + "'");
}

namespace {

void check_lengths(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) {
    throw DataError("label length mismatch: " + std::to_string(truth.size()) + " vs " +
                    std::to_string(pred.size()));
  }
}

struct Contingency {
  std::map<std::pair<int, int>, long long> cells;
  std::map<int, long long> rows;  // truth
  std::map<int, long long> cols;  // pred
  long long n = 0;
};

Contingency contingency(std::span<const int> truth, std::span<const int> pred) {
  Contingency c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++c.cells[{truth[i], pred[i]}];
    ++c.rows[truth[i]];
    ++c.cols[pred[i]];
  }
  c.n = static_cast<long long>(truth.size());
  return c;
}

double comb2(long long x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); }

double entropy(const std::map<int, long long>& counts, long long n) {
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    if (c > 0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace

std::pair<Labels, Labels> apply_noise_mode(std::span<const int> truth, std::span<const int> pred,
                                           NoiseMode mode) {
  check_lengths(truth, pred);
  Labels t;
  Labels p;
  int next_singleton = 0;
  for (int l : pred) next_singleton = std::max(next_singleton, l + 1);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != kNoiseId) {
      t.push_back(truth[i]);
      p.push_back(pred[i]);
      continue;
    }
    switch (mode) {
      case NoiseMode::kSingleCluster:
        t.push_back(truth[i]);
        p.push_back(kNoiseId);
        break;
      case NoiseMode::kSingletons:
        t.push_back(truth[i]);
        p.push_back(next_singleton++);
        break;
      case NoiseMode::kExclude:
        break;
    }
  }
  return {std::move(t), std::move(p)};
}

double adjusted_rand_index(std::span<const int> truth, std::span<const int> pred) {
  check_lengths(truth, pred);
  if (truth.size() < 2) throw DataError("ARI needs at least two items");
  const Contingency c = contingency(truth, pred);
  double index = 0.0;
  for (const auto& [key, v] : c.cells) index += comb2(v);
  double sum_rows = 0.0;
  for (const auto& [key, v] : c.rows) sum_rows += comb2(v);
  double sum_cols = 0.0;
  for (const auto& [key, v] : c.cols) sum_cols += comb2(v);
  const double expected = sum_rows * sum_cols / comb2(c.n);
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical
  return (index - expected) / (max_index - expected);
}

HomogeneityCompleteness homogeneity_completeness(std::span<const int> truth,
                                                 std::span<const int> pred) {
  check_lengths(truth, pred);
  HomogeneityCompleteness out;
  if (truth.empty()) return out;
  const Contingency c = contingency(truth, pred);
  const double h_c = entropy(c.rows, c.n);
  const double h_k = entropy(c.cols, c.n);
  double h_c_given_k = 0.0;
  double h_k_given_c = 0.0;
  const auto n = static_cast<double>(c.n);
  for (const auto& [key, v] : c.cells) {
    const double joint = static_cast<double>(v) / n;
    h_c_given_k -= joint * std::log(static_cast<double>(v) / static_cast<double>(c.cols.at(key.second)));
    h_k_given_c -= joint * std::log(static_cast<double>(v) / static_cast<double>(c.rows.at(key.first)));
  }
  out.homogeneity = h_c == 0.0 ? 1.0 : 1.0 - h_c_given_k / h_c;
  out.completeness = h_k == 0.0 ? 1.0 : 1.0 - h_k_given_c / h_k;
  return out;
}

BCubed bcubed(std::span<const int> truth, std::span<const int> pred, NoiseMode mode) {
  const auto [t, p] = apply_noise_mode(truth, pred, mode);
  if (t.empty()) {
    throw DataError(truth.empty() ? "BCubed on empty labels" : "BCubed: every item is noise");
  }
  const Contingency c = contingency(t, p);
  double precision = 0.0;
  double recall = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto both = static_cast<double>(c.cells.at({t[i], p[i]}));
    precision += both / static_cast<double>(c.cols.at(p[i]));
    recall += both / static_cast<double>(c.rows.at(t[i]));
  }
  BCubed out;
  out.precision = precision / static_cast<double>(t.size());
  out.recall = recall / static_cast<double>(t.size());
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

ClusteringEval evaluate_clustering(std::span<const int> truth, std::span<const int> pred,
                                   NoiseMode mode) {
  check_lengths(truth, pred);
  ClusteringEval eval;
  std::set<int> clusters;
  std::size_t noise = 0;
  for (int l : pred) {
    if (l == kNoiseId) {
      ++noise;
    } else {
      clusters.insert(l);
    }
  }
  eval.n_clusters = static_cast<int>(clusters.size());
  eval.noise_fraction =
      pred.empty() ? 0.0 : static_cast<double>(noise) / static_cast<double>(pred.size());

  const auto [t, p] = apply_noise_mode(truth, pred, mode);
  if (t.empty()) throw DataError("no items left to evaluate after noise handling");
  eval.ari = t.size() >= 2 ? adjusted_rand_index(t, p) : 1.0;
  const auto hc = homogeneity_completeness(t, p);
  eval.homogeneity = hc.homogeneity;
  eval.completeness = hc.completeness;
  // Noise has already been resolved above, so BCubed sees no noise ids here
  // except under kSingleCluster, where kNoiseId is an ordinary pooled cluster.
  const BCubed b = bcubed(t, p, NoiseMode::kSingleCluster);
  eval.bcubed_precision = b.precision;
  eval.bcubed_recall = b.recall;
  eval.bcubed_f1 = b.f1;
  return eval;
}

Labels encode_labels(std::span<const std::string> labels) {
  std::map<std::string, int> ids;
  Labels out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    auto [it, inserted] = ids.emplace(l, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

TaggingEval tagging_eval_from_confusion(
    const std::array<std::array<long long, kNumTags>, kNumTags>& confusion) {
  TaggingEval e;
  e.confusion = confusion;
  long long total = 0;
  for (int c = 0; c < kNumTags; ++c) {
    long long row = 0;
    long long col = 0;
    for (int k = 0; k < kNumTags; ++k) {
      row += confusion[c][k];
      col += confusion[k][c];
    }
    const auto tp = static_cast<double>(confusion[c][c]);
    e.support[c] = row;
    total += row;
    e.precision[c] = col > 0 ? tp / static_cast<double>(col) : 0.0;
    e.recall[c] = row > 0 ? tp / static_cast<double>(row) : 0.0;
    const double pr = e.precision[c] + e.recall[c];
    e.f1[c] = pr > 0.0 ? 2.0 * e.precision[c] * e.recall[c] / pr : 0.0;
  }
  e.f1_macro = (e.f1[0] + e.f1[1] + e.f1[2]) / 3.0;
  e.f1_macro_bi = (e.f1[0] + e.f1[1]) / 2.0;
  if (total > 0) {
    for (int c = 0; c < kNumTags; ++c) {
      e.f1_weighted += static_cast<double>(e.support[c]) * e.f1[c];
    }
    e.f1_weighted /= static_cast<double>(total);
  }
  return e;
}

TaggingEval tagging_eval(std::span<const std::vector<BioTag>> truth,
                         std::span<const std::vector<BioTag>> pred) {
  if (truth.size() != pred.size()) {
    throw DataError("tagging: " + std::to_string(truth.size()) + " truth sequences vs " +
                    std::to_string(pred.size()) + " predicted");
  }
  std::array<std::array<long long, kNumTags>, kNumTags> confusion{};
  for (std::size_t s = 0; s < truth.size(); ++s) {
    if (truth[s].size() != pred[s].size()) {
      throw DataError("tagging: sequence " + std::to_string(s) + " length mismatch");
    }
    for (std::size_t i = 0; i < truth[s].size(); ++i) {
      ++confusion[static_cast<int>(truth[s][i])][static_cast<int>(pred[s][i])];
    }
  }
  return tagging_eval_from_confusion(confusion);
}

double krippendorff_alpha_nominal(const std::vector<std::vector<std::optional<int>>>& ratings) {
  // Coincidence matrix over pairable values: each ordered pair within a unit
  // with m ratings contributes 1 / (m - 1).
  std::map<std::pair<int, int>, double> coincidence;
  std::size_t pairable_units = 0;
  for (const auto& unit : ratings) {
    std::vector<int> values;
    for (const auto& r : unit) {
      if (r) values.push_back(*r);
    }
    if (values.size() < 2) continue;
    ++pairable_units;
    const double w = 1.0 / static_cast<double>(values.size() - 1);
    for (std::size_t i = 0; i < values.size(); ++i) {
      for (std::size_t j = 0; j < values.size(); ++j) {
        if (i != j) coincidence[{values[i], values[j]}] += w;
      }
    }
  }
  if (pairable_units < 2) throw DataError("Krippendorff alpha needs >= 2 units with >= 2 ratings");

  std::map<int, double> marginals;
  double n = 0.0;
  double disagree = 0.0;
  for (const auto& [key, v] : coincidence) {
    marginals[key.first] += v;
    n += v;
    if (key.first != key.second) disagree += v;
  }
  double expected = 0.0;
  for (const auto& [c, nc] : marginals) {
    for (const auto& [k, nk] : marginals) {
      if (c != k) expected += nc * nk;
    }
  }
  if (expected == 0.0) throw DataError("Krippendorff alpha undefined: only one value observed");
  return 1.0 - (n - 1.0) * disagree / expected;
}

nlohmann::json to_json(const ClusteringEval& eval) {
  return {{"ari", eval.ari},
          {"homogeneity", eval.homogeneity},
          {"completeness", eval.completeness},
          {"bcubed_precision", eval.bcubed_precision},
          {"bcubed_recall", eval.bcubed_recall},
          {"bcubed_f1", eval.bcubed_f1},
          {"n_clusters", eval.n_clusters},
          {"noise_fraction", eval.noise_fraction}};
}

nlohmann::json to_json(const TaggingEval& eval) {
  nlohmann::json j;
  constexpr std::array<const char*, kNumTags> names{"B", "I", "O"};
  for (int c = 0; c < kNumTags; ++c) {
    j[std::string("precision_") + names[c]] = eval.precision[c];
    j[std::string("recall_") + names[c]] = eval.recall[c];
    j[std::string("f1_") + names[c]] = eval.f1[c];
    j[std::string("support_") + names[c]] = eval.support[c];
  }
  j["f1_macro"] = eval.f1_macro;
  j["f1_weighted"] = eval.f1_weighted;
  j["f1_macro_BI"] = eval.f1_macro_bi;
  j["confusion"] = eval.confusion;
  return j;
}

}  // namespace argsearch
