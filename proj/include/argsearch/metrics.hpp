#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "argsearch/common.hpp"
#include "argsearch/corpus.hpp"

namespace argsearch {

/// How predicted noise (kNoiseId) enters clustering metrics.
enum class NoiseMode {
  kSingleCluster,  // all noise items form one predicted cluster
  kSingletons,     // every noise item is its own cluster
  kExclude,        // noise items are dropped before scoring
};

std::string to_string(NoiseMode mode);
NoiseMode noise_mode_from_string(std::string_view s);

/// Applies the noise convention; returns aligned (truth, pred) without noise ids.
std::pair<Labels, Labels> apply_noise_mode(std::span<const int> truth, std::span<const int> pred,
                                           NoiseMode mode);

double adjusted_rand_index(std::span<const int> truth, std::span<const int> pred);

struct HomogeneityCompleteness {
  double homogeneity = 1.0;
  double completeness = 1.0;
};
HomogeneityCompleteness homogeneity_completeness(std::span<const int> truth,
                                                 std::span<const int> pred);

struct BCubed {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
/// Item-averaged BCubed. `mode` decides how kNoiseId in `pred` is treated.
BCubed bcubed(std::span<const int> truth, std::span<const int> pred,
              NoiseMode mode = NoiseMode::kSingleCluster);

struct ClusteringEval {
  double ari = 0.0;
  double homogeneity = 0.0;
  double completeness = 0.0;
  double bcubed_precision = 0.0;
  double bcubed_recall = 0.0;
  double bcubed_f1 = 0.0;
  int n_clusters = 0;
  double noise_fraction = 0.0;
};

ClusteringEval evaluate_clustering(std::span<const int> truth, std::span<const int> pred,
                                   NoiseMode mode);

/// Maps string class labels to dense integer ids in first-occurrence order.
Labels encode_labels(std::span<const std::string> labels);

struct TaggingEval {
  std::array<std::array<long long, kNumTags>, kNumTags> confusion{};  // [truth][pred]
  std::array<double, kNumTags> precision{};
  std::array<double, kNumTags> recall{};
  std::array<double, kNumTags> f1{};
  std::array<long long, kNumTags> support{};
  double f1_macro = 0.0;
  double f1_weighted = 0.0;
  double f1_macro_bi = 0.0;
};

TaggingEval tagging_eval_from_confusion(
    const std::array<std::array<long long, kNumTags>, kNumTags>& confusion);

/// Micro-pooled over all sentences of all sequences.
TaggingEval tagging_eval(std::span<const std::vector<BioTag>> truth,
                         std::span<const std::vector<BioTag>> pred);

/// Nominal Krippendorff alpha. ratings[unit][annotator], missing = nullopt.
double krippendorff_alpha_nominal(const std::vector<std::vector<std::optional<int>>>& ratings);

/// Flat metric-name -> value maps.
nlohmann::json to_json(const ClusteringEval& eval);
nlohmann::json to_json(const TaggingEval& eval);

}  // namespace argsearch
