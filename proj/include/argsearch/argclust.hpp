#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "argsearch/cluster.hpp"
#include "argsearch/corpus.hpp"
#include "argsearch/dimred.hpp"
#include "argsearch/metrics.hpp"
#include "argsearch/vectorize.hpp"

namespace argsearch {

/// A multi-sentence argument cut out of a tagged document.
struct Argument {
  std::string id;  // "<doc_id>:<first>-<last>"
  std::string topic;
  std::vector<std::string> sentence_ids;
  std::string text;  // sentences joined by a single space
  std::optional<std::string> aspect;
};

/// Arguments from the (repaired) BIO tags of every tagged document; untagged
/// documents become one argument each. The aspect is the most frequent
/// sentence aspect, first occurrence winning ties.
std::vector<Argument> extract_arguments(const Corpus& corpus);

struct KRegression {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares over (argument_count, aspect_count) pairs.
KRegression fit_k_regression(std::span<const std::pair<double, double>> points);

/// round_half_up(slope * n_args + intercept) clamped to [1, n_args].
Eigen::Index estimate_k(const KRegression& reg, Eigen::Index n_args);

enum class ClusterAlgorithm { kKmeans, kHdbscan };
enum class DimReduction { kNone, kUmap };
enum class TfidfScope { kWithinTopic, kAcrossTopics };

std::string to_string(ClusterAlgorithm a);
std::string to_string(DimReduction d);
std::string to_string(TfidfScope s);

struct AspectConfig {
  EmbeddingKind embedding = EmbeddingKind::kTfidf;
  ClusterAlgorithm algorithm = ClusterAlgorithm::kHdbscan;
  DimReduction dimred = DimReduction::kNone;
  TfidfScope scope = TfidfScope::kWithinTopic;  // meaningful for tf-idf only

  /// "embedding/algorithm/dimred/scope", scope shown as "-" for non-tf-idf.
  std::string key() const;
  friend bool operator==(const AspectConfig& a, const AspectConfig& b) { return a.key() == b.key(); }
};

struct GridRow {
  AspectConfig config;
  NoiseMode noise_mode = NoiseMode::kSingleCluster;
  bool in_reference_grid = true;
};

/// The twelve-row reference layout: eleven configurations scored with noise
/// pooled, plus tf-idf/HDBSCAN/no reduction scored without noise.
std::vector<GridRow> reference_grid();

/// Every embedding x algorithm x reduction (x scope for tf-idf) with noise
/// pooled, plus an excluded-noise row per HDBSCAN configuration.
std::vector<GridRow> full_grid();

struct ArgclustSettings {
  VocabOptions vocab{10000, 0.5};
  UmapConfig umap;
  HdbscanConfig hdbscan;
  KmeansConfig kmeans;
  bool normalize_embeddings = false;
  std::uint64_t seed = 0;
};

/// Everything a per-topic run may need besides the topic's own arguments.
struct ArgumentFeatures {
  const EmbeddingSet* bert_cls = nullptr;
  const EmbeddingSet* bert_avg = nullptr;
  /// Vocabulary and document frequencies over all arguments of all topics.
  const Vocabulary* across_vocab = nullptr;
};

Vocabulary build_across_vocab(std::span<const Argument> arguments, const VocabOptions& options);

/// Feature matrix (one row per argument) for the configured representation.
Eigen::MatrixXd argument_vectors(std::span<const Argument> arguments, const AspectConfig& config,
                                 const ArgumentFeatures& features, const ArgclustSettings& settings);

struct AspectRun {
  std::string topic;
  AspectConfig config;
  ClusterAssignment assignment;
  ClusteringEval with_noise;
  std::optional<ClusteringEval> without_noise;  // absent when every argument is noise
  std::size_t n_arguments = 0;
  std::size_t n_aspects = 0;
};

AspectRun cluster_topic_arguments(const std::string& topic, std::span<const Argument> arguments,
                                  const AspectConfig& config, const KRegression& reg,
                                  const ArgumentFeatures& features, const ArgclustSettings& settings);

struct AggregateRow {
  GridRow row;
  double ari = 0.0;
  double homogeneity = 0.0;
  double completeness = 0.0;
  double bcubed_f1 = 0.0;
  std::size_t n_topics = 0;
};

/// Unweighted mean over topics for each requested grid row.
std::vector<AggregateRow> aggregate_runs(std::span<const AspectRun> runs,
                                         std::span<const GridRow> grid);

/// Grid rows derived from the runs themselves: one pooled-noise row per
/// distinct configuration plus an excluded-noise row for HDBSCAN ones.
std::vector<AggregateRow> aggregate_runs(std::span<const AspectRun> runs);

/// `embedding,algorithm,dimred,scope,noise_mode,ari,ho,co,bcubed_f1,n_topics`
std::string aggregate_csv(std::span<const AggregateRow> rows);

}  // namespace argsearch
