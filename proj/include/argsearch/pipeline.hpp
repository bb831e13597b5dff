#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "argsearch/argclust.hpp"
#include "argsearch/cluster.hpp"
#include "argsearch/corpus.hpp"
#include "argsearch/dimred.hpp"
#include "argsearch/metrics.hpp"
#include "argsearch/seqlabel.hpp"
#include "argsearch/vectorize.hpp"

namespace argsearch {

/// Where a sentence embedding kind comes from: a TSV file, or the built-in
/// hashing embedder at the given dimension.
struct EmbeddingSource {
  std::optional<std::filesystem::path> path;
  Eigen::Index hash_dim = 0;
};

enum class TopicModel { kArgmaxTfidf, kArgmaxLsa, kKmeansTfidf, kHdbscanTfidf, kHdbscanUmap, kHdbscanLsaUmap };

std::string to_string(TopicModel model);
TopicModel topic_model_from_string(std::string_view s);

struct TopicStageConfig {
  TopicModel model = TopicModel::kHdbscanUmap;
  VocabOptions vocab{10000, 0.5};
  std::size_t argmax_max_features = 1000;
  Eigen::Index lsa_dims = 100;
  std::optional<Eigen::Index> k;  // k-means; defaults to the gold topic count
  KmeansConfig kmeans;
  HdbscanConfig hdbscan;
  UmapConfig umap;
  NoiseMode noise_mode = NoiseMode::kSingleCluster;
  std::size_t top_terms = 10;
  std::vector<std::string> queries;
};

enum class SegmentModel { kBiLstm, kFnn, kMajority };

std::string to_string(SegmentModel model);
SegmentModel segment_model_from_string(std::string_view s);

struct SegmentStageConfig {
  SegmentModel model = SegmentModel::kBiLstm;
  EmbeddingKind embedding = EmbeddingKind::kBertCls;
  TrainConfig train;
  /// Train on this corpus instead of the split's train/val topics.
  std::optional<std::filesystem::path> train_corpus;
  /// Evaluate on this corpus instead of the split's test topics.
  std::optional<std::filesystem::path> test_corpus;
};

enum class ArgumentSource { kGold, kSegmented };
enum class EvalTopics { kTest, kAll };

struct ArgclustStageConfig {
  std::vector<GridRow> grid = reference_grid();
  ArgumentSource source = ArgumentSource::kGold;
  EvalTopics eval_topics = EvalTopics::kTest;
  ArgclustSettings settings;
};

struct PipelineConfig {
  std::filesystem::path corpus;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  double test_frac = 0.15;
  double val_frac = 0.15;
  std::optional<std::filesystem::path> split;
  std::map<EmbeddingKind, EmbeddingSource> embeddings;
  TopicStageConfig topics;
  SegmentStageConfig segment;
  ArgclustStageConfig argclust;
  std::vector<std::string> stages{"topics", "segment", "argclust"};
};

/// Parses and validates a config object. Relative paths resolve against
/// `base_dir`. Throws ConfigError on unknown keys, bad values or missing files.
PipelineConfig parse_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Title and sentences joined by single spaces.
std::string document_text(const Document& doc);

struct ClusterTerms {
  int cluster = kNoiseId;
  std::size_t size = 0;
  std::vector<std::pair<std::string, double>> terms;
};

/// Highest mean tf-idf terms per cluster (noise last), ties by term order.
std::vector<ClusterTerms> cluster_terms(const Eigen::MatrixXd& tfidf, const Vocabulary& vocab,
                                        const ClusterAssignment& assignment, std::size_t top_n);

/// Raw topic assignment for a corpus, no evaluation or files.
ClusterAssignment cluster_topics(const Corpus& corpus, const TopicStageConfig& config,
                                 std::uint64_t seed);

struct RankedCluster {
  int cluster = 0;
  double score = 0.0;
  std::vector<std::string> doc_ids;
};

/// Clusters ranked by the summed tf-idf weight of the query's terms over their
/// member documents. Clusters scoring zero and noise documents are left out.
std::vector<RankedCluster> query_topics(std::string_view query, const ClusterAssignment& assignment,
                                        const Corpus& corpus,
                                        const VocabOptions& vocab = VocabOptions{});

struct TopicStageResult {
  ClusterAssignment assignment;
  ClusteringEval eval;
  std::optional<ClusteringEval> eval_without_noise;
  std::vector<ClusterTerms> terms;
};

struct SegmentStageResult {
  TaggingEval eval;
  std::optional<TrainResult> training;
  Corpus segmented;
};

struct ArgclustStageResult {
  std::vector<AspectRun> runs;
  std::vector<AggregateRow> table;
  KRegression regression;
  bool regression_fallback = false;
  std::vector<std::string> skipped_topics;
  /// Segmented arguments without any gold aspect, left out of the runs.
  std::size_t unlabelled_arguments = 0;
};

/// Runs stages against one config, caching the corpus, split and embeddings.
/// Every stage writes its files under `<output_dir>/<stage>/`.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  const Corpus& corpus();
  const SplitSpec& split();
  /// Sentence embeddings covering every sentence of `corpus`, from the
  /// configured source of `kind`. Throws DataError on missing ids.
  EmbeddingSet embeddings(EmbeddingKind kind, const Corpus& corpus);

  TopicStageResult run_topics();
  SegmentStageResult run_segment();
  ArgclustStageResult run_argclust();

  /// Configured stages in order, then `meta.json`.
  void run_all();

 private:
  std::filesystem::path stage_dir(std::string_view stage) const;

  PipelineConfig config_;
  std::optional<Corpus> corpus_;
  std::optional<SplitSpec> split_;
  std::map<EmbeddingKind, EmbeddingSet> loaded_;
};

}  // namespace argsearch
