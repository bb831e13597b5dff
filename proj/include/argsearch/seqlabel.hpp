#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "argsearch/common.hpp"
#include "argsearch/corpus.hpp"
#include "argsearch/vectorize.hpp"

namespace argsearch {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct FocalLossConfig {
  double gamma = 2.0;
  double alpha = 0.25;
};

struct FocalTerm {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d logit
};

/// One sigmoid-focal term for a single logit and binary target.
FocalTerm focal_term(double logit, bool target, const FocalLossConfig& config);

struct FocalLoss {
  double loss = 0.0;
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
};

/// Sum of per-class sigmoid focal terms against a one-hot target.
FocalLoss focal_loss(const Eigen::Vector3d& logits, const Eigen::Vector3d& target,
                     const FocalLossConfig& config);

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

enum class ModelKind : std::uint8_t { kBiLstm = 0, kFnn = 1 };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

/// Flat parameter vector plus the shape it is interpreted under.
///
/// BiLSTM layout, per direction (forward first): W (4h x d), U (4h x h),
/// b (4h), gate blocks ordered input, forget, output, candidate; then the
/// output projection Wo (3 x 2h) and bo (3). FNN layout: W1 (h x d), b1 (h),
/// W2 (3 x h), b2 (3). Matrices are column-major.
struct TaggerParams {
  ModelKind kind = ModelKind::kBiLstm;
  Eigen::Index input_dim = 0;
  Eigen::Index hidden = 200;
  Eigen::VectorXd theta;

  static Eigen::Index parameter_count(ModelKind kind, Eigen::Index input_dim, Eigen::Index hidden);
};

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
/// LSTM forget-gate biases at 1.
TaggerParams init_params(ModelKind kind, Eigen::Index input_dim, Eigen::Index hidden,
                         std::uint64_t seed);

/// Per-position logits, T x 3, for a T x d sequence.
Eigen::MatrixXd forward(const TaggerParams& params, const Eigen::MatrixXd& sequence);

/// Mean focal loss over the positions of one sequence; writes d loss / d theta
/// into `grad` when it is non-null.
double sequence_loss(const TaggerParams& params, const Eigen::MatrixXd& sequence,
                     std::span<const BioTag> targets, const FocalLossConfig& focal,
                     Eigen::VectorXd* grad);

void save_checkpoint(const TaggerParams& params, const std::filesystem::path& path);
TaggerParams load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct LabeledSequence {
  std::string doc_id;
  Eigen::MatrixXd features;  // T x d
  std::vector<BioTag> tags;  // empty for unlabelled documents
};

/// Gathers sentence embeddings ("<doc_id>#<i>") for every document.
std::vector<LabeledSequence> prepare_sequences(const Corpus& corpus, const EmbeddingSet& embeddings,
                                               bool require_tags);

struct Adagrad {
  double lr = 0.01;
  double epsilon = 1e-8;
  Eigen::VectorXd accumulator;

  /// theta -= lr * g / (sqrt(G) + eps) after G += g^2.
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);
};

struct TrainConfig {
  ModelKind kind = ModelKind::kBiLstm;
  Eigen::Index hidden = 200;
  int epochs = 600;
  double lr = 0.01;
  double epsilon = 1e-8;
  FocalLossConfig focal;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
};

struct EpochLoss {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  TaggerParams params;  // snapshot with the lowest validation loss
  std::vector<EpochLoss> trace;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Mean focal loss over every position of every sequence.
double pooled_loss(const TaggerParams& params, std::span<const LabeledSequence> data,
                   const FocalLossConfig& focal);

/// Adagrad, one step per document, documents reshuffled each epoch.
TrainResult train(std::span<const LabeledSequence> train_set, std::span<const LabeledSequence> val_set,
                  const TrainConfig& config,
                  const std::function<void(const EpochLoss&)>& on_epoch = {});

std::string loss_trace_csv(std::span<const EpochLoss> trace);

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Argmax of per-class sigmoid scores; ties prefer B, then I.
std::vector<BioTag> predict_tags(const TaggerParams& params, const Eigen::MatrixXd& sequence);

/// Turns an I at the start of a document or directly after O into B.
std::vector<BioTag> repair_tags(std::span<const BioTag> tags);

struct ArgumentSpan {
  std::size_t begin = 0;  // first sentence
  std::size_t end = 0;    // last sentence, inclusive

  friend bool operator==(const ArgumentSpan&, const ArgumentSpan&) = default;
};

/// Each B opens an argument that extends through the following I tags; an I
/// with no open argument opens one as well.
std::vector<ArgumentSpan> segment_arguments(std::span<const BioTag> tags);

/// Most frequent training tag (ties prefer B, then I).
BioTag majority_baseline(std::span<const LabeledSequence> train_set);

}  // namespace argsearch
