#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "argsearch/common.hpp"

namespace argsearch {

using Tokens = std::vector<std::string>;

/// Lowercased maximal runs of Unicode letters/digits; runs shorter than two
/// code points are dropped. Input is UTF-8; invalid bytes act as separators.
Tokens tokenize(std::string_view text);

struct Vocabulary {
  std::vector<std::string> terms;  // lexicographic
  std::unordered_map<std::string, std::size_t> term_to_index;
  std::vector<std::size_t> doc_freq;
  std::size_t n_docs = 0;

  std::size_t size() const { return terms.size(); }
  std::optional<std::size_t> index_of(const std::string& term) const;
};

struct VocabOptions {
  std::optional<std::size_t> max_features;
  double max_df = 1.0;
};

Vocabulary build_vocab(std::span<const Tokens> docs, const VocabOptions& options);

/// Smoothed inverse document frequency ln((1+N)/(1+df)) + 1 per term.
Eigen::VectorXd idf_weights(const Vocabulary& vocab);

/// Raw-count tf times smoothed idf, rows L2-normalized (zero rows stay zero).
Eigen::MatrixXd tfidf_matrix(std::span<const Tokens> docs, const Vocabulary& vocab);

enum class EmbeddingKind { kTfidf, kBertCls, kBertAvg, kHashTest };

std::string to_string(EmbeddingKind kind);
EmbeddingKind embedding_kind_from_string(std::string_view s);

/// Id-indexed dense vectors; row i of `vectors` belongs to ids[i].
struct EmbeddingSet {
  EmbeddingKind kind = EmbeddingKind::kHashTest;
  Eigen::Index dim = 0;
  std::vector<std::string> ids;
  Eigen::MatrixXd vectors;

  void reindex();
  bool contains(const std::string& id) const { return index_.contains(id); }
  /// Throws DataError for unknown ids.
  Eigen::Index row_of(const std::string& id) const;
  auto row(const std::string& id) const { return vectors.row(row_of(id)); }

  /// Gathers rows for `ids` into a new matrix, in order.
  Eigen::MatrixXd gather(std::span<const std::string> wanted) const;

 private:
  std::unordered_map<std::string, Eigen::Index> index_;
};

EmbeddingSet make_embedding_set(EmbeddingKind kind, std::vector<std::string> ids,
                                Eigen::MatrixXd vectors);

EmbeddingSet tfidf(std::span<const Tokens> docs, const Vocabulary& vocab,
                   std::vector<std::string> ids);

std::string embeddings_to_tsv(const EmbeddingSet& set);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet parse_embeddings_tsv(std::string_view text,
                                  const std::unordered_set<std::string>& expected_ids);
EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             const std::unordered_set<std::string>& expected_ids);

/// Feature-hashing bag of words: mean of signed one-hot bucket vectors,
/// then L2-normalized. Empty texts map to the zero vector.
Eigen::MatrixXd hash_embed(std::span<const std::string> texts, Eigen::Index dim,
                           std::uint64_t seed);

}  // namespace argsearch
