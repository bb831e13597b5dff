#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "argsearch/common.hpp"

namespace argsearch {

/// Sentence-level argument tag. The numeric order B < I < O is fixed and used
/// for tie-breaking and report layout.
enum class BioTag : std::uint8_t { B = 0, I = 1, O = 2 };

inline constexpr int kNumTags = 3;

char to_char(BioTag tag);
BioTag bio_from_string(std::string_view s);

struct Sentence {
  std::string text;
  std::optional<BioTag> bio;
  std::optional<std::string> aspect;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string topic;
  std::vector<Sentence> sentences;

  bool tagged() const { return !sentences.empty() && sentences.front().bio.has_value(); }
};

struct Corpus {
  std::string name;
  std::vector<Document> documents;

  /// Sorted set of topic labels.
  std::set<std::string> topics() const;
  std::size_t sentence_count() const;
};

struct SplitSpec {
  std::uint64_t seed = 0;
  std::set<std::string> train;
  std::set<std::string> val;
  std::set<std::string> test;
};

/// Key used for sentence embeddings: "<doc_id>#<index>".
std::string sentence_id(const Document& doc, std::size_t index);

/// Throws DataError naming the offending doc_id.
void validate(const Corpus& corpus);

Corpus parse_corpus_jsonl(std::string_view text, std::string name);
Corpus load_corpus(const std::filesystem::path& path);
std::string corpus_to_jsonl(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Topic-level split. Counts are round-half-up of frac * n_topics with at
/// least one topic on every requested side; the topic order is a seeded
/// permutation of the sorted topic set, test taken first, then validation.
SplitSpec split_by_topic(const Corpus& corpus, double test_frac, double val_frac,
                         std::uint64_t seed);

Corpus select(const Corpus& corpus, const std::set<std::string>& topics);

void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

/// Sidecar path "<stem>.split.json" next to a corpus file.
std::filesystem::path split_sidecar_path(const std::filesystem::path& corpus_path);

}  // namespace argsearch
