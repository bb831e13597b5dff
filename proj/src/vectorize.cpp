#include "argsearch/vectorize.hpp"

#include <algorithm>
#include <cmath>
#include <cwctype>
#include <locale.h>
#include <map>
#include <numeric>
#include <wctype.h>

#include "argsearch/io.hpp"

namespace argsearch {

namespace {

// Decodes one UTF-8 code point starting at `i`; returns U+FFFD and advances
// one byte on malformed input.
char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char c0 = byte(i);
  int len = 0;
  char32_t cp = 0;
  if (c0 < 0x80) {
    ++i;
    return c0;
  } else if ((c0 & 0xE0) == 0xC0) {
    len = 2;
    cp = c0 & 0x1F;
  } else if ((c0 & 0xF0) == 0xE0) {
    len = 3;
    cp = c0 & 0x0F;
  } else if ((c0 & 0xF8) == 0xF0) {
    len = 4;
    cp = c0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + static_cast<std::size_t>(len) > s.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const unsigned char c = byte(i + static_cast<std::size_t>(k));
    if ((c & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (c & 0x3F);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

void encode_utf8(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Character classification through the C.UTF-8 locale when available; ASCII
// rules plus "every non-ASCII code point outside punctuation blocks is a
// letter" otherwise.
class CharClass {
 public:
  CharClass() {
    for (const char* name : {"C.UTF-8", "C.utf8", "en_US.UTF-8"}) {
      loc_ = newlocale(LC_CTYPE_MASK, name, static_cast<locale_t>(nullptr));
      if (loc_ != static_cast<locale_t>(nullptr)) break;
    }
  }
  ~CharClass() {
    if (loc_ != static_cast<locale_t>(nullptr)) freelocale(loc_);
  }
  CharClass(const CharClass&) = delete;
  CharClass& operator=(const CharClass&) = delete;

  bool is_alnum(char32_t cp) const {
    if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) != 0;
    if (cp == 0xFFFD) return false;
    if (loc_ != static_cast<locale_t>(nullptr)) {
      return iswalnum_l(static_cast<wint_t>(cp), loc_) != 0;
    }
    const bool punct_block = (cp >= 0x2000 && cp <= 0x206F) || (cp >= 0x3000 && cp <= 0x303F) ||
                             (cp >= 0x00A0 && cp <= 0x00BF);
    return !punct_block;
  }

  char32_t to_lower(char32_t cp) const {
    if (cp < 0x80) return static_cast<char32_t>(std::tolower(static_cast<int>(cp)));
    if (loc_ != static_cast<locale_t>(nullptr)) {
      return static_cast<char32_t>(towlower_l(static_cast<wint_t>(cp), loc_));
    }
    return cp;
  }

 private:
  locale_t loc_ = static_cast<locale_t>(nullptr);
};

const CharClass& char_class() {
  static const CharClass cc;
  return cc;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  const auto& cc = char_class();
  Tokens tokens;
  std::string current;
  std::size_t length = 0;
  const auto flush = [&] {
    if (length >= 2) tokens.push_back(current);
    current.clear();
    length = 0;
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = decode_utf8(text, i);
    if (cc.is_alnum(cp)) {
      encode_utf8(cc.to_lower(cp), current);
      ++length;
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::optional<std::size_t> Vocabulary::index_of(const std::string& term) const {
  if (auto it = term_to_index.find(term); it != term_to_index.end()) return it->second;
  return std::nullopt;
}

Vocabulary build_vocab(std::span<const Tokens> docs, const VocabOptions& options) {
  if (docs.empty()) throw DataError("cannot build a vocabulary from zero documents");
  if (!(options.max_df > 0.0 && options.max_df <= 1.0)) {
    throw ConfigError("max_df must lie in (0,1]");
  }

  // Ordered map keeps aggregation independent of document order.
  std::map<std::string, std::pair<std::size_t, std::size_t>> stats;  // term -> (df, total)
  for (const auto& doc : docs) {
    std::vector<std::string> unique(doc.begin(), doc.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    for (const auto& t : doc) ++stats[t].second;
    for (const auto& t : unique) ++stats[t].first;
  }

  const auto n = static_cast<double>(docs.size());
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> kept;
  for (auto& [term, s] : stats) {
    if (static_cast<double>(s.first) / n <= options.max_df) kept.emplace_back(term, s);
  }
  if (options.max_features && kept.size() > *options.max_features) {
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second.second > b.second.second;  // stable: ties stay lexicographic
    });
    kept.resize(*options.max_features);
    std::sort(kept.begin(), kept.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  if (kept.empty()) throw DataError("vocabulary is empty after filtering");

  Vocabulary vocab;
  vocab.n_docs = docs.size();
  for (auto& [term, s] : kept) {
    vocab.term_to_index.emplace(term, vocab.terms.size());
    vocab.terms.push_back(term);
    vocab.doc_freq.push_back(s.first);
  }
  return vocab;
}

Eigen::VectorXd idf_weights(const Vocabulary& vocab) {
  Eigen::VectorXd idf(static_cast<Eigen::Index>(vocab.size()));
  const double n = static_cast<double>(vocab.n_docs);
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    idf(static_cast<Eigen::Index>(t)) =
        std::log((1.0 + n) / (1.0 + static_cast<double>(vocab.doc_freq[t]))) + 1.0;
  }
  return idf;
}

Eigen::MatrixXd tfidf_matrix(std::span<const Tokens> docs, const Vocabulary& vocab) {
  const Eigen::VectorXd idf = idf_weights(vocab);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(docs.size()),
                                            static_cast<Eigen::Index>(vocab.size()));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto row = static_cast<Eigen::Index>(d);
    for (const auto& t : docs[d]) {
      if (auto idx = vocab.index_of(t)) x(row, static_cast<Eigen::Index>(*idx)) += 1.0;
    }
    x.row(row).array() *= idf.transpose().array();
    const double norm = x.row(row).norm();
    if (norm > 0.0) x.row(row) /= norm;
  }
  return x;
}

std::string to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::kTfidf: return "tfidf";
    case EmbeddingKind::kBertCls: return "bert_cls";
    case EmbeddingKind::kBertAvg: return "bert_avg";
    case EmbeddingKind::kHashTest: return "hash_test";
  }
  return "unknown";
}

EmbeddingKind embedding_kind_from_string(std::string_view s) {
  if (s == "tfidf") return EmbeddingKind::kTfidf;
  if (s == "bert_cls" || s == "cls") return EmbeddingKind::kBertCls;
  if (s == "bert_avg" || s == "avg") return EmbeddingKind::kBertAvg;
  if (s == "hash_test") return EmbeddingKind::kHashTest;
  throw DataError("unknown embedding kind '" + std::string(s) + "'");
}

void EmbeddingSet::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!index_.emplace(ids[i], static_cast<Eigen::Index>(i)).second) {
      throw DataError("duplicate embedding id '" + ids[i] + "'");
    }
  }
}

Eigen::Index EmbeddingSet::row_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("missing embedding for id '" + id + "'");
  return it->second;
}

Eigen::MatrixXd EmbeddingSet::gather(std::span<const std::string> wanted) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(wanted.size()), dim);
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = vectors.row(row_of(wanted[i]));
  }
  return out;
}

EmbeddingSet make_embedding_set(EmbeddingKind kind, std::vector<std::string> ids,
                                Eigen::MatrixXd vectors) {
  if (static_cast<std::size_t>(vectors.rows()) != ids.size()) {
    throw DataError("embedding id count does not match vector count");
  }
  if (!vectors.allFinite()) throw DataError("embedding contains non-finite values");
  EmbeddingSet set;
  set.kind = kind;
  set.dim = vectors.cols();
  set.ids = std::move(ids);
  set.vectors = std::move(vectors);
  set.reindex();
  return set;
}

EmbeddingSet tfidf(std::span<const Tokens> docs, const Vocabulary& vocab,
                   std::vector<std::string> ids) {
  return make_embedding_set(EmbeddingKind::kTfidf, std::move(ids), tfidf_matrix(docs, vocab));
}

std::string embeddings_to_tsv(const EmbeddingSet& set) {
  std::string out = "#dim=" + std::to_string(set.dim) + "\t#kind=" + to_string(set.kind) + "\n";
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    out += set.ids[i];
    out += '\t';
    for (Eigen::Index c = 0; c < set.dim; ++c) {
      if (c > 0) out += ' ';
      out += io::format_double(set.vectors(static_cast<Eigen::Index>(i), c));
    }
    out += '\n';
  }
  return out;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  io::write_text(path, embeddings_to_tsv(set));
}

EmbeddingSet parse_embeddings_tsv(std::string_view text,
                                  const std::unordered_set<std::string>& expected_ids) {
  std::size_t pos = 0;
  const auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) throw DataError("embedding file is empty");
  const auto tab = header.find('\t');
  if (!header.starts_with("#dim=") || tab == std::string_view::npos ||
      !header.substr(tab + 1).starts_with("#kind=")) {
    throw DataError("embedding header must be '#dim=<D>\\t#kind=<kind>'");
  }
  const double dim_value = io::parse_double(header.substr(5, tab - 5));
  if (dim_value < 1 || dim_value != std::floor(dim_value)) {
    throw DataError("embedding dim must be a positive integer");
  }
  const auto dim = static_cast<Eigen::Index>(dim_value);
  const EmbeddingKind kind = embedding_kind_from_string(header.substr(tab + 7));

  std::vector<std::string> ids;
  std::vector<double> values;
  std::string_view line;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto t = line.find('\t');
    if (t == std::string_view::npos) throw DataError("embedding row without tab separator");
    std::string id(line.substr(0, t));
    std::string_view rest = line.substr(t + 1);
    Eigen::Index count = 0;
    std::size_t p = 0;
    while (p <= rest.size()) {
      std::size_t q = rest.find(' ', p);
      if (q == std::string_view::npos) q = rest.size();
      if (q > p) {
        const double v = io::parse_double(rest.substr(p, q - p));
        if (!std::isfinite(v)) throw DataError("non-finite value in embedding row '" + id + "'");
        values.push_back(v);
        ++count;
      }
      p = q + 1;
    }
    if (count != dim) {
      throw DataError("embedding row '" + id + "' has " + std::to_string(count) +
                      " values, expected " + std::to_string(dim));
    }
    ids.push_back(std::move(id));
  }

  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(ids.size()), dim);
  for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) vectors(r, c) = values[static_cast<std::size_t>(r * dim + c)];
  }
  EmbeddingSet set = make_embedding_set(kind, std::move(ids), std::move(vectors));
  std::vector<std::string> missing;
  for (const auto& id : expected_ids) {
    if (!set.contains(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    throw DataError("missing embedding for id '" + missing.front() + "'" +
                    (missing.size() > 1 ? " (and " + std::to_string(missing.size() - 1) + " more)"
                                        : std::string{}));
  }
  return set;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             const std::unordered_set<std::string>& expected_ids) {
  try {
    return parse_embeddings_tsv(io::read_text(path), expected_ids);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Eigen::MatrixXd hash_embed(std::span<const std::string> texts, Eigen::Index dim,
                           std::uint64_t seed) {
  if (dim < 8) throw ConfigError("hash embedding dim must be >= 8");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(texts.size()), dim);
  const std::uint64_t key = mix64(seed);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const Tokens tokens = tokenize(texts[i]);
    if (tokens.empty()) continue;
    auto row = out.row(static_cast<Eigen::Index>(i));
    for (const auto& tok : tokens) {
      const std::uint64_t h = mix64(fnv1a64(tok) ^ key);
      const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
      row(bucket) += (h >> 63) != 0 ? -1.0 : 1.0;
    }
    row /= static_cast<double>(tokens.size());
    const double norm = row.norm();
    if (norm > 0.0) row /= norm;
  }
  return out;
}

}  // namespace argsearch
