#include "argsearch/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <numeric>
#include <set>

#include "argsearch/io.hpp"

namespace argsearch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config helpers
// ---------------------------------------------------------------------------

void check_object(const json& j, const std::string& where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string name = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(name + ": expected a boolean");
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(name + ": expected a non-negative integer");
    }
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(name + ": expected an integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(name + ": expected a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(name + ": expected a string");
  }
  out = v.get<T>();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_relative() ? base / path : path).lexically_normal();
}

std::optional<fs::path> read_path(const json& j, const char* key, const fs::path& base,
                                  const std::string& where) {
  std::string s;
  if (!j.contains(key)) return std::nullopt;
  read(j, key, s, where);
  require(!s.empty(), where + "." + key + ": empty path");
  return resolve(base, s);
}

template <typename F>
auto translate(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const DataError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void read_umap(const json& j, UmapConfig& u, const std::string& where) {
  check_object(j, where,
               {"n_neighbors", "n_components", "min_dist", "spread", "n_epochs", "negative_sample_rate",
                "learning_rate", "repulsion_strength"});
  read(j, "n_neighbors", u.n_neighbors, where);
  read(j, "n_components", u.n_components, where);
  read(j, "min_dist", u.min_dist, where);
  read(j, "spread", u.spread, where);
  read(j, "n_epochs", u.n_epochs, where);
  read(j, "negative_sample_rate", u.negative_sample_rate, where);
  read(j, "learning_rate", u.learning_rate, where);
  read(j, "repulsion_strength", u.repulsion_strength, where);
  require(u.n_neighbors >= 2, where + ".n_neighbors must be at least 2");
  require(u.n_components >= 2, where + ".n_components must be at least 2");
  require(u.min_dist >= 0.0 && u.spread > 0.0 && u.min_dist <= u.spread,
          where + ": need 0 <= min_dist <= spread and spread > 0");
  require(u.n_epochs >= 1, where + ".n_epochs must be positive");
  require(u.negative_sample_rate >= 0.0 && u.learning_rate > 0.0 && u.repulsion_strength >= 0.0,
          where + ": sampling rate, learning rate and repulsion must be non-negative");
}

void read_vocab(const json& j, VocabOptions& v, const std::string& where) {
  read(j, "max_df", v.max_df, where);
  if (j.contains("max_features")) {
    if (j.at("max_features").is_null()) {
      v.max_features.reset();
    } else {
      std::size_t m = 0;
      read(j, "max_features", m, where);
      require(m >= 1, where + ".max_features must be positive");
      v.max_features = m;
    }
  }
  require(v.max_df > 0.0 && v.max_df <= 1.0, where + ".max_df must be in (0, 1]");
}

void read_hdbscan(const json& j, HdbscanConfig& h, const std::string& where) {
  read(j, "min_cluster_size", h.min_cluster_size, where);
  read(j, "min_samples", h.min_samples, where);
  require(h.min_cluster_size >= 2, where + ".min_cluster_size must be at least 2");
  require(h.min_samples >= 1, where + ".min_samples must be positive");
}

void read_kmeans(const json& j, KmeansConfig& k, const std::string& where) {
  read(j, "kmeans_max_iter", k.max_iter, where);
  read(j, "kmeans_tol", k.tol, where);
  read(j, "kmeans_n_init", k.n_init, where);
  require(k.max_iter >= 1 && k.tol >= 0.0 && k.n_init >= 1,
          where + ": k-means needs max_iter >= 1, tol >= 0 and n_init >= 1");
}

GridRow read_grid_row(const json& j, const std::string& where) {
  check_object(j, where, {"embedding", "algorithm", "dimred", "scope", "noise_mode"});
  std::string embedding = "tfidf";
  std::string algorithm = "hdbscan";
  std::string dimred = "none";
  std::string scope = "within_topic";
  std::string noise = "single_cluster";
  read(j, "embedding", embedding, where);
  read(j, "algorithm", algorithm, where);
  read(j, "dimred", dimred, where);
  read(j, "scope", scope, where);
  read(j, "noise_mode", noise, where);

  GridRow row;
  row.config.embedding = translate(where, [&] { return embedding_kind_from_string(embedding); });
  require(row.config.embedding != EmbeddingKind::kHashTest, where + ": embedding must be tfidf, bert_cls or bert_avg");
  require(algorithm == "kmeans" || algorithm == "hdbscan", where + ": unknown algorithm '" + algorithm + "'");
  row.config.algorithm = algorithm == "kmeans" ? ClusterAlgorithm::kKmeans : ClusterAlgorithm::kHdbscan;
  require(dimred == "none" || dimred == "umap", where + ": unknown dimred '" + dimred + "'");
  row.config.dimred = dimred == "none" ? DimReduction::kNone : DimReduction::kUmap;
  require(scope == "within_topic" || scope == "across_topics", where + ": unknown scope '" + scope + "'");
  row.config.scope = scope == "within_topic" ? TfidfScope::kWithinTopic : TfidfScope::kAcrossTopics;
  row.noise_mode = noise_mode_from_string(noise);
  require(row.noise_mode != NoiseMode::kSingletons, where + ": noise_mode must be single_cluster or exclude");

  const auto reference = reference_grid();
  row.in_reference_grid = std::any_of(reference.begin(), reference.end(), [&](const GridRow& r) {
    return r.config == row.config && r.noise_mode == row.noise_mode;
  });
  return row;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Stage helpers
// ---------------------------------------------------------------------------

std::vector<Tokens> corpus_tokens(const Corpus& corpus) {
  std::vector<Tokens> docs;
  docs.reserve(corpus.documents.size());
  for (const auto& d : corpus.documents) docs.push_back(tokenize(document_text(d)));
  return docs;
}

// max_df can prune every term of a tiny corpus; fall back to no df ceiling.
Vocabulary build_vocab_lenient(std::span<const Tokens> docs, VocabOptions options) {
  try {
    return build_vocab(docs, options);
  } catch (const DataError&) {
    if (options.max_df >= 1.0) throw;
    options.max_df = 1.0;
    return build_vocab(docs, options);
  }
}

Eigen::MatrixXd maybe_umap(const Eigen::MatrixXd& x, UmapConfig umap, std::uint64_t seed) {
  umap.n_neighbors = std::min<Eigen::Index>(umap.n_neighbors, x.rows() - 1);
  if (umap.n_neighbors < 2) return x;
  umap.seed = seed;
  return umap_fit_transform(x, umap);
}

json eval_json(const ClusteringEval& e, NoiseMode mode) {
  json j = to_json(e);
  j["noise_mode"] = to_string(mode);
  return j;
}

json config_json(const AspectConfig& c) {
  return {{"embedding", to_string(c.embedding)},
          {"algorithm", to_string(c.algorithm)},
          {"dimred", to_string(c.dimred)},
          {"scope", c.embedding == EmbeddingKind::kTfidf ? to_string(c.scope) : std::string("-")}};
}

std::vector<std::vector<BioTag>> gold_tags(std::span<const LabeledSequence> seqs) {
  std::vector<std::vector<BioTag>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(s.tags);
  return out;
}

std::vector<Document> tagged_only(const Corpus& c) {
  std::vector<Document> out;
  for (const auto& d : c.documents) {
    if (d.tagged()) out.push_back(d);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

std::string to_string(TopicModel model) {
  switch (model) {
    case TopicModel::kArgmaxTfidf: return "argmax_tfidf";
    case TopicModel::kArgmaxLsa: return "argmax_lsa";
    case TopicModel::kKmeansTfidf: return "kmeans_tfidf";
    case TopicModel::kHdbscanTfidf: return "hdbscan_tfidf";
    case TopicModel::kHdbscanUmap: return "hdbscan_umap";
    case TopicModel::kHdbscanLsaUmap: return "hdbscan_lsa_umap";
  }
  return "?";
}

TopicModel topic_model_from_string(std::string_view s) {
  for (TopicModel m : {TopicModel::kArgmaxTfidf, TopicModel::kArgmaxLsa, TopicModel::kKmeansTfidf,
                       TopicModel::kHdbscanTfidf, TopicModel::kHdbscanUmap, TopicModel::kHdbscanLsaUmap}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown topic model '" + std::string(s) + "'");
}

std::string to_string(SegmentModel model) {
  switch (model) {
    case SegmentModel::kBiLstm: return "bilstm";
    case SegmentModel::kFnn: return "fnn";
    case SegmentModel::kMajority: return "majority";
  }
  return "?";
}

SegmentModel segment_model_from_string(std::string_view s) {
  if (s == "bilstm") return SegmentModel::kBiLstm;
  if (s == "fnn") return SegmentModel::kFnn;
  if (s == "majority") return SegmentModel::kMajority;
  throw ConfigError("unknown segmentation model '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

PipelineConfig parse_pipeline_config(const json& j, const fs::path& base_dir) {
  check_object(j, "config", {"corpus", "output_dir", "seed", "split", "embeddings", "stages", "topics",
                             "segment", "argclust"});
  PipelineConfig cfg;
  const auto corpus = read_path(j, "corpus", base_dir, "config");
  require(corpus.has_value(), "config.corpus is required");
  cfg.corpus = *corpus;
  cfg.output_dir = read_path(j, "output_dir", base_dir, "config").value_or(base_dir / cfg.output_dir);
  read(j, "seed", cfg.seed, "config");

  if (j.contains("split")) {
    const json& s = j.at("split");
    check_object(s, "split", {"test_frac", "val_frac", "path"});
    read(s, "test_frac", cfg.test_frac, "split");
    read(s, "val_frac", cfg.val_frac, "split");
    cfg.split = read_path(s, "path", base_dir, "split");
    require(cfg.test_frac > 0.0 && cfg.test_frac < 1.0, "split.test_frac must be in (0, 1)");
    require(cfg.val_frac >= 0.0 && cfg.val_frac < 1.0, "split.val_frac must be in [0, 1)");
  }

  if (j.contains("embeddings")) {
    const json& e = j.at("embeddings");
    require(e.is_object(), "embeddings: expected an object");
    for (const auto& item : e.items()) {
      const std::string where = "embeddings." + item.key();
      const EmbeddingKind kind = translate(where, [&] { return embedding_kind_from_string(item.key()); });
      require(kind != EmbeddingKind::kTfidf, where + ": tf-idf is computed, not configured");
      check_object(item.value(), where, {"path", "hash_dim"});
      EmbeddingSource src;
      src.path = read_path(item.value(), "path", base_dir, where);
      read(item.value(), "hash_dim", src.hash_dim, where);
      require(src.path.has_value() != (src.hash_dim > 0), where + ": give exactly one of path or hash_dim");
      require(src.path.has_value() || src.hash_dim >= 8, where + ".hash_dim must be at least 8");
      cfg.embeddings[kind] = src;
    }
  }

  if (j.contains("stages")) {
    const json& s = j.at("stages");
    require(s.is_array(), "stages: expected an array");
    cfg.stages.clear();
    for (const auto& st : s) {
      require(st.is_string(), "stages: expected strings");
      const auto name = st.get<std::string>();
      require(name == "topics" || name == "segment" || name == "argclust", "stages: unknown stage '" + name + "'");
      require(std::find(cfg.stages.begin(), cfg.stages.end(), name) == cfg.stages.end(),
              "stages: duplicate stage '" + name + "'");
      cfg.stages.push_back(name);
    }
    require(!cfg.stages.empty(), "stages: no stages selected");
  }

  if (j.contains("topics")) {
    const json& t = j.at("topics");
    const std::string w = "topics";
    check_object(t, w, {"model", "max_df", "max_features", "argmax_max_features", "lsa_dims", "k",
                        "kmeans_max_iter", "kmeans_tol", "kmeans_n_init", "min_cluster_size", "min_samples",
                        "umap", "noise_mode", "top_terms", "queries"});
    auto& tc = cfg.topics;
    std::string model = to_string(tc.model);
    read(t, "model", model, w);
    tc.model = topic_model_from_string(model);
    read_vocab(t, tc.vocab, w);
    read(t, "argmax_max_features", tc.argmax_max_features, w);
    read(t, "lsa_dims", tc.lsa_dims, w);
    if (t.contains("k")) {
      Eigen::Index k = 0;
      read(t, "k", k, w);
      require(k >= 1, "topics.k must be positive");
      tc.k = k;
    }
    read_kmeans(t, tc.kmeans, w);
    read_hdbscan(t, tc.hdbscan, w);
    if (t.contains("umap")) read_umap(t.at("umap"), tc.umap, "topics.umap");
    std::string noise = to_string(tc.noise_mode);
    read(t, "noise_mode", noise, w);
    tc.noise_mode = noise_mode_from_string(noise);
    read(t, "top_terms", tc.top_terms, w);
    if (t.contains("queries")) {
      const json& q = t.at("queries");
      require(q.is_array(), "topics.queries: expected an array of strings");
      for (const auto& s : q) {
        require(s.is_string(), "topics.queries: expected an array of strings");
        tc.queries.push_back(s.get<std::string>());
      }
    }
    require(tc.argmax_max_features >= 1 && tc.lsa_dims >= 1 && tc.top_terms >= 1,
            "topics: argmax_max_features, lsa_dims and top_terms must be positive");
  }

  if (j.contains("segment")) {
    const json& s = j.at("segment");
    const std::string w = "segment";
    check_object(s, w, {"model", "embedding", "hidden", "epochs", "lr", "epsilon", "gamma", "alpha",
                        "clip_norm", "train_corpus", "test_corpus"});
    auto& sc = cfg.segment;
    std::string model = to_string(sc.model);
    read(s, "model", model, w);
    sc.model = segment_model_from_string(model);
    std::string emb = to_string(sc.embedding);
    read(s, "embedding", emb, w);
    sc.embedding = translate("segment.embedding", [&] { return embedding_kind_from_string(emb); });
    require(sc.embedding != EmbeddingKind::kTfidf, "segment.embedding must name a sentence embedding");
    read(s, "hidden", sc.train.hidden, w);
    read(s, "epochs", sc.train.epochs, w);
    read(s, "lr", sc.train.lr, w);
    read(s, "epsilon", sc.train.epsilon, w);
    read(s, "gamma", sc.train.focal.gamma, w);
    read(s, "alpha", sc.train.focal.alpha, w);
    read(s, "clip_norm", sc.train.clip_norm, w);
    sc.train_corpus = read_path(s, "train_corpus", base_dir, w);
    sc.test_corpus = read_path(s, "test_corpus", base_dir, w);
    require(sc.train.hidden >= 1 && sc.train.epochs >= 1, "segment: hidden and epochs must be positive");
    require(sc.train.lr > 0.0 && sc.train.epsilon > 0.0, "segment: lr and epsilon must be positive");
    require(sc.train.focal.gamma >= 0.0 && sc.train.focal.alpha >= 0.0 && sc.train.focal.alpha <= 1.0,
            "segment: need gamma >= 0 and alpha in [0, 1]");
    require(sc.train.clip_norm >= 0.0, "segment.clip_norm must be non-negative");
  }

  if (j.contains("argclust")) {
    const json& a = j.at("argclust");
    const std::string w = "argclust";
    check_object(a, w, {"grid", "source", "eval_topics", "max_df", "max_features", "normalize_embeddings",
                        "umap", "min_cluster_size", "min_samples", "kmeans_max_iter", "kmeans_tol",
                        "kmeans_n_init"});
    auto& ac = cfg.argclust;
    if (a.contains("grid")) {
      const json& g = a.at("grid");
      if (g.is_string()) {
        const auto name = g.get<std::string>();
        require(name == "reference" || name == "full", "argclust.grid: expected reference, full or a list");
        ac.grid = name == "reference" ? reference_grid() : full_grid();
      } else {
        require(g.is_array(), "argclust.grid: expected reference, full or a list");
        ac.grid.clear();
        for (std::size_t i = 0; i < g.size(); ++i) {
          ac.grid.push_back(read_grid_row(g[i], "argclust.grid[" + std::to_string(i) + "]"));
        }
        require(!ac.grid.empty(), "argclust.grid: no configurations");
      }
    }
    std::string source = "gold";
    read(a, "source", source, w);
    require(source == "gold" || source == "segmented", "argclust.source must be gold or segmented");
    ac.source = source == "gold" ? ArgumentSource::kGold : ArgumentSource::kSegmented;
    std::string eval = "test";
    read(a, "eval_topics", eval, w);
    require(eval == "test" || eval == "all", "argclust.eval_topics must be test or all");
    ac.eval_topics = eval == "test" ? EvalTopics::kTest : EvalTopics::kAll;
    read_vocab(a, ac.settings.vocab, w);
    read(a, "normalize_embeddings", ac.settings.normalize_embeddings, w);
    if (a.contains("umap")) read_umap(a.at("umap"), ac.settings.umap, "argclust.umap");
    read_hdbscan(a, ac.settings.hdbscan, w);
    read_kmeans(a, ac.settings.kmeans, w);
  }

  // Cross-checks and referenced files.
  const auto has_stage = [&](std::string_view s) {
    return std::find(cfg.stages.begin(), cfg.stages.end(), s) != cfg.stages.end();
  };
  const auto need_file = [](const fs::path& p, const std::string& what) {
    require(fs::is_regular_file(p), what + ": file not found: " + p.string());
  };
  need_file(cfg.corpus, "corpus");
  if (cfg.split) need_file(*cfg.split, "split.path");
  for (const auto& [kind, src] : cfg.embeddings) {
    if (src.path) need_file(*src.path, "embeddings." + to_string(kind));
  }
  if (has_stage("segment")) {
    if (cfg.segment.train_corpus) need_file(*cfg.segment.train_corpus, "segment.train_corpus");
    if (cfg.segment.test_corpus) need_file(*cfg.segment.test_corpus, "segment.test_corpus");
    if (cfg.segment.model != SegmentModel::kMajority) {
      require(cfg.embeddings.contains(cfg.segment.embedding),
              "segment.embedding '" + to_string(cfg.segment.embedding) + "' has no entry under embeddings");
    }
    if (!cfg.segment.train_corpus) {
      require(cfg.val_frac > 0.0, "segment needs validation topics: split.val_frac must be positive");
    }
  }
  if (has_stage("argclust")) {
    for (const auto& row : cfg.argclust.grid) {
      const auto kind = row.config.embedding;
      if (kind != EmbeddingKind::kTfidf) {
        require(cfg.embeddings.contains(kind),
                "argclust.grid uses '" + to_string(kind) + "' which has no entry under embeddings");
      }
    }
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_pipeline_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Topic clustering
// ---------------------------------------------------------------------------

std::string document_text(const Document& doc) {
  std::string out = doc.title;
  for (const auto& s : doc.sentences) {
    if (!out.empty()) out += ' ';
    out += s.text;
  }
  return out;
}

std::vector<ClusterTerms> cluster_terms(const Eigen::MatrixXd& tfidf, const Vocabulary& vocab,
                                        const ClusterAssignment& assignment, std::size_t top_n) {
  if (static_cast<std::size_t>(tfidf.rows()) != assignment.labels.size()) {
    throw DataError("cluster_terms: row count does not match the assignment");
  }
  std::vector<int> ids(static_cast<std::size_t>(assignment.n_clusters));
  std::iota(ids.begin(), ids.end(), 0);
  if (assignment.noise_count() > 0) ids.push_back(kNoiseId);

  std::vector<ClusterTerms> out;
  for (int id : ids) {
    ClusterTerms ct;
    ct.cluster = id;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(tfidf.cols());
    for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
      if (assignment.labels[i] != id) continue;
      mean += tfidf.row(static_cast<Eigen::Index>(i)).transpose();
      ++ct.size;
    }
    if (ct.size > 0) mean /= static_cast<double>(ct.size);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(mean.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return mean(a) > mean(b); });
    for (Eigen::Index t : order) {
      if (ct.terms.size() >= top_n || mean(t) <= 0.0) break;
      ct.terms.emplace_back(vocab.terms[static_cast<std::size_t>(t)], mean(t));
    }
    out.push_back(std::move(ct));
  }
  return out;
}

namespace {

struct TopicFeatures {
  Vocabulary vocab;
  Eigen::MatrixXd tfidf;
  ClusterAssignment assignment;
};

TopicFeatures topic_features(const Corpus& corpus, const TopicStageConfig& config, std::uint64_t seed) {
  if (corpus.documents.empty()) throw DataError("topic clustering needs at least one document");
  const auto docs = corpus_tokens(corpus);
  const auto n = static_cast<Eigen::Index>(docs.size());
  TopicFeatures f;

  VocabOptions vopt = config.vocab;
  if (config.model == TopicModel::kArgmaxTfidf) vopt.max_features = config.argmax_max_features;
  f.vocab = build_vocab_lenient(docs, vopt);
  f.tfidf = tfidf_matrix(docs, f.vocab);

  const auto lsa = [&] {
    const Eigen::Index k = std::min({config.lsa_dims, n, static_cast<Eigen::Index>(f.vocab.size())});
    LsaOptions opt;
    opt.seed = derive_seed(seed, "lsa");
    return lsa_transform(lsa_fit(f.tfidf, k, opt), f.tfidf);
  };
  HdbscanConfig hc = config.hdbscan;
  hc.min_cluster_size = std::min(hc.min_cluster_size, n);
  hc.min_samples = std::min(hc.min_samples, n);

  switch (config.model) {
    case TopicModel::kArgmaxTfidf:
      f.assignment = argmax_label(f.tfidf);
      break;
    case TopicModel::kArgmaxLsa:
      f.assignment = argmax_label(lsa().cwiseAbs());
      break;
    case TopicModel::kKmeansTfidf: {
      KmeansConfig km = config.kmeans;
      km.k = std::min<Eigen::Index>(config.k.value_or(static_cast<Eigen::Index>(corpus.topics().size())), n);
      km.seed = derive_seed(seed, "kmeans");
      f.assignment = kmeans(f.tfidf, km).assignment;
      break;
    }
    case TopicModel::kHdbscanTfidf:
      f.assignment = hdbscan(f.tfidf, hc).assignment;
      break;
    case TopicModel::kHdbscanUmap:
      f.assignment = hdbscan(maybe_umap(f.tfidf, config.umap, derive_seed(seed, "umap")), hc).assignment;
      break;
    case TopicModel::kHdbscanLsaUmap:
      f.assignment = hdbscan(maybe_umap(lsa(), config.umap, derive_seed(seed, "umap")), hc).assignment;
      break;
  }
  return f;
}

}  // namespace

ClusterAssignment cluster_topics(const Corpus& corpus, const TopicStageConfig& config, std::uint64_t seed) {
  return topic_features(corpus, config, seed).assignment;
}

std::vector<RankedCluster> query_topics(std::string_view query, const ClusterAssignment& assignment,
                                        const Corpus& corpus, const VocabOptions& vocab_options) {
  if (assignment.labels.size() != corpus.documents.size()) {
    throw DataError("query: assignment does not match the corpus");
  }
  const Tokens q = tokenize(query);
  if (q.empty() || corpus.documents.empty()) return {};
  const auto docs = corpus_tokens(corpus);
  Vocabulary vocab;
  try {
    vocab = build_vocab(docs, vocab_options);
  } catch (const DataError&) {
    return {};
  }
  const Eigen::MatrixXd x = tfidf_matrix(docs, vocab);

  std::set<std::size_t> terms;
  for (const auto& t : q) {
    if (auto idx = vocab.index_of(t)) terms.insert(*idx);
  }
  std::vector<RankedCluster> clusters(static_cast<std::size_t>(assignment.n_clusters));
  for (std::size_t c = 0; c < clusters.size(); ++c) clusters[c].cluster = static_cast<int>(c);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const int l = assignment.labels[i];
    if (l == kNoiseId) continue;
    auto& rc = clusters[static_cast<std::size_t>(l)];
    rc.doc_ids.push_back(corpus.documents[i].doc_id);
    for (std::size_t t : terms) rc.score += x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
  }
  std::erase_if(clusters, [](const RankedCluster& c) { return !(c.score > 0.0); });
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const RankedCluster& a, const RankedCluster& b) { return a.score > b.score; });
  return clusters;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {}

fs::path Pipeline::stage_dir(std::string_view stage) const {
  fs::path dir = config_.output_dir / stage;
  fs::create_directories(dir);
  return dir;
}

const Corpus& Pipeline::corpus() {
  if (!corpus_) corpus_ = load_corpus(config_.corpus);
  return *corpus_;
}

const SplitSpec& Pipeline::split() {
  if (!split_) {
    if (config_.split) {
      split_ = load_split(*config_.split);
    } else if (fs::is_regular_file(split_sidecar_path(config_.corpus))) {
      split_ = load_split(split_sidecar_path(config_.corpus));
    } else {
      split_ = split_by_topic(corpus(), config_.test_frac, config_.val_frac, derive_seed(config_.seed, "split"));
    }
    const auto topics = corpus().topics();
    for (const auto* side : {&split_->train, &split_->val, &split_->test}) {
      for (const auto& t : *side) {
        if (!topics.contains(t)) throw DataError("split names unknown topic '" + t + "'");
      }
    }
    fs::create_directories(config_.output_dir);
    save_split(*split_, config_.output_dir / "split.json");
  }
  return *split_;
}

EmbeddingSet Pipeline::embeddings(EmbeddingKind kind, const Corpus& c) {
  const auto it = config_.embeddings.find(kind);
  if (it == config_.embeddings.end()) {
    throw ConfigError("no embeddings configured for " + to_string(kind));
  }
  std::vector<std::string> ids;
  std::vector<std::string> texts;
  for (const auto& d : c.documents) {
    for (std::size_t i = 0; i < d.sentences.size(); ++i) {
      ids.push_back(sentence_id(d, i));
      texts.push_back(d.sentences[i].text);
    }
  }
  const EmbeddingSource& src = it->second;
  if (src.hash_dim > 0) {
    Eigen::MatrixXd v = hash_embed(texts, src.hash_dim, derive_seed(config_.seed, "embed/" + to_string(kind)));
    return make_embedding_set(kind, std::move(ids), std::move(v));
  }
  if (!loaded_.contains(kind)) loaded_.emplace(kind, load_embeddings(*src.path, {}));
  const EmbeddingSet& all = loaded_.at(kind);
  return make_embedding_set(kind, ids, all.gather(ids));
}

TopicStageResult Pipeline::run_topics() {
  const Corpus& c = corpus();
  const TopicStageConfig& tc = config_.topics;
  const std::uint64_t seed = derive_seed(config_.seed, "topics");
  TopicFeatures f = topic_features(c, tc, seed);

  TopicStageResult r;
  r.assignment = f.assignment;
  std::vector<std::string> gold;
  for (const auto& d : c.documents) gold.push_back(d.topic);
  const Labels truth = encode_labels(gold);
  if (truth.size() >= 2) {
    r.eval = evaluate_clustering(truth, r.assignment.labels, tc.noise_mode);
    if (r.assignment.noise_count() < truth.size()) {
      r.eval_without_noise = evaluate_clustering(truth, r.assignment.labels, NoiseMode::kExclude);
    }
  }
  r.terms = cluster_terms(f.tfidf, f.vocab, r.assignment, tc.top_terms);

  const fs::path dir = stage_dir("topics");
  json labels = json::object();
  for (std::size_t i = 0; i < c.documents.size(); ++i) labels[c.documents[i].doc_id] = r.assignment.labels[i];
  io::write_text(dir / "assignments.json",
                 dump({{"model", to_string(tc.model)},
                       {"n_clusters", r.assignment.n_clusters},
                       {"noise_id", kNoiseId},
                       {"labels", labels}}));

  json eval = {{"model", to_string(tc.model)}, {"n_documents", c.documents.size()}, {"n_topics", c.topics().size()}};
  if (truth.size() >= 2) {
    eval["with_noise"] = eval_json(r.eval, tc.noise_mode);
    eval["without_noise"] = r.eval_without_noise ? eval_json(*r.eval_without_noise, NoiseMode::kExclude) : json();
  }
  io::write_text(dir / "eval.json", dump(eval));

  json terms = json::array();
  for (const auto& ct : r.terms) {
    json t = json::array();
    for (const auto& [term, w] : ct.terms) t.push_back({{"term", term}, {"weight", w}});
    terms.push_back({{"cluster", ct.cluster}, {"size", ct.size}, {"terms", t}});
  }
  io::write_text(dir / "terms.json", dump(terms));

  if (!tc.queries.empty()) {
    json queries = json::array();
    for (const auto& q : tc.queries) {
      json ranked = json::array();
      for (const auto& rc : query_topics(q, r.assignment, c, VocabOptions{})) {
        ranked.push_back({{"cluster", rc.cluster}, {"score", rc.score}, {"documents", rc.doc_ids}});
      }
      queries.push_back({{"query", q}, {"clusters", ranked}});
    }
    io::write_text(dir / "queries.json", dump(queries));
  }
  return r;
}

SegmentStageResult Pipeline::run_segment() {
  const SegmentStageConfig& sc = config_.segment;
  const Corpus& main = corpus();

  Corpus train_c;
  Corpus val_c;
  if (sc.train_corpus) {
    const Corpus tc = load_corpus(*sc.train_corpus);
    const double val_frac = config_.val_frac > 0.0 ? config_.val_frac : 0.15;
    const SplitSpec s = split_by_topic(tc, val_frac, 0.0, derive_seed(config_.seed, "segment/split"));
    train_c = select(tc, s.train);
    val_c = select(tc, s.test);
  } else {
    const SplitSpec& s = split();
    train_c = select(main, s.train);
    val_c = select(main, s.val);
  }
  Corpus test_c = sc.test_corpus ? load_corpus(*sc.test_corpus) : select(main, split().test);
  train_c.documents = tagged_only(train_c);
  val_c.documents = tagged_only(val_c);
  test_c.documents = tagged_only(test_c);
  if (train_c.documents.empty()) throw DataError("segment: no tagged training documents");
  if (test_c.documents.empty()) throw DataError("segment: no tagged test documents");

  SegmentStageResult r;
  const fs::path dir = stage_dir("segment");
  json report = {{"model", to_string(sc.model)},
                 {"n_train_documents", train_c.documents.size()},
                 {"n_val_documents", val_c.documents.size()},
                 {"n_test_documents", test_c.documents.size()}};

  std::vector<std::vector<BioTag>> truth;
  std::vector<std::vector<BioTag>> pred;
  r.segmented = main;
  r.segmented.name = main.name + ".segmented";

  if (sc.model == SegmentModel::kMajority) {
    std::vector<LabeledSequence> train_seqs;
    for (const auto& d : train_c.documents) {
      LabeledSequence s;
      s.doc_id = d.doc_id;
      for (const auto& sen : d.sentences) s.tags.push_back(*sen.bio);
      train_seqs.push_back(std::move(s));
    }
    const BioTag tag = majority_baseline(train_seqs);
    report["majority_tag"] = std::string(1, to_char(tag));
    for (const auto& d : test_c.documents) {
      std::vector<BioTag> t;
      for (const auto& s : d.sentences) t.push_back(*s.bio);
      truth.push_back(std::move(t));
      pred.emplace_back(d.sentences.size(), tag);
    }
    for (auto& d : r.segmented.documents) {
      const auto tags = repair_tags(std::vector<BioTag>(d.sentences.size(), tag));
      for (std::size_t i = 0; i < d.sentences.size(); ++i) {
        d.sentences[i].bio = tags[i];
        d.sentences[i].aspect.reset();
      }
    }
  } else {
    if (val_c.documents.empty()) throw DataError("segment: no tagged validation documents");
    const auto seqs = [&](const Corpus& c, bool tags) {
      return prepare_sequences(c, embeddings(sc.embedding, c), tags);
    };
    const auto train_seqs = seqs(train_c, true);
    const auto val_seqs = seqs(val_c, true);
    const auto test_seqs = seqs(test_c, true);

    TrainConfig tcfg = sc.train;
    tcfg.kind = sc.model == SegmentModel::kBiLstm ? ModelKind::kBiLstm : ModelKind::kFnn;
    tcfg.seed = derive_seed(config_.seed, "segment");
    TrainResult tr = train(train_seqs, val_seqs, tcfg);
    save_checkpoint(tr.params, dir / "model.ckpt");
    io::write_text(dir / "loss_trace.csv", loss_trace_csv(tr.trace));
    report["embedding"] = to_string(sc.embedding);
    report["best_epoch"] = tr.best_epoch;
    report["best_val_loss"] = tr.best_val_loss;

    truth = gold_tags(test_seqs);
    for (const auto& s : test_seqs) pred.push_back(predict_tags(tr.params, s.features));

    const auto all_seqs = seqs(main, false);
    for (std::size_t d = 0; d < all_seqs.size(); ++d) {
      const auto tags = repair_tags(predict_tags(tr.params, all_seqs[d].features));
      auto& doc = r.segmented.documents[d];
      for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
        doc.sentences[i].bio = tags[i];
        doc.sentences[i].aspect.reset();
      }
    }
    r.training = std::move(tr);
  }

  r.eval = tagging_eval(truth, pred);
  report["eval"] = to_json(r.eval);
  io::write_text(dir / "eval.json", dump(report));
  save_corpus(r.segmented, dir / "segmented.jsonl");
  return r;
}

ArgclustStageResult Pipeline::run_argclust() {
  const ArgclustStageConfig& ac = config_.argclust;
  if (ac.grid.empty()) throw ConfigError("argclust: no configurations");
  const Corpus& gold = corpus();

  Corpus base;
  if (ac.source == ArgumentSource::kGold) {
    base = gold;
  } else {
    const fs::path seg = config_.output_dir / "segment" / "segmented.jsonl";
    if (!fs::is_regular_file(seg)) throw DataError("argclust: segmented corpus not found at " + seg.string());
    base = load_corpus(seg);
    std::map<std::string, const Document*> by_id;
    for (const auto& d : gold.documents) by_id[d.doc_id] = &d;
    for (auto& d : base.documents) {
      const auto it = by_id.find(d.doc_id);
      if (it == by_id.end() || it->second->sentences.size() != d.sentences.size()) {
        throw DataError("argclust: segmented document '" + d.doc_id + "' does not match the corpus");
      }
      for (std::size_t i = 0; i < d.sentences.size(); ++i) d.sentences[i].aspect = it->second->sentences[i].aspect;
    }
  }

  ArgclustStageResult r;
  std::vector<Argument> args = extract_arguments(base);
  if (ac.source == ArgumentSource::kSegmented) {
    // Predicted spans lying entirely on gold O sentences have nothing to score against.
    const auto unlabelled = std::remove_if(args.begin(), args.end(), [](const Argument& a) { return !a.aspect; });
    r.unlabelled_arguments = static_cast<std::size_t>(args.end() - unlabelled);
    args.erase(unlabelled, args.end());
  }
  std::map<std::string, std::vector<Argument>> by_topic;
  for (const auto& a : args) by_topic[a.topic].push_back(a);

  std::vector<std::string> usable;
  for (const auto& [topic, list] : by_topic) {
    if (list.size() < 2) {
      r.skipped_topics.push_back(topic);
    } else {
      usable.push_back(topic);
    }
  }

  const SplitSpec& s = split();
  const auto aspect_count = [](const std::vector<Argument>& list) {
    std::set<std::string> a;
    for (const auto& x : list) {
      if (x.aspect) a.insert(*x.aspect);
    }
    return static_cast<double>(a.size());
  };
  std::vector<std::pair<double, double>> points;
  for (const auto& t : s.train) {
    const auto it = by_topic.find(t);
    if (it != by_topic.end()) points.emplace_back(static_cast<double>(it->second.size()), aspect_count(it->second));
  }
  try {
    r.regression = fit_k_regression(points);
  } catch (const DataError&) {
    // Too few or identical argument counts: predict the mean aspect count.
    r.regression_fallback = true;
    r.regression.slope = 0.0;
    r.regression.intercept = 1.0;
    if (!points.empty()) {
      double sum = 0.0;
      for (const auto& p : points) sum += p.second;
      r.regression.intercept = sum / static_cast<double>(points.size());
    }
  }

  std::vector<std::string> eval_topics;
  for (const auto& t : usable) {
    if (ac.eval_topics == EvalTopics::kAll || s.test.contains(t)) eval_topics.push_back(t);
  }
  if (eval_topics.empty()) throw DataError("argclust: no topics with at least two arguments to evaluate");

  ArgclustSettings settings = ac.settings;
  settings.seed = derive_seed(config_.seed, "argclust");

  std::vector<AspectConfig> configs;
  for (const auto& row : ac.grid) {
    if (std::find(configs.begin(), configs.end(), row.config) == configs.end()) configs.push_back(row.config);
  }
  const auto uses = [&](auto pred) { return std::any_of(configs.begin(), configs.end(), pred); };

  std::optional<Vocabulary> across;
  std::optional<EmbeddingSet> cls;
  std::optional<EmbeddingSet> avg;
  if (uses([](const AspectConfig& c) { return c.embedding == EmbeddingKind::kTfidf && c.scope == TfidfScope::kAcrossTopics; })) {
    across = build_across_vocab(args, settings.vocab);
  }
  if (uses([](const AspectConfig& c) { return c.embedding == EmbeddingKind::kBertCls; })) {
    cls = embeddings(EmbeddingKind::kBertCls, base);
  }
  if (uses([](const AspectConfig& c) { return c.embedding == EmbeddingKind::kBertAvg; })) {
    avg = embeddings(EmbeddingKind::kBertAvg, base);
  }
  ArgumentFeatures features;
  features.across_vocab = across ? &*across : nullptr;
  features.bert_cls = cls ? &*cls : nullptr;
  features.bert_avg = avg ? &*avg : nullptr;

  for (const auto& topic : eval_topics) {
    for (const auto& c : configs) {
      r.runs.push_back(cluster_topic_arguments(topic, by_topic.at(topic), c, r.regression, features, settings));
    }
  }
  r.table = aggregate_runs(r.runs, ac.grid);

  const fs::path dir = stage_dir("argclust");
  io::write_text(dir / "aggregate.csv", aggregate_csv(r.table));
  json rows = json::array();
  for (const auto& row : r.table) {
    json j = config_json(row.row.config);
    j["noise_mode"] = to_string(row.row.noise_mode);
    j["in_reference_grid"] = row.row.in_reference_grid;
    j["n_topics"] = row.n_topics;
    rows.push_back(j);
  }
  json runs = json::array();
  for (const auto& run : r.runs) {
    json j = config_json(run.config);
    j["topic"] = run.topic;
    j["n_arguments"] = run.n_arguments;
    j["n_aspects"] = run.n_aspects;
    j["n_clusters"] = run.assignment.n_clusters;
    j["with_noise"] = to_json(run.with_noise);
    j["without_noise"] = run.without_noise ? to_json(*run.without_noise) : json();
    runs.push_back(j);
  }
  io::write_text(dir / "report.json",
                 dump({{"source", ac.source == ArgumentSource::kGold ? "gold" : "segmented"},
                       {"regression",
                        {{"slope", r.regression.slope},
                         {"intercept", r.regression.intercept},
                         {"fallback", r.regression_fallback},
                         {"n_points", points.size()}}},
                       {"eval_topics", eval_topics},
                       {"skipped_topics", r.skipped_topics},
                       {"unlabelled_arguments", r.unlabelled_arguments},
                       {"rows", rows},
                       {"runs", runs}}));
  return r;
}

void Pipeline::run_all() {
  const auto started = std::chrono::system_clock::now();
  for (const auto& stage : config_.stages) {
    if (stage == "topics") run_topics();
    if (stage == "segment") run_segment();
    if (stage == "argclust") run_argclust();
  }
  const auto stamp = [](std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
  };
  fs::create_directories(config_.output_dir);
  io::write_text(config_.output_dir / "meta.json",
                 dump({{"started", stamp(started)},
                       {"finished", stamp(std::chrono::system_clock::now())},
                       {"seed", config_.seed},
                       {"stages", config_.stages}}));
}

}  // namespace argsearch
