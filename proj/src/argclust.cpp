#include "argsearch/argclust.hpp"

#include <set>

#include "argsearch/io.hpp"
#include "argsearch/seqlabel.hpp"

namespace argsearch {

std::vector<Argument> extract_arguments(const Corpus& corpus) {
  std::vector<Argument> out;
  for (const auto& doc : corpus.documents) {
    std::vector<ArgumentSpan> spans;
    if (doc.tagged()) {
      std::vector<BioTag> tags;
      for (const auto& s : doc.sentences) tags.push_back(*s.bio);
      spans = segment_arguments(repair_tags(tags));
    } else {
      spans.push_back({0, doc.sentences.size() - 1});
    }
    for (const auto& span : spans) {
      Argument arg;
      arg.id = doc.doc_id + ":" + std::to_string(span.begin) + "-" + std::to_string(span.end);
      arg.topic = doc.topic;
      std::vector<std::string> order;
      std::map<std::string, int> votes;
      for (std::size_t i = span.begin; i <= span.end; ++i) {
        const auto& s = doc.sentences[i];
        arg.sentence_ids.push_back(sentence_id(doc, i));
        if (!arg.text.empty()) arg.text += ' ';
        arg.text += s.text;
        if (s.aspect && !s.aspect->empty()) {
          if (votes[*s.aspect]++ == 0) order.push_back(*s.aspect);
        }
      }
      for (const auto& a : order) {
        if (!arg.aspect || votes[a] > votes[*arg.aspect]) arg.aspect = a;
      }
      out.push_back(std::move(arg));
    }
  }
  return out;
}

KRegression fit_k_regression(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) throw DataError("k regression needs at least two points");
  const auto n = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0) throw DataError("k regression is degenerate: all argument counts are equal");
  KRegression reg;
  reg.slope = sxy / sxx;
  reg.intercept = my - reg.slope * mx;
  return reg;
}

Eigen::Index estimate_k(const KRegression& reg, Eigen::Index n_args) {
  if (n_args < 1) throw DataError("estimate_k needs at least one argument");
  const long long k = round_half_up(reg.slope * static_cast<double>(n_args) + reg.intercept);
  return static_cast<Eigen::Index>(std::clamp<long long>(k, 1, n_args));
}

std::string to_string(ClusterAlgorithm a) { return a == ClusterAlgorithm::kKmeans ? "kmeans" : "hdbscan"; }
std::string to_string(DimReduction d) { return d == DimReduction::kNone ? "none" : "umap"; }
std::string to_string(TfidfScope s) {
  return s == TfidfScope::kWithinTopic ? "within_topic" : "across_topics";
}

std::string AspectConfig::key() const {
  return to_string(embedding) + "/" + to_string(algorithm) + "/" + to_string(dimred) + "/" +
         (embedding == EmbeddingKind::kTfidf ? to_string(scope) : std::string("-"));
}

std::vector<GridRow> reference_grid() {
  using E = EmbeddingKind;
  using A = ClusterAlgorithm;
  using D = DimReduction;
  using S = TfidfScope;
  const NoiseMode pooled = NoiseMode::kSingleCluster;
  return {
      {{E::kTfidf, A::kHdbscan, D::kUmap, S::kWithinTopic}, pooled},
      {{E::kTfidf, A::kHdbscan, D::kUmap, S::kAcrossTopics}, pooled},
      {{E::kTfidf, A::kHdbscan, D::kNone, S::kWithinTopic}, pooled},
      {{E::kTfidf, A::kKmeans, D::kNone, S::kWithinTopic}, pooled},
      {{E::kTfidf, A::kKmeans, D::kNone, S::kAcrossTopics}, pooled},
      {{E::kBertCls, A::kHdbscan, D::kUmap, S::kWithinTopic}, pooled},
      {{E::kBertCls, A::kHdbscan, D::kNone, S::kWithinTopic}, pooled},
      {{E::kBertCls, A::kKmeans, D::kNone, S::kWithinTopic}, pooled},
      {{E::kBertAvg, A::kHdbscan, D::kUmap, S::kWithinTopic}, pooled},
      {{E::kBertAvg, A::kHdbscan, D::kNone, S::kWithinTopic}, pooled},
      {{E::kBertAvg, A::kKmeans, D::kNone, S::kWithinTopic}, pooled},
      {{E::kTfidf, A::kHdbscan, D::kNone, S::kWithinTopic}, NoiseMode::kExclude},
  };
}

std::vector<GridRow> full_grid() {
  const auto reference = reference_grid();
  const auto in_reference = [&](const AspectConfig& c, NoiseMode m) {
    return std::any_of(reference.begin(), reference.end(),
                       [&](const GridRow& r) { return r.config == c && r.noise_mode == m; });
  };
  std::vector<GridRow> rows;
  for (EmbeddingKind e : {EmbeddingKind::kTfidf, EmbeddingKind::kBertCls, EmbeddingKind::kBertAvg}) {
    const std::vector<TfidfScope> scopes =
        e == EmbeddingKind::kTfidf
            ? std::vector<TfidfScope>{TfidfScope::kWithinTopic, TfidfScope::kAcrossTopics}
            : std::vector<TfidfScope>{TfidfScope::kWithinTopic};
    for (TfidfScope s : scopes) {
      for (ClusterAlgorithm a : {ClusterAlgorithm::kHdbscan, ClusterAlgorithm::kKmeans}) {
        for (DimReduction d : {DimReduction::kUmap, DimReduction::kNone}) {
          const AspectConfig c{e, a, d, s};
          rows.push_back({c, NoiseMode::kSingleCluster, in_reference(c, NoiseMode::kSingleCluster)});
        }
      }
    }
  }
  const std::size_t pooled_rows = rows.size();
  for (std::size_t i = 0; i < pooled_rows; ++i) {
    if (rows[i].config.algorithm == ClusterAlgorithm::kHdbscan) {
      rows.push_back({rows[i].config, NoiseMode::kExclude,
                      in_reference(rows[i].config, NoiseMode::kExclude)});
    }
  }
  return rows;
}

Vocabulary build_across_vocab(std::span<const Argument> arguments, const VocabOptions& options) {
  std::vector<Tokens> docs;
  docs.reserve(arguments.size());
  for (const auto& a : arguments) docs.push_back(tokenize(a.text));
  return build_vocab(docs, options);
}

Eigen::MatrixXd argument_vectors(std::span<const Argument> arguments, const AspectConfig& config,
                                 const ArgumentFeatures& features, const ArgclustSettings& settings) {
  const auto n = static_cast<Eigen::Index>(arguments.size());
  if (config.embedding == EmbeddingKind::kTfidf) {
    std::vector<Tokens> docs;
    docs.reserve(arguments.size());
    for (const auto& a : arguments) docs.push_back(tokenize(a.text));
    if (config.scope == TfidfScope::kAcrossTopics) {
      if (features.across_vocab == nullptr) throw ConfigError("across-topic tf-idf needs a corpus vocabulary");
      return tfidf_matrix(docs, *features.across_vocab);
    }
    try {
      return tfidf_matrix(docs, build_vocab(docs, settings.vocab));
    } catch (const DataError&) {
      // Nothing survives the vocabulary filters; every argument looks alike.
      return Eigen::MatrixXd::Zero(n, 1);
    }
  }

  const EmbeddingSet* set = nullptr;
  if (config.embedding == EmbeddingKind::kBertCls) set = features.bert_cls;
  if (config.embedding == EmbeddingKind::kBertAvg) set = features.bert_avg;
  if (set == nullptr) {
    throw ConfigError("no embeddings available for " + to_string(config.embedding));
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, set->dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ids = arguments[static_cast<std::size_t>(i)].sentence_ids;
    for (const auto& id : ids) out.row(i) += set->row(id);
    out.row(i) /= static_cast<double>(ids.size());
    if (settings.normalize_embeddings) {
      const double norm = out.row(i).norm();
      if (norm > 0.0) out.row(i) /= norm;
    }
  }
  return out;
}

AspectRun cluster_topic_arguments(const std::string& topic, std::span<const Argument> arguments,
                                  const AspectConfig& config, const KRegression& reg,
                                  const ArgumentFeatures& features, const ArgclustSettings& settings) {
  if (arguments.size() < 2) {
    throw DataError("topic '" + topic + "' has fewer than two arguments");
  }
  std::vector<std::string> aspects;
  for (const auto& a : arguments) {
    if (!a.aspect) throw DataError("argument '" + a.id + "' has no aspect label");
    aspects.push_back(*a.aspect);
  }
  const Labels truth = encode_labels(aspects);

  AspectRun run;
  run.topic = topic;
  run.config = config;
  run.n_arguments = arguments.size();
  run.n_aspects = std::set<std::string>(aspects.begin(), aspects.end()).size();

  Eigen::MatrixXd x = argument_vectors(arguments, config, features, settings);
  const std::uint64_t seed = derive_seed(settings.seed, "argclust/" + topic + "/" + config.key());
  if (config.dimred == DimReduction::kUmap) {
    UmapConfig umap = settings.umap;
    umap.n_neighbors = std::min<Eigen::Index>(umap.n_neighbors, x.rows() - 1);
    umap.seed = derive_seed(seed, "umap");
    // Two arguments leave no neighbourhood to calibrate; cluster raw vectors.
    if (umap.n_neighbors >= 2) x = umap_fit_transform(x, umap);
  }

  const auto n_args = static_cast<Eigen::Index>(arguments.size());
  if (config.algorithm == ClusterAlgorithm::kKmeans) {
    KmeansConfig km = settings.kmeans;
    km.k = estimate_k(reg, n_args);
    km.seed = derive_seed(seed, "kmeans");
    run.assignment = kmeans(x, km).assignment;
  } else {
    HdbscanConfig hc = settings.hdbscan;
    hc.min_cluster_size = std::min(hc.min_cluster_size, n_args);
    run.assignment = hdbscan(x, hc).assignment;
  }

  run.with_noise = evaluate_clustering(truth, run.assignment.labels, NoiseMode::kSingleCluster);
  if (run.assignment.noise_count() < arguments.size()) {
    run.without_noise = evaluate_clustering(truth, run.assignment.labels, NoiseMode::kExclude);
  }
  return run;
}

std::vector<AggregateRow> aggregate_runs(std::span<const AspectRun> runs,
                                         std::span<const GridRow> grid) {
  std::vector<AggregateRow> rows;
  for (const auto& g : grid) {
    AggregateRow row;
    row.row = g;
    for (const auto& run : runs) {
      if (!(run.config == g.config)) continue;
      const ClusteringEval* eval = nullptr;
      if (g.noise_mode == NoiseMode::kExclude) {
        if (run.without_noise) eval = &*run.without_noise;
      } else {
        eval = &run.with_noise;
      }
      if (eval == nullptr) continue;
      row.ari += eval->ari;
      row.homogeneity += eval->homogeneity;
      row.completeness += eval->completeness;
      row.bcubed_f1 += eval->bcubed_f1;
      ++row.n_topics;
    }
    if (row.n_topics > 0) {
      const auto n = static_cast<double>(row.n_topics);
      row.ari /= n;
      row.homogeneity /= n;
      row.completeness /= n;
      row.bcubed_f1 /= n;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<AggregateRow> aggregate_runs(std::span<const AspectRun> runs) {
  if (runs.empty()) throw DataError("no runs to aggregate");
  std::vector<GridRow> grid;
  std::vector<GridRow> excluded;
  std::set<std::string> seen;
  for (const auto& run : runs) {
    if (!seen.insert(run.config.key()).second) continue;
    grid.push_back({run.config, NoiseMode::kSingleCluster, false});
    if (run.config.algorithm == ClusterAlgorithm::kHdbscan) {
      excluded.push_back({run.config, NoiseMode::kExclude, false});
    }
  }
  grid.insert(grid.end(), excluded.begin(), excluded.end());
  return aggregate_runs(runs, grid);
}

std::string aggregate_csv(std::span<const AggregateRow> rows) {
  std::string out = "embedding,algorithm,dimred,scope,noise_mode,ari,ho,co,bcubed_f1,n_topics\n";
  const auto number = [&](double v, std::size_t n) { return n > 0 ? io::format_double(v) : std::string{}; };
  for (const auto& r : rows) {
    const auto& c = r.row.config;
    out += to_string(c.embedding) + "," + to_string(c.algorithm) + "," + to_string(c.dimred) + "," +
           (c.embedding == EmbeddingKind::kTfidf ? to_string(c.scope) : std::string("-")) + "," +
           to_string(r.row.noise_mode) + "," + number(r.ari, r.n_topics) + "," +
           number(r.homogeneity, r.n_topics) + "," + number(r.completeness, r.n_topics) + "," +
           number(r.bcubed_f1, r.n_topics) + "," + std::to_string(r.n_topics) + "\n";
  }
  return out;
}

}  // namespace argsearch
