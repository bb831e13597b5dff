#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "argsearch/io.hpp"
#include "argsearch/pipeline.hpp"
#include "argsearch/sentencize.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace argsearch;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base_config() {
  return {{"corpus", "corpus.jsonl"},
          {"output_dir", "out"},
          {"seed", 7},
          {"split", {{"test_frac", 0.2}, {"val_frac", 0.2}}},
          {"embeddings", {{"bert_cls", {{"hash_dim", 32}}}, {"bert_avg", {{"hash_dim", 32}}}}},
          {"topics", {{"model", "hdbscan_umap"}, {"queries", {"claimword0"}}}},
          {"segment", {{"model", "bilstm"}, {"hidden", 8}, {"epochs", 4}, {"lr", 0.05}}},
          {"argclust", {{"grid", "reference"}, {"eval_topics", "all"}}}};
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2)); }

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_text(e.path());
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ARGSEARCH_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error(const json& j, const fs::path& dir) {
  try {
    parse_pipeline_config(j, dir);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("sentencize") {
  CHECK(sentencize("Dogs bark. Cats purr! Do birds sing? Yes.") ==
        std::vector<std::string>{"Dogs bark.", "Cats purr!", "Do birds sing?", "Yes."});
  CHECK(sentencize("Mr. Smith met Dr. Jones. They talked.") ==
        std::vector<std::string>{"Mr. Smith met Dr. Jones.", "They talked."});
  CHECK(sentencize("Prices rose 3.5 percent. e.g. this one") ==
        std::vector<std::string>{"Prices rose 3.5 percent. e.g. this one"});
  CHECK(sentencize("He said \"stop.\" Then left.") == std::vector<std::string>{"He said \"stop.\"", "Then left."});
  CHECK(sentencize("first part. lower case continues") ==
        std::vector<std::string>{"first part. lower case continues"});
  CHECK(sentencize("  \n ").empty());
  CHECK(sentencize("Über alles. Ärger folgt.") == std::vector<std::string>{"Über alles.", "Ärger folgt."});
}

TEST_CASE("config validation") {
  TempDir dir;
  save_corpus(synth::aspect_corpus(5, 3, 4, 1), dir / "corpus.jsonl");
  const PipelineConfig ok = parse_pipeline_config(base_config(), dir.path());
  CHECK(ok.corpus == dir / "corpus.jsonl");
  CHECK(ok.output_dir == dir / "out");
  CHECK(ok.seed == 7);
  CHECK(ok.argclust.grid.size() == 12);
  CHECK(ok.topics.queries == std::vector<std::string>{"claimword0"});

  json j = base_config();
  j.erase("output_dir");
  CHECK(parse_pipeline_config(j, dir.path()).output_dir == dir / "out");

  j = base_config();
  j["topics"]["kmeans_n_init"] = 0;
  CHECK(!config_error(j, dir.path()).empty());

  j = base_config();
  j["bogus"] = 1;
  CHECK(config_error(j, dir.path()).find("bogus") != std::string::npos);

  j = base_config();
  j["corpus"] = "missing.jsonl";
  CHECK(!config_error(j, dir.path()).empty());

  j = base_config();
  j["topics"]["model"] = "spectral";
  CHECK(!config_error(j, dir.path()).empty());

  j = base_config();
  j["argclust"]["grid"] = json::array();
  CHECK(config_error(j, dir.path()).find("no configurations") != std::string::npos);

  j = base_config();
  j["embeddings"].erase("bert_avg");
  CHECK(config_error(j, dir.path()).find("bert_avg") != std::string::npos);

  j = base_config();
  j["segment"]["epochs"] = 0;
  CHECK(!config_error(j, dir.path()).empty());

  j = base_config();
  j["seed"] = -1;
  CHECK(!config_error(j, dir.path()).empty());

  j = base_config();
  j["argclust"]["grid"] = json::array({{{"embedding", "tfidf"}, {"algorithm", "kmeans"}, {"dimred", "none"},
                                         {"scope", "across_topics"}}});
  CHECK(parse_pipeline_config(j, dir.path()).argclust.grid.size() == 1);
}

TEST_CASE("query_topics") {
  Corpus c;
  const auto doc = [](std::string id, std::string text) {
    Document d;
    d.doc_id = std::move(id);
    d.topic = "t";
    d.sentences = {{std::move(text), {}, {}}};
    return d;
  };
  c.documents = {doc("a1", "adoption rights for couples"), doc("a2", "adoption law debate"),
                 doc("a3", "adoption agencies"), doc("a4", "parents and children"),
                 doc("a5", "mother father family"), doc("b1", "tax policy"), doc("b2", "income tax rates"),
                 doc("n1", "adoption noise")};
  ClusterAssignment a = densify({0, 0, 0, 0, 0, 1, 1, kNoiseId});
  const VocabOptions vocab{10000, 1.0};

  const auto ranked = query_topics("adoption", a, c, vocab);
  REQUIRE(ranked.size() == 1);
  CHECK(ranked[0].cluster == 0);
  CHECK(ranked[0].doc_ids == std::vector<std::string>{"a1", "a2", "a3", "a4", "a5"});
  CHECK(ranked[0].score > 0.0);

  const auto both = query_topics("tax adoption", a, c, vocab);
  REQUIRE(both.size() == 2);
  CHECK(both[0].score >= both[1].score);

  CHECK(query_topics("", a, c, vocab).empty());
  CHECK(query_topics("unicorn", a, c, vocab).empty());
}

TEST_CASE("topic clustering on vocabulary-disjoint topics") {
  const Corpus c = synth::topic_corpus(6, 10, 30, 3);
  std::vector<std::string> topics;
  for (const auto& d : c.documents) topics.push_back(d.topic);
  const Labels truth = encode_labels(topics);

  TopicStageConfig cfg;
  const ClusterAssignment hu = cluster_topics(c, cfg, 11);
  CHECK(adjusted_rand_index(truth, hu.labels) >= 0.9);
  CHECK(cluster_topics(c, cfg, 11).labels == hu.labels);

  cfg.model = TopicModel::kKmeansTfidf;
  CHECK(adjusted_rand_index(truth, cluster_topics(c, cfg, 11).labels) >= 0.9);

  for (TopicModel m : {TopicModel::kArgmaxTfidf, TopicModel::kArgmaxLsa, TopicModel::kHdbscanTfidf,
                       TopicModel::kHdbscanLsaUmap}) {
    cfg.model = m;
    CHECK(cluster_topics(c, cfg, 11).labels.size() == c.documents.size());
  }

  Corpus one;
  one.documents.push_back(c.documents[0]);
  cfg.model = TopicModel::kArgmaxTfidf;
  CHECK(cluster_topics(one, cfg, 1).n_clusters == 1);
}

TEST_CASE("cluster_terms") {
  const std::vector<Tokens> docs{{"a", "b"}, {"a", "c"}, {"x", "y"}};
  const Vocabulary v = build_vocab(docs, {100, 1.0});
  const Eigen::MatrixXd m = tfidf_matrix(docs, v);
  const auto terms = cluster_terms(m, v, densify({0, 0, kNoiseId}), 2);
  REQUIRE(terms.size() == 2);
  CHECK(terms[0].cluster == 0);
  CHECK(terms[0].size == 2);
  CHECK(terms[0].terms.size() == 2);
  CHECK(terms[1].cluster == kNoiseId);
}

TEST_CASE("pipeline end to end is deterministic") {
  TempDir dir;
  save_corpus(synth::aspect_corpus(5, 3, 4, 2), dir / "corpus.jsonl");
  json j = base_config();
  j["output_dir"] = "out1";
  Pipeline(parse_pipeline_config(j, dir.path())).run_all();
  j["output_dir"] = "out2";
  Pipeline(parse_pipeline_config(j, dir.path())).run_all();

  auto a = read_tree(dir / "out1");
  auto b = read_tree(dir / "out2");
  CHECK(a.contains("meta.json"));
  a.erase("meta.json");
  b.erase("meta.json");
  CHECK(a.size() == b.size());
  CHECK(a == b);

  for (const char* f : {"split.json", "topics/assignments.json", "topics/eval.json", "topics/terms.json",
                        "topics/queries.json", "segment/model.ckpt", "segment/loss_trace.csv",
                        "segment/eval.json", "segment/segmented.jsonl", "argclust/aggregate.csv",
                        "argclust/report.json"}) {
    CAPTURE(f);
    CHECK(a.contains(f));
  }
  const std::string csv = a["argclust/aggregate.csv"];
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);

  // The segmented corpus is a valid corpus without aspects.
  const Corpus seg = parse_corpus_jsonl(a["segment/segmented.jsonl"], "seg");
  CHECK(seg.documents.size() == 5 * 3 * 4 / 3);
  for (const auto& d : seg.documents) {
    CHECK(d.tagged());
    for (const auto& s : d.sentences) CHECK_FALSE(s.aspect.has_value());
  }
  const json eval = json::parse(a["segment/eval.json"]);
  CHECK(eval.at("eval").contains("f1_macro_BI"));

  // A different seed changes stochastic outputs.
  j["output_dir"] = "out3";
  j["seed"] = 8;
  Pipeline(parse_pipeline_config(j, dir.path())).run_all();
  CHECK(io::read_text(dir / "out3/segment/model.ckpt") != a["segment/model.ckpt"]);
}

TEST_CASE("segmented arguments feed the aspect stage") {
  TempDir dir;
  save_corpus(synth::aspect_corpus(4, 2, 3, 5), dir / "corpus.jsonl");
  json j = base_config();
  j["stages"] = {"segment", "argclust"};
  j["segment"]["model"] = "majority";
  j["argclust"]["source"] = "segmented";
  j["argclust"]["grid"] = json::array({{{"embedding", "tfidf"}, {"algorithm", "hdbscan"}, {"dimred", "none"},
                                         {"scope", "within_topic"}}});
  Pipeline p(parse_pipeline_config(j, dir.path()));
  p.run_all();
  const json report = json::parse(io::read_text(dir / "out/argclust/report.json"));
  CHECK(report.contains("unlabelled_arguments"));
  CHECK(fs::exists(dir / "out/argclust/aggregate.csv"));
}

TEST_CASE("cross-corpus segmentation transfer") {
  TempDir dir;
  save_corpus(synth::cue_corpus(30, 3, false, 1), dir / "corpus.jsonl");
  save_corpus(synth::no_cue_corpus(10, 2, 2), dir / "nocue.jsonl");
  json j = base_config();
  j["stages"] = {"segment"};
  j["segment"]["train_corpus"] = "corpus.jsonl";
  j["segment"]["test_corpus"] = "nocue.jsonl";
  Pipeline(parse_pipeline_config(j, dir.path())).run_all();
  const json eval = json::parse(io::read_text(dir / "out/segment/eval.json")).at("eval");
  for (const char* key : {"precision_B", "recall_B", "f1_B", "f1_macro", "f1_weighted", "f1_macro_BI", "confusion"}) {
    CHECK(eval.contains(key));
  }
}

TEST_CASE("CLI exit codes") {
  TempDir dir;
  save_corpus(synth::aspect_corpus(5, 3, 4, 3), dir / "corpus.jsonl");
  json j = base_config();
  j["stages"] = {"topics"};
  write_json(dir / "config.json", j);
  const std::string cfg = (dir / "config.json").string();

  CHECK(run_cli("topics --config " + cfg + " --out " + (dir / "cli").string()) == 0);
  CHECK(fs::exists(dir / "cli/topics/assignments.json"));
  CHECK(run_cli("eval --kind clustering --truth " + (dir / "corpus.jsonl").string() + " --pred " +
                (dir / "cli/topics/assignments.json").string() + " --out " + (dir / "eval.json").string()) == 0);
  CHECK(json::parse(io::read_text(dir / "eval.json")).contains("ari"));
  CHECK(run_cli("eval --kind tagging --truth " + (dir / "corpus.jsonl").string() + " --pred " +
                (dir / "corpus.jsonl").string() + " --out " + (dir / "tag.json").string()) == 0);
  CHECK(json::parse(io::read_text(dir / "tag.json")).at("f1_macro").get<double>() == 1.0);

  CHECK(run_cli("embed-hash --corpus " + (dir / "corpus.jsonl").string() + " --dim 16 --out " +
                (dir / "emb.tsv").string()) == 0);
  CHECK(load_embeddings(dir / "emb.tsv", {}).dim == 16);

  io::write_text(dir / "raw.jsonl", R"({"doc_id": "r1", "topic": "t", "text": "One thing. Another thing."})" "\n");
  CHECK(run_cli("sentencize --in " + (dir / "raw.jsonl").string() + " --out " + (dir / "sent.jsonl").string()) == 0);
  CHECK(load_corpus(dir / "sent.jsonl").documents.at(0).sentences.size() == 2);

  // Config errors.
  CHECK(run_cli("topics") == 2);
  CHECK(run_cli("nosuchcommand") == 2);
  json bad = j;
  bad["extra"] = true;
  write_json(dir / "bad.json", bad);
  CHECK(run_cli("topics --config " + (dir / "bad.json").string()) == 2);
  io::write_text(dir / "broken.json", "{ not json");
  CHECK(run_cli("topics --config " + (dir / "broken.json").string()) == 2);

  // Data errors.
  io::write_text(dir / "garbage.jsonl", "{\"doc_id\": 1}\n");
  CHECK(run_cli("embed-hash --corpus " + (dir / "garbage.jsonl").string()) == 3);
  json data_bad = j;
  data_bad["corpus"] = "garbage.jsonl";
  write_json(dir / "data_bad.json", data_bad);
  CHECK(run_cli("topics --config " + (dir / "data_bad.json").string()) == 3);
}
