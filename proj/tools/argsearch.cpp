// Command-line front end for the argument search pipeline.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "argsearch/io.hpp"
#include "argsearch/pipeline.hpp"
#include "argsearch/sentencize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace argsearch;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

PipelineConfig load_config(const CommonFlags& f) {
  PipelineConfig cfg = load_pipeline_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output_dir = f.out;
  return cfg;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
  } else {
    io::write_text(out, text);
  }
}

Labels assignment_labels(const fs::path& path, const Corpus& truth) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!j.contains("labels") || !j.at("labels").is_object()) {
    throw DataError(path.string() + ": expected an object with a \"labels\" map");
  }
  const json& map = j.at("labels");
  Labels out;
  for (const auto& d : truth.documents) {
    if (!map.contains(d.doc_id) || !map.at(d.doc_id).is_number_integer()) {
      throw DataError(path.string() + ": no integer label for document '" + d.doc_id + "'");
    }
    out.push_back(map.at(d.doc_id).get<int>());
  }
  return out;
}

json eval_clustering(const Corpus& truth, const fs::path& pred_path, NoiseMode mode) {
  std::vector<std::string> topics;
  for (const auto& d : truth.documents) topics.push_back(d.topic);
  const Labels pred = assignment_labels(pred_path, truth);
  json j = to_json(evaluate_clustering(encode_labels(topics), pred, mode));
  j["noise_mode"] = to_string(mode);
  return j;
}

json eval_tagging(const Corpus& truth, const Corpus& pred) {
  std::map<std::string, const Document*> by_id;
  for (const auto& d : pred.documents) by_id[d.doc_id] = &d;
  std::vector<std::vector<BioTag>> t;
  std::vector<std::vector<BioTag>> p;
  for (const auto& d : truth.documents) {
    if (!d.tagged()) continue;
    const auto it = by_id.find(d.doc_id);
    if (it == by_id.end()) throw DataError("prediction is missing document '" + d.doc_id + "'");
    if (!it->second->tagged() || it->second->sentences.size() != d.sentences.size()) {
      throw DataError("prediction for document '" + d.doc_id + "' does not line up with the truth");
    }
    t.emplace_back();
    p.emplace_back();
    for (std::size_t i = 0; i < d.sentences.size(); ++i) {
      t.back().push_back(*d.sentences[i].bio);
      p.back().push_back(*it->second->sentences[i].bio);
    }
  }
  if (t.empty()) throw DataError("truth corpus has no tagged documents");
  return to_json(tagging_eval(t, p));
}

Corpus sentencize_jsonl(const std::string& text, const std::string& name) {
  Corpus c;
  c.name = name;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    }
    if (!j.is_object()) throw DataError(where + "expected an object");
    Document d;
    try {
      d.doc_id = j.at("doc_id").get<std::string>();
      d.title = j.value("title", std::string{});
      d.topic = j.value("topic", std::string{});
      for (auto& s : sentencize(j.at("text").get<std::string>())) d.sentences.push_back({std::move(s), {}, {}});
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    }
    c.documents.push_back(std::move(d));
  }
  validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Argument search pipeline: topic clustering, argument segmentation, aspect clustering"};
  app.require_subcommand(1);

  CommonFlags common;
  const auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", common.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) opt->required();
    sub->add_option("--seed", common.seed, "Global seed, overrides the config");
    sub->add_option("--out", common.out, "Output directory or file");
  };

  auto* topics = app.add_subcommand("topics", "Cluster documents by topic");
  add_common(topics, true);
  auto* segment = app.add_subcommand("segment", "Train and evaluate the BIO tagger, write the segmented corpus");
  add_common(segment, true);
  auto* argclust = app.add_subcommand("argclust", "Cluster each topic's arguments by aspect");
  add_common(argclust, true);
  auto* pipeline = app.add_subcommand("pipeline", "Run every configured stage");
  add_common(pipeline, true);

  auto* eval = app.add_subcommand("eval", "Score predictions against a gold corpus");
  add_common(eval, false);
  std::string eval_kind;
  std::string truth_path;
  std::string pred_path;
  std::string noise = "single_cluster";
  eval->add_option("--kind", eval_kind, "clustering or tagging")->required()->check(CLI::IsMember({"clustering", "tagging"}));
  eval->add_option("--truth", truth_path, "Gold corpus JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--pred", pred_path, "assignments.json (clustering) or tagged corpus JSONL (tagging)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--noise-mode", noise, "single_cluster, singletons or exclude");

  auto* embed = app.add_subcommand("embed-hash", "Write hashed bag-of-words sentence embeddings as TSV");
  add_common(embed, false);
  std::string embed_corpus;
  Eigen::Index embed_dim = 64;
  std::string embed_kind = "hash_test";
  embed->add_option("--corpus", embed_corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  embed->add_option("--dim", embed_dim, "Embedding dimension (>= 8)");
  embed->add_option("--kind", embed_kind, "Kind written to the header");

  auto* sent = app.add_subcommand("sentencize", "Split raw documents into sentences");
  add_common(sent, false);
  std::string sent_in;
  bool plain = false;
  sent->add_option("--in", sent_in, "JSONL of {doc_id, title, topic, text}, or plain text with --plain")
      ->required()
      ->check(CLI::ExistingFile);
  sent->add_flag("--plain", plain, "Treat the input as plain text and print one sentence per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (topics->parsed()) {
      Pipeline(load_config(common)).run_topics();
    } else if (segment->parsed()) {
      Pipeline(load_config(common)).run_segment();
    } else if (argclust->parsed()) {
      Pipeline(load_config(common)).run_argclust();
    } else if (pipeline->parsed()) {
      Pipeline(load_config(common)).run_all();
    } else if (eval->parsed()) {
      const Corpus truth = load_corpus(truth_path);
      const json j = eval_kind == "clustering" ? eval_clustering(truth, pred_path, noise_mode_from_string(noise))
                                               : eval_tagging(truth, load_corpus(pred_path));
      emit(j.dump(2) + "\n", common.out);
    } else if (embed->parsed()) {
      const Corpus c = load_corpus(embed_corpus);
      std::vector<std::string> ids;
      std::vector<std::string> texts;
      for (const auto& d : c.documents) {
        for (std::size_t i = 0; i < d.sentences.size(); ++i) {
          ids.push_back(sentence_id(d, i));
          texts.push_back(d.sentences[i].text);
        }
      }
      EmbeddingKind kind;
      try {
        kind = embedding_kind_from_string(embed_kind);
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
      if (embed_dim < 8) throw ConfigError("--dim must be at least 8");
      const EmbeddingSet set = make_embedding_set(kind, ids, hash_embed(texts, embed_dim, common.seed.value_or(0)));
      emit(embeddings_to_tsv(set), common.out);
    } else if (sent->parsed()) {
      const std::string text = io::read_text(sent_in);
      if (plain) {
        std::string out;
        for (const auto& s : sentencize(text)) out += s + "\n";
        emit(out, common.out);
      } else {
        emit(corpus_to_jsonl(sentencize_jsonl(text, fs::path(sent_in).stem().string())), common.out);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
