#include "argsearch/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "argsearch/io.hpp"

namespace argsearch {

using nlohmann::json;

char to_char(BioTag tag) {
  switch (tag) {
    case BioTag::B: return 'B';
    case BioTag::I: return 'I';
    case BioTag::O: return 'O';
  }
  return '?';
}

BioTag bio_from_string(std::string_view s) {
  if (s == "B") return BioTag::B;
  if (s == "I") return BioTag::I;
  if (s == "O") return BioTag::O;
  throw DataError("invalid BIO tag '" + std::string(s) + "'");
}

std::set<std::string> Corpus::topics() const {
  std::set<std::string> out;
  for (const auto& d : documents) out.insert(d.topic);
  return out;
}

std::size_t Corpus::sentence_count() const {
  std::size_t n = 0;
  for (const auto& d : documents) n += d.sentences.size();
  return n;
}

std::string sentence_id(const Document& doc, std::size_t index) {
  return doc.doc_id + "#" + std::to_string(index);
}

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

Document parse_document(const json& j) {
  Document doc;
  doc.doc_id = j.at("doc_id").get<std::string>();
  doc.title = j.value("title", std::string{});
  doc.topic = j.at("topic").get<std::string>();
  for (const auto& js : j.at("sentences")) {
    Sentence s;
    s.text = js.at("text").get<std::string>();
    if (auto it = js.find("bio"); it != js.end() && !it->is_null()) {
      s.bio = bio_from_string(it->get<std::string>());
    }
    if (auto it = js.find("aspect"); it != js.end() && !it->is_null()) {
      s.aspect = it->get<std::string>();
    }
    doc.sentences.push_back(std::move(s));
  }
  return doc;
}

}  // namespace

void validate(const Corpus& corpus) {
  std::unordered_set<std::string> seen;
  for (const auto& doc : corpus.documents) {
    if (doc.doc_id.empty()) throw DataError("document with empty doc_id");
    if (!seen.insert(doc.doc_id).second) {
      throw DataError("duplicate doc_id '" + doc.doc_id + "'");
    }
    if (doc.sentences.empty()) throw DataError("document '" + doc.doc_id + "' has no sentences");
    const bool tagged = doc.sentences.front().bio.has_value();
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
      const auto& s = doc.sentences[i];
      if (blank(s.text)) {
        throw DataError("document '" + doc.doc_id + "' sentence " + std::to_string(i) + " is blank");
      }
      if (s.bio.has_value() != tagged) {
        throw DataError("document '" + doc.doc_id + "' mixes tagged and untagged sentences");
      }
    }
  }
}

Corpus parse_corpus_jsonl(std::string_view text, std::string name) {
  Corpus corpus;
  corpus.name = std::move(name);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (blank(line)) continue;
    try {
      corpus.documents.push_back(parse_document(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(corpus);
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  return parse_corpus_jsonl(io::read_text(path), path.stem().string());
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& doc : corpus.documents) {
    json j;
    j["doc_id"] = doc.doc_id;
    j["title"] = doc.title;
    j["topic"] = doc.topic;
    json sentences = json::array();
    for (const auto& s : doc.sentences) {
      json js;
      js["text"] = s.text;
      if (s.bio) js["bio"] = std::string(1, to_char(*s.bio));
      if (s.aspect) js["aspect"] = *s.aspect;
      sentences.push_back(std::move(js));
    }
    j["sentences"] = std::move(sentences);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  io::write_text(path, corpus_to_jsonl(corpus));
}

SplitSpec split_by_topic(const Corpus& corpus, double test_frac, double val_frac,
                         std::uint64_t seed) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw ConfigError("test_frac must lie in (0,1)");
  if (!(val_frac >= 0.0 && val_frac < 1.0)) throw ConfigError("val_frac must lie in [0,1)");
  if (test_frac + val_frac >= 1.0) throw ConfigError("test_frac + val_frac must be < 1");

  const std::set<std::string> topic_set = corpus.topics();
  const std::vector<std::string> topics(topic_set.begin(), topic_set.end());
  const auto n = static_cast<long long>(topics.size());

  const long long n_test = std::max(1LL, round_half_up(test_frac * static_cast<double>(n)));
  const long long n_val =
      val_frac > 0.0 ? std::max(1LL, round_half_up(val_frac * static_cast<double>(n))) : 0;
  if (n_test + n_val >= n) {
    throw DataError("too few topics (" + std::to_string(n) + ") to honor the split fractions");
  }

  SplitSpec split;
  split.seed = seed;
  const auto perm = seeded_permutation(topics.size(), seed);
  for (long long i = 0; i < n; ++i) {
    const std::string& t = topics[perm[static_cast<std::size_t>(i)]];
    if (i < n_test) {
      split.test.insert(t);
    } else if (i < n_test + n_val) {
      split.val.insert(t);
    } else {
      split.train.insert(t);
    }
  }
  return split;
}

Corpus select(const Corpus& corpus, const std::set<std::string>& topics) {
  const auto known = corpus.topics();
  for (const auto& t : topics) {
    if (!known.contains(t)) throw DataError("unknown topic '" + t + "'");
  }
  Corpus out;
  out.name = corpus.name;
  for (const auto& doc : corpus.documents) {
    if (topics.contains(doc.topic)) out.documents.push_back(doc);
  }
  return out;
}

void save_split(const SplitSpec& split, const std::filesystem::path& path) {
  json j;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  io::write_text(path, j.dump(2) + "\n");
}

SplitSpec load_split(const std::filesystem::path& path) {
  try {
    const json j = json::parse(io::read_text(path));
    SplitSpec split;
    split.seed = j.at("seed").get<std::uint64_t>();
    split.train = j.at("train").get<std::set<std::string>>();
    split.val = j.at("val").get<std::set<std::string>>();
    split.test = j.at("test").get<std::set<std::string>>();
    return split;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::filesystem::path split_sidecar_path(const std::filesystem::path& corpus_path) {
  auto p = corpus_path;
  p.replace_filename(corpus_path.stem().string() + ".split.json");
  return p;
}

}  // namespace argsearch
