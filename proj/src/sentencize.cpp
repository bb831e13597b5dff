#include "argsearch/sentencize.hpp"

#include <algorithm>
#include <cctype>

namespace argsearch {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_closer(unsigned char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

// Uppercase ASCII or Latin-1 uppercase, or an opening quote.
bool starts_sentence(std::string_view rest) {
  if (rest.empty()) return false;
  const auto c = static_cast<unsigned char>(rest[0]);
  if (std::isupper(c) || c == '"' || c == '\'' || c == '(') return true;
  if (rest.size() >= 2 && c == 0xC3) {
    const auto d = static_cast<unsigned char>(rest[1]);
    return d >= 0x80 && d <= 0x9E && d != 0x97;
  }
  // U+201C / U+2018 opening quotes, U+00AB guillemet.
  if (rest.starts_with("\xE2\x80\x9C") || rest.starts_with("\xE2\x80\x98")) return true;
  return rest.starts_with("\xC2\xAB");
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// The word (letters and inner dots) immediately before position `dot`.
std::string word_before(std::string_view text, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0) {
    const auto c = static_cast<unsigned char>(text[b - 1]);
    if (!(std::isalpha(c) || c == '.')) break;
    --b;
  }
  std::string w(text.substr(b, dot - b));
  std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
  return w;
}

}  // namespace

const std::vector<std::string>& sentence_abbreviations() {
  static const std::vector<std::string> list = {
      "mr",  "mrs", "ms",  "dr",  "prof", "sr",  "jr",     "st",   "vs",  "etc",
      "e.g", "i.e", "inc", "ltd", "co",   "corp", "no",    "vol",  "fig", "approx",
      "dept", "est", "gen", "gov", "sen",  "rep",  "jan",  "feb",  "aug", "sept",
  };
  return list;
}

std::vector<std::string> sentencize(std::string_view text) {
  const auto& abbrev = sentence_abbreviations();
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < text.size() && (text[end] == '.' || text[end] == '!' || text[end] == '?')) ++end;
    while (end < text.size() && is_closer(static_cast<unsigned char>(text[end]))) ++end;
    std::size_t next = end;
    while (next < text.size() && is_space(static_cast<unsigned char>(text[next]))) ++next;

    bool boundary = next > end && starts_sentence(text.substr(next));
    if (boundary && c == '.' && end == i + 1) {
      const std::string w = word_before(text, i);
      if (std::find(abbrev.begin(), abbrev.end(), w) != abbrev.end()) boundary = false;
    }
    if (boundary) {
      std::string s = trim(text.substr(start, end - start));
      if (!s.empty()) out.push_back(std::move(s));
      start = next;
    }
    i = std::max(end, i + 1);
  }
  std::string tail = trim(text.substr(start));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

}  // namespace argsearch
