#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace argsearch {

/// Rule-based sentence splitter for raw text.
///
/// A boundary follows `.`, `!` or `?` (plus any closing quotes or brackets)
/// when the next non-space character is an uppercase letter or an opening
/// quote. A period ending a known abbreviation never ends a sentence.
std::vector<std::string> sentencize(std::string_view text);

/// Abbreviations recognised by sentencize, lowercase, without the final dot.
const std::vector<std::string>& sentence_abbreviations();

}  // namespace argsearch
