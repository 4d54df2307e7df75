#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace stepkd {

using TokenStream = std::vector<std::string>;

// Lowercased alphanumeric word segmentation over UTF-8 text. Letters and
// digits of any script are word characters; everything else separates
// tokens. Invalid UTF-8 bytes are treated as separators. No stemming, no
// stopwords.
TokenStream tokenize(std::string_view text);

// Simple one-to-one lowercase mapping for ASCII, Latin-1, Latin Extended-A,
// Greek and Cyrillic. Other code points pass through unchanged.
std::string utf8_lower(std::string_view text);

std::string trim(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

namespace utf8 {

// Decodes one code point starting at `pos`, advancing `pos`. Returns
// U+FFFD and advances one byte on malformed input.
char32_t decode(std::string_view s, std::size_t& pos);
void append(std::string& out, char32_t cp);
char32_t to_lower(char32_t cp);
bool is_alnum(char32_t cp);

}  // namespace utf8

}  // namespace stepkd
