#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 helpers. "Characters" are Unicode scalar values; invalid bytes count
// as one character each so arbitrary input never throws.
namespace toolwatch::text {

std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);

std::size_t char_count(std::string_view s);

// First `max_chars` characters of `s` (whole string when shorter).
std::string truncate_chars(std::string_view s, std::size_t max_chars);

bool is_unicode_space(char32_t c);

// Splits on runs of Unicode whitespace; never yields empty tokens.
// Stops after `max_tokens` tokens when max_tokens > 0.
std::vector<std::string> split_whitespace(std::string_view s, std::size_t max_tokens = 0);

bool is_blank(std::string_view s);

}  // namespace toolwatch::text
