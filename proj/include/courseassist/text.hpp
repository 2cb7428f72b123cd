#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace courseassist {

// A lexical token and the byte range it occupies in the source text.
struct Token {
  std::string term;  // lowercased
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Unicode NFC, CRLF/CR -> LF, trailing whitespace stripped per line, runs of
// three or more blank lines collapsed to a single blank line.
std::string normalize_text(std::string_view raw);

// Maximal runs of Unicode alphanumerics, lowercased. Everything else separates.
std::vector<Token> tokenize(std::string_view text);
std::vector<std::string> tokenize_terms(std::string_view text);
std::size_t count_tokens(std::string_view text);

// Throws InvalidArgument when `text` is not well-formed UTF-8.
void require_utf8(std::string_view text);
bool is_valid_utf8(std::string_view text);

// Longest prefix of `text` no longer than `max_bytes` that ends on a code
// point boundary.
std::string_view utf8_prefix(std::string_view text, std::size_t max_bytes);

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool is_blank(std::string_view s);
std::vector<std::string_view> split_lines(std::string_view text);

std::string sha256_hex(std::string_view data);
std::string hmac_sha256_hex(std::string_view key, std::string_view data);
std::string random_hex(std::size_t bytes);
// 128 random bits, base64url without padding (22 characters).
std::string random_url_safe_id();

// RFC 3339 UTC timestamp with second precision, e.g. 2024-01-31T12:00:00Z.
std::string now_rfc3339();

}  // namespace courseassist
