#include "courseassist/text.hpp"

#include "courseassist/errors.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <array>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>

namespace courseassist {

namespace {

std::string to_hex(const unsigned char* data, std::size_t len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(kDigits[data[i] >> 4]);
    out.push_back(kDigits[data[i] & 0x0f]);
  }
  return out;
}

bool is_line_space(char c) { return c == ' ' || c == '\t' || c == '\v' || c == '\f'; }

void append_utf8(std::string& out, UChar32 cp) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  U8_APPEND_UNSAFE(reinterpret_cast<uint8_t*>(buf), len, cp);
  out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace

bool is_valid_utf8(std::string_view text) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c < 0) return false;
  }
  return true;
}

void require_utf8(std::string_view text) {
  if (!is_valid_utf8(text)) throw InvalidArgument("input is not valid UTF-8");
}

std::string normalize_text(std::string_view raw) {
  require_utf8(raw);

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw InfraError("icu", "NFC normalizer unavailable");
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size())));
  icu::UnicodeString composed = nfc->normalize(src, status);
  if (U_FAILURE(status)) throw InfraError("icu", "NFC normalization failed");
  std::string nfc_text;
  composed.toUTF8String(nfc_text);

  std::string unified;
  unified.reserve(nfc_text.size());
  for (std::size_t i = 0; i < nfc_text.size(); ++i) {
    if (nfc_text[i] == '\r') {
      unified.push_back('\n');
      if (i + 1 < nfc_text.size() && nfc_text[i + 1] == '\n') ++i;
    } else {
      unified.push_back(nfc_text[i]);
    }
  }

  std::vector<std::string_view> lines;
  std::size_t start = 0;
  for (;;) {
    std::size_t nl = unified.find('\n', start);
    std::string_view line(unified.data() + start,
                          (nl == std::string::npos ? unified.size() : nl) - start);
    while (!line.empty() && is_line_space(line.back())) line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string::npos) break;
    start = nl + 1;
  }

  std::string out;
  out.reserve(unified.size());
  std::size_t i = 0;
  bool first = true;
  while (i < lines.size()) {
    if (lines[i].empty()) {
      std::size_t j = i;
      while (j < lines.size() && lines[j].empty()) ++j;
      std::size_t run = j - i;
      // A run reaching the end includes the empty piece after the final LF,
      // which is not a blank line of its own.
      const bool at_end = j == lines.size();
      const std::size_t blank = at_end ? run - 1 : run;
      std::size_t keep = (blank >= 3 ? 1 : blank) + (at_end ? 1 : 0);
      for (std::size_t k = 0; k < keep; ++k) {
        if (!first) out.push_back('\n');
        first = false;
      }
      i = j;
      continue;
    }
    if (!first) out.push_back('\n');
    first = false;
    out.append(lines[i]);
    ++i;
  }
  return out;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  Token current;
  bool in_token = false;
  while (i < length) {
    int32_t at = i;
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c >= 0 && u_isalnum(c)) {
      if (!in_token) {
        current = Token{};
        current.begin = static_cast<std::size_t>(at);
        in_token = true;
      }
      append_utf8(current.term, u_tolower(c));
      current.end = static_cast<std::size_t>(i);
    } else if (in_token) {
      tokens.push_back(std::move(current));
      in_token = false;
    }
  }
  if (in_token) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<std::string> tokenize_terms(std::string_view text) {
  std::vector<std::string> terms;
  for (auto& t : tokenize(text)) terms.push_back(std::move(t.term));
  return terms;
}

std::size_t count_tokens(std::string_view text) { return tokenize(text).size(); }

std::string_view utf8_prefix(std::string_view text, std::size_t max_bytes) {
  if (text.size() <= max_bytes) return text;
  std::size_t cut = max_bytes;
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return text.substr(0, cut);
}

std::string_view trim(std::string_view s) {
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  while (!s.empty() && space(s.front())) s.remove_prefix(1);
  while (!s.empty() && space(s.back())) s.remove_suffix(1);
  return s;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw InfraError("crypto", "sha256 failed");
  }
  return to_hex(digest.data(), len);
}

std::string hmac_sha256_hex(std::string_view key, std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
           reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest.data(),
           &len) == nullptr) {
    throw InfraError("crypto", "hmac failed");
  }
  return to_hex(digest.data(), len);
}

std::string random_hex(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) {
    throw InfraError("crypto", "random source unavailable");
  }
  return to_hex(buf.data(), buf.size());
}

std::string random_url_safe_id() {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  std::array<unsigned char, 16> buf{};
  if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) {
    throw InfraError("crypto", "random source unavailable");
  }
  std::string out;
  uint32_t acc = 0;
  int bits = 0;
  for (unsigned char b : buf) {
    acc = (acc << 8) | b;
    bits += 8;
    while (bits >= 6) {
      bits -= 6;
      out.push_back(kAlphabet[(acc >> bits) & 0x3f]);
    }
  }
  if (bits > 0) out.push_back(kAlphabet[(acc << (6 - bits)) & 0x3f]);
  return out;
}

std::string now_rfc3339() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream os;
  os << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace courseassist
