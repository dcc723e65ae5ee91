// UTF-8 aware text utilities: scalar counting, word-boundary trimming and
// the tokenizer shared by the keyword scorers and the encoder featurizer.
//
// Length limits throughout the project count Unicode scalar values, not
// bytes. The decoder is lenient: an invalid lead byte is treated as a
// single scalar so that counting never throws on arbitrary input.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace convbench {

inline bool is_ascii_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_alnum(char c) noexcept {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline char ascii_lower(char c) noexcept {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Byte length of the UTF-8 sequence starting at `lead`, clamped to what the
// remainder of the string can hold.
inline size_t utf8_sequence_length(unsigned char lead, size_t remaining) noexcept {
  size_t len = 1;
  if ((lead & 0x80u) == 0x00u) {
    len = 1;
  } else if ((lead & 0xE0u) == 0xC0u) {
    len = 2;
  } else if ((lead & 0xF0u) == 0xE0u) {
    len = 3;
  } else if ((lead & 0xF8u) == 0xF0u) {
    len = 4;
  }
  return len < remaining ? len : remaining;
}

inline size_t count_scalars(std::string_view text) noexcept {
  size_t count = 0;
  size_t pos = 0;
  while (pos < text.size()) {
    pos += utf8_sequence_length(static_cast<unsigned char>(text[pos]), text.size() - pos);
    ++count;
  }
  return count;
}

// Longest prefix of at most `limit` scalars that ends on a word boundary
// (ASCII whitespace or end of string). If no boundary exists within the
// limit, falls back to a hard cut after `limit` scalars.
inline std::string trim_to_words(std::string_view text, size_t limit) {
  size_t scalars = 0;
  size_t pos = 0;
  size_t best_cut = 0;       // byte offset of the best boundary cut
  size_t hard_cut = 0;       // byte offset after `limit` scalars
  bool hard_cut_set = false;
  while (true) {
    if (scalars <= limit && (pos == text.size() || is_ascii_space(text[pos]))) {
      best_cut = pos;
    }
    if (scalars == limit) {
      hard_cut = pos;
      hard_cut_set = true;
    }
    if (pos == text.size() || scalars > limit) break;
    pos += utf8_sequence_length(static_cast<unsigned char>(text[pos]), text.size() - pos);
    ++scalars;
  }
  if (pos == text.size() && scalars <= limit) return std::string(text);
  if (best_cut > 0) return std::string(text.substr(0, best_cut));
  return std::string(text.substr(0, hard_cut_set ? hard_cut : text.size()));
}

// Lowercased word tokens. ASCII alphanumerics are word characters, all other
// ASCII bytes separate tokens, and non-ASCII scalars are kept verbatim as
// word characters (so accented words survive rather than vanishing).
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  size_t pos = 0;
  while (pos < text.size()) {
    unsigned char lead = static_cast<unsigned char>(text[pos]);
    size_t len = utf8_sequence_length(lead, text.size() - pos);
    if (lead < 0x80u) {
      char c = text[pos];
      if (is_ascii_alnum(c)) {
        current.push_back(ascii_lower(c));
      } else if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.append(text.substr(pos, len));
    }
    pos += len;
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// "a b c" -> {"a b", "b c"}; fewer than two tokens yields nothing.
inline std::vector<std::string> bigrams(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  if (tokens.size() < 2) return out;
  out.reserve(tokens.size() - 1);
  for (size_t i = 0; i + 1 < tokens.size(); ++i) {
    out.push_back(tokens[i] + " " + tokens[i + 1]);
  }
  return out;
}

// Collapse runs of ASCII whitespace to single spaces and strip the ends.
inline std::string collapse_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_ascii_space(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace convbench
