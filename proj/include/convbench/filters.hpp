// Length and content filters shared by the dataset builders. Lengths are
// Unicode scalar counts, and they gate only the context and response of a
// candidate pair; earlier turns are trimmed instead of dropped.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "convbench/text.hpp"

namespace convbench {

struct FilterConfig {
  size_t min_chars = 9;
  size_t max_chars = 128;
  std::vector<std::string> banned_bodies = {"[deleted]", "[removed]"};
  size_t max_extra_contexts = 10;
};

inline bool is_banned_body(std::string_view body, const FilterConfig& cfg) {
  for (const auto& banned : cfg.banned_bodies) {
    if (body == banned) return true;
  }
  return false;
}

// "" on acceptable length, otherwise the drop reason suffix.
inline const char* length_violation(std::string_view text, const FilterConfig& cfg) {
  size_t n = count_scalars(text);
  if (n < cfg.min_chars) return "too_short";
  if (n > cfg.max_chars) return "too_long";
  return "";
}

}  // namespace convbench
