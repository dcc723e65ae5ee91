// The conversational record: a response, the message it replies to, up to a
// handful of earlier turns, and free-form string metadata. One record per
// line of JSON, with a canonical byte layout so that equal records always
// serialize to equal lines.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace convbench {

struct Example {
  std::string context;                       // most recent turn
  std::string response;                      // reply to `context`
  std::vector<std::string> extra_contexts;   // [0] = turn before `context`, etc.
  std::map<std::string, std::string> metadata;

  friend bool operator==(const Example&, const Example&) = default;
};

// A record paired with the key that routes it to train or test.
struct KeyedExample {
  std::string split_key;
  Example example;
};

class ExampleFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline bool is_reserved_key(std::string_view key) {
  if (key == "context" || key == "response") return true;
  if (key.size() > 8 && key.substr(0, 8) == "context/") {
    for (char c : key.substr(8)) {
      if (c < '0' || c > '9') return false;
    }
    return true;
  }
  return false;
}

// Strict non-negative integer: digits only, no leading zeros except "0".
inline bool parse_context_index(std::string_view digits, size_t& out) {
  if (digits.empty()) return false;
  if (digits.size() > 1 && digits[0] == '0') return false;
  if (digits.size() > 6) return false;  // far beyond any sane depth
  size_t value = 0;
  for (char c : digits) {
    if (c < '0' || c > '9') return false;
    value = value * 10 + static_cast<size_t>(c - '0');
  }
  out = value;
  return true;
}

}  // namespace detail

// Canonical single-line JSON: "context", "response", "context/0".."context/k"
// in order, then metadata keys sorted bytewise. Compact separators, no
// trailing whitespace. Throws ExampleFormatError on records that cannot be
// represented (empty required fields, reserved metadata keys) and
// nlohmann::json::type_error on invalid UTF-8.
inline std::string serialize_example(const Example& ex) {
  if (ex.context.empty()) throw ExampleFormatError("example has empty context");
  if (ex.response.empty()) throw ExampleFormatError("example has empty response");
  for (const auto& [key, value] : ex.metadata) {
    if (detail::is_reserved_key(key)) {
      throw ExampleFormatError("metadata key collides with a reserved key: " + key);
    }
  }
  nlohmann::ordered_json j;
  j["context"] = ex.context;
  j["response"] = ex.response;
  for (size_t i = 0; i < ex.extra_contexts.size(); ++i) {
    j["context/" + std::to_string(i)] = ex.extra_contexts[i];
  }
  for (const auto& [key, value] : ex.metadata) {
    j[key] = value;
  }
  return j.dump();
}

// Inverse of serialize_example. Accepts any key order on input; rejects
// records with missing or empty context/response, non-string values, or a
// context/i set that is not exactly 0..k.
inline Example parse_example(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ExampleFormatError(std::string("bad JSON: ") + e.what());
  }
  if (!j.is_object()) throw ExampleFormatError("record is not a JSON object");

  Example ex;
  bool saw_context = false;
  bool saw_response = false;
  std::vector<std::pair<size_t, std::string>> extras;
  for (auto& [key, value] : j.items()) {
    if (!value.is_string()) {
      throw ExampleFormatError("value for key \"" + key + "\" is not a string");
    }
    std::string text = value.get<std::string>();
    if (key == "context") {
      ex.context = std::move(text);
      saw_context = true;
    } else if (key == "response") {
      ex.response = std::move(text);
      saw_response = true;
    } else if (key.size() > 8 && std::string_view(key).substr(0, 8) == "context/") {
      size_t index = 0;
      if (!detail::parse_context_index(std::string_view(key).substr(8), index)) {
        throw ExampleFormatError("malformed extra context key \"" + key + "\"");
      }
      extras.emplace_back(index, std::move(text));
    } else {
      ex.metadata.emplace(key, std::move(text));
    }
  }
  if (!saw_context || ex.context.empty()) throw ExampleFormatError("missing or empty context");
  if (!saw_response || ex.response.empty()) throw ExampleFormatError("missing or empty response");

  std::sort(extras.begin(), extras.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 0; i < extras.size(); ++i) {
    if (extras[i].first != i) {
      throw ExampleFormatError("extra context indices must be exactly 0..k with no gaps");
    }
    ex.extra_contexts.push_back(std::move(extras[i].second));
  }
  return ex;
}

}  // namespace convbench
