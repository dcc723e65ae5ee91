// Text embedding providers for the vector-similarity scorers. FileBacked
// serves fixed vectors from a lookup table on disk; HashedNgram derives
// deterministic pseudo-random vectors from character n-grams so vector
// methods stay testable without any model artifact. All providers return
// unit-norm vectors.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convbench/hash.hpp"
#include "convbench/text.hpp"

namespace convbench {

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::string_view data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= data.size()) {
    uint32_t n = (static_cast<uint8_t>(data[i]) << 16) | (static_cast<uint8_t>(data[i + 1]) << 8) |
                 static_cast<uint8_t>(data[i + 2]);
    out.push_back(kBase64Alphabet[(n >> 18) & 63]);
    out.push_back(kBase64Alphabet[(n >> 12) & 63]);
    out.push_back(kBase64Alphabet[(n >> 6) & 63]);
    out.push_back(kBase64Alphabet[n & 63]);
    i += 3;
  }
  size_t rest = data.size() - i;
  if (rest == 1) {
    uint32_t n = static_cast<uint8_t>(data[i]) << 16;
    out.push_back(kBase64Alphabet[(n >> 18) & 63]);
    out.push_back(kBase64Alphabet[(n >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    uint32_t n = (static_cast<uint8_t>(data[i]) << 16) | (static_cast<uint8_t>(data[i + 1]) << 8);
    out.push_back(kBase64Alphabet[(n >> 18) & 63]);
    out.push_back(kBase64Alphabet[(n >> 12) & 63]);
    out.push_back(kBase64Alphabet[(n >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::optional<std::string> base64_decode(std::string_view data) {
  if (data.size() % 4 != 0) return std::nullopt;
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  out.reserve(data.size() / 4 * 3);
  for (size_t i = 0; i < data.size(); i += 4) {
    int pad = 0;
    uint32_t n = 0;
    for (size_t k = 0; k < 4; ++k) {
      char c = data[i + k];
      if (c == '=') {
        if (i + 4 != data.size() || k < 2) return std::nullopt;
        ++pad;
        n <<= 6;
        continue;
      }
      if (pad > 0) return std::nullopt;
      int v = value_of(c);
      if (v < 0) return std::nullopt;
      n = (n << 6) | static_cast<uint32_t>(v);
    }
    out.push_back(static_cast<char>((n >> 16) & 0xFF));
    if (pad < 2) out.push_back(static_cast<char>((n >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<char>(n & 0xFF));
  }
  return out;
}

// Byte offsets of each scalar plus one past-the-end entry.
inline std::vector<size_t> scalar_offsets(std::string_view text) {
  std::vector<size_t> offsets;
  size_t pos = 0;
  while (pos < text.size()) {
    offsets.push_back(pos);
    pos += utf8_sequence_length(text[pos], text.size() - pos);
  }
  offsets.push_back(text.size());
  return offsets;
}

inline Eigen::VectorXd normalized_or_throw(Eigen::VectorXd v, std::string_view what) {
  double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw EmbeddingError("cannot normalize zero or non-finite embedding for " + std::string(what));
  }
  return v / norm;
}

}  // namespace detail

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual const std::string& name() const = 0;
  virtual int dim() const = 0;
  // Unit-norm embedding of the text; throws EmbeddingError when the
  // provider cannot produce one.
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
};

// Fixed text→vector table. File format: first line "dim=<d>", then one
// entry per line as base64(text) <TAB> d space-separated decimal floats.
// Stored vectors may have any positive norm; embed() normalizes.
class FileBackedEmbedder final : public EmbeddingProvider {
 public:
  FileBackedEmbedder(std::unordered_map<std::string, Eigen::VectorXd> table, int dim,
                     std::string name = "table")
      : table_(std::move(table)), dim_(dim), name_(std::move(name)) {
    if (dim_ < 1) throw EmbeddingError("embedding dimension must be positive");
    for (const auto& [text, vec] : table_) {
      if (vec.size() != dim_) {
        throw EmbeddingError("embedding table entry for \"" + text + "\" has wrong dimension");
      }
    }
  }

  static FileBackedEmbedder load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EmbeddingError("cannot read embedding table " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("dim=", 0) != 0) {
      throw EmbeddingError(path + ":1: expected header dim=<d>");
    }
    int dim = 0;
    try {
      size_t used = 0;
      dim = std::stoi(line.substr(4), &used);
      if (used != line.size() - 4) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw EmbeddingError(path + ":1: malformed dimension header");
    }
    if (dim < 1) throw EmbeddingError(path + ":1: dimension must be positive");

    std::unordered_map<std::string, Eigen::VectorXd> table;
    size_t line_number = 1;
    while (std::getline(in, line)) {
      ++line_number;
      if (line.empty()) continue;
      std::string where = path + ":" + std::to_string(line_number);
      size_t tab = line.find('\t');
      if (tab == std::string::npos) throw EmbeddingError(where + ": missing tab separator");
      auto text = detail::base64_decode(std::string_view(line).substr(0, tab));
      if (!text) throw EmbeddingError(where + ": malformed base64 key");
      Eigen::VectorXd vec(dim);
      size_t pos = tab + 1;
      for (int i = 0; i < dim; ++i) {
        size_t used = 0;
        try {
          vec[i] = std::stod(line.substr(pos), &used);
        } catch (const std::exception&) {
          throw EmbeddingError(where + ": malformed float");
        }
        pos += used;
        if (i + 1 < dim) {
          if (pos >= line.size() || line[pos] != ' ') {
            throw EmbeddingError(where + ": expected " + std::to_string(dim) + " floats");
          }
          ++pos;
        }
      }
      if (pos != line.size()) throw EmbeddingError(where + ": trailing data after floats");
      if (!table.emplace(std::move(*text), std::move(vec)).second) {
        throw EmbeddingError(where + ": duplicate entry");
      }
    }
    return FileBackedEmbedder(std::move(table), dim, "file:" + path);
  }

  const std::string& name() const override { return name_; }
  int dim() const override { return dim_; }

  Eigen::VectorXd embed(std::string_view text) const override {
    auto it = table_.find(std::string(text));
    if (it == table_.end()) {
      throw EmbeddingError("no embedding for \"" + std::string(text) + "\"");
    }
    return detail::normalized_or_throw(it->second, text);
  }

  size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::string, Eigen::VectorXd> table_;
  int dim_;
  std::string name_;
};

// Sums one seeded pseudo-random unit vector per character n-gram, then
// normalizes. Deterministic in (seed, n, dim); needs no stored table.
class HashedNgramEmbedder final : public EmbeddingProvider {
 public:
  HashedNgramEmbedder(uint64_t seed, int ngram_size, int dim)
      : seed_(seed), ngram_size_(ngram_size), dim_(dim),
        name_("hashed-" + std::to_string(ngram_size) + "gram") {
    if (ngram_size_ < 1 || ngram_size_ > 3) throw EmbeddingError("ngram size must be 1, 2 or 3");
    if (dim_ < 1) throw EmbeddingError("embedding dimension must be positive");
  }

  const std::string& name() const override { return name_; }
  int dim() const override { return dim_; }

  Eigen::VectorXd embed(std::string_view text) const override {
    auto offsets = detail::scalar_offsets(text);
    size_t scalars = offsets.size() - 1;
    if (scalars < static_cast<size_t>(ngram_size_)) {
      throw EmbeddingError("no " + std::to_string(ngram_size_) + "-grams in \"" +
                           std::string(text) + "\"");
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
    Eigen::VectorXd gram_vec(dim_);
    for (size_t i = 0; i + ngram_size_ <= scalars; ++i) {
      std::string_view gram = text.substr(offsets[i], offsets[i + ngram_size_] - offsets[i]);
      SplitMix64 rng(mix64(seed_, stable_key_hash(gram)));
      for (int k = 0; k < dim_; ++k) gram_vec[k] = rng.next_unit() * 2.0 - 1.0;
      sum += gram_vec / gram_vec.norm();
    }
    return detail::normalized_or_throw(std::move(sum), text);
  }

 private:
  uint64_t seed_;
  int ngram_size_;
  int dim_;
  std::string name_;
};

}  // namespace convbench
