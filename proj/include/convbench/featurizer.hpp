// Turns text into unigram and bigram feature ids for the trained encoder.
// Each feature type has a frequency-built vocabulary; features outside it
// hash into a fixed bucket range after the vocabulary ids, so no feature is
// ever dropped.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convbench/hash.hpp"
#include "convbench/text.hpp"

namespace convbench::encoder {

class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> features) : features_(std::move(features)) {
    for (uint32_t id = 0; id < features_.size(); ++id) {
      if (!ids_.emplace(features_[id], id).second) {
        throw std::invalid_argument("duplicate vocabulary feature " + features_[id]);
      }
    }
  }

  // Keeps the max_size most frequent features; ties resolve to the
  // lexicographically smaller feature. Ids follow that same order.
  static Vocabulary build(const std::unordered_map<std::string, uint64_t>& counts,
                          size_t max_size) {
    std::vector<std::pair<std::string, uint64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > max_size) ranked.resize(max_size);
    std::vector<std::string> features;
    features.reserve(ranked.size());
    for (auto& [feature, count] : ranked) features.push_back(std::move(feature));
    return Vocabulary(std::move(features));
  }

  size_t size() const { return features_.size(); }

  const std::string& feature(uint32_t id) const { return features_.at(id); }

  // std::nullopt-free lookup: returns size() when absent.
  uint32_t id_or_size(std::string_view feature) const {
    auto it = ids_.find(std::string(feature));
    return it == ids_.end() ? static_cast<uint32_t>(features_.size()) : it->second;
  }

  bool contains(std::string_view feature) const {
    return ids_.count(std::string(feature)) > 0;
  }

  // One feature per line; the line number is the id.
  void save(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + path);
      for (const auto& f : features_) out << f << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<std::string> features;
    std::string line;
    while (std::getline(in, line)) features.push_back(line);
    return Vocabulary(std::move(features));
  }

 private:
  std::vector<std::string> features_;
  std::unordered_map<std::string, uint32_t> ids_;
};

struct FeaturizerConfig {
  size_t unigram_vocab = 10000;
  size_t bigram_vocab = 10000;
  size_t unigram_buckets = 4096;
  size_t bigram_buckets = 4096;
};

inline void validate(const FeaturizerConfig& cfg) {
  if (cfg.unigram_vocab < 1 || cfg.bigram_vocab < 1 || cfg.unigram_buckets < 1 ||
      cfg.bigram_buckets < 1) {
    throw std::invalid_argument("vocabulary and bucket sizes must be at least 1");
  }
}

struct FeatureIds {
  std::vector<uint32_t> unigrams;
  std::vector<uint32_t> bigrams;
};

// Accumulates feature frequencies over training texts.
class VocabCounter {
 public:
  void add(std::string_view text) {
    auto tokens = tokenize(text);
    for (const auto& t : tokens) ++unigram_counts_[t];
    for (const auto& b : convbench::bigrams(tokens)) ++bigram_counts_[b];
  }

  const std::unordered_map<std::string, uint64_t>& unigram_counts() const {
    return unigram_counts_;
  }
  const std::unordered_map<std::string, uint64_t>& bigram_counts() const {
    return bigram_counts_;
  }

 private:
  std::unordered_map<std::string, uint64_t> unigram_counts_;
  std::unordered_map<std::string, uint64_t> bigram_counts_;
};

class Featurizer {
 public:
  Featurizer(Vocabulary unigrams, Vocabulary bigrams, FeaturizerConfig cfg)
      : unigrams_(std::move(unigrams)), bigrams_(std::move(bigrams)), cfg_(cfg) {
    validate(cfg_);
    if (unigrams_.size() > cfg_.unigram_vocab || bigrams_.size() > cfg_.bigram_vocab) {
      throw std::invalid_argument("vocabulary larger than its configured capacity");
    }
  }

  static Featurizer build(const VocabCounter& counter, const FeaturizerConfig& cfg) {
    validate(cfg);
    return Featurizer(Vocabulary::build(counter.unigram_counts(), cfg.unigram_vocab),
                      Vocabulary::build(counter.bigram_counts(), cfg.bigram_vocab), cfg);
  }

  const Vocabulary& unigram_vocab() const { return unigrams_; }
  const Vocabulary& bigram_vocab() const { return bigrams_; }
  const FeaturizerConfig& config() const { return cfg_; }

  // Total id range per feature type: vocabulary then hash buckets.
  size_t unigram_range() const { return unigrams_.size() + cfg_.unigram_buckets; }
  size_t bigram_range() const { return bigrams_.size() + cfg_.bigram_buckets; }

  FeatureIds featurize(std::string_view text) const {
    FeatureIds ids;
    auto tokens = tokenize(text);
    ids.unigrams.reserve(tokens.size());
    for (const auto& t : tokens) {
      ids.unigrams.push_back(map_id(unigrams_, cfg_.unigram_buckets, t));
    }
    auto bis = convbench::bigrams(tokens);
    ids.bigrams.reserve(bis.size());
    for (const auto& b : bis) {
      ids.bigrams.push_back(map_id(bigrams_, cfg_.bigram_buckets, b));
    }
    return ids;
  }

 private:
  static uint32_t map_id(const Vocabulary& vocab, size_t buckets, std::string_view feature) {
    uint32_t id = vocab.id_or_size(feature);
    if (id < vocab.size()) return id;
    return static_cast<uint32_t>(vocab.size() + stable_key_hash(feature) % buckets);
  }

  Vocabulary unigrams_;
  Vocabulary bigrams_;
  FeaturizerConfig cfg_;
};

}  // namespace convbench::encoder
