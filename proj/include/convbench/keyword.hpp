// Keyword-overlap response scorers. Both work from corpus term statistics
// fitted once over training responses: tf-idf ranks by cosine similarity of
// weighted term-count vectors, BM25 by saturating per-term relevance sums.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "convbench/text.hpp"

namespace convbench::keyword {

// Document frequencies and corpus size; everything both scorers need.
class TermStats {
 public:
  void add_document(const std::vector<std::string>& tokens) {
    ++num_docs_;
    total_terms_ += tokens.size();
    seen_.clear();
    for (const auto& t : tokens) {
      if (seen_.insert(t).second) ++doc_freq_[t];
    }
  }

  uint64_t num_docs() const { return num_docs_; }

  uint64_t doc_freq(const std::string& term) const {
    auto it = doc_freq_.find(term);
    return it == doc_freq_.end() ? 0 : it->second;
  }

  double avg_doc_len() const {
    return num_docs_ == 0 ? 0.0 : static_cast<double>(total_terms_) / static_cast<double>(num_docs_);
  }

  // Smoothed inverse document frequency; strictly positive, defined even
  // for unseen terms and an empty corpus.
  double idf_smooth(const std::string& term) const {
    return std::log((static_cast<double>(num_docs_) + 1.0) /
                    (static_cast<double>(doc_freq(term)) + 1.0)) +
           1.0;
  }

  // Probabilistic idf with the +0.5 correction; zero for terms in more than
  // half the corpus is avoided by the +1 inside the log.
  double idf_saturating(const std::string& term) const {
    double df = static_cast<double>(doc_freq(term));
    double n = static_cast<double>(num_docs_);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  nlohmann::json to_json() const {
    nlohmann::json freq = nlohmann::json::object();
    for (const auto& [term, df] : doc_freq_) freq[term] = df;
    return {{"num_docs", num_docs_}, {"total_terms", total_terms_}, {"doc_freq", std::move(freq)}};
  }

  static TermStats from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("num_docs") || !j.contains("total_terms") ||
        !j.contains("doc_freq") || !j.at("doc_freq").is_object()) {
      throw std::runtime_error("malformed term statistics");
    }
    TermStats stats;
    stats.num_docs_ = j.at("num_docs").get<uint64_t>();
    stats.total_terms_ = j.at("total_terms").get<uint64_t>();
    for (const auto& [term, df] : j.at("doc_freq").items()) {
      stats.doc_freq_[term] = df.get<uint64_t>();
    }
    return stats;
  }

  void save(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + path);
      out << to_json().dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  static TermStats load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("malformed term statistics in " + path);
    return from_json(j);
  }

 private:
  uint64_t num_docs_ = 0;
  uint64_t total_terms_ = 0;
  std::unordered_map<std::string, uint64_t> doc_freq_;
  std::unordered_set<std::string> seen_;  // scratch, reused across add_document calls
};

namespace detail {

inline std::unordered_map<std::string, double> term_counts(const std::vector<std::string>& tokens) {
  std::unordered_map<std::string, double> counts;
  for (const auto& t : tokens) counts[t] += 1.0;
  return counts;
}

}  // namespace detail

// Cosine similarity of idf-weighted raw-count vectors. Either side empty
// (or all-zero) scores 0.
inline double tfidf_score(const TermStats& stats, const std::vector<std::string>& query,
                          const std::vector<std::string>& doc) {
  auto qc = detail::term_counts(query);
  auto dc = detail::term_counts(doc);
  double dot = 0.0, qnorm = 0.0, dnorm = 0.0;
  for (auto& [term, tf] : qc) {
    double w = tf * stats.idf_smooth(term);
    qnorm += w * w;
    auto it = dc.find(term);
    if (it != dc.end()) dot += w * it->second * stats.idf_smooth(term);
  }
  for (auto& [term, tf] : dc) {
    double w = tf * stats.idf_smooth(term);
    dnorm += w * w;
  }
  if (qnorm == 0.0 || dnorm == 0.0) return 0.0;
  return dot / (std::sqrt(qnorm) * std::sqrt(dnorm));
}

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Each query token occurrence contributes its term's saturating relevance;
// repeated query terms therefore count repeatedly.
inline double bm25_score(const TermStats& stats, const std::vector<std::string>& query,
                         const std::vector<std::string>& doc, const Bm25Params& params = {}) {
  if (doc.empty()) return 0.0;
  auto dc = detail::term_counts(doc);
  double avgdl = stats.avg_doc_len();
  double len_ratio = avgdl == 0.0 ? 1.0 : static_cast<double>(doc.size()) / avgdl;
  double score = 0.0;
  for (const auto& term : query) {
    auto it = dc.find(term);
    if (it == dc.end()) continue;
    double tf = it->second;
    score += stats.idf_saturating(term) * tf * (params.k1 + 1.0) /
             (tf + params.k1 * (1.0 - params.b + params.b * len_ratio));
  }
  return score;
}

}  // namespace convbench::keyword
