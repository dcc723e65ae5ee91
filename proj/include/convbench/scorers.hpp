// Concrete scorers plugging every ranking method into the evaluation
// harness. Embedding- and encoder-backed scorers override the batch form to
// embed each text once per batch; the per-entry arithmetic is kept identical
// to the per-pair path so both report the same decisions.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "convbench/embedding.hpp"
#include "convbench/encoder.hpp"
#include "convbench/eval.hpp"
#include "convbench/featurizer.hpp"
#include "convbench/hash.hpp"
#include "convbench/keyword.hpp"
#include "convbench/text.hpp"
#include "convbench/vector_map.hpp"

namespace convbench::scorers {

class TfidfScorer : public eval::Scorer {
 public:
  explicit TfidfScorer(keyword::TermStats stats) : stats_(std::move(stats)) {}

  std::string name() const override { return "tfidf"; }

  double score(const std::string& context, const std::string& response) const override {
    return keyword::tfidf_score(stats_, tokenize(context), tokenize(response));
  }

 private:
  keyword::TermStats stats_;
};

class Bm25Scorer : public eval::Scorer {
 public:
  explicit Bm25Scorer(keyword::TermStats stats, keyword::Bm25Params params = {})
      : stats_(std::move(stats)), params_(params) {}

  std::string name() const override { return "bm25"; }

  double score(const std::string& context, const std::string& response) const override {
    return keyword::bm25_score(stats_, tokenize(context), tokenize(response), params_);
  }

 private:
  keyword::TermStats stats_;
  keyword::Bm25Params params_;
};

namespace detail {

inline Eigen::MatrixXd embed_all(const EmbeddingProvider& provider,
                                 const std::vector<std::string>& texts) {
  Eigen::MatrixXd embedded(texts.size(), provider.dim());
  for (size_t i = 0; i < texts.size(); ++i) {
    embedded.row(static_cast<Eigen::Index>(i)) = provider.embed(texts[i]);
  }
  return embedded;
}

}  // namespace detail

class SimScorer : public eval::Scorer {
 public:
  explicit SimScorer(std::shared_ptr<const EmbeddingProvider> provider)
      : provider_(std::move(provider)) {}

  std::string name() const override { return "sim"; }

  double score(const std::string& context, const std::string& response) const override {
    return vectormap::sim_score(provider_->embed(context), provider_->embed(response));
  }

  Eigen::MatrixXd score_batch(const std::vector<std::string>& contexts,
                              const std::vector<std::string>& responses) const override {
    Eigen::MatrixXd x = detail::embed_all(*provider_, contexts);
    Eigen::MatrixXd y = detail::embed_all(*provider_, responses);
    Eigen::MatrixXd scores(x.rows(), y.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        scores(i, j) = vectormap::sim_score(x.row(i).transpose(), y.row(j).transpose());
      }
    }
    return scores;
  }

 private:
  std::shared_ptr<const EmbeddingProvider> provider_;
};

class MapScorer : public eval::Scorer {
 public:
  MapScorer(std::shared_ptr<const EmbeddingProvider> provider, vectormap::MapModel model)
      : provider_(std::move(provider)), model_(std::move(model)) {}

  std::string name() const override { return "map"; }

  double score(const std::string& context, const std::string& response) const override {
    return vectormap::map_score(provider_->embed(context), provider_->embed(response), model_);
  }

  Eigen::MatrixXd score_batch(const std::vector<std::string>& contexts,
                              const std::vector<std::string>& responses) const override {
    Eigen::MatrixXd x = detail::embed_all(*provider_, contexts);
    Eigen::MatrixXd y = detail::embed_all(*provider_, responses);
    Eigen::MatrixXd scores(x.rows(), y.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        scores(i, j) = vectormap::map_score(x.row(i).transpose(), y.row(j).transpose(), model_);
      }
    }
    return scores;
  }

 private:
  std::shared_ptr<const EmbeddingProvider> provider_;
  vectormap::MapModel model_;
};

class EncoderScorer : public eval::Scorer {
 public:
  EncoderScorer(encoder::EncoderParams params, encoder::Featurizer featurizer)
      : params_(std::move(params)), featurizer_(std::move(featurizer)) {}

  std::string name() const override { return "encoder"; }

  double score(const std::string& context, const std::string& response) const override {
    auto e_ctx = encoder::encode(params_, featurizer_, encoder::Side::kContext, context);
    auto e_rsp = encoder::encode(params_, featurizer_, encoder::Side::kResponse, response);
    return params_.scale() * e_ctx.dot(e_rsp);
  }

  Eigen::MatrixXd score_batch(const std::vector<std::string>& contexts,
                              const std::vector<std::string>& responses) const override {
    std::vector<Eigen::VectorXd> x, y;
    x.reserve(contexts.size());
    y.reserve(responses.size());
    for (const auto& c : contexts) {
      x.push_back(encoder::encode(params_, featurizer_, encoder::Side::kContext, c));
    }
    for (const auto& r : responses) {
      y.push_back(encoder::encode(params_, featurizer_, encoder::Side::kResponse, r));
    }
    const double scale = params_.scale();
    Eigen::MatrixXd scores(contexts.size(), responses.size());
    for (size_t i = 0; i < x.size(); ++i) {
      for (size_t j = 0; j < y.size(); ++j) {
        scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            scale * x[i].dot(y[j]);
      }
    }
    return scores;
  }

 private:
  encoder::EncoderParams params_;
  encoder::Featurizer featurizer_;
};

// Seeded tie-free noise, the chance-level control for the benchmark.
class RandomScorer : public eval::Scorer {
 public:
  explicit RandomScorer(uint64_t seed) : seed_(seed) {}

  std::string name() const override { return "random"; }

  double score(const std::string& context, const std::string& response) const override {
    uint64_t h = mix64(seed_, mix64(stable_key_hash(context), stable_key_hash(response)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

 private:
  uint64_t seed_;
};

}  // namespace convbench::scorers
