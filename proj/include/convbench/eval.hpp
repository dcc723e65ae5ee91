// The standardized selection benchmark: sample evaluation batches from a
// test set, score every context against every response in its batch, and
// count an example as correct only when the true response strictly outscores
// the other candidates. Results render as JSON entries and a markdown table.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "convbench/example.hpp"
#include "convbench/hash.hpp"

namespace convbench::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  size_t batch_size = 100;  // one true response plus batch_size-1 negatives
  size_t num_batches = 500;
  uint64_t seed = 0;
};

inline void validate(const EvalConfig& cfg) {
  if (cfg.batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  if (cfg.num_batches < 1) throw std::invalid_argument("need at least one batch");
}

struct EvalBatch {
  std::vector<std::string> contexts;
  std::vector<std::string> responses;
};

struct EvalBatches {
  std::vector<EvalBatch> batches;
  // true when the test set could not fill the requested number of batches
  bool reduced = false;
};

// Seeded uniform sample without replacement, chopped into full batches.
inline EvalBatches make_eval_batches(const std::vector<Example>& examples,
                                     const EvalConfig& cfg) {
  validate(cfg);
  if (examples.size() < cfg.batch_size) {
    throw EvalError("test set smaller than one batch: " + std::to_string(examples.size()) +
                    " of " + std::to_string(cfg.batch_size) + " examples");
  }
  EvalBatches result;
  size_t num_batches = cfg.num_batches;
  if (examples.size() < cfg.num_batches * cfg.batch_size) {
    num_batches = examples.size() / cfg.batch_size;
    result.reduced = true;
  }
  const size_t wanted = num_batches * cfg.batch_size;

  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng(mix64(cfg.seed, 0x5e1ec7));
  for (size_t i = 0; i < wanted; ++i) {
    std::swap(order[i], order[i + rng.next_below(order.size() - i)]);
  }

  result.batches.resize(num_batches);
  for (size_t b = 0; b < num_batches; ++b) {
    auto& batch = result.batches[b];
    batch.contexts.reserve(cfg.batch_size);
    batch.responses.reserve(cfg.batch_size);
    for (size_t r = 0; r < cfg.batch_size; ++r) {
      const Example& ex = examples[order[b * cfg.batch_size + r]];
      batch.contexts.push_back(ex.context);
      batch.responses.push_back(ex.response);
    }
  }
  return result;
}

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const std::string& context, const std::string& response) const = 0;

  // batch form; the default delegates to per-pair scoring
  virtual Eigen::MatrixXd score_batch(const std::vector<std::string>& contexts,
                                      const std::vector<std::string>& responses) const {
    Eigen::MatrixXd scores(contexts.size(), responses.size());
    for (size_t i = 0; i < contexts.size(); ++i) {
      for (size_t j = 0; j < responses.size(); ++j) {
        scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            score(contexts[i], responses[j]);
      }
    }
    return scores;
  }
};

namespace detail {

// Strict rule: the true response must beat every other candidate; any tie
// counts as incorrect.
inline size_t count_strict_wins(const Eigen::MatrixXd& scores) {
  size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    bool win = true;
    for (Eigen::Index j = 0; j < scores.cols() && win; ++j) {
      if (j != i && scores(i, j) >= scores(i, i)) win = false;
    }
    correct += win;
  }
  return correct;
}

}  // namespace detail

struct EvalOutcome {
  double accuracy = 0.0;
  size_t num_examples = 0;
};

inline EvalOutcome one_of_100_accuracy(const Scorer& scorer,
                                       const std::vector<EvalBatch>& batches) {
  size_t correct = 0;
  size_t total = 0;
  for (size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    if (batch.contexts.size() != batch.responses.size() || batch.contexts.empty()) {
      throw EvalError("malformed batch " + std::to_string(b));
    }
    Eigen::MatrixXd scores;
    try {
      scores = scorer.score_batch(batch.contexts, batch.responses);
    } catch (const std::exception& error) {
      throw EvalError("scorer " + scorer.name() + " failed on batch " + std::to_string(b) +
                      ": " + error.what());
    }
    correct += detail::count_strict_wins(scores);
    total += batch.contexts.size();
  }
  if (total == 0) throw EvalError("no examples to evaluate");
  return {static_cast<double>(correct) / static_cast<double>(total), total};
}

// The batch-form result must agree with per-pair scoring example for
// example, not just in aggregate.
inline bool batched_equivalence_check(const Scorer& scorer,
                                      const std::vector<EvalBatch>& batches) {
  for (const auto& batch : batches) {
    Eigen::MatrixXd batched = scorer.score_batch(batch.contexts, batch.responses);
    Eigen::MatrixXd pairwise(batch.contexts.size(), batch.responses.size());
    for (size_t i = 0; i < batch.contexts.size(); ++i) {
      for (size_t j = 0; j < batch.responses.size(); ++j) {
        pairwise(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            scorer.score(batch.contexts[i], batch.responses[j]);
      }
    }
    for (Eigen::Index i = 0; i < batched.rows(); ++i) {
      bool batched_win = true, pairwise_win = true;
      for (Eigen::Index j = 0; j < batched.cols(); ++j) {
        if (j == i) continue;
        if (batched(i, j) >= batched(i, i)) batched_win = false;
        if (pairwise(i, j) >= pairwise(i, i)) pairwise_win = false;
      }
      if (batched_win != pairwise_win) return false;
    }
  }
  return true;
}

struct EvalResult {
  std::string scorer;
  std::string dataset;
  double accuracy = 0.0;
  uint64_t num_examples = 0;
  uint64_t seed = 0;
};

inline nlohmann::ordered_json to_json(const EvalResult& result) {
  nlohmann::ordered_json j;
  j["scorer"] = result.scorer;
  j["dataset"] = result.dataset;
  j["accuracy"] = result.accuracy;
  j["num_examples"] = result.num_examples;
  j["seed"] = result.seed;
  return j;
}

inline EvalResult eval_result_from_json(const nlohmann::json& j) {
  EvalResult result;
  result.scorer = j.at("scorer").get<std::string>();
  result.dataset = j.at("dataset").get<std::string>();
  result.accuracy = j.at("accuracy").get<double>();
  result.num_examples = j.at("num_examples").get<uint64_t>();
  result.seed = j.at("seed").get<uint64_t>();
  return result;
}

// Markdown table: rows are scorers, columns are datasets, both sorted;
// cells show accuracy as a percentage with one decimal, "-" when missing.
inline std::string render_report(const std::vector<EvalResult>& results) {
  std::map<std::string, std::map<std::string, double>> cells;
  std::map<std::string, bool> datasets;
  for (const auto& r : results) {
    cells[r.scorer][r.dataset] = r.accuracy;
    datasets[r.dataset] = true;
  }
  std::string out = "| Scorer |";
  for (const auto& [dataset, unused] : datasets) out += " " + dataset + " |";
  out += "\n| --- |";
  for (size_t i = 0; i < datasets.size(); ++i) out += " --- |";
  out += "\n";
  for (const auto& [scorer, row] : cells) {
    out += "| " + scorer + " |";
    for (const auto& [dataset, unused] : datasets) {
      auto it = row.find(dataset);
      if (it == row.end()) {
        out += " - |";
      } else {
        char cell[32];
        std::snprintf(cell, sizeof(cell), "%.1f", it->second * 100.0);
        out += std::string(" ") + cell + " |";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace convbench::eval
