// Deterministic train/test assignment. A record's split is a pure function
// of its split key, so the same key lands in the same split on every run,
// on every machine, regardless of sharding or worker count.
#pragma once

#include <stdexcept>
#include <string_view>

#include "convbench/hash.hpp"

namespace convbench {

enum class Split { kTrain, kTest };

struct SplitConfig {
  int train_percent = 90;
  int num_buckets = 100;
};

inline void validate(const SplitConfig& cfg) {
  if (cfg.num_buckets < 1) throw std::invalid_argument("num_buckets must be >= 1");
  if (cfg.train_percent < 0 || cfg.train_percent > cfg.num_buckets) {
    throw std::invalid_argument("train_percent must be in [0, num_buckets]");
  }
}

inline Split assign_split(std::string_view key, const SplitConfig& cfg = {}) {
  validate(cfg);
  uint64_t bucket = stable_key_hash(key) % static_cast<uint64_t>(cfg.num_buckets);
  return bucket < static_cast<uint64_t>(cfg.train_percent) ? Split::kTrain : Split::kTest;
}

inline const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

}  // namespace convbench
