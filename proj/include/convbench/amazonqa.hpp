// Builds question/answer records from product Q&A dumps (JSON, one product
// question per line, each with any number of answers). Every answer becomes
// its own record whose context is the question. Questions are long-form, so
// the length ceiling is wider than for chat-style data. The split key is
// the product id: all questions about a product stay on one side.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "convbench/example.hpp"
#include "convbench/filters.hpp"
#include "convbench/pipeline.hpp"
#include "convbench/split.hpp"
#include "convbench/text.hpp"

namespace convbench::amazonqa {

struct QaRecord {
  std::string product_id;
  std::string question;
  std::vector<std::string> answers;
};

struct ParseOutcome {
  std::optional<QaRecord> record;
  std::string skip_reason;
};

struct QaConfig {
  size_t min_chars = 9;
  size_t max_chars = 512;
};

inline ParseOutcome parse_qa_record(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return {std::nullopt, "malformed"};

  auto asin = j.find("asin");
  auto question = j.find("question");
  if (asin == j.end() || !asin->is_string() || question == j.end() || !question->is_string()) {
    return {std::nullopt, "missing_field"};
  }
  QaRecord record;
  record.product_id = asin->get<std::string>();
  record.question = question->get<std::string>();
  if (auto answers = j.find("answers"); answers != j.end() && !answers->is_null()) {
    if (!answers->is_array()) return {std::nullopt, "missing_field"};
    for (const auto& a : *answers) {
      if (!a.is_string()) return {std::nullopt, "missing_field"};
      record.answers.push_back(a.get<std::string>());
    }
  }
  return {std::move(record), ""};
}

struct RecordResult {
  std::vector<KeyedExample> examples;
  std::map<std::string, uint64_t> dropped;
};

// One record per surviving answer; a failing question drops all answers.
inline RecordResult build_qa_examples(const QaRecord& record, const QaConfig& cfg) {
  RecordResult result;
  FilterConfig bounds;
  bounds.min_chars = cfg.min_chars;
  bounds.max_chars = cfg.max_chars;
  if (const char* v = length_violation(record.question, bounds); *v != '\0') {
    if (!record.answers.empty()) {
      result.dropped[std::string("question_") + v] += record.answers.size();
    }
    return result;
  }
  for (const auto& answer : record.answers) {
    if (const char* v = length_violation(answer, bounds); *v != '\0') {
      ++result.dropped[std::string("answer_") + v];
      continue;
    }
    Example ex;
    ex.context = record.question;
    ex.response = answer;
    ex.metadata = {{"product_id", record.product_id}};
    result.examples.push_back(KeyedExample{record.product_id, std::move(ex)});
  }
  return result;
}

struct BuildOptions {
  QaConfig filter;
  SplitConfig split;
  int num_shards = 1;
  uint64_t shuffle_seed = 0;
  std::string output_dir;
  Pipeline::Options pipeline;
};

struct BuildResult {
  PipelineStats stats;
  ShardManifest train;
  ShardManifest test;
};

inline BuildResult build_dataset(const std::vector<std::string>& input_files,
                                 const BuildOptions& opts, int workers) {
  validate(opts.split);
  Pipeline pipeline(opts.pipeline);

  auto lines = pipeline.source<std::string>("read", [input_files](Emitter<std::string>& out) {
    std::string line;
    for (const auto& path : input_files) {
      LineReader reader(path);
      while (reader.next(line)) {
        if (out.cancelled()) return;
        out.emit(std::move(line));
        line.clear();
      }
    }
  });

  auto records = lines.transform<QaRecord>("parse", [](std::string& line, Emitter<QaRecord>& out) {
    ParseOutcome parsed = parse_qa_record(line);
    if (parsed.record) {
      out.emit(std::move(*parsed.record));
    } else {
      out.skip(parsed.skip_reason);
    }
  });

  QaConfig filter = opts.filter;
  auto keyed = records.transform<KeyedExample>(
      "examples", [filter](QaRecord& record, Emitter<KeyedExample>& out) {
        RecordResult built = build_qa_examples(record, filter);
        for (const auto& [reason, count] : built.dropped) {
          for (uint64_t i = 0; i < count; ++i) out.skip(reason);
        }
        for (auto& ke : built.examples) out.emit(std::move(ke));
      });

  SplitConfig split = opts.split;
  auto parts = keyed.partition("split", 2, [split](const KeyedExample& ke) {
    return assign_split(ke.split_key, split) == Split::kTrain ? size_t{0} : size_t{1};
  });

  auto to_line = [](const KeyedExample& ke) { return serialize_example(ke.example); };
  auto train = parts[0].sink_shards(
      "train", {opts.output_dir + "/train", opts.num_shards, opts.shuffle_seed}, to_line);
  auto test = parts[1].sink_shards(
      "test", {opts.output_dir + "/test", opts.num_shards, mix64(opts.shuffle_seed, 1)}, to_line);

  BuildResult result;
  result.stats = pipeline.run(workers);
  result.train = train->manifest;
  result.test = test->manifest;
  return result;
}

}  // namespace convbench::amazonqa
