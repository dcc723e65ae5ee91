#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "convbench/example.hpp"
#include "convbench/hash.hpp"
#include "convbench/pipeline.hpp"

using namespace convbench;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("convbench-pipe-" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// A synthetic keyed workload shaped like real ingestion: skewed group sizes,
// values arriving in no particular order.
std::vector<std::pair<std::string, int>> synthetic_pairs(int n, uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::pair<std::string, int>> pairs;
  pairs.reserve(n);
  for (int i = 0; i < n; ++i) {
    int key = static_cast<int>(rng.next_below(97));
    key = key * key % 97;  // skew
    pairs.emplace_back("key-" + std::to_string(key), static_cast<int>(rng.next_below(1000000)));
  }
  return pairs;
}

}  // namespace

TEST_CASE("group_by_key groups values under sorted keys, preserving order") {
  std::vector<std::pair<std::string, int>> pairs = {
      {"b", 1}, {"a", 2}, {"b", 3}, {"c", 4}, {"a", 5}};
  auto groups = group_by_key(pairs);
  REQUIRE(groups.size() == 3);
  CHECK(groups[0].key == "a");
  CHECK(groups[0].values == std::vector<int>{2, 5});
  CHECK(groups[1].key == "b");
  CHECK(groups[1].values == std::vector<int>{1, 3});
  CHECK(groups[2].key == "c");
  CHECK(groups[2].values == std::vector<int>{4});
  CHECK(group_by_key<int>({}).empty());
}

TEST_CASE("single stage pipelines move every record") {
  Pipeline p;
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) {
    for (int i = 0; i < 10000; ++i) out.emit(i);
  });
  auto doubled = numbers.transform<int>("double", [](int& v, Emitter<int>& out) {
    if (v % 3 == 0) {
      out.skip("multiple_of_three");
      return;
    }
    out.emit(v * 2);
  });
  auto collected = doubled.collect("sink");
  PipelineStats stats = p.run(4);

  CHECK(collected->size() == 10000 - 3334);
  long long sum = 0;
  for (int v : *collected) sum += v;
  long long want = 0;
  for (int i = 0; i < 10000; ++i) {
    if (i % 3 != 0) want += 2 * i;
  }
  CHECK(sum == want);

  const StageStats* source = stats.stage("numbers");
  const StageStats* mid = stats.stage("double");
  const StageStats* sink = stats.stage("sink");
  REQUIRE(source != nullptr);
  REQUIRE(mid != nullptr);
  REQUIRE(sink != nullptr);
  CHECK(source->records_out == 10000);
  CHECK(mid->records_in == 10000);
  CHECK(mid->records_out == 6666);
  CHECK(mid->filtered.at("multiple_of_three") == 3334);
  CHECK(mid->records_in == mid->records_out + mid->filtered_total());
  CHECK(sink->records_in == 6666);
}

TEST_CASE("grouping emits sorted keys with the caller's value order") {
  auto pairs = synthetic_pairs(20000, 11);
  auto want = group_by_key(pairs);
  for (auto& g : want) std::sort(g.values.begin(), g.values.end());

  Pipeline p;
  auto source = p.source<std::pair<std::string, int>>(
      "pairs", [&pairs](Emitter<std::pair<std::string, int>>& out) {
        for (const auto& pr : pairs) out.emit(pr);
      });
  GroupConfig<std::pair<std::string, int>> cfg;
  cfg.value_order = [](const auto& a, const auto& b) { return a.second < b.second; };
  auto grouped = source.group_by(
      "group", [](const auto& pr) { return pr.first; }, std::move(cfg));
  auto collected = grouped.collect("sink");
  PipelineStats stats = p.run(4);

  // group output arrives in chunks that may interleave across workers, but
  // within this single-consumer collect the emitted sequence is key-sorted
  REQUIRE(collected->size() == want.size());
  std::map<std::string, std::vector<int>> got;
  for (const auto& g : *collected) {
    std::vector<int> values;
    for (const auto& pr : g.values) values.push_back(pr.second);
    got[g.key] = std::move(values);
  }
  for (const auto& g : want) {
    REQUIRE(got.count(g.key) == 1);
    CHECK(got[g.key] == g.values);
  }
  CHECK(stats.stage("group")->records_in == 20000);
  CHECK(stats.stage("group")->records_out == want.size());
}

TEST_CASE("grouping with a tiny memory budget spills and returns the same answer") {
  auto pairs = synthetic_pairs(30000, 12);
  auto run_with_budget = [&pairs](size_t budget) {
    Pipeline p;
    auto source = p.source<std::pair<std::string, int>>(
        "pairs", [&pairs](Emitter<std::pair<std::string, int>>& out) {
          for (const auto& pr : pairs) out.emit(pr);
        });
    GroupConfig<std::pair<std::string, int>> cfg;
    cfg.memory_budget_bytes = budget;
    cfg.spill_partitions = 7;
    cfg.encode = [](const std::pair<std::string, int>& pr) {
      return pr.first + "\x1f" + std::to_string(pr.second);
    };
    cfg.decode = [](std::string_view data) {
      size_t sep = data.find('\x1f');
      return std::make_pair(std::string(data.substr(0, sep)),
                            std::stoi(std::string(data.substr(sep + 1))));
    };
    cfg.value_order = [](const auto& a, const auto& b) { return a.second < b.second; };
    auto grouped = source.group_by(
        "group", [](const auto& pr) { return pr.first; }, std::move(cfg));
    auto serialized = grouped.transform<std::string>(
        "fmt", [](KeyedGroup<std::pair<std::string, int>>& g, Emitter<std::string>& out) {
          std::string s = g.key + ":";
          for (const auto& pr : g.values) s += std::to_string(pr.second) + ",";
          out.emit(std::move(s));
        });
    auto collected = serialized.collect("sink");
    p.run(4);
    std::vector<std::string> lines = *collected;
    std::sort(lines.begin(), lines.end());
    return lines;
  };

  auto in_memory = run_with_budget(size_t{1} << 30);
  auto spilled = run_with_budget(1);  // spill immediately
  CHECK(in_memory == spilled);
}

TEST_CASE("pipeline output bytes are identical for any worker count") {
  auto pairs = synthetic_pairs(15000, 13);
  auto build = [&pairs](int workers, const std::filesystem::path& dir) {
    Pipeline p;
    auto source = p.source<std::pair<std::string, int>>(
        "pairs", [&pairs](Emitter<std::pair<std::string, int>>& out) {
          for (const auto& pr : pairs) out.emit(pr);
        });
    GroupConfig<std::pair<std::string, int>> cfg;
    cfg.value_order = [](const auto& a, const auto& b) { return a.second < b.second; };
    auto grouped = source.group_by(
        "group", [](const auto& pr) { return pr.first; }, std::move(cfg));
    auto examples = grouped.transform<Example>(
        "fmt", [](KeyedGroup<std::pair<std::string, int>>& g, Emitter<Example>& out) {
          // several records per group so shards hold a few thousand lines
          for (size_t i = 0; i + 1 < g.values.size(); i += 2) {
            Example ex;
            ex.context = g.key + " " + std::to_string(g.values[i].second);
            ex.response = std::to_string(g.values[i + 1].second);
            out.emit(std::move(ex));
          }
        });
    auto sink = examples.sink_shards("sink", {(dir / "data").string(), 3, 777},
                                     [](const Example& ex) { return serialize_example(ex); });
    p.run(workers);
    return sink->manifest;
  };

  auto dir1 = temp_dir("w1");
  auto dir2 = temp_dir("w2");
  auto dir8 = temp_dir("w8");
  auto m1 = build(1, dir1);
  auto m2 = build(2, dir2);
  auto m8 = build(8, dir8);
  CHECK(m1.total > 1000);
  CHECK(m1.counts == m2.counts);
  CHECK(m1.counts == m8.counts);
  for (int s = 0; s < 3; ++s) {
    std::string a = file_bytes(shard_path((dir1 / "data").string(), s, 3));
    std::string b = file_bytes(shard_path((dir2 / "data").string(), s, 3));
    std::string c = file_bytes(shard_path((dir8 / "data").string(), s, 3));
    CHECK(a == b);
    CHECK(a == c);
  }
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  std::filesystem::remove_all(dir8);
}

TEST_CASE("partition routes records and keeps totals conserved") {
  Pipeline p;
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) {
    for (int i = 0; i < 5000; ++i) out.emit(i);
  });
  auto parts = numbers.partition("route", 3, [](const int& v) { return static_cast<size_t>(v % 3); });
  REQUIRE(parts.size() == 3);
  std::vector<std::shared_ptr<std::vector<int>>> sinks;
  for (int i = 0; i < 3; ++i) sinks.push_back(parts[i].collect("sink" + std::to_string(i)));
  PipelineStats stats = p.run(4);

  uint64_t total = 0;
  for (int i = 0; i < 3; ++i) {
    for (int v : *sinks[i]) CHECK(v % 3 == i);
    total += sinks[i]->size();
  }
  CHECK(total == 5000);
  CHECK(stats.stage("route")->records_in == 5000);
  CHECK(stats.stage("route")->records_out == 5000);
  CHECK(stats.stage("sink0")->records_in + stats.stage("sink1")->records_in +
            stats.stage("sink2")->records_in ==
        5000);
}

TEST_CASE("a throwing stage aborts the run and names itself") {
  Pipeline p;
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) {
    for (int i = 0; i < 100000; ++i) out.emit(i);
  });
  auto bad = numbers.transform<int>("exploder", [](int& v, Emitter<int>& out) {
    if (v == 1234) throw std::runtime_error("bad record 1234");
    out.emit(v);
  });
  auto sink = bad.collect("sink");
  try {
    p.run(4);
    FAIL("expected PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "exploder");
    CHECK(std::string(e.what()).find("bad record 1234") != std::string::npos);
  }
}

TEST_CASE("a throwing source aborts the run") {
  Pipeline p;
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) {
    for (int i = 0; i < 10; ++i) out.emit(i);
    throw std::runtime_error("input went away");
  });
  auto sink = numbers.collect("sink");
  CHECK_THROWS_AS(p.run(2), PipelineError);
}

TEST_CASE("an out of range partition index aborts the run") {
  Pipeline p;
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) {
    for (int i = 0; i < 100; ++i) out.emit(i);
  });
  auto parts = numbers.partition("route", 2, [](const int& v) { return static_cast<size_t>(v); });
  auto s0 = parts[0].collect("sink0");
  auto s1 = parts[1].collect("sink1");
  CHECK_THROWS_AS(p.run(2), PipelineError);
}

TEST_CASE("tiny queues still drain large streams") {
  Pipeline::Options opts;
  opts.queue_capacity_records = 64;
  opts.chunk_records = 16;
  Pipeline p(opts);
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) {
    for (int i = 0; i < 50000; ++i) out.emit(i);
  });
  auto plus_one = numbers.transform<int>("inc", [](int& v, Emitter<int>& out) { out.emit(v + 1); });
  auto odd_even = plus_one.partition("route", 2, [](const int& v) { return static_cast<size_t>(v % 2); });
  auto s0 = odd_even[0].collect("even");
  auto s1 = odd_even[1].collect("odd");
  PipelineStats stats = p.run(3);
  CHECK(s0->size() + s1->size() == 50000);
  CHECK(stats.stage("inc")->records_out == 50000);
}

TEST_CASE("a stream cannot be consumed twice") {
  Pipeline p;
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) { out.emit(1); });
  auto a = numbers.collect("a");
  CHECK_THROWS_AS(numbers.collect("b"), std::logic_error);
}

TEST_CASE("a pipeline cannot run twice") {
  Pipeline p;
  auto numbers = p.source<int>("numbers", [](Emitter<int>& out) { out.emit(1); });
  auto a = numbers.collect("a");
  p.run(1);
  CHECK_THROWS_AS(p.run(1), std::logic_error);
}
