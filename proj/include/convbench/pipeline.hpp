// A small deterministic dataflow engine: bounded queues between stages,
// a fixed worker count per stage, and grouping that spills to disk when a
// memory budget is exceeded. Stages exchange chunks of records rather than
// single records to keep queue overhead negligible.
//
// Determinism contract: stage functions must be pure per record. Record
// *arrival* order downstream is intentionally unspecified; the points that
// restore a canonical order are the group-by stage (sorted keys, caller-
// supplied value order) and the shard sink (canonical shard layout). Given
// that, pipeline outputs are byte-identical for any worker count.
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iterator>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>
#include <unistd.h>

#include "convbench/hash.hpp"
#include "convbench/shards.hpp"

namespace convbench {

class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, std::string detail)
      : std::runtime_error("stage \"" + stage + "\": " + detail), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageStats {
  std::string name;
  uint64_t records_in = 0;
  uint64_t records_out = 0;
  std::map<std::string, uint64_t> filtered;  // reason -> count

  uint64_t filtered_total() const {
    uint64_t sum = 0;
    for (const auto& [reason, count] : filtered) sum += count;
    return sum;
  }
};

struct PipelineStats {
  std::vector<StageStats> stages;  // creation order
  double wall_seconds = 0;

  const StageStats* stage(std::string_view name) const {
    for (const auto& s : stages) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  nlohmann::json to_json(bool include_timing = false) const {
    nlohmann::json out;
    out["stages"] = nlohmann::json::array();
    for (const auto& s : stages) {
      out["stages"].push_back({{"name", s.name},
                               {"records_in", s.records_in},
                               {"records_out", s.records_out},
                               {"filtered", s.filtered}});
    }
    if (include_timing) out["wall_seconds"] = wall_seconds;
    return out;
  }

  std::string summary() const {
    std::string out;
    for (const auto& s : stages) {
      out += s.name + ": in=" + std::to_string(s.records_in) +
             " out=" + std::to_string(s.records_out);
      for (const auto& [reason, count] : s.filtered) {
        out += " " + reason + "=" + std::to_string(count);
      }
      out += "\n";
    }
    return out;
  }
};

template <typename T>
struct KeyedGroup {
  std::string key;
  std::vector<T> values;
};

// Spill/ordering knobs for group_by. encode/decode form the codec used for
// out-of-core buckets; grouping stays fully in memory when they are absent.
template <typename T>
struct GroupConfig {
  size_t memory_budget_bytes = size_t{1} << 30;
  int spill_partitions = 64;
  std::function<size_t(const T&)> size_of;                    // rough bytes per value
  std::function<std::string(const T&)> encode;
  std::function<T(std::string_view)> decode;
  std::function<bool(const T&, const T&)> value_order;        // canonical within-group order
};

namespace pipedetail {

struct StageCounters {
  explicit StageCounters(std::string n) : name(std::move(n)) {}
  std::string name;
  std::atomic<uint64_t> records_in{0};
  std::atomic<uint64_t> records_out{0};
  std::mutex mu;
  std::map<std::string, uint64_t> filtered;

  void merge_filtered(const std::map<std::string, uint64_t>& local) {
    if (local.empty()) return;
    std::lock_guard<std::mutex> lock(mu);
    for (const auto& [reason, count] : local) filtered[reason] += count;
  }

  StageStats snapshot() {
    StageStats s;
    s.name = name;
    s.records_in = records_in.load();
    s.records_out = records_out.load();
    std::lock_guard<std::mutex> lock(mu);
    s.filtered = filtered;
    return s;
  }
};

struct ChannelBase {
  virtual ~ChannelBase() = default;
  virtual void poison() = 0;
};

// Bounded MPMC queue of record chunks. Capacity is counted in records; one
// chunk may overshoot it by less than a chunk size.
template <typename T>
class Channel : public ChannelBase {
 public:
  explicit Channel(size_t capacity_records) : capacity_(capacity_records < 1 ? 1 : capacity_records) {}

  void add_producers(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    producers_ += n;
  }

  void producer_done() {
    std::lock_guard<std::mutex> lock(mu_);
    if (--producers_ == 0) not_empty_.notify_all();
  }

  // False once the channel is poisoned; the chunk is dropped in that case.
  bool push(std::vector<T>&& chunk) {
    if (chunk.empty()) return true;
    std::unique_lock<std::mutex> lock(mu_);
    not_full_.wait(lock, [&] { return records_ < capacity_ || poisoned_; });
    if (poisoned_) return false;
    records_ += chunk.size();
    chunks_.push_back(std::move(chunk));
    not_empty_.notify_one();
    return true;
  }

  // False when the stream is exhausted (all producers done) or poisoned.
  bool pop(std::vector<T>& out) {
    std::unique_lock<std::mutex> lock(mu_);
    not_empty_.wait(lock, [&] { return !chunks_.empty() || producers_ == 0 || poisoned_; });
    if (poisoned_ || chunks_.empty()) return false;
    out = std::move(chunks_.front());
    chunks_.pop_front();
    records_ -= out.size();
    not_full_.notify_one();
    return true;
  }

  void poison() override {
    std::lock_guard<std::mutex> lock(mu_);
    poisoned_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<std::vector<T>> chunks_;
  size_t records_ = 0;
  size_t capacity_;
  int producers_ = 0;
  bool poisoned_ = false;
};

struct NodeBase {
  virtual ~NodeBase() = default;
  virtual void start(int workers) = 0;
  virtual void join() = 0;
};

}  // namespace pipedetail

// Passed to stage functions to produce records and account for drops.
template <typename T>
class Emitter {
 public:
  Emitter(pipedetail::Channel<T>* out, pipedetail::StageCounters* counters, size_t chunk_records)
      : out_(out), counters_(counters), chunk_records_(chunk_records) {
    buffer_.reserve(chunk_records_);
  }

  void emit(T value) {
    if (cancelled_) return;
    buffer_.push_back(std::move(value));
    if (buffer_.size() >= chunk_records_) flush_chunk();
  }

  void skip(std::string_view reason) { ++local_filtered_[std::string(reason)]; }

  // True once downstream has shut down; producing more is pointless.
  bool cancelled() const { return cancelled_; }

  // Flush buffered records and fold local skip counts into the stage totals.
  void finish() {
    flush_chunk();
    counters_->merge_filtered(local_filtered_);
    local_filtered_.clear();
  }

 private:
  void flush_chunk() {
    if (buffer_.empty() || cancelled_) return;
    counters_->records_out += buffer_.size();
    if (out_ == nullptr || !out_->push(std::move(buffer_))) cancelled_ = true;
    buffer_ = {};
    buffer_.reserve(chunk_records_);
  }

  pipedetail::Channel<T>* out_;
  pipedetail::StageCounters* counters_;
  size_t chunk_records_;
  std::vector<T> buffer_;
  std::map<std::string, uint64_t> local_filtered_;
  bool cancelled_ = false;
};

// Result handle for a shard sink; populated when the pipeline finishes.
struct ShardSinkResult {
  ShardManifest manifest;
};

template <typename T>
class Stream;

class Pipeline {
 public:
  struct Options {
    size_t queue_capacity_records = 10000;
    size_t chunk_records = 256;
  };

  Pipeline() = default;
  explicit Pipeline(Options opts) : opts_(opts) {}

  template <typename T>
  Stream<T> source(std::string name, std::function<void(Emitter<T>&)> body);

  // Runs the whole graph with `workers` threads per parallel stage (sources
  // always run single-threaded). Throws PipelineError if any stage failed.
  PipelineStats run(int workers = 1) {
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (ran_) throw std::logic_error("pipeline already ran");
    ran_ = true;
    auto t0 = std::chrono::steady_clock::now();
    for (auto& node : nodes_) node->start(workers);
    for (auto& node : nodes_) node->join();
    if (failed_.load()) throw PipelineError(error_stage_, error_detail_);
    PipelineStats stats;
    for (auto& c : counters_) stats.stages.push_back(c->snapshot());
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return stats;
  }

  const Options& options() const { return opts_; }

  // --- below here: plumbing shared with Stream handles ---

  void fail(const std::string& stage, const std::string& detail) {
    {
      std::lock_guard<std::mutex> lock(error_mu_);
      if (!failed_.load()) {
        error_stage_ = stage;
        error_detail_ = detail;
        failed_.store(true);
      }
    }
    std::lock_guard<std::mutex> lock(channels_mu_);
    for (auto& ch : channels_) ch->poison();
  }

  bool failed() const { return failed_.load(); }

  pipedetail::StageCounters* add_counters(std::string name) {
    counters_.push_back(std::make_unique<pipedetail::StageCounters>(std::move(name)));
    return counters_.back().get();
  }

  template <typename T>
  std::shared_ptr<pipedetail::Channel<T>> add_channel() {
    auto ch = std::make_shared<pipedetail::Channel<T>>(opts_.queue_capacity_records);
    std::lock_guard<std::mutex> lock(channels_mu_);
    channels_.push_back(ch);
    return ch;
  }

  void add_node(std::unique_ptr<pipedetail::NodeBase> node) { nodes_.push_back(std::move(node)); }

 private:
  Options opts_;
  std::vector<std::unique_ptr<pipedetail::NodeBase>> nodes_;
  std::vector<std::unique_ptr<pipedetail::StageCounters>> counters_;
  std::vector<std::shared_ptr<pipedetail::ChannelBase>> channels_;
  std::mutex channels_mu_;
  std::mutex error_mu_;
  std::atomic<bool> failed_{false};
  std::string error_stage_, error_detail_;
  bool ran_ = false;
};

namespace pipedetail {

template <typename Body>
struct SourceNode : NodeBase {
  Pipeline* pipeline;
  std::string name;
  StageCounters* counters;
  Body body;
  std::function<void()> producer_done;
  std::function<void(int)> add_producers;
  std::thread thread;

  void start(int) override {
    add_producers(1);
    thread = std::thread([this] {
      try {
        body();
      } catch (const std::exception& e) {
        pipeline->fail(name, e.what());
      } catch (...) {
        pipeline->fail(name, "unknown error");
      }
      producer_done();
    });
  }

  void join() override {
    if (thread.joinable()) thread.join();
  }
};

template <typename In>
struct WorkerNode : NodeBase {
  Pipeline* pipeline;
  std::string name;
  StageCounters* counters;
  std::shared_ptr<Channel<In>> in;
  // per-worker body: drains `in` until exhausted
  std::function<void()> worker_body;
  // runs in the last worker after every worker drained its input
  std::function<void()> last_worker_epilogue;
  std::function<void(int)> add_producers;   // may be empty for pure sinks
  std::function<void()> producer_done;
  std::atomic<int> remaining{0};
  std::vector<std::thread> threads;

  void start(int workers) override {
    remaining.store(workers);
    if (add_producers) add_producers(workers);
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([this] {
        try {
          worker_body();
          if (remaining.fetch_sub(1) == 1 && last_worker_epilogue && !pipeline->failed()) {
            last_worker_epilogue();
          }
        } catch (const std::exception& e) {
          pipeline->fail(name, e.what());
        } catch (...) {
          pipeline->fail(name, "unknown error");
        }
        if (producer_done) producer_done();
      });
    }
  }

  void join() override {
    for (auto& t : threads) {
      if (t.joinable()) t.join();
    }
  }
};

inline std::filesystem::path make_spill_dir() {
  static std::atomic<uint64_t> counter{0};
  uint64_t tag = mix64(static_cast<uint64_t>(::getpid()), counter.fetch_add(1));
  char name[64];
  std::snprintf(name, sizeof(name), "convbench-spill-%016llx",
                static_cast<unsigned long long>(tag));
  std::filesystem::path dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(dir);
  return dir;
}

// Shared state for a grouping stage: striped in-memory maps that migrate to
// hash-partitioned bucket files once the memory budget is exceeded.
template <typename T>
struct GroupState {
  explicit GroupState(GroupConfig<T> cfg) : config(std::move(cfg)) {
    can_spill = static_cast<bool>(config.encode) && static_cast<bool>(config.decode);
  }

  static constexpr size_t kStripes = 32;

  struct Stripe {
    std::mutex mu;
    std::unordered_map<std::string, std::vector<T>> groups;
  };

  struct SpillBucket {
    std::mutex mu;
    std::ofstream out;
    std::string buffer;
  };

  GroupConfig<T> config;
  std::array<Stripe, kStripes> stripes;
  std::atomic<size_t> approx_bytes{0};
  bool can_spill = false;

  std::shared_mutex mode_mu;           // shared: inserts; exclusive: spill transition
  std::atomic<bool> spilled{false};
  std::filesystem::path spill_dir;
  std::vector<std::unique_ptr<SpillBucket>> buckets;

  size_t value_bytes(const std::string& key, const T& value) const {
    size_t v = config.size_of ? config.size_of(value) : sizeof(T);
    return v + key.size() + 48;  // rough per-entry bookkeeping
  }

  void insert(std::string key, T value) {
    std::shared_lock<std::shared_mutex> mode(mode_mu);
    if (spilled.load(std::memory_order_relaxed)) {
      append_to_bucket(key, value);
      return;
    }
    size_t bytes = value_bytes(key, value);
    size_t stripe_idx = static_cast<size_t>(stable_key_hash(key) % kStripes);
    {
      auto& stripe = stripes[stripe_idx];
      std::lock_guard<std::mutex> lock(stripe.mu);
      stripe.groups[std::move(key)].push_back(std::move(value));
    }
    size_t total = approx_bytes.fetch_add(bytes) + bytes;
    if (total > config.memory_budget_bytes && can_spill) {
      mode.unlock();
      begin_spill();
    }
  }

  void begin_spill() {
    std::unique_lock<std::shared_mutex> mode(mode_mu);
    if (spilled.load()) return;
    spill_dir = make_spill_dir();
    buckets.clear();
    for (int i = 0; i < config.spill_partitions; ++i) {
      auto bucket = std::make_unique<SpillBucket>();
      bucket->out.open(bucket_path(i), std::ios::binary | std::ios::trunc);
      if (!bucket->out) throw ShardIoError("cannot open spill file: " + bucket_path(i));
      buckets.push_back(std::move(bucket));
    }
    for (auto& stripe : stripes) {
      for (auto& [key, values] : stripe.groups) {
        for (const T& v : values) append_to_bucket(key, v);
      }
      stripe.groups.clear();
    }
    approx_bytes.store(0);
    spilled.store(true);
  }

  std::string bucket_path(int i) const {
    return (spill_dir / ("bucket-" + std::to_string(i) + ".bin")).string();
  }

  void append_to_bucket(const std::string& key, const T& value) {
    std::string encoded = config.encode(value);
    size_t idx = static_cast<size_t>(stable_key_hash(key) % static_cast<uint64_t>(buckets.size()));
    auto& bucket = *buckets[idx];
    std::lock_guard<std::mutex> lock(bucket.mu);
    append_frame(bucket.buffer, key);
    append_frame(bucket.buffer, encoded);
    if (bucket.buffer.size() >= (size_t{1} << 16)) flush_bucket(bucket);
  }

  static void append_frame(std::string& buf, std::string_view payload) {
    uint32_t len = static_cast<uint32_t>(payload.size());
    char hdr[4] = {static_cast<char>(len & 0xFF), static_cast<char>((len >> 8) & 0xFF),
                   static_cast<char>((len >> 16) & 0xFF), static_cast<char>((len >> 24) & 0xFF)};
    buf.append(hdr, 4);
    buf.append(payload.data(), payload.size());
  }

  void flush_bucket(SpillBucket& bucket) {
    if (bucket.buffer.empty()) return;
    bucket.out.write(bucket.buffer.data(), static_cast<std::streamsize>(bucket.buffer.size()));
    if (!bucket.out) throw ShardIoError("spill write failed");
    bucket.buffer.clear();
  }

  // Emits every group in sorted key order. Single-threaded by construction
  // (runs in the last worker of the stage).
  void emit_all(Emitter<KeyedGroup<T>>& emitter) {
    if (!spilled.load()) {
      std::vector<std::pair<const std::string*, std::vector<T>*>> entries;
      for (auto& stripe : stripes) {
        for (auto& [key, values] : stripe.groups) entries.emplace_back(&key, &values);
      }
      std::sort(entries.begin(), entries.end(),
                [](const auto& a, const auto& b) { return *a.first < *b.first; });
      for (auto& [key, values] : entries) {
        emit_group(emitter, *key, std::move(*values));
        if (emitter.cancelled()) return;
      }
      return;
    }
    for (auto& bucket : buckets) {
      flush_bucket(*bucket);
      bucket->out.close();
    }
    for (int i = 0; i < config.spill_partitions; ++i) {
      std::unordered_map<std::string, std::vector<T>> groups = read_bucket(bucket_path(i));
      std::vector<const std::string*> keys;
      keys.reserve(groups.size());
      for (auto& [key, values] : groups) keys.push_back(&key);
      std::sort(keys.begin(), keys.end(), [](const auto* a, const auto* b) { return *a < *b; });
      for (const auto* key : keys) {
        emit_group(emitter, *key, std::move(groups[*key]));
        if (emitter.cancelled()) return;
      }
      std::error_code ec;
      std::filesystem::remove(bucket_path(i), ec);
    }
    std::error_code ec;
    std::filesystem::remove_all(spill_dir, ec);
  }

  void emit_group(Emitter<KeyedGroup<T>>& emitter, const std::string& key, std::vector<T>&& values) {
    if (config.value_order) {
      std::stable_sort(values.begin(), values.end(), config.value_order);
    }
    emitter.emit(KeyedGroup<T>{key, std::move(values)});
  }

  std::unordered_map<std::string, std::vector<T>> read_bucket(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ShardIoError("cannot reopen spill file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::unordered_map<std::string, std::vector<T>> groups;
    size_t pos = 0;
    auto read_frame = [&](std::string_view& out) {
      if (pos + 4 > data.size()) throw ShardIoError("truncated spill file: " + path);
      uint32_t len = static_cast<uint8_t>(data[pos]) | (static_cast<uint32_t>(static_cast<uint8_t>(data[pos + 1])) << 8) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(data[pos + 2])) << 16) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(data[pos + 3])) << 24);
      pos += 4;
      if (pos + len > data.size()) throw ShardIoError("truncated spill file: " + path);
      out = std::string_view(data).substr(pos, len);
      pos += len;
    };
    while (pos < data.size()) {
      std::string_view key, payload;
      read_frame(key);
      read_frame(payload);
      groups[std::string(key)].push_back(config.decode(payload));
    }
    return groups;
  }

  ~GroupState() {
    if (!spill_dir.empty()) {
      std::error_code ec;
      std::filesystem::remove_all(spill_dir, ec);
    }
  }
};

}  // namespace pipedetail

// Handle to one stage's output. Consumed at most once; fan-out goes through
// partition().
template <typename T>
class Stream {
 public:
  Stream(Pipeline* pipeline, std::shared_ptr<pipedetail::Channel<T>> channel)
      : pipeline_(pipeline), channel_(std::move(channel)) {}

  template <typename U>
  Stream<U> transform(std::string name, std::function<void(T&, Emitter<U>&)> fn) {
    auto out = pipeline_->add_channel<U>();
    auto* counters = pipeline_->add_counters(name);
    auto node = std::make_unique<pipedetail::WorkerNode<T>>();
    auto* raw = node.get();
    node->pipeline = pipeline_;
    node->name = std::move(name);
    node->counters = counters;
    node->in = take_channel();
    node->add_producers = [out](int n) { out->add_producers(n); };
    node->producer_done = [out] { out->producer_done(); };
    size_t chunk_records = pipeline_->options().chunk_records;
    node->worker_body = [raw, out, counters, fn = std::move(fn), chunk_records] {
      Emitter<U> emitter(out.get(), counters, chunk_records);
      std::vector<T> chunk;
      while (raw->in->pop(chunk)) {
        counters->records_in += chunk.size();
        for (auto& record : chunk) {
          fn(record, emitter);
          if (emitter.cancelled()) break;
        }
        if (emitter.cancelled()) break;
      }
      emitter.finish();
    };
    pipeline_->add_node(std::move(node));
    return Stream<U>(pipeline_, out);
  }

  // Groups records by a string key.  Emits KeyedGroup<T> in sorted key
  // order; values follow cfg.value_order when provided.
  Stream<KeyedGroup<T>> group_by(std::string name, std::function<std::string(const T&)> key_fn,
                                 GroupConfig<T> cfg = {}) {
    auto out = pipeline_->add_channel<KeyedGroup<T>>();
    auto* counters = pipeline_->add_counters(name);
    auto state = std::make_shared<pipedetail::GroupState<T>>(std::move(cfg));
    auto node = std::make_unique<pipedetail::WorkerNode<T>>();
    auto* raw = node.get();
    node->pipeline = pipeline_;
    node->name = std::move(name);
    node->counters = counters;
    node->in = take_channel();
    node->add_producers = [out](int n) { out->add_producers(n); };
    node->producer_done = [out] { out->producer_done(); };
    node->worker_body = [raw, counters, state, key_fn = std::move(key_fn)] {
      std::vector<T> chunk;
      while (raw->in->pop(chunk)) {
        counters->records_in += chunk.size();
        for (auto& record : chunk) {
          std::string key = key_fn(record);
          state->insert(std::move(key), std::move(record));
        }
      }
    };
    size_t chunk_records = pipeline_->options().chunk_records;
    node->last_worker_epilogue = [out, counters, state, chunk_records] {
      Emitter<KeyedGroup<T>> emitter(out.get(), counters, chunk_records);
      state->emit_all(emitter);
      emitter.finish();
    };
    pipeline_->add_node(std::move(node));
    return Stream<KeyedGroup<T>>(pipeline_, out);
  }

  // Splits the stream into `ways` streams; fn returns the target index.
  std::vector<Stream<T>> partition(std::string name, int ways,
                                   std::function<size_t(const T&)> fn) {
    if (ways < 1) throw std::invalid_argument("partition needs at least one output");
    std::vector<std::shared_ptr<pipedetail::Channel<T>>> outs;
    for (int i = 0; i < ways; ++i) outs.push_back(pipeline_->add_channel<T>());
    auto* counters = pipeline_->add_counters(name);
    auto node = std::make_unique<pipedetail::WorkerNode<T>>();
    auto* raw = node.get();
    node->pipeline = pipeline_;
    node->name = std::move(name);
    node->counters = counters;
    node->in = take_channel();
    node->add_producers = [outs](int n) {
      for (auto& o : outs) o->add_producers(n);
    };
    node->producer_done = [outs] {
      for (auto& o : outs) o->producer_done();
    };
    size_t chunk_records = pipeline_->options().chunk_records;
    node->worker_body = [raw, outs, counters, fn = std::move(fn), chunk_records] {
      std::vector<std::vector<T>> buffers(outs.size());
      std::vector<T> chunk;
      bool cancelled = false;
      while (!cancelled && raw->in->pop(chunk)) {
        counters->records_in += chunk.size();
        for (auto& record : chunk) {
          size_t target = fn(record);
          if (target >= outs.size()) throw std::out_of_range("partition index out of range");
          auto& buf = buffers[target];
          buf.push_back(std::move(record));
          if (buf.size() >= chunk_records) {
            counters->records_out += buf.size();
            if (!outs[target]->push(std::move(buf))) {
              cancelled = true;
              break;
            }
            buf = {};
          }
        }
      }
      if (!cancelled) {
        for (size_t i = 0; i < buffers.size(); ++i) {
          if (buffers[i].empty()) continue;
          counters->records_out += buffers[i].size();
          if (!outs[i]->push(std::move(buffers[i]))) break;
        }
      }
    };
    pipeline_->add_node(std::move(node));
    std::vector<Stream<T>> streams;
    for (auto& o : outs) streams.emplace_back(pipeline_, o);
    return streams;
  }

  // Terminal stage: canonical shard set. to_line must be pure; records whose
  // serialization throws are counted under "unserializable".
  std::shared_ptr<ShardSinkResult> sink_shards(std::string name, ShardSpec spec,
                                               std::function<std::string(const T&)> to_line) {
    auto result = std::make_shared<ShardSinkResult>();
    auto writer = std::make_shared<ShardSetWriter>(std::move(spec));
    auto* counters = pipeline_->add_counters(name);
    auto node = std::make_unique<pipedetail::WorkerNode<T>>();
    auto* raw = node.get();
    node->pipeline = pipeline_;
    node->name = std::move(name);
    node->counters = counters;
    node->in = take_channel();
    int num_shards = writer->spec().num_shards;
    node->worker_body = [raw, writer, counters, num_shards, to_line = std::move(to_line)] {
      std::map<std::string, uint64_t> local_filtered;
      std::vector<std::vector<std::string>> pending(static_cast<size_t>(num_shards));
      std::vector<T> chunk;
      while (raw->in->pop(chunk)) {
        counters->records_in += chunk.size();
        for (const auto& record : chunk) {
          std::string line;
          try {
            line = to_line(record);
          } catch (const std::exception&) {
            ++local_filtered["unserializable"];
            continue;
          }
          size_t shard = shard_index_for_line(line, num_shards);
          auto& bucket = pending[shard];
          bucket.push_back(std::move(line));
          counters->records_out += 1;
          if (bucket.size() >= 512) writer->add_lines(shard, std::move(bucket));
        }
      }
      for (size_t s = 0; s < pending.size(); ++s) {
        if (!pending[s].empty()) writer->add_lines(s, std::move(pending[s]));
      }
      counters->merge_filtered(local_filtered);
    };
    node->last_worker_epilogue = [writer, result] { result->manifest = writer->finalize(); };
    pipeline_->add_node(std::move(node));
    return result;
  }

  // Terminal stage: collect records into a vector (arrival order).
  std::shared_ptr<std::vector<T>> collect(std::string name) {
    auto result = std::make_shared<std::vector<T>>();
    auto mu = std::make_shared<std::mutex>();
    auto* counters = pipeline_->add_counters(name);
    auto node = std::make_unique<pipedetail::WorkerNode<T>>();
    auto* raw = node.get();
    node->pipeline = pipeline_;
    node->name = std::move(name);
    node->counters = counters;
    node->in = take_channel();
    node->worker_body = [raw, result, mu, counters] {
      std::vector<T> chunk;
      while (raw->in->pop(chunk)) {
        counters->records_in += chunk.size();
        counters->records_out += chunk.size();
        std::lock_guard<std::mutex> lock(*mu);
        for (auto& record : chunk) result->push_back(std::move(record));
      }
    };
    pipeline_->add_node(std::move(node));
    return result;
  }

 private:
  std::shared_ptr<pipedetail::Channel<T>> take_channel() {
    if (!channel_) throw std::logic_error("stream already consumed; use partition() for fan-out");
    return std::move(channel_);
  }

  Pipeline* pipeline_;
  std::shared_ptr<pipedetail::Channel<T>> channel_;
};

template <typename T>
Stream<T> Pipeline::source(std::string name, std::function<void(Emitter<T>&)> body) {
  auto out = add_channel<T>();
  auto* counters = add_counters(name);
  auto node = std::make_unique<pipedetail::SourceNode<std::function<void()>>>();
  node->pipeline = this;
  node->name = std::move(name);
  node->counters = counters;
  node->add_producers = [out](int n) { out->add_producers(n); };
  node->producer_done = [out] { out->producer_done(); };
  size_t chunk_records = opts_.chunk_records;
  node->body = [out, counters, chunk_records, body = std::move(body)] {
    Emitter<T> emitter(out.get(), counters, chunk_records);
    body(emitter);
    emitter.finish();
  };
  add_node(std::move(node));
  return Stream<T>(this, out);
}

// Reference grouping used by tests and small in-memory callers: stable
// (input-order) values under bytewise-sorted keys.
template <typename T>
std::vector<KeyedGroup<T>> group_by_key(const std::vector<std::pair<std::string, T>>& pairs) {
  std::map<std::string, std::vector<T>> groups;
  for (const auto& [key, value] : pairs) groups[key].push_back(value);
  std::vector<KeyedGroup<T>> out;
  out.reserve(groups.size());
  for (auto& [key, values] : groups) out.push_back(KeyedGroup<T>{key, std::move(values)});
  return out;
}

}  // namespace convbench
