// Sharded JSONL storage. A shard set is `<prefix>-NNNNN-of-MMMMM.jsonl`
// files plus a `<prefix>.manifest.json` with per-shard counts. Records are
// routed to shards by a stable hash of their serialized bytes, and each
// shard is written in a canonical order (bytewise sort, then a seeded
// permutation), so the same record multiset always produces byte-identical
// files no matter how many workers produced it.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "convbench/example.hpp"
#include "convbench/hash.hpp"

namespace convbench {

// Input that does not exist. The command line maps this to its own exit code.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShardIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ShardSpec {
  std::string path_prefix;  // "out/train" -> out/train-00000-of-00003.jsonl
  int num_shards = 1;
  uint64_t shuffle_seed = 0;
};

struct ShardManifest {
  int num_shards = 0;
  std::vector<uint64_t> counts;  // records per shard, index-aligned
  uint64_t total = 0;
};

inline std::string zero_pad5(int value) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", value);
  return buf;
}

inline std::string shard_path(const std::string& prefix, int index, int num_shards) {
  return prefix + "-" + zero_pad5(index) + "-of-" + zero_pad5(num_shards) + ".jsonl";
}

inline std::string manifest_path(const std::string& prefix) {
  return prefix + ".manifest.json";
}

inline size_t shard_index_for_line(std::string_view line, int num_shards) {
  return static_cast<size_t>(stable_key_hash(line) % static_cast<uint64_t>(num_shards));
}

inline nlohmann::json manifest_to_json(const ShardManifest& m) {
  return nlohmann::json{{"num_shards", m.num_shards}, {"counts", m.counts}, {"total", m.total}};
}

inline ShardManifest manifest_from_json(const nlohmann::json& j) {
  ShardManifest m;
  m.num_shards = j.at("num_shards").get<int>();
  m.counts = j.at("counts").get<std::vector<uint64_t>>();
  m.total = j.at("total").get<uint64_t>();
  if (m.counts.size() != static_cast<size_t>(m.num_shards)) {
    throw ShardIoError("manifest counts do not match num_shards");
  }
  uint64_t sum = 0;
  for (uint64_t c : m.counts) sum += c;
  if (sum != m.total) throw ShardIoError("manifest total does not match counts");
  return m;
}

// Accumulates serialized lines and writes the whole shard set on finalize.
// add_line / add_lines are safe to call from many threads; finalize is not.
class ShardSetWriter {
 public:
  explicit ShardSetWriter(ShardSpec spec) : spec_(std::move(spec)) {
    if (spec_.num_shards < 1) throw std::invalid_argument("num_shards must be >= 1");
    if (spec_.path_prefix.empty()) throw std::invalid_argument("empty shard path prefix");
    shards_.reserve(static_cast<size_t>(spec_.num_shards));
    for (int i = 0; i < spec_.num_shards; ++i) shards_.push_back(std::make_unique<Shard>());
  }

  const ShardSpec& spec() const { return spec_; }

  void add_line(std::string line) {
    size_t idx = shard_index_for_line(line, spec_.num_shards);
    std::lock_guard<std::mutex> lock(shards_[idx]->mu);
    shards_[idx]->lines.push_back(std::move(line));
  }

  // Bulk insert into one shard; callers batch by shard to cut lock traffic.
  void add_lines(size_t shard, std::vector<std::string>&& lines) {
    auto& s = *shards_.at(shard);
    std::lock_guard<std::mutex> lock(s.mu);
    for (auto& line : lines) s.lines.push_back(std::move(line));
    lines.clear();
  }

  // Sorts, permutes and writes every shard plus the manifest. Files land
  // under temporary names first and are renamed once fully written, so a
  // failure never leaves a plausible-looking partial shard set behind.
  ShardManifest finalize() {
    namespace fs = std::filesystem;
    fs::path parent = fs::path(spec_.path_prefix).parent_path();
    if (!parent.empty()) fs::create_directories(parent);

    ShardManifest manifest;
    manifest.num_shards = spec_.num_shards;
    std::vector<std::string> tmp_paths;
    std::vector<std::string> final_paths;
    try {
      for (int i = 0; i < spec_.num_shards; ++i) {
        auto& lines = shards_[static_cast<size_t>(i)]->lines;
        std::sort(lines.begin(), lines.end());
        seeded_shuffle(lines, mix64(spec_.shuffle_seed, static_cast<uint64_t>(i)));

        std::string final_path = shard_path(spec_.path_prefix, i, spec_.num_shards);
        std::string tmp_path = final_path + ".tmp";
        write_lines(tmp_path, lines);
        tmp_paths.push_back(tmp_path);
        final_paths.push_back(std::move(final_path));
        manifest.counts.push_back(lines.size());
        manifest.total += lines.size();
      }
      std::string manifest_tmp = manifest_path(spec_.path_prefix) + ".tmp";
      write_text(manifest_tmp, manifest_to_json(manifest).dump() + "\n");
      for (size_t i = 0; i < tmp_paths.size(); ++i) {
        fs::rename(tmp_paths[i], final_paths[i]);
      }
      fs::rename(manifest_tmp, manifest_path(spec_.path_prefix));
    } catch (...) {
      std::error_code ec;
      for (const auto& p : tmp_paths) fs::remove(p, ec);
      fs::remove(manifest_path(spec_.path_prefix) + ".tmp", ec);
      throw;
    }
    return manifest;
  }

 private:
  struct Shard {
    std::mutex mu;
    std::vector<std::string> lines;
  };

  static void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ShardIoError("cannot open for writing: " + path);
    for (const auto& line : lines) {
      out.write(line.data(), static_cast<std::streamsize>(line.size()));
      out.put('\n');
    }
    out.flush();
    if (!out) throw ShardIoError("write failed: " + path);
  }

  static void write_text(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ShardIoError("cannot open for writing: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw ShardIoError("write failed: " + path);
  }

  ShardSpec spec_;
  std::vector<std::unique_ptr<Shard>> shards_;
};

inline ShardManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("no such input: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ShardIoError("bad manifest " + path + ": " + e.what());
  }
  return manifest_from_json(j);
}

// Reads lines from a plain or gzip-compressed file (detected by content).
// Carries the line number for error reporting.
class LineReader {
 public:
  explicit LineReader(std::string path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) throw MissingInputError("no such input: " + path_);
    file_ = gzopen(path_.c_str(), "rb");
    if (file_ == nullptr) throw ShardIoError("cannot open: " + path_);
  }

  ~LineReader() {
    if (file_ != nullptr) gzclose(file_);
  }

  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  // Fills `line` (without the newline) and returns true, or returns false at
  // end of input.
  bool next(std::string& line) {
    line.clear();
    while (true) {
      if (pos_ < buffer_end_) {
        char* begin = buffer_ + pos_;
        char* nl = static_cast<char*>(std::memchr(begin, '\n', buffer_end_ - pos_));
        if (nl != nullptr) {
          line.append(begin, nl);
          pos_ = static_cast<size_t>(nl - buffer_) + 1;
          ++line_number_;
          return true;
        }
        line.append(begin, buffer_ + buffer_end_);
        pos_ = buffer_end_;
      }
      int n = gzread(file_, buffer_, sizeof(buffer_));
      if (n < 0) {
        int errnum = 0;
        const char* msg = gzerror(file_, &errnum);
        throw ShardIoError("read failed: " + path_ + ": " + (msg ? msg : ""));
      }
      if (n == 0) {
        if (line.empty()) return false;
        ++line_number_;  // final line without trailing newline
        return true;
      }
      pos_ = 0;
      buffer_end_ = static_cast<size_t>(n);
    }
  }

  const std::string& path() const { return path_; }
  size_t line_number() const { return line_number_; }

 private:
  std::string path_;
  gzFile file_ = nullptr;
  char buffer_[1 << 16];
  size_t pos_ = 0;
  size_t buffer_end_ = 0;
  size_t line_number_ = 0;
};

namespace detail {

// '*' matches any run of characters within a filename; no other wildcards.
inline bool wildcard_match(std::string_view pattern, std::string_view name) {
  size_t p = 0, n = 0;
  size_t star = std::string_view::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && pattern[p] != '*' && pattern[p] == name[n]) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

}  // namespace detail

// Expands an input pattern to a sorted list of data files. Accepts a literal
// file, a shard-set prefix, a manifest path, or a filename glob with '*'.
inline std::vector<std::string> expand_shard_pattern(const std::string& pattern) {
  namespace fs = std::filesystem;
  std::vector<std::string> paths;
  if (pattern.find('*') != std::string::npos) {
    fs::path p(pattern);
    fs::path dir = p.parent_path();
    std::string name_pattern = p.filename().string();
    if (dir.string().find('*') != std::string::npos) {
      throw std::invalid_argument("wildcards are only supported in the filename: " + pattern);
    }
    if (dir.empty()) dir = ".";
    if (!fs::is_directory(dir)) throw MissingInputError("no such directory: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      if (detail::wildcard_match(name_pattern, entry.path().filename().string())) {
        paths.push_back(entry.path().string());
      }
    }
    if (paths.empty()) throw MissingInputError("no files match: " + pattern);
  } else if (pattern.size() > 14 &&
             pattern.substr(pattern.size() - 14) == ".manifest.json") {
    ShardManifest m = load_manifest(pattern);
    std::string prefix = pattern.substr(0, pattern.size() - 14);
    for (int i = 0; i < m.num_shards; ++i) paths.push_back(shard_path(prefix, i, m.num_shards));
  } else if (fs::exists(pattern)) {
    paths.push_back(pattern);
  } else if (fs::exists(manifest_path(pattern))) {
    return expand_shard_pattern(manifest_path(pattern));
  } else {
    throw MissingInputError("no such input: " + pattern);
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

// Streams parsed records from every file matching `pattern`, in sorted file
// order. Parse failures carry the file and line they came from.
template <typename Fn>
void for_each_example(const std::string& pattern, Fn&& fn) {
  for (const auto& path : expand_shard_pattern(pattern)) {
    LineReader reader(path);
    std::string line;
    while (reader.next(line)) {
      if (line.empty()) continue;
      try {
        fn(parse_example(line));
      } catch (const ExampleFormatError& e) {
        throw ExampleFormatError(path + ":" + std::to_string(reader.line_number()) + ": " +
                                 e.what());
      }
    }
  }
}

inline std::vector<Example> read_examples(const std::string& pattern) {
  std::vector<Example> out;
  for_each_example(pattern, [&](Example&& ex) { out.push_back(std::move(ex)); });
  return out;
}

// One-shot write of a record set; returns the manifest it wrote.
inline ShardManifest write_shards(const std::vector<Example>& examples, const ShardSpec& spec) {
  ShardSetWriter writer(spec);
  for (const auto& ex : examples) writer.add_line(serialize_example(ex));
  return writer.finalize();
}

}  // namespace convbench
