// Builds conversational records from raw comment dumps (JSON, one comment
// per line). Threads are reconstructed from parent links; every comment
// with a resolvable parent becomes a candidate (context, response) pair,
// with up to ten earlier turns along the parent chain attached as extra
// context. Records split into train and test by thread id, so a thread
// never straddles the split.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "convbench/example.hpp"
#include "convbench/filters.hpp"
#include "convbench/pipeline.hpp"
#include "convbench/split.hpp"
#include "convbench/text.hpp"

namespace convbench::reddit {

struct Comment {
  std::string id;
  std::string thread_id;
  std::string body;
  std::string author;
  std::string subreddit;
  std::optional<std::string> parent_id;
  int64_t created_utc = 0;
};

struct ParseOutcome {
  std::optional<Comment> comment;
  std::string skip_reason;  // "malformed" or "missing_field" when empty comment
};

namespace detail {

// Strips a leading "t<digits>_" type tag from an id.
inline std::string strip_type_prefix(std::string_view id) {
  if (id.size() >= 3 && id[0] == 't') {
    size_t i = 1;
    while (i < id.size() && id[i] >= '0' && id[i] <= '9') ++i;
    if (i > 1 && i < id.size() && id[i] == '_') return std::string(id.substr(i + 1));
  }
  return std::string(id);
}

}  // namespace detail

inline ParseOutcome parse_comment(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return {std::nullopt, "malformed"};

  auto field = [&](const char* name) -> const nlohmann::json* {
    auto it = j.find(name);
    if (it == j.end() || !it->is_string()) return nullptr;
    return &*it;
  };
  const auto* id = field("id");
  const auto* link_id = field("link_id");
  const auto* body = field("body");
  const auto* author = field("author");
  const auto* subreddit = field("subreddit");
  if (!id || !link_id || !body || !author || !subreddit) return {std::nullopt, "missing_field"};

  Comment c;
  c.id = detail::strip_type_prefix(id->get<std::string>());
  c.thread_id = detail::strip_type_prefix(link_id->get<std::string>());
  c.body = body->get<std::string>();
  c.author = author->get<std::string>();
  c.subreddit = subreddit->get<std::string>();
  if (auto it = j.find("created_utc"); it != j.end() && it->is_number_integer()) {
    c.created_utc = it->get<int64_t>();
  }
  if (auto it = j.find("parent_id"); it != j.end() && it->is_string()) {
    std::string parent = detail::strip_type_prefix(it->get<std::string>());
    // a comment that claims to be its own parent is treated as a root
    if (!parent.empty() && parent != c.id) c.parent_id = std::move(parent);
  }
  return {std::move(c), ""};
}

// Spill codec: length-framed fields, fixed little-endian for the timestamp.
inline std::string encode_comment(const Comment& c) {
  std::string out;
  auto frame = [&out](std::string_view s) {
    uint32_t len = static_cast<uint32_t>(s.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
    out.append(s.data(), s.size());
  };
  frame(c.id);
  frame(c.thread_id);
  frame(c.body);
  frame(c.author);
  frame(c.subreddit);
  out.push_back(c.parent_id ? 1 : 0);
  frame(c.parent_id ? *c.parent_id : std::string_view{});
  uint64_t utc = static_cast<uint64_t>(c.created_utc);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((utc >> (8 * i)) & 0xFF));
  return out;
}

inline Comment decode_comment(std::string_view data) {
  size_t pos = 0;
  auto unframe = [&]() -> std::string {
    if (pos + 4 > data.size()) throw std::runtime_error("truncated comment record");
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
    pos += 4;
    if (pos + len > data.size()) throw std::runtime_error("truncated comment record");
    std::string s(data.substr(pos, len));
    pos += len;
    return s;
  };
  Comment c;
  c.id = unframe();
  c.thread_id = unframe();
  c.body = unframe();
  c.author = unframe();
  c.subreddit = unframe();
  if (pos >= data.size()) throw std::runtime_error("truncated comment record");
  bool has_parent = data[pos++] != 0;
  std::string parent = unframe();
  if (has_parent) c.parent_id = std::move(parent);
  if (pos + 8 > data.size()) throw std::runtime_error("truncated comment record");
  uint64_t utc = 0;
  for (int i = 0; i < 8; ++i) utc |= static_cast<uint64_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
  c.created_utc = static_cast<int64_t>(utc);
  return c;
}

// Canonical comment order: used to break duplicate-id ties and to make the
// builder independent of input arrival order.
inline bool comment_order(const Comment& a, const Comment& b) {
  auto key = [](const Comment& c) {
    return std::tie(c.id, c.created_utc, c.author, c.body, c.subreddit);
  };
  return key(a) < key(b);
}

struct ThreadResult {
  std::vector<Example> examples;                       // in canonical comment order
  std::map<std::string, uint64_t> dropped;             // reason -> count
};

// Turns one fully assembled thread into records. `comments` must all share
// a thread id; order does not matter. Every comment is accounted for: it
// either backs an emitted record (as the response) or adds to a drop reason.
inline ThreadResult build_thread_examples(std::vector<Comment> comments,
                                          const FilterConfig& cfg) {
  ThreadResult result;
  std::sort(comments.begin(), comments.end(), comment_order);

  std::unordered_map<std::string, const Comment*> by_id;
  by_id.reserve(comments.size());
  std::vector<const Comment*> kept;
  kept.reserve(comments.size());
  for (const auto& c : comments) {
    if (by_id.emplace(c.id, &c).second) {
      kept.push_back(&c);
    } else {
      ++result.dropped["duplicate_id"];
    }
  }

  auto parent_of = [&](const Comment* c) -> const Comment* {
    if (!c->parent_id) return nullptr;
    auto it = by_id.find(*c->parent_id);
    return it == by_id.end() ? nullptr : it->second;
  };

  // Reject the whole thread if the parent links contain a cycle; a cyclic
  // "thread" is corrupt data and no path through it is trustworthy.
  {
    std::unordered_map<const Comment*, int> color;  // 1 in progress, 2 done
    for (const Comment* c : kept) {
      if (color[c] == 2) continue;
      std::vector<const Comment*> path;
      const Comment* cur = c;
      bool cycle = false;
      while (cur != nullptr && color[cur] == 0) {
        color[cur] = 1;
        path.push_back(cur);
        cur = parent_of(cur);
      }
      if (cur != nullptr && color[cur] == 1) cycle = true;
      for (const Comment* p : path) color[p] = 2;
      if (cycle) {
        result.dropped.clear();
        result.dropped["cycle_thread"] = comments.size();
        return result;
      }
    }
  }

  for (const Comment* c : kept) {
    const Comment* parent = parent_of(c);
    if (parent == nullptr) {
      ++result.dropped["no_parent"];
      continue;
    }
    if (is_banned_body(c->body, cfg)) {
      ++result.dropped["banned_response"];
      continue;
    }
    if (const char* v = length_violation(c->body, cfg); *v != '\0') {
      ++result.dropped[std::string("response_") + v];
      continue;
    }
    if (is_banned_body(parent->body, cfg)) {
      ++result.dropped["banned_context"];
      continue;
    }
    if (const char* v = length_violation(parent->body, cfg); *v != '\0') {
      ++result.dropped[std::string("context_") + v];
      continue;
    }

    Example ex;
    ex.context = parent->body;
    ex.response = c->body;
    std::unordered_set<const Comment*> visited = {c, parent};
    const Comment* ancestor = parent_of(parent);
    while (ancestor != nullptr && ex.extra_contexts.size() < cfg.max_extra_contexts) {
      if (!visited.insert(ancestor).second) break;
      ex.extra_contexts.push_back(trim_to_words(ancestor->body, cfg.max_chars));
      ancestor = parent_of(ancestor);
    }
    ex.metadata = {{"context_author", parent->author},
                   {"response_author", c->author},
                   {"subreddit", c->subreddit},
                   {"thread_id", c->thread_id}};
    result.examples.push_back(std::move(ex));
  }
  return result;
}

struct BuildOptions {
  FilterConfig filter;
  SplitConfig split;
  int num_shards = 1;
  uint64_t shuffle_seed = 0;
  std::string output_dir;
  size_t group_budget_bytes = size_t{1} << 30;
  Pipeline::Options pipeline;
};

struct BuildResult {
  PipelineStats stats;
  ShardManifest train;
  ShardManifest test;
};

// Full ingestion pipeline: read -> parse -> group by thread -> build
// records -> split -> canonical shards under <output_dir>/{train,test}.
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

  auto comments = lines.transform<Comment>("parse", [](std::string& line, Emitter<Comment>& out) {
    ParseOutcome parsed = parse_comment(line);
    if (parsed.comment) {
      out.emit(std::move(*parsed.comment));
    } else {
      out.skip(parsed.skip_reason);
    }
  });

  GroupConfig<Comment> group_cfg;
  group_cfg.memory_budget_bytes = opts.group_budget_bytes;
  group_cfg.size_of = [](const Comment& c) {
    return c.id.size() + c.thread_id.size() + c.body.size() + c.author.size() +
           c.subreddit.size() + (c.parent_id ? c.parent_id->size() : 0) + sizeof(Comment);
  };
  group_cfg.encode = encode_comment;
  group_cfg.decode = [](std::string_view data) { return decode_comment(data); };
  auto threads = comments.group_by(
      "thread", [](const Comment& c) { return c.thread_id; }, std::move(group_cfg));

  FilterConfig filter = opts.filter;
  auto keyed = threads.transform<KeyedExample>(
      "examples", [filter](KeyedGroup<Comment>& thread, Emitter<KeyedExample>& out) {
        ThreadResult built = build_thread_examples(std::move(thread.values), filter);
        for (const auto& [reason, count] : built.dropped) {
          for (uint64_t i = 0; i < count; ++i) out.skip(reason);
        }
        for (auto& ex : built.examples) {
          out.emit(KeyedExample{thread.key, std::move(ex)});
        }
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

}  // namespace convbench::reddit
