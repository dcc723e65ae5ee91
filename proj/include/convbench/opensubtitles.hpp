// Builds conversational records from subtitle files: one spoken line per
// text line, cleaned of stage markup, with consecutive surviving lines
// paired as (context, response). Files carry no thread structure, so the
// train/test key is the file plus a fixed-size block of line numbers,
// keeping nearby (likely overlapping) dialogue on one side of the split.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "convbench/example.hpp"
#include "convbench/filters.hpp"
#include "convbench/pipeline.hpp"
#include "convbench/split.hpp"
#include "convbench/text.hpp"

namespace convbench::opensubtitles {

struct SubtitleLine {
  std::string file_id;
  int64_t index = 0;  // 0-based position in the raw file
  std::string text;
};

// A cleaning rule edits the line in place; emptied lines are dropped.
using CleanRule = std::function<void(std::string&)>;

namespace detail {

// Removes "open .. close" spans, e.g. bracketed stage directions. An
// unclosed opener swallows the rest of the line.
inline void strip_delimited(std::string& text, char open, char close) {
  std::string out;
  out.reserve(text.size());
  size_t pos = 0;
  while (pos < text.size()) {
    if (text[pos] == open) {
      size_t end = text.find(close, pos + 1);
      if (end == std::string::npos) break;
      pos = end + 1;
    } else {
      out.push_back(text[pos++]);
    }
  }
  text = std::move(out);
}

inline void strip_leading_dashes(std::string& text) {
  size_t pos = 0;
  while (pos < text.size() && (is_ascii_space(text[pos]) || text[pos] == '-')) ++pos;
  text.erase(0, pos);
}

// "NAME:" or "FIRST SECOND:" speaker prefixes in all caps.
inline void strip_speaker_tag(std::string& text) {
  if (text.empty() || text[0] < 'A' || text[0] > 'Z') return;
  size_t pos = 0;
  while (pos < text.size() && ((text[pos] >= 'A' && text[pos] <= 'Z') || text[pos] == ' ')) ++pos;
  if (pos < text.size() && text[pos] == ':') text.erase(0, pos + 1);
}

}  // namespace detail

inline std::vector<CleanRule> default_clean_rules() {
  return {
      [](std::string& t) { detail::strip_delimited(t, '[', ']'); },
      [](std::string& t) { detail::strip_delimited(t, '(', ')'); },
      [](std::string& t) { detail::strip_leading_dashes(t); },
      [](std::string& t) { detail::strip_speaker_tag(t); },
  };
}

// Applies the rules in order, then normalizes whitespace. nullopt means the
// line was pure markup and should be dropped.
inline std::optional<std::string> clean_line(std::string_view raw,
                                             const std::vector<CleanRule>& rules) {
  std::string text(raw);
  for (const auto& rule : rules) rule(text);
  text = collapse_whitespace(text);
  if (text.empty()) return std::nullopt;
  return text;
}

inline std::optional<std::string> clean_line(std::string_view raw) {
  static const std::vector<CleanRule> rules = default_clean_rules();
  return clean_line(raw, rules);
}

// Spill codec for grouping lines by file.
inline std::string encode_line(const SubtitleLine& l) {
  std::string out;
  auto frame = [&out](std::string_view s) {
    uint32_t len = static_cast<uint32_t>(s.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
    out.append(s.data(), s.size());
  };
  frame(l.file_id);
  frame(l.text);
  uint64_t idx = static_cast<uint64_t>(l.index);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((idx >> (8 * i)) & 0xFF));
  return out;
}

inline SubtitleLine decode_line(std::string_view data) {
  size_t pos = 0;
  auto unframe = [&]() -> std::string {
    if (pos + 4 > data.size()) throw std::runtime_error("truncated subtitle record");
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
    pos += 4;
    if (pos + len > data.size()) throw std::runtime_error("truncated subtitle record");
    std::string s(data.substr(pos, len));
    pos += len;
    return s;
  };
  SubtitleLine l;
  l.file_id = unframe();
  l.text = unframe();
  if (pos + 8 > data.size()) throw std::runtime_error("truncated subtitle record");
  uint64_t idx = 0;
  for (int i = 0; i < 8; ++i) idx |= static_cast<uint64_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
  l.index = static_cast<int64_t>(idx);
  return l;
}

// The split key groups ~chunk_size consecutive raw lines of one file; the
// response line's position decides where a pair lives.
inline std::string chunk_split_key(const SubtitleLine& response_line, int64_t chunk_size) {
  return response_line.file_id + "|" + std::to_string(response_line.index / chunk_size);
}

struct FileResult {
  std::vector<KeyedExample> examples;
  std::map<std::string, uint64_t> dropped;
};

// Pairs consecutive surviving lines of one file. Pairs failing the length
// bounds are dropped, but their lines still serve as context elsewhere.
inline FileResult build_file_examples(std::vector<SubtitleLine> lines, const FilterConfig& cfg,
                                      int64_t chunk_size) {
  FileResult result;
  std::sort(lines.begin(), lines.end(), [](const SubtitleLine& a, const SubtitleLine& b) {
    return std::tie(a.index, a.text) < std::tie(b.index, b.text);
  });
  for (size_t k = 0; k + 1 < lines.size(); ++k) {
    const SubtitleLine& ctx = lines[k];
    const SubtitleLine& rsp = lines[k + 1];
    if (const char* v = length_violation(ctx.text, cfg); *v != '\0') {
      ++result.dropped[std::string("context_") + v];
      continue;
    }
    if (const char* v = length_violation(rsp.text, cfg); *v != '\0') {
      ++result.dropped[std::string("response_") + v];
      continue;
    }
    Example ex;
    ex.context = ctx.text;
    ex.response = rsp.text;
    for (size_t back = 1; back <= cfg.max_extra_contexts && back <= k; ++back) {
      ex.extra_contexts.push_back(trim_to_words(lines[k - back].text, cfg.max_chars));
    }
    ex.metadata = {{"file_id", ctx.file_id}};
    result.examples.push_back(KeyedExample{chunk_split_key(rsp, chunk_size), std::move(ex)});
  }
  return result;
}

enum class InputFormat {
  kText,  // one utterance per line; the file name identifies the file
  kTsv,   // file_id <TAB> line_index <TAB> text
};

struct BuildOptions {
  FilterConfig filter;
  SplitConfig split;
  InputFormat format = InputFormat::kText;
  int64_t chunk_size = 100000;
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

namespace detail {

inline std::string file_id_from_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.extension() == ".gz") p = p.stem();
  return p.stem().string();
}

inline bool parse_tsv_row(std::string_view row, SubtitleLine& out) {
  size_t tab1 = row.find('\t');
  if (tab1 == std::string_view::npos) return false;
  size_t tab2 = row.find('\t', tab1 + 1);
  if (tab2 == std::string_view::npos) return false;
  std::string_view idx = row.substr(tab1 + 1, tab2 - tab1 - 1);
  if (idx.empty()) return false;
  int64_t value = 0;
  for (char c : idx) {
    if (c < '0' || c > '9') return false;
    value = value * 10 + (c - '0');
  }
  out.file_id = std::string(row.substr(0, tab1));
  if (out.file_id.empty()) return false;
  out.index = value;
  out.text = std::string(row.substr(tab2 + 1));
  return true;
}

}  // namespace detail

inline BuildResult build_dataset(const std::vector<std::string>& input_files,
                                 const BuildOptions& opts, int workers) {
  validate(opts.split);
  Pipeline pipeline(opts.pipeline);

  Stream<SubtitleLine> raw_lines = [&] {
    if (opts.format == InputFormat::kText) {
      return pipeline.source<SubtitleLine>("read", [input_files](Emitter<SubtitleLine>& out) {
        std::string line;
        for (const auto& path : input_files) {
          std::string file_id = detail::file_id_from_path(path);
          LineReader reader(path);
          int64_t index = 0;
          while (reader.next(line)) {
            if (out.cancelled()) return;
            out.emit(SubtitleLine{file_id, index++, std::move(line)});
            line.clear();
          }
        }
      });
    }
    auto rows = pipeline.source<std::string>("read", [input_files](Emitter<std::string>& out) {
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
    return rows.transform<SubtitleLine>("parse",
                                        [](std::string& row, Emitter<SubtitleLine>& out) {
                                          SubtitleLine line;
                                          if (detail::parse_tsv_row(row, line)) {
                                            out.emit(std::move(line));
                                          } else {
                                            out.skip("malformed");
                                          }
                                        });
  }();

  auto cleaned = raw_lines.transform<SubtitleLine>(
      "clean", [](SubtitleLine& line, Emitter<SubtitleLine>& out) {
        std::optional<std::string> text = clean_line(line.text);
        if (!text) {
          out.skip("removed_by_cleaning");
          return;
        }
        line.text = std::move(*text);
        out.emit(std::move(line));
      });

  GroupConfig<SubtitleLine> group_cfg;
  group_cfg.memory_budget_bytes = opts.group_budget_bytes;
  group_cfg.size_of = [](const SubtitleLine& l) {
    return l.file_id.size() + l.text.size() + sizeof(SubtitleLine);
  };
  group_cfg.encode = encode_line;
  group_cfg.decode = [](std::string_view data) { return decode_line(data); };
  auto files = cleaned.group_by(
      "file", [](const SubtitleLine& l) { return l.file_id; }, std::move(group_cfg));

  FilterConfig filter = opts.filter;
  int64_t chunk_size = opts.chunk_size;
  auto keyed = files.transform<KeyedExample>(
      "examples", [filter, chunk_size](KeyedGroup<SubtitleLine>& file, Emitter<KeyedExample>& out) {
        FileResult built = build_file_examples(std::move(file.values), filter, chunk_size);
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

}  // namespace convbench::opensubtitles
