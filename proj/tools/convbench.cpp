// Command-line front end: dataset building, baseline fitting, model
// training and benchmark evaluation as subcommands. Every successful run
// writes a manifest recording flags, seeds, input digests and outputs.
#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "convbench/amazonqa.hpp"
#include "convbench/embedding.hpp"
#include "convbench/encoder.hpp"
#include "convbench/eval.hpp"
#include "convbench/example.hpp"
#include "convbench/featurizer.hpp"
#include "convbench/keyword.hpp"
#include "convbench/opensubtitles.hpp"
#include "convbench/reddit.hpp"
#include "convbench/run_manifest.hpp"
#include "convbench/scorers.hpp"
#include "convbench/shards.hpp"
#include "convbench/split.hpp"
#include "convbench/text.hpp"
#include "convbench/vector_map.hpp"

namespace {

using namespace convbench;

namespace fs = std::filesystem;

struct BuildFlags {
  std::vector<std::string> inputs;
  std::string out_dir;
  uint64_t min_chars = 9;
  uint64_t max_chars = 128;
  int train_split = 90;
  int num_shards = 1;
  int workers = 1;
  uint64_t seed = 0;
};

void add_build_flags(CLI::App* cmd, BuildFlags& flags, uint64_t default_max_chars) {
  flags.max_chars = default_max_chars;
  cmd->add_option("--input", flags.inputs, "input file(s)")->required()->expected(-1);
  cmd->add_option("--out", flags.out_dir, "output directory")->required();
  cmd->add_option("--min_chars", flags.min_chars, "minimum text length in characters");
  cmd->add_option("--max_chars", flags.max_chars, "maximum text length in characters");
  cmd->add_option("--train_split", flags.train_split, "train percentage of the key space")
      ->check(CLI::Range(0, 100));
  cmd->add_option("--num_shards", flags.num_shards, "shard files per split")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--workers", flags.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", flags.seed, "shard shuffle seed");
}

void require_files(const std::vector<std::string>& paths) {
  for (const auto& path : paths) {
    if (!fs::exists(path)) throw MissingInputError("no such input: " + path);
  }
}

std::vector<std::string> shard_outputs(const std::string& prefix, const ShardManifest& m) {
  std::vector<std::string> outputs;
  for (int i = 0; i < m.num_shards; ++i) {
    outputs.push_back(shard_path(prefix, i, m.num_shards));
  }
  outputs.push_back(manifest_path(prefix));
  return outputs;
}

void start_manifest(RunManifest& manifest, const std::string& subcommand,
                    const std::vector<std::string>& inputs) {
  manifest.subcommand = subcommand;
  for (const auto& path : inputs) manifest.add_input(path);
}

void finish_build_manifest(RunManifest& manifest, const BuildFlags& flags,
                           const std::string& out_dir, const ShardManifest& train,
                           const ShardManifest& test) {
  manifest.flags["min_chars"] = std::to_string(flags.min_chars);
  manifest.flags["max_chars"] = std::to_string(flags.max_chars);
  manifest.flags["train_split"] = std::to_string(flags.train_split);
  manifest.flags["num_shards"] = std::to_string(flags.num_shards);
  manifest.flags["workers"] = std::to_string(flags.workers);
  manifest.flags["out"] = out_dir;
  manifest.seeds["seed"] = flags.seed;
  for (auto& path : shard_outputs(out_dir + "/train", train)) {
    manifest.outputs.push_back(std::move(path));
  }
  for (auto& path : shard_outputs(out_dir + "/test", test)) {
    manifest.outputs.push_back(std::move(path));
  }
  manifest.save(out_dir + "/run_manifest.json");
}

void print_build_stats(const PipelineStats& stats, const ShardManifest& train,
                       const ShardManifest& test) {
  nlohmann::ordered_json summary;
  summary["stages"] = stats.to_json(false);
  summary["train_records"] = train.total;
  summary["test_records"] = test.total;
  std::cout << summary.dump(2) << "\n";
}

std::vector<Example> read_example_files(const std::vector<std::string>& patterns) {
  std::vector<Example> examples;
  for (const auto& pattern : patterns) {
    auto part = read_examples(pattern);
    examples.insert(examples.end(), std::make_move_iterator(part.begin()),
                    std::make_move_iterator(part.end()));
  }
  return examples;
}

std::vector<std::string> expand_patterns(const std::vector<std::string>& patterns) {
  std::vector<std::string> files;
  for (const auto& pattern : patterns) {
    auto part = expand_shard_pattern(pattern);
    files.insert(files.end(), part.begin(), part.end());
  }
  return files;
}

std::vector<std::pair<std::string, std::string>> to_pairs(const std::vector<Example>& examples) {
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(examples.size());
  for (const auto& ex : examples) pairs.emplace_back(ex.context, ex.response);
  return pairs;
}

struct ProviderFlags {
  std::string embeddings_file;
  uint64_t hash_seed = 0;
  int hash_n = 1;
  int hash_dim = 64;
};

void add_provider_flags(CLI::App* cmd, ProviderFlags& flags) {
  cmd->add_option("--embeddings", flags.embeddings_file,
                  "embedding table file; hashed n-gram embeddings are used when absent");
  cmd->add_option("--hash_seed", flags.hash_seed, "hashed embedding seed");
  cmd->add_option("--hash_n", flags.hash_n, "hashed embedding n-gram order")
      ->check(CLI::Range(1, 3));
  cmd->add_option("--hash_dim", flags.hash_dim, "hashed embedding dimension")
      ->check(CLI::PositiveNumber);
}

std::shared_ptr<const EmbeddingProvider> make_provider(const ProviderFlags& flags,
                                                       RunManifest& manifest) {
  manifest.flags["hash_seed"] = std::to_string(flags.hash_seed);
  manifest.flags["hash_n"] = std::to_string(flags.hash_n);
  manifest.flags["hash_dim"] = std::to_string(flags.hash_dim);
  if (!flags.embeddings_file.empty()) {
    require_files({flags.embeddings_file});
    manifest.add_input(flags.embeddings_file);
    manifest.flags["embeddings"] = flags.embeddings_file;
    return std::make_shared<FileBackedEmbedder>(FileBackedEmbedder::load(flags.embeddings_file));
  }
  return std::make_shared<HashedNgramEmbedder>(flags.hash_seed, flags.hash_n, flags.hash_dim);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"conversational response selection benchmark tool"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // ---- build-reddit ----
  auto* cmd_reddit = app.add_subcommand("build-reddit", "build the threaded-comment dataset");
  BuildFlags reddit_flags;
  add_build_flags(cmd_reddit, reddit_flags, 128);
  cmd_reddit->callback([&reddit_flags] {
    require_files(reddit_flags.inputs);
    RunManifest manifest;
    start_manifest(manifest, "build-reddit", reddit_flags.inputs);
    fs::create_directories(reddit_flags.out_dir);

    reddit::BuildOptions opts;
    opts.filter.min_chars = reddit_flags.min_chars;
    opts.filter.max_chars = reddit_flags.max_chars;
    opts.split.train_percent = reddit_flags.train_split;
    opts.num_shards = reddit_flags.num_shards;
    opts.shuffle_seed = reddit_flags.seed;
    opts.output_dir = reddit_flags.out_dir;
    auto result = reddit::build_dataset(reddit_flags.inputs, opts, reddit_flags.workers);

    finish_build_manifest(manifest, reddit_flags, reddit_flags.out_dir, result.train,
                          result.test);
    print_build_stats(result.stats, result.train, result.test);
  });

  // ---- build-opensubtitles ----
  auto* cmd_subs = app.add_subcommand("build-opensubtitles", "build the subtitle-pair dataset");
  BuildFlags subs_flags;
  std::string subs_format = "text";
  int64_t chunk_size = 100000;
  add_build_flags(cmd_subs, subs_flags, 128);
  cmd_subs->add_option("--format", subs_format, "input layout")
      ->check(CLI::IsMember({"text", "tsv"}));
  cmd_subs->add_option("--chunk_size", chunk_size, "lines per split chunk")
      ->check(CLI::PositiveNumber);
  cmd_subs->callback([&subs_flags, &subs_format, &chunk_size] {
    require_files(subs_flags.inputs);
    RunManifest manifest;
    start_manifest(manifest, "build-opensubtitles", subs_flags.inputs);
    fs::create_directories(subs_flags.out_dir);

    opensubtitles::BuildOptions opts;
    opts.filter.min_chars = subs_flags.min_chars;
    opts.filter.max_chars = subs_flags.max_chars;
    opts.split.train_percent = subs_flags.train_split;
    opts.format = subs_format == "tsv" ? opensubtitles::InputFormat::kTsv
                                       : opensubtitles::InputFormat::kText;
    opts.chunk_size = chunk_size;
    opts.num_shards = subs_flags.num_shards;
    opts.shuffle_seed = subs_flags.seed;
    opts.output_dir = subs_flags.out_dir;
    auto result = opensubtitles::build_dataset(subs_flags.inputs, opts, subs_flags.workers);

    manifest.flags["format"] = subs_format;
    manifest.flags["chunk_size"] = std::to_string(chunk_size);
    finish_build_manifest(manifest, subs_flags, subs_flags.out_dir, result.train, result.test);
    print_build_stats(result.stats, result.train, result.test);
  });

  // ---- build-amazonqa ----
  auto* cmd_qa = app.add_subcommand("build-amazonqa", "build the product QA dataset");
  BuildFlags qa_flags;
  add_build_flags(cmd_qa, qa_flags, 512);
  cmd_qa->callback([&qa_flags] {
    require_files(qa_flags.inputs);
    RunManifest manifest;
    start_manifest(manifest, "build-amazonqa", qa_flags.inputs);
    fs::create_directories(qa_flags.out_dir);

    amazonqa::BuildOptions opts;
    opts.filter.min_chars = qa_flags.min_chars;
    opts.filter.max_chars = qa_flags.max_chars;
    opts.split.train_percent = qa_flags.train_split;
    opts.num_shards = qa_flags.num_shards;
    opts.shuffle_seed = qa_flags.seed;
    opts.output_dir = qa_flags.out_dir;
    auto result = amazonqa::build_dataset(qa_flags.inputs, opts, qa_flags.workers);

    finish_build_manifest(manifest, qa_flags, qa_flags.out_dir, result.train, result.test);
    print_build_stats(result.stats, result.train, result.test);
  });

  // ---- fit-keyword ----
  auto* cmd_fit = app.add_subcommand("fit-keyword", "fit term statistics on train responses");
  std::vector<std::string> fit_train;
  std::string fit_out;
  cmd_fit->add_option("--train", fit_train, "train shard file(s) or pattern(s)")
      ->required()
      ->expected(-1);
  cmd_fit->add_option("--out", fit_out, "output statistics file")->required();
  cmd_fit->callback([&fit_train, &fit_out] {
    auto files = expand_patterns(fit_train);
    RunManifest manifest;
    start_manifest(manifest, "fit-keyword", files);

    keyword::TermStats stats;
    for (const auto& ex : read_example_files(fit_train)) {
      stats.add_document(tokenize(ex.response));
    }
    stats.save(fit_out);

    manifest.flags["out"] = fit_out;
    manifest.outputs = {fit_out};
    manifest.save(fit_out + ".manifest");
    std::cout << "documents: " << stats.num_docs() << "\n";
  });

  // ---- train-map ----
  auto* cmd_map = app.add_subcommand("train-map", "grid-search a linear map over embeddings");
  std::vector<std::string> map_train;
  std::string map_out;
  ProviderFlags map_provider;
  vectormap::SweepConfig sweep;
  cmd_map->add_option("--train", map_train, "train shard file(s) or pattern(s)")
      ->required()
      ->expected(-1);
  cmd_map->add_option("--out", map_out, "output directory")->required();
  add_provider_flags(cmd_map, map_provider);
  cmd_map->add_option("--train_sample", sweep.train_sample, "examples drawn for the sweep");
  cmd_map->add_option("--epochs", sweep.epochs, "epochs per grid point");
  cmd_map->add_option("--batch_size", sweep.batch_size, "training batch size");
  cmd_map->add_option("--seed", sweep.seed, "sweep seed");
  cmd_map->callback([&map_train, &map_out, &map_provider, &sweep] {
    auto files = expand_patterns(map_train);
    RunManifest manifest;
    start_manifest(manifest, "train-map", files);
    auto provider = make_provider(map_provider, manifest);

    auto pairs = to_pairs(read_example_files(map_train));
    auto result = vectormap::train_map(pairs, *provider, sweep);

    fs::create_directories(map_out);
    std::string model_path = map_out + "/map_model.json";
    std::string report_path = map_out + "/sweep_report.json";
    result.model.save(model_path);
    {
      std::string tmp = report_path + ".tmp";
      std::ofstream out(tmp, std::ios::binary);
      out << result.report().dump(2) << "\n";
      out.close();
      fs::rename(tmp, report_path);
    }

    manifest.flags["out"] = map_out;
    manifest.flags["train_sample"] = std::to_string(sweep.train_sample);
    manifest.flags["epochs"] = std::to_string(sweep.epochs);
    manifest.flags["batch_size"] = std::to_string(sweep.batch_size);
    manifest.seeds["seed"] = sweep.seed;
    manifest.outputs = {model_path, report_path};
    manifest.save(map_out + "/run_manifest.json");
    std::cout << result.report().dump(2) << "\n";
  });

  // ---- train-encoder ----
  auto* cmd_enc = app.add_subcommand("train-encoder", "train the dual encoder");
  std::vector<std::string> enc_train, enc_dev;
  std::string enc_out;
  encoder::EncoderTrainConfig enc_cfg;
  uint64_t enc_vocab = 10000, enc_buckets = 4096;
  uint32_t embed_dim = 64, hidden_dim = 128, output_dim = 64;
  cmd_enc->add_option("--train", enc_train, "train shard file(s) or pattern(s)")
      ->required()
      ->expected(-1);
  cmd_enc->add_option("--dev", enc_dev, "held-out shard file(s) for accuracy tracking")
      ->expected(-1);
  cmd_enc->add_option("--out", enc_out, "output directory")->required();
  cmd_enc->add_option("--steps", enc_cfg.steps, "training steps");
  cmd_enc->add_option("--batch_size", enc_cfg.batch_size, "batch size");
  cmd_enc->add_option("--smoothing", enc_cfg.label_smoothing, "label smoothing mass");
  cmd_enc->add_option("--lr", enc_cfg.learning_rate, "base learning rate");
  cmd_enc->add_option("--warmup", enc_cfg.warmup_steps, "linear warmup steps");
  cmd_enc->add_option("--seed", enc_cfg.seed, "training seed");
  cmd_enc->add_option("--vocab", enc_vocab, "vocabulary capacity per feature type");
  cmd_enc->add_option("--buckets", enc_buckets, "hash buckets per feature type");
  cmd_enc->add_option("--embed_dim", embed_dim, "feature embedding dimension");
  cmd_enc->add_option("--hidden_dim", hidden_dim, "hidden layer width");
  cmd_enc->add_option("--output_dim", output_dim, "encoding dimension");
  cmd_enc->callback([&] {
    auto files = expand_patterns(enc_train);
    auto dev_files = enc_dev.empty() ? std::vector<std::string>{} : expand_patterns(enc_dev);
    RunManifest manifest;
    std::vector<std::string> all_inputs = files;
    all_inputs.insert(all_inputs.end(), dev_files.begin(), dev_files.end());
    start_manifest(manifest, "train-encoder", all_inputs);

    auto pairs = to_pairs(read_example_files(enc_train));
    auto dev_pairs = enc_dev.empty() ? pairs : to_pairs(read_example_files(enc_dev));

    encoder::VocabCounter counter;
    for (const auto& [c, r] : pairs) {
      counter.add(c);
      counter.add(r);
    }
    encoder::FeaturizerConfig fcfg;
    fcfg.unigram_vocab = enc_vocab;
    fcfg.bigram_vocab = enc_vocab;
    fcfg.unigram_buckets = enc_buckets;
    fcfg.bigram_buckets = enc_buckets;
    auto featurizer = encoder::Featurizer::build(counter, fcfg);
    auto dims = encoder::dims_for(featurizer, embed_dim, hidden_dim, output_dim);

    auto result = encoder::train_encoder(pairs, dev_pairs, featurizer, dims, enc_cfg);

    fs::create_directories(enc_out);
    std::string model_path = enc_out + "/encoder.bin";
    std::string uni_path = enc_out + "/unigram_vocab.txt";
    std::string bi_path = enc_out + "/bigram_vocab.txt";
    std::string log_path = enc_out + "/train_log.json";
    result.params.save(model_path);
    featurizer.unigram_vocab().save(uni_path);
    featurizer.bigram_vocab().save(bi_path);
    {
      nlohmann::ordered_json log;
      log["losses"] = nlohmann::ordered_json::array();
      for (const auto& entry : result.log.losses) {
        log["losses"].push_back({{"step", entry.step},
                                 {"loss", entry.loss},
                                 {"learning_rate", entry.learning_rate}});
      }
      log["dev_evals"] = nlohmann::ordered_json::array();
      for (const auto& entry : result.log.dev_evals) {
        log["dev_evals"].push_back({{"step", entry.step}, {"accuracy", entry.accuracy}});
      }
      std::string tmp = log_path + ".tmp";
      std::ofstream out(tmp, std::ios::binary);
      out << log.dump(2) << "\n";
      out.close();
      fs::rename(tmp, log_path);
    }

    manifest.flags["out"] = enc_out;
    manifest.flags["steps"] = std::to_string(enc_cfg.steps);
    manifest.flags["batch_size"] = std::to_string(enc_cfg.batch_size);
    manifest.flags["smoothing"] = std::to_string(enc_cfg.label_smoothing);
    manifest.flags["lr"] = std::to_string(enc_cfg.learning_rate);
    manifest.flags["warmup"] = std::to_string(enc_cfg.warmup_steps);
    manifest.flags["vocab"] = std::to_string(enc_vocab);
    manifest.flags["buckets"] = std::to_string(enc_buckets);
    manifest.flags["embed_dim"] = std::to_string(embed_dim);
    manifest.flags["hidden_dim"] = std::to_string(hidden_dim);
    manifest.flags["output_dim"] = std::to_string(output_dim);
    manifest.seeds["seed"] = enc_cfg.seed;
    manifest.outputs = {model_path, uni_path, bi_path, log_path};
    manifest.save(enc_out + "/run_manifest.json");
    if (!result.log.dev_evals.empty()) {
      std::cout << "final dev accuracy: " << result.log.dev_evals.back().accuracy << "\n";
    }
  });

  // ---- evaluate ----
  auto* cmd_eval = app.add_subcommand("evaluate", "run the 1-of-100 benchmark for one scorer");
  std::string eval_scorer, eval_dataset = "test", eval_out;
  std::vector<std::string> eval_test;
  std::string eval_stats, eval_model, eval_model_dir;
  ProviderFlags eval_provider;
  eval::EvalConfig eval_cfg;
  cmd_eval->add_option("--scorer", eval_scorer, "scorer name")
      ->required()
      ->check(CLI::IsMember({"tfidf", "bm25", "sim", "map", "encoder", "random"}));
  cmd_eval->add_option("--test", eval_test, "test shard file(s) or pattern(s)")
      ->required()
      ->expected(-1);
  cmd_eval->add_option("--dataset", eval_dataset, "dataset name for the report");
  cmd_eval->add_option("--out", eval_out, "results file")->required();
  cmd_eval->add_option("--stats", eval_stats, "term statistics file (tfidf, bm25)");
  cmd_eval->add_option("--model", eval_model, "map model file (map)");
  cmd_eval->add_option("--model_dir", eval_model_dir, "trained encoder directory (encoder)");
  add_provider_flags(cmd_eval, eval_provider);
  cmd_eval->add_option("--batch_size", eval_cfg.batch_size, "candidates per example");
  cmd_eval->add_option("--num_batches", eval_cfg.num_batches, "evaluation batches");
  cmd_eval->add_option("--seed", eval_cfg.seed, "sampling seed");
  cmd_eval->callback([&] {
    // Argument errors surface before any filesystem access.
    if ((eval_scorer == "tfidf" || eval_scorer == "bm25") && eval_stats.empty()) {
      throw CLI::ValidationError("--stats is required for " + eval_scorer);
    }
    if (eval_scorer == "map" && eval_model.empty()) {
      throw CLI::ValidationError("--model is required for map");
    }
    if (eval_scorer == "encoder" && eval_model_dir.empty()) {
      throw CLI::ValidationError("--model_dir is required for encoder");
    }

    auto files = expand_patterns(eval_test);
    RunManifest manifest;
    start_manifest(manifest, "evaluate", files);

    std::unique_ptr<eval::Scorer> scorer;
    if (eval_scorer == "tfidf" || eval_scorer == "bm25") {
      require_files({eval_stats});
      manifest.add_input(eval_stats);
      manifest.flags["stats"] = eval_stats;
      auto stats = keyword::TermStats::load(eval_stats);
      if (eval_scorer == "tfidf") {
        scorer = std::make_unique<scorers::TfidfScorer>(std::move(stats));
      } else {
        scorer = std::make_unique<scorers::Bm25Scorer>(std::move(stats));
      }
    } else if (eval_scorer == "sim") {
      scorer = std::make_unique<scorers::SimScorer>(make_provider(eval_provider, manifest));
    } else if (eval_scorer == "map") {
      require_files({eval_model});
      manifest.add_input(eval_model);
      manifest.flags["model"] = eval_model;
      scorer = std::make_unique<scorers::MapScorer>(make_provider(eval_provider, manifest),
                                                    vectormap::MapModel::load(eval_model));
    } else if (eval_scorer == "encoder") {
      std::string model_path = eval_model_dir + "/encoder.bin";
      std::string uni_path = eval_model_dir + "/unigram_vocab.txt";
      std::string bi_path = eval_model_dir + "/bigram_vocab.txt";
      require_files({model_path, uni_path, bi_path});
      for (const auto& p : {model_path, uni_path, bi_path}) manifest.add_input(p);
      manifest.flags["model_dir"] = eval_model_dir;
      auto params = encoder::EncoderParams::load(model_path);
      auto uni = encoder::Vocabulary::load(uni_path);
      auto bi = encoder::Vocabulary::load(bi_path);
      encoder::FeaturizerConfig fcfg;
      fcfg.unigram_vocab = params.dims.unigram_vocab;
      fcfg.bigram_vocab = params.dims.bigram_vocab;
      fcfg.unigram_buckets = params.dims.unigram_buckets;
      fcfg.bigram_buckets = params.dims.bigram_buckets;
      encoder::Featurizer featurizer(std::move(uni), std::move(bi), fcfg);
      if (featurizer.unigram_range() != params.dims.unigram_rows() ||
          featurizer.bigram_range() != params.dims.bigram_rows()) {
        throw std::runtime_error("vocabulary files do not match the encoder model");
      }
      scorer = std::make_unique<scorers::EncoderScorer>(std::move(params), std::move(featurizer));
    } else {
      scorer = std::make_unique<scorers::RandomScorer>(eval_cfg.seed);
    }

    auto examples = read_example_files(eval_test);
    auto plan = eval::make_eval_batches(examples, eval_cfg);
    if (plan.reduced) {
      std::cerr << "warning: test set holds " << examples.size() << " examples; evaluating "
                << plan.batches.size() << " batches instead of " << eval_cfg.num_batches << "\n";
    }
    auto outcome = eval::one_of_100_accuracy(*scorer, plan.batches);

    eval::EvalResult result{scorer->name(), eval_dataset, outcome.accuracy,
                            outcome.num_examples, eval_cfg.seed};
    {
      std::string tmp = eval_out + ".tmp";
      std::ofstream out(tmp, std::ios::binary);
      out << eval::to_json(result).dump() << "\n";
      out.close();
      fs::rename(tmp, eval_out);
    }

    manifest.flags["scorer"] = eval_scorer;
    manifest.flags["dataset"] = eval_dataset;
    manifest.flags["batch_size"] = std::to_string(eval_cfg.batch_size);
    manifest.flags["num_batches"] = std::to_string(eval_cfg.num_batches);
    manifest.flags["out"] = eval_out;
    manifest.seeds["seed"] = eval_cfg.seed;
    manifest.outputs = {eval_out};
    manifest.save(eval_out + ".manifest");
    std::cout << eval::to_json(result).dump() << "\n";
  });

  // ---- report ----
  auto* cmd_report = app.add_subcommand("report", "render evaluation results as a table");
  std::vector<std::string> report_results;
  std::string report_out;
  cmd_report->add_option("--results", report_results, "results file(s)")
      ->required()
      ->expected(-1);
  cmd_report->add_option("--out", report_out, "report file")->required();
  cmd_report->callback([&report_results, &report_out] {
    require_files(report_results);
    RunManifest manifest;
    start_manifest(manifest, "report", report_results);

    std::vector<eval::EvalResult> results;
    for (const auto& path : report_results) {
      std::ifstream in(path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        results.push_back(eval::eval_result_from_json(nlohmann::json::parse(line)));
      }
    }
    std::string table = eval::render_report(results);
    {
      std::string tmp = report_out + ".tmp";
      std::ofstream out(tmp, std::ios::binary);
      out << table;
      out.close();
      fs::rename(tmp, report_out);
    }

    manifest.flags["out"] = report_out;
    manifest.outputs = {report_out};
    manifest.save(report_out + ".manifest");
    std::cout << table;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const convbench::MissingInputError& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 1;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 1;
  }
}
