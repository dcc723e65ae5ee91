#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "convbench/encoder.hpp"
#include "convbench/featurizer.hpp"
#include "convbench/hash.hpp"
#include "convbench/vector_map.hpp"

using namespace convbench;
using namespace convbench::encoder;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("convbench-enc-" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Featurizer toy_featurizer() {
  VocabCounter counter;
  counter.add("the cat sat on the mat");
  counter.add("the dog sat");
  counter.add("a cat and a dog");
  FeaturizerConfig cfg;
  cfg.unigram_vocab = 6;
  cfg.bigram_vocab = 4;
  cfg.unigram_buckets = 8;
  cfg.bigram_buckets = 8;
  return Featurizer::build(counter, cfg);
}

// Independent forward reference: plain loops, no shared code with encode().
Eigen::VectorXd reference_encode(const SideParams& side, const EncoderDims& dims,
                                 const FeatureIds& ids) {
  auto reduce = [&](const Eigen::MatrixXd& table, const Eigen::VectorXd& attention,
                    const std::vector<uint32_t>& seq) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dims.embed_dim);
    if (seq.empty()) return out;
    std::vector<double> logits;
    for (auto id : seq) {
      double dot = 0.0;
      for (uint32_t k = 0; k < dims.embed_dim; ++k) dot += table(id, k) * attention[k];
      logits.push_back(dot);
    }
    double max_logit = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& l : logits) {
      l = std::exp(l - max_logit);
      denom += l;
    }
    for (size_t i = 0; i < seq.size(); ++i) {
      for (uint32_t k = 0; k < dims.embed_dim; ++k) {
        out[k] += (logits[i] / denom) * table(seq[i], k);
      }
    }
    return out;
  };
  Eigen::VectorXd z(2 * dims.embed_dim);
  z.head(dims.embed_dim) = reduce(side.unigram_table, side.unigram_attention, ids.unigrams);
  z.tail(dims.embed_dim) = reduce(side.bigram_table, side.bigram_attention, ids.bigrams);
  auto dense = [](const DenseLayer& layer, const Eigen::VectorXd& in, bool squash) {
    Eigen::VectorXd out(layer.b.size());
    for (Eigen::Index j = 0; j < out.size(); ++j) {
      double acc = layer.b[j];
      for (Eigen::Index i = 0; i < in.size(); ++i) acc += layer.W(i, j) * in[i];
      out[j] = squash ? std::tanh(acc) : acc;
    }
    return out;
  };
  Eigen::VectorXd h1 = dense(side.dense[0], z, true);
  Eigen::VectorXd h2 = dense(side.dense[1], h1, true);
  Eigen::VectorXd u = dense(side.dense[2], h2, false);
  return u / u.norm();
}

EncoderDims tiny_dims() {
  EncoderDims dims;
  dims.unigram_vocab = 6;
  dims.unigram_buckets = 4;
  dims.bigram_vocab = 5;
  dims.bigram_buckets = 3;
  dims.embed_dim = 4;
  dims.hidden_dim = 6;
  dims.output_dim = 4;
  return dims;
}

// Hand-built batch exercising repeated ids, bucket ids and an empty type.
void tiny_batch(std::vector<FeatureIds>& ctx, std::vector<FeatureIds>& rsp) {
  ctx.resize(3);
  rsp.resize(3);
  ctx[0].unigrams = {0, 2, 2};
  ctx[0].bigrams = {1};
  ctx[1].unigrams = {5, 9};
  ctx[1].bigrams = {};
  ctx[2].unigrams = {1};
  ctx[2].bigrams = {0, 7, 4};
  rsp[0].unigrams = {3};
  rsp[0].bigrams = {2, 2};
  rsp[1].unigrams = {4, 0};
  rsp[1].bigrams = {6};
  rsp[2].unigrams = {2, 8, 1, 0};
  rsp[2].bigrams = {5};
}

// Unique-token memorization corpus: context "t<i> t<i>" maps to response
// "m<i> m<i>" under a fixed seeded permutation of indices.
std::vector<std::pair<std::string, std::string>> toy_corpus(size_t n, uint64_t seed) {
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  SplitMix64 rng(seed);
  for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.next_below(i)]);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (size_t i = 0; i < n; ++i) {
    std::string c = "t" + std::to_string(i);
    std::string r = "m" + std::to_string(perm[i]);
    pairs.emplace_back(c + " " + c, r + " " + r);
  }
  return pairs;
}

}  // namespace

TEST_CASE("vocabulary ranks by count then lexicographically") {
  std::unordered_map<std::string, uint64_t> counts{
      {"banana", 3}, {"apple", 3}, {"cherry", 7}, {"date", 1}, {"elder", 3}};
  auto vocab = Vocabulary::build(counts, 4);
  REQUIRE(vocab.size() == 4);
  CHECK(vocab.feature(0) == "cherry");
  CHECK(vocab.feature(1) == "apple");
  CHECK(vocab.feature(2) == "banana");
  CHECK(vocab.feature(3) == "elder");
  CHECK(vocab.id_or_size("date") == 4);
  CHECK(vocab.contains("apple"));
  CHECK_FALSE(vocab.contains("date"));

  auto all = Vocabulary::build(counts, 100);
  CHECK(all.size() == 5);
  CHECK(all.feature(4) == "date");
}

TEST_CASE("vocabulary save and load round trip") {
  auto dir = temp_dir("vocab");
  Vocabulary vocab({"alpha", "beta", "gamma"});
  auto path = (dir / "vocab.txt").string();
  vocab.save(path);

  auto text = read_bytes(dir / "vocab.txt");
  CHECK(text == "alpha\nbeta\ngamma\n");

  auto loaded = Vocabulary::load(path);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded.id_or_size("alpha") == 0);
  CHECK(loaded.id_or_size("gamma") == 2);
  CHECK(loaded.id_or_size("delta") == 3);

  CHECK_THROWS_AS(Vocabulary({"dup", "dup"}), std::invalid_argument);
}

TEST_CASE("featurizer maps in-vocabulary and bucketed features") {
  auto featurizer = toy_featurizer();
  const auto& uni = featurizer.unigram_vocab();
  REQUIRE(uni.size() == 6);
  // ranked by count descending, ties by feature ascending
  CHECK(uni.feature(0) == "the");
  CHECK(uni.feature(1) == "a");
  CHECK(uni.feature(2) == "cat");
  CHECK(uni.feature(3) == "dog");
  CHECK(uni.feature(4) == "sat");
  CHECK(uni.feature(5) == "and");

  auto ids = featurizer.featurize("the cat sat");
  REQUIRE(ids.unigrams == std::vector<uint32_t>{0, 2, 4});
  REQUIRE(ids.bigrams.size() == 2);

  // "mat" and "on" did not make the size-6 vocabulary: bucketed ids
  auto oov = featurizer.featurize("on the mat");
  REQUIRE(oov.unigrams.size() == 3);
  CHECK(oov.unigrams[1] == 0);
  for (auto idx : {0, 2}) {
    CHECK(oov.unigrams[idx] >= 6);
    CHECK(oov.unigrams[idx] < 6 + 8);
  }
  CHECK(oov.unigrams[0] == 6 + stable_key_hash("on") % 8);
  CHECK(oov.unigrams[2] == 6 + stable_key_hash("mat") % 8);

  CHECK(featurizer.featurize("").unigrams.empty());
  CHECK(featurizer.featurize("").bigrams.empty());
  CHECK(featurizer.featurize("solo").bigrams.empty());

  CHECK(featurizer.unigram_range() == 6 + 8);
  CHECK(featurizer.bigram_range() == 4 + 8);

  // ids are stable across featurizers sharing the same vocabulary and buckets
  auto again = toy_featurizer();
  CHECK(again.featurize("on the mat").unigrams == oov.unigrams);
}

TEST_CASE("featurizer bigrams join adjacent tokens") {
  auto featurizer = toy_featurizer();
  const auto& bi = featurizer.bigram_vocab();
  REQUIRE(bi.size() == 4);
  auto ids = featurizer.featurize("the cat sat");
  bool first_known = bi.contains("the cat");
  if (first_known) {
    CHECK(ids.bigrams[0] == bi.id_or_size("the cat"));
  } else {
    CHECK(ids.bigrams[0] == 4 + stable_key_hash("the cat") % 8);
  }
}

TEST_CASE("encoder dims derive from a built featurizer") {
  auto featurizer = toy_featurizer();
  auto dims = dims_for(featurizer, 16, 32, 8);
  CHECK(dims.unigram_vocab == 6);
  CHECK(dims.unigram_buckets == 8);
  CHECK(dims.bigram_vocab == 4);
  CHECK(dims.bigram_buckets == 8);
  CHECK(dims.embed_dim == 16);
  CHECK(dims.hidden_dim == 32);
  CHECK(dims.output_dim == 8);
  CHECK(dims.unigram_rows() == featurizer.unigram_range());
  CHECK(dims.bigram_rows() == featurizer.bigram_range());
}

TEST_CASE("initialization is seeded and bounded") {
  auto dims = tiny_dims();
  auto a = EncoderParams::init(dims, 42);
  auto b = EncoderParams::init(dims, 42);
  auto c = EncoderParams::init(dims, 43);

  CHECK(a.context.unigram_table == b.context.unigram_table);
  CHECK(a.response.dense[1].W == b.response.dense[1].W);
  CHECK(a.context.unigram_table != c.context.unigram_table);

  CHECK(a.scale_raw == 0.0);
  CHECK(a.scale() == 1.0);
  CHECK(a.context.unigram_table.cwiseAbs().maxCoeff() <= 0.05);
  CHECK(a.context.bigram_table.cwiseAbs().maxCoeff() <= 0.05);
  CHECK(a.response.unigram_attention.cwiseAbs().maxCoeff() <= 0.05);
  for (int layer = 0; layer < 3; ++layer) {
    double in = static_cast<double>(a.context.dense[layer].W.rows());
    double out = static_cast<double>(a.context.dense[layer].W.cols());
    CHECK(a.context.dense[layer].W.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (in + out)));
    CHECK(a.context.dense[layer].b.isZero(0.0));
  }
  // the two sides start different
  CHECK(a.context.unigram_table != a.response.unigram_table);

  CHECK_THROWS_AS(EncoderParams::init(EncoderDims{0, 1, 1, 1, 4, 4, 4}, 1),
                  std::invalid_argument);
}

TEST_CASE("encode matches a straight-line reference and is unit norm") {
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 11);
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);

  for (const auto& ids : ctx) {
    auto e = encode(params, Side::kContext, ids);
    auto ref = reference_encode(params.context, dims, ids);
    REQUIRE(e.size() == 4);
    CHECK(std::abs(e.norm() - 1.0) < 1e-12);
    CHECK((e - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
  for (const auto& ids : rsp) {
    auto e = encode(params, Side::kResponse, ids);
    auto ref = reference_encode(params.response, dims, ids);
    CHECK((e - ref).cwiseAbs().maxCoeff() < 1e-12);
  }

  // sides use distinct weights: same ids, different encodings
  auto same_ctx = encode(params, Side::kContext, ctx[0]);
  auto same_rsp = encode(params, Side::kResponse, ctx[0]);
  CHECK((same_ctx - same_rsp).norm() > 1e-3);

  // a single feature gets attention weight one: encoding equals the
  // reference built from just that row
  FeatureIds solo;
  solo.unigrams = {3};
  encoder::detail::EncodeCache cache;
  encoder::detail::encode_cached(params.context, dims, solo, cache);
  REQUIRE(cache.uni.weights.size() == 1);
  CHECK(cache.uni.weights[0] == 1.0);
  CHECK((cache.uni.reduced - params.context.unigram_table.row(3).transpose()).norm() == 0.0);
  CHECK(cache.bi.reduced.isZero(0.0));

  FeatureIds out_of_range;
  out_of_range.unigrams = {static_cast<uint32_t>(dims.unigram_rows())};
  CHECK_THROWS_AS(encode(params, Side::kContext, out_of_range), EncoderError);
}

TEST_CASE("score batch matches per-pair dot products") {
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 3);
  params.scale_raw = 0.7;
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);

  auto scores = score_batch(params, ctx, rsp);
  REQUIRE(scores.rows() == 3);
  REQUIRE(scores.cols() == 3);
  for (int i = 0; i < 3; ++i) {
    auto e_ctx = encode(params, Side::kContext, ctx[i]);
    for (int j = 0; j < 3; ++j) {
      auto e_rsp = encode(params, Side::kResponse, rsp[j]);
      CHECK(std::abs(scores(i, j) - std::exp(0.7) * e_ctx.dot(e_rsp)) < 1e-9);
    }
  }

  // scores are bounded by the scale
  CHECK(scores.cwiseAbs().maxCoeff() <= std::exp(0.7) + 1e-12);
}

TEST_CASE("scoring is equivariant under response permutation") {
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 9);
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);

  auto base = score_batch(params, ctx, rsp);
  std::vector<FeatureIds> shuffled = {rsp[2], rsp[0], rsp[1]};
  auto permuted = score_batch(params, ctx, shuffled);
  size_t source[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(permuted(i, j) == base(i, static_cast<int>(source[j])));
    }
  }
}

TEST_CASE("smoothed loss reduces to the plain batch loss at zero smoothing") {
  SplitMix64 rng(17);
  Eigen::MatrixXd scores(6, 6);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) scores(i, j) = rng.next_unit() * 8.0 - 4.0;
  }
  CHECK(std::abs(smoothed_loss(scores, 0.0) - vectormap::dot_product_loss(scores)) < 1e-12);
}

TEST_CASE("smoothed loss oracle values") {
  SECTION("all-equal scores give log n for any smoothing") {
    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(5, 5, 1.7);
    CHECK(std::abs(smoothed_loss(flat, 0.0) - std::log(5.0)) < 1e-12);
    CHECK(std::abs(smoothed_loss(flat, 0.2) - std::log(5.0)) < 1e-12);
    CHECK(std::abs(smoothed_loss(flat, 0.9) - std::log(5.0)) < 1e-12);
  }

  SECTION("brute-force cross entropy on a random matrix") {
    SplitMix64 rng(23);
    Eigen::MatrixXd scores(5, 5);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) scores(i, j) = rng.next_unit() * 6.0 - 3.0;
    }
    double epsilon = 0.2;
    double expected = 0.0;
    for (int i = 0; i < 5; ++i) {
      double denom = 0.0;
      for (int j = 0; j < 5; ++j) denom += std::exp(scores(i, j));
      for (int j = 0; j < 5; ++j) {
        double target = i == j ? 1.0 - epsilon : epsilon / 4.0;
        expected -= target * std::log(std::exp(scores(i, j)) / denom);
      }
    }
    expected /= 5.0;
    CHECK(std::abs(smoothed_loss(scores, epsilon) - expected) < 1e-12);
  }

  SECTION("extreme scores stay finite") {
    Eigen::MatrixXd scores = Eigen::MatrixXd::Constant(3, 3, -1000.0);
    scores(0, 0) = 1000.0;
    CHECK(std::isfinite(smoothed_loss(scores, 0.2)));
  }

  SECTION("a single pair cannot be smoothed") {
    Eigen::MatrixXd one(1, 1);
    one(0, 0) = 2.5;
    CHECK(smoothed_loss(one, 0.0) == 0.0);
    CHECK_THROWS_AS(smoothed_loss(one, 0.1), std::invalid_argument);
  }

  SECTION("input validation") {
    Eigen::MatrixXd rect(2, 3);
    rect.setZero();
    CHECK_THROWS_AS(smoothed_loss(rect, 0.0), std::invalid_argument);
    Eigen::MatrixXd square = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(smoothed_loss(square, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(smoothed_loss(square, 1.0), std::invalid_argument);
  }
}

TEST_CASE("loss gradient with respect to scores matches finite differences") {
  SplitMix64 rng(31);
  const int n = 4;
  Eigen::MatrixXd scores(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) scores(i, j) = rng.next_unit() * 4.0 - 2.0;
  }
  double epsilon = 0.2;

  // analytic: (softmax(S) - T) / n, row-wise
  for (int i = 0; i < n; ++i) {
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(scores(i, j));
    for (int j = 0; j < n; ++j) {
      double target = i == j ? 1.0 - epsilon : epsilon / (n - 1);
      double analytic = (std::exp(scores(i, j)) / denom - target) / n;
      double h = 1e-5;
      Eigen::MatrixXd up = scores, down = scores;
      up(i, j) += h;
      down(i, j) -= h;
      double fd = (smoothed_loss(up, epsilon) - smoothed_loss(down, epsilon)) / (2.0 * h);
      CHECK(std::abs(fd - analytic) < 1e-6);
    }
  }
}

TEST_CASE("analytic gradients match finite differences on every tensor") {
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 7);
  params.scale_raw = 0.3;
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);
  const double epsilon = 0.2;

  auto analytic = backward(params, ctx, rsp, epsilon);
  CHECK(std::abs(analytic.loss - smoothed_loss(score_batch(params, ctx, rsp), epsilon)) < 1e-12);

  size_t checked = 0;
  auto check_entry = [&](double analytic_value, auto&& nudge) {
    const double h = 1e-4;
    EncoderParams probe = params;
    nudge(probe, h);
    double up = smoothed_loss(score_batch(probe, ctx, rsp), epsilon);
    probe = params;
    nudge(probe, -h);
    double down = smoothed_loss(score_batch(probe, ctx, rsp), epsilon);
    double fd = (up - down) / (2.0 * h);
    double denom = std::max({1e-6, std::abs(fd), std::abs(analytic_value)});
    CHECK(std::abs(fd - analytic_value) / denom < 1e-3);
    ++checked;
  };

  auto check_side = [&](Side side, const SideGrads& grads) {
    auto side_of = [side](EncoderParams& p) -> SideParams& { return p.side(side); };
    for (const auto& [id, row] : grads.unigram_rows) {
      for (uint32_t k = 0; k < dims.embed_dim; ++k) {
        check_entry(row[k], [&, id = id, k](EncoderParams& p, double h) {
          side_of(p).unigram_table(id, k) += h;
        });
      }
    }
    for (const auto& [id, row] : grads.bigram_rows) {
      for (uint32_t k = 0; k < dims.embed_dim; ++k) {
        check_entry(row[k], [&, id = id, k](EncoderParams& p, double h) {
          side_of(p).bigram_table(id, k) += h;
        });
      }
    }
    for (uint32_t k = 0; k < dims.embed_dim; ++k) {
      check_entry(grads.unigram_attention[k], [&, k](EncoderParams& p, double h) {
        side_of(p).unigram_attention[k] += h;
      });
      check_entry(grads.bigram_attention[k], [&, k](EncoderParams& p, double h) {
        side_of(p).bigram_attention[k] += h;
      });
    }
    for (int layer = 0; layer < 3; ++layer) {
      const auto& w_grad = grads.dense[layer].W;
      for (Eigen::Index r = 0; r < w_grad.rows(); ++r) {
        for (Eigen::Index c = 0; c < w_grad.cols(); ++c) {
          check_entry(w_grad(r, c), [&, layer, r, c](EncoderParams& p, double h) {
            side_of(p).dense[layer].W(r, c) += h;
          });
        }
      }
      for (Eigen::Index j = 0; j < grads.dense[layer].b.size(); ++j) {
        check_entry(grads.dense[layer].b[j], [&, layer, j](EncoderParams& p, double h) {
          side_of(p).dense[layer].b[j] += h;
        });
      }
    }
  };

  check_side(Side::kContext, analytic.grads.context);
  check_side(Side::kResponse, analytic.grads.response);
  check_entry(analytic.grads.scale_raw,
              [](EncoderParams& p, double h) { p.scale_raw += h; });
  CHECK(checked > 300);
}

TEST_CASE("embedding rows absent from the batch have exactly zero gradient") {
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 7);
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);

  auto result = backward(params, ctx, rsp, 0.2);

  // context unigrams used: {0, 1, 2, 5, 9}
  CHECK(result.grads.context.unigram_rows.size() == 5);
  CHECK(result.grads.context.unigram_rows.count(3) == 0);
  CHECK(result.grads.context.unigram_rows.count(4) == 0);
  // context bigrams used: {0, 1, 4, 7}
  CHECK(result.grads.context.bigram_rows.size() == 4);
  CHECK(result.grads.context.bigram_rows.count(2) == 0);
  // response unigrams used: {0, 1, 2, 3, 4, 8}
  CHECK(result.grads.response.unigram_rows.size() == 6);
  CHECK(result.grads.response.unigram_rows.count(5) == 0);

  // and the finite difference agrees: nudging an unused row leaves the loss
  // bitwise unchanged
  double base = smoothed_loss(score_batch(params, ctx, rsp), 0.2);
  EncoderParams probe = params;
  probe.context.unigram_table(3, 2) += 0.01;
  CHECK(smoothed_loss(score_batch(probe, ctx, rsp), 0.2) == base);

  // a repeated id accumulates both occurrences into one entry
  CHECK(result.grads.context.unigram_rows.count(2) == 1);
}

TEST_CASE("backward validates batch shape") {
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 1);
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);
  std::vector<FeatureIds> short_rsp(rsp.begin(), rsp.begin() + 2);
  CHECK_THROWS_AS(backward(params, ctx, short_rsp, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(backward(params, {}, {}, 0.0), std::invalid_argument);
}

TEST_CASE("sgd applies sparse and dense updates") {
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 5);
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);

  auto before = params;
  auto result = backward(params, ctx, rsp, 0.2);
  sgd_step(params, result.grads, 0.1);

  // untouched rows are bitwise unchanged
  CHECK(params.context.unigram_table.row(3) == before.context.unigram_table.row(3));
  CHECK(params.context.unigram_table.row(4) == before.context.unigram_table.row(4));
  // touched rows moved opposite the gradient
  const auto& grad_row = result.grads.context.unigram_rows.at(0);
  Eigen::VectorXd expected =
      before.context.unigram_table.row(0).transpose() - 0.1 * grad_row;
  CHECK((params.context.unigram_table.row(0).transpose() - expected).norm() < 1e-15);
  // dense and scalar parameters moved too
  CHECK(params.context.dense[0].W != before.context.dense[0].W);
  CHECK(params.scale_raw == before.scale_raw - 0.1 * result.grads.scale_raw);

  // a small step along the exact gradient lowers the batch loss
  auto fresh = EncoderParams::init(dims, 5);
  double base = smoothed_loss(score_batch(fresh, ctx, rsp), 0.2);
  auto grad = backward(fresh, ctx, rsp, 0.2);
  sgd_step(fresh, grad.grads, 1e-4);
  CHECK(smoothed_loss(score_batch(fresh, ctx, rsp), 0.2) < base);
}

TEST_CASE("model files round trip exactly through single precision") {
  auto dir = temp_dir("model");
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 99);
  params.scale_raw = 0.42;

  auto path = (dir / "model.bin").string();
  params.save(path);
  auto bytes_first = read_bytes(dir / "model.bin");
  CHECK(bytes_first.substr(0, 4) == "CENC");

  auto loaded = EncoderParams::load(path);
  CHECK(loaded.dims == dims);
  // values survive as the nearest single-precision numbers
  CHECK(std::abs(loaded.scale_raw - 0.42) < 1e-7);
  CHECK((loaded.context.unigram_table - params.context.unigram_table).cwiseAbs().maxCoeff() <
        1e-7);

  // saving the loaded model reproduces the file byte for byte
  auto path2 = (dir / "model2.bin").string();
  loaded.save(path2);
  CHECK(read_bytes(dir / "model2.bin") == bytes_first);

  // loaded and original encode (almost) identically
  std::vector<FeatureIds> ctx, rsp;
  tiny_batch(ctx, rsp);
  auto a = encode(params, Side::kContext, ctx[0]);
  auto b = encode(loaded, Side::kContext, ctx[0]);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("model loading rejects malformed files") {
  auto dir = temp_dir("badmodel");
  auto dims = tiny_dims();
  auto params = EncoderParams::init(dims, 1);
  auto good_path = (dir / "good.bin").string();
  params.save(good_path);
  auto good = read_bytes(dir / "good.bin");

  auto write_file = [&](const std::string& name, const std::string& bytes) {
    std::ofstream out(dir / name, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    return (dir / name).string();
  };

  CHECK_THROWS_AS(EncoderParams::load((dir / "missing.bin").string()), EncoderError);
  CHECK_THROWS_AS(EncoderParams::load(write_file("magic.bin", "XENC" + good.substr(4))),
                  EncoderError);
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(EncoderParams::load(write_file("version.bin", bad_version)), EncoderError);
  CHECK_THROWS_AS(EncoderParams::load(write_file("short.bin", good.substr(0, good.size() / 2))),
                  EncoderError);
  CHECK_THROWS_AS(EncoderParams::load(write_file("long.bin", good + "x")), EncoderError);

  // the original still loads
  CHECK_NOTHROW(EncoderParams::load(good_path));
}

TEST_CASE("training is reproducible from the seed") {
  auto pairs = toy_corpus(60, 4);
  VocabCounter counter;
  for (const auto& [c, r] : pairs) {
    counter.add(c);
    counter.add(r);
  }
  FeaturizerConfig fcfg;
  fcfg.unigram_vocab = 200;
  fcfg.bigram_vocab = 200;
  fcfg.unigram_buckets = 8;
  fcfg.bigram_buckets = 8;
  auto featurizer = Featurizer::build(counter, fcfg);
  auto dims = dims_for(featurizer, 8, 12, 8);

  EncoderTrainConfig cfg;
  cfg.batch_size = 10;
  cfg.steps = 30;
  cfg.warmup_steps = 10;
  cfg.log_every = 5;
  cfg.eval_every = 15;
  cfg.eval_batches = 2;
  cfg.seed = 77;

  auto first = train_encoder(pairs, pairs, featurizer, dims, cfg);
  auto second = train_encoder(pairs, pairs, featurizer, dims, cfg);

  REQUIRE(first.log.losses.size() == second.log.losses.size());
  for (size_t i = 0; i < first.log.losses.size(); ++i) {
    CHECK(first.log.losses[i].step == second.log.losses[i].step);
    CHECK(first.log.losses[i].loss == second.log.losses[i].loss);
    CHECK(first.log.losses[i].learning_rate == second.log.losses[i].learning_rate);
  }
  REQUIRE(first.log.dev_evals.size() == second.log.dev_evals.size());
  for (size_t i = 0; i < first.log.dev_evals.size(); ++i) {
    CHECK(first.log.dev_evals[i].step == second.log.dev_evals[i].step);
    CHECK(first.log.dev_evals[i].accuracy == second.log.dev_evals[i].accuracy);
  }

  auto dir = temp_dir("repro");
  first.params.save((dir / "a.bin").string());
  second.params.save((dir / "b.bin").string());
  CHECK(read_bytes(dir / "a.bin") == read_bytes(dir / "b.bin"));

  // a different seed trains a different model
  cfg.seed = 78;
  auto third = train_encoder(pairs, pairs, featurizer, dims, cfg);
  third.params.save((dir / "c.bin").string());
  CHECK(read_bytes(dir / "c.bin") != read_bytes(dir / "a.bin"));

  // warmup ramps the learning rate linearly
  CHECK(first.log.losses[0].learning_rate == Catch::Approx(cfg.learning_rate * 0.1));
  CHECK(first.log.losses[1].learning_rate == Catch::Approx(cfg.learning_rate * 0.6));
  CHECK(first.log.losses[2].learning_rate == cfg.learning_rate);
}

TEST_CASE("zero training steps leave the seeded initialization at chance") {
  auto pairs = toy_corpus(150, 6);
  // shuffle responses so context and response are unrelated
  std::vector<std::string> responses;
  for (const auto& [c, r] : pairs) responses.push_back(r);
  SplitMix64 rng(12);
  for (size_t i = responses.size(); i > 1; --i) {
    std::swap(responses[i - 1], responses[rng.next_below(i)]);
  }
  for (size_t i = 0; i < pairs.size(); ++i) pairs[i].second = responses[i];

  VocabCounter counter;
  for (const auto& [c, r] : pairs) {
    counter.add(c);
    counter.add(r);
  }
  FeaturizerConfig fcfg;
  fcfg.unigram_vocab = 400;
  fcfg.bigram_vocab = 400;
  fcfg.unigram_buckets = 8;
  fcfg.bigram_buckets = 8;
  auto featurizer = Featurizer::build(counter, fcfg);
  auto dims = dims_for(featurizer, 8, 12, 8);

  EncoderTrainConfig cfg;
  cfg.batch_size = 50;
  cfg.steps = 0;
  cfg.eval_batches = 3;
  cfg.seed = 5;

  auto result = train_encoder(pairs, pairs, featurizer, dims, cfg);
  CHECK(result.log.losses.empty());
  REQUIRE(result.log.dev_evals.size() == 1);
  CHECK(result.log.dev_evals[0].step == 0);
  // chance for 1-of-50 is 0.02
  CHECK(result.log.dev_evals[0].accuracy < 0.15);

  // untrained params equal the raw initialization
  auto dir = temp_dir("zerosteps");
  result.params.save((dir / "trained.bin").string());
  EncoderParams::init(dims, 5).save((dir / "init.bin").string());
  CHECK(read_bytes(dir / "trained.bin") == read_bytes(dir / "init.bin"));
}

TEST_CASE("training memorizes a token permutation") {
  auto pairs = toy_corpus(120, 9);
  VocabCounter counter;
  for (const auto& [c, r] : pairs) {
    counter.add(c);
    counter.add(r);
  }
  FeaturizerConfig fcfg;
  fcfg.unigram_vocab = 300;
  fcfg.bigram_vocab = 300;
  fcfg.unigram_buckets = 8;
  fcfg.bigram_buckets = 8;
  auto featurizer = Featurizer::build(counter, fcfg);
  auto dims = dims_for(featurizer, 16, 24, 16);

  EncoderTrainConfig cfg;
  cfg.batch_size = 20;
  cfg.steps = 400;
  cfg.warmup_steps = 50;
  cfg.learning_rate = 0.1;
  cfg.log_every = 50;
  cfg.eval_every = 200;
  cfg.eval_batches = 3;
  cfg.seed = 21;

  auto result = train_encoder(pairs, pairs, featurizer, dims, cfg);
  REQUIRE_FALSE(result.log.losses.empty());
  REQUIRE_FALSE(result.log.dev_evals.empty());

  double first_loss = result.log.losses.front().loss;
  double last_loss = result.log.losses.back().loss;
  CHECK(last_loss < first_loss * 0.8);

  // chance for 1-of-20 is 0.05
  CHECK(result.log.dev_evals.front().accuracy < 0.3);
  CHECK(result.log.dev_evals.back().accuracy > 0.6);
}

TEST_CASE("training validates its configuration") {
  auto pairs = toy_corpus(30, 2);
  VocabCounter counter;
  for (const auto& [c, r] : pairs) {
    counter.add(c);
    counter.add(r);
  }
  FeaturizerConfig fcfg;
  fcfg.unigram_vocab = 100;
  fcfg.bigram_vocab = 100;
  fcfg.unigram_buckets = 4;
  fcfg.bigram_buckets = 4;
  auto featurizer = Featurizer::build(counter, fcfg);
  auto dims = dims_for(featurizer, 4, 6, 4);

  EncoderTrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train_encoder(pairs, pairs, featurizer, dims, cfg), std::invalid_argument);
  cfg.batch_size = 10;
  cfg.label_smoothing = 1.0;
  CHECK_THROWS_AS(train_encoder(pairs, pairs, featurizer, dims, cfg), std::invalid_argument);
  cfg.label_smoothing = 0.2;
  cfg.batch_size = 31;
  CHECK_THROWS_AS(train_encoder(pairs, pairs, featurizer, dims, cfg), std::invalid_argument);

  // a runaway step that overflows the score scale ends with a diagnostic
  // naming the step and offending batch, not silent corruption
  cfg.batch_size = 10;
  cfg.learning_rate = -1e9;
  cfg.warmup_steps = 0;
  cfg.steps = 20;
  try {
    train_encoder(pairs, pairs, featurizer, dims, cfg);
    FAIL("training on non-finite losses should abort");
  } catch (const EncoderError& error) {
    CHECK(std::string(error.what()).find("step") != std::string::npos);
    CHECK(std::string(error.what()).find("batch") != std::string::npos);
  }
}
