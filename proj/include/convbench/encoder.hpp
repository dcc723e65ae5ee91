// The trained response-selection model: two sub-networks of identical
// architecture but separate weights encode context and response texts into
// unit vectors, scored by a scaled dot product. Each sub-network embeds
// unigram and bigram feature ids, reduces each feature type with
// self-attention, concatenates the two reductions, applies three dense
// layers (tanh, tanh, linear), and L2-normalizes. Training minimizes
// label-smoothed batch-softmax cross-entropy with in-batch negatives using
// exact analytic gradients and plain SGD with linear warmup.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "convbench/featurizer.hpp"
#include "convbench/hash.hpp"

namespace convbench::encoder {

class EncoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderDims {
  uint32_t unigram_vocab = 10000;
  uint32_t unigram_buckets = 4096;
  uint32_t bigram_vocab = 10000;
  uint32_t bigram_buckets = 4096;
  uint32_t embed_dim = 64;
  uint32_t hidden_dim = 128;
  uint32_t output_dim = 64;

  size_t unigram_rows() const { return size_t{unigram_vocab} + unigram_buckets; }
  size_t bigram_rows() const { return size_t{bigram_vocab} + bigram_buckets; }

  bool operator==(const EncoderDims&) const = default;
};

inline void validate(const EncoderDims& dims) {
  if (dims.unigram_vocab < 1 || dims.unigram_buckets < 1 || dims.bigram_vocab < 1 ||
      dims.bigram_buckets < 1 || dims.embed_dim < 1 || dims.hidden_dim < 1 ||
      dims.output_dim < 1) {
    throw std::invalid_argument("encoder dimensions must all be at least 1");
  }
}

// Dimensions matching a built featurizer's actual id ranges.
inline EncoderDims dims_for(const Featurizer& featurizer, uint32_t embed_dim = 64,
                            uint32_t hidden_dim = 128, uint32_t output_dim = 64) {
  EncoderDims dims;
  dims.unigram_vocab = static_cast<uint32_t>(featurizer.unigram_vocab().size());
  dims.unigram_buckets = static_cast<uint32_t>(featurizer.config().unigram_buckets);
  dims.bigram_vocab = static_cast<uint32_t>(featurizer.bigram_vocab().size());
  dims.bigram_buckets = static_cast<uint32_t>(featurizer.config().bigram_buckets);
  dims.embed_dim = embed_dim;
  dims.hidden_dim = hidden_dim;
  dims.output_dim = output_dim;
  return dims;
}

struct DenseLayer {
  Eigen::MatrixXd W;  // in×out; layer output = Wᵀ·input + b
  Eigen::VectorXd b;
};

struct SideParams {
  Eigen::MatrixXd unigram_table;      // unigram_rows × embed_dim
  Eigen::MatrixXd bigram_table;       // bigram_rows × embed_dim
  Eigen::VectorXd unigram_attention;  // embed_dim
  Eigen::VectorXd bigram_attention;   // embed_dim
  std::array<DenseLayer, 3> dense;    // 2·embed→hidden, hidden→hidden, hidden→out
};

enum class Side { kContext, kResponse };

struct EncoderParams {
  EncoderDims dims;
  SideParams context;
  SideParams response;
  double scale_raw = 0.0;  // the score scale, stored unconstrained

  double scale() const { return std::exp(scale_raw); }

  const SideParams& side(Side s) const { return s == Side::kContext ? context : response; }
  SideParams& side(Side s) { return s == Side::kContext ? context : response; }

  static EncoderParams init(const EncoderDims& dims, uint64_t seed);

  void save(const std::string& path) const;
  static EncoderParams load(const std::string& path);
};

namespace detail {

inline void fill_uniform(SplitMix64& rng, Eigen::Ref<Eigen::MatrixXd> m, double bound) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = (rng.next_unit() * 2.0 - 1.0) * bound;
    }
  }
}

inline void init_side(SplitMix64& rng, const EncoderDims& dims, SideParams& side) {
  side.unigram_table.resize(static_cast<Eigen::Index>(dims.unigram_rows()), dims.embed_dim);
  side.bigram_table.resize(static_cast<Eigen::Index>(dims.bigram_rows()), dims.embed_dim);
  fill_uniform(rng, side.unigram_table, 0.05);
  fill_uniform(rng, side.bigram_table, 0.05);
  side.unigram_attention.resize(dims.embed_dim);
  side.bigram_attention.resize(dims.embed_dim);
  fill_uniform(rng, side.unigram_attention, 0.05);
  fill_uniform(rng, side.bigram_attention, 0.05);
  const uint32_t sizes[4] = {2 * dims.embed_dim, dims.hidden_dim, dims.hidden_dim,
                             dims.output_dim};
  for (int layer = 0; layer < 3; ++layer) {
    uint32_t in = sizes[layer], out = sizes[layer + 1];
    side.dense[layer].W.resize(in, out);
    fill_uniform(rng, side.dense[layer].W, std::sqrt(6.0 / (in + out)));
    side.dense[layer].b = Eigen::VectorXd::Zero(out);
  }
}

}  // namespace detail

inline EncoderParams EncoderParams::init(const EncoderDims& dims, uint64_t seed) {
  validate(dims);
  EncoderParams params;
  params.dims = dims;
  SplitMix64 rng(mix64(seed, 0xe2c0de));
  detail::init_side(rng, dims, params.context);
  detail::init_side(rng, dims, params.response);
  params.scale_raw = 0.0;
  return params;
}

// ---- forward pass ----

namespace detail {

struct TypeCache {
  Eigen::VectorXd weights;  // attention softmax over the id sequence
  Eigen::VectorXd reduced;  // embed_dim
};

struct EncodeCache {
  TypeCache uni, bi;
  Eigen::VectorXd z;       // concatenated reductions, 2·embed_dim
  Eigen::VectorXd h1, h2;  // post-tanh hidden activations
  Eigen::VectorXd u;       // pre-normalization output
  double u_norm = 0.0;
  Eigen::VectorXd e;       // unit-norm output
};

inline void attend(const Eigen::MatrixXd& table, const Eigen::VectorXd& attention,
                   const std::vector<uint32_t>& ids, uint32_t embed_dim, TypeCache& cache) {
  const size_t n = ids.size();
  if (n == 0) {
    cache.weights.resize(0);
    cache.reduced = Eigen::VectorXd::Zero(embed_dim);
    return;
  }
  cache.weights.resize(static_cast<Eigen::Index>(n));
  for (size_t i = 0; i < n; ++i) {
    if (ids[i] >= static_cast<uint64_t>(table.rows())) {
      throw EncoderError("feature id out of table range");
    }
    cache.weights[static_cast<Eigen::Index>(i)] = table.row(ids[i]).dot(attention);
  }
  double max_logit = cache.weights.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < cache.weights.size(); ++i) {
    cache.weights[i] = std::exp(cache.weights[i] - max_logit);
    sum += cache.weights[i];
  }
  cache.weights /= sum;
  cache.reduced = Eigen::VectorXd::Zero(embed_dim);
  for (size_t i = 0; i < n; ++i) {
    cache.reduced += cache.weights[static_cast<Eigen::Index>(i)] * table.row(ids[i]).transpose();
  }
}

inline void encode_cached(const SideParams& side, const EncoderDims& dims, const FeatureIds& ids,
                          EncodeCache& cache) {
  attend(side.unigram_table, side.unigram_attention, ids.unigrams, dims.embed_dim, cache.uni);
  attend(side.bigram_table, side.bigram_attention, ids.bigrams, dims.embed_dim, cache.bi);
  cache.z.resize(2 * dims.embed_dim);
  cache.z.head(dims.embed_dim) = cache.uni.reduced;
  cache.z.tail(dims.embed_dim) = cache.bi.reduced;
  cache.h1 = (side.dense[0].W.transpose() * cache.z + side.dense[0].b).array().tanh().matrix();
  cache.h2 = (side.dense[1].W.transpose() * cache.h1 + side.dense[1].b).array().tanh().matrix();
  cache.u = side.dense[2].W.transpose() * cache.h2 + side.dense[2].b;
  cache.u_norm = cache.u.norm();
  if (!(cache.u_norm > 0.0) || !std::isfinite(cache.u_norm)) {
    throw EncoderError("encoder output could not be normalized");
  }
  cache.e = cache.u / cache.u_norm;
}

}  // namespace detail

inline Eigen::VectorXd encode(const EncoderParams& params, Side side, const FeatureIds& ids) {
  detail::EncodeCache cache;
  detail::encode_cached(params.side(side), params.dims, ids, cache);
  return cache.e;
}

inline Eigen::VectorXd encode(const EncoderParams& params, const Featurizer& featurizer,
                              Side side, std::string_view text) {
  return encode(params, side, featurizer.featurize(text));
}

// S[i][j] = scale · ⟨encode(context_i), encode(response_j)⟩.
inline Eigen::MatrixXd score_batch(const EncoderParams& params,
                                   const std::vector<FeatureIds>& contexts,
                                   const std::vector<FeatureIds>& responses) {
  Eigen::MatrixXd ectx(contexts.size(), params.dims.output_dim);
  Eigen::MatrixXd ersp(responses.size(), params.dims.output_dim);
  for (size_t i = 0; i < contexts.size(); ++i) {
    ectx.row(static_cast<Eigen::Index>(i)) = encode(params, Side::kContext, contexts[i]);
  }
  for (size_t j = 0; j < responses.size(); ++j) {
    ersp.row(static_cast<Eigen::Index>(j)) = encode(params, Side::kResponse, responses[j]);
  }
  return params.scale() * (ectx * ersp.transpose());
}

inline Eigen::MatrixXd score_batch(const EncoderParams& params, const Featurizer& featurizer,
                                   const std::vector<std::string>& contexts,
                                   const std::vector<std::string>& responses) {
  std::vector<FeatureIds> ctx_ids, rsp_ids;
  ctx_ids.reserve(contexts.size());
  rsp_ids.reserve(responses.size());
  for (const auto& c : contexts) ctx_ids.push_back(featurizer.featurize(c));
  for (const auto& r : responses) rsp_ids.push_back(featurizer.featurize(r));
  return score_batch(params, ctx_ids, rsp_ids);
}

// Cross-entropy between each row's softmax and a smoothed target putting
// 1−ε on the diagonal and ε/(N−1) on each negative. ε=0 is exactly the
// batch-softmax dot-product loss.
inline double smoothed_loss(const Eigen::MatrixXd& scores, double epsilon) {
  if (scores.rows() != scores.cols()) throw std::invalid_argument("score matrix must be square");
  if (scores.rows() == 0) throw std::invalid_argument("score matrix must be non-empty");
  if (epsilon < 0.0 || epsilon >= 1.0) throw std::invalid_argument("smoothing must be in [0, 1)");
  const Eigen::Index n = scores.rows();
  if (n == 1 && epsilon > 0.0) {
    throw std::invalid_argument("cannot smooth labels without negatives");
  }
  double off = n > 1 ? epsilon / static_cast<double>(n - 1) : 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double row_max = scores.row(i).maxCoeff();
    double sum = 0.0;
    double target_dot = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      sum += std::exp(scores(i, j) - row_max);
      target_dot += (i == j ? 1.0 - epsilon : off) * scores(i, j);
    }
    total += row_max + std::log(sum) - target_dot;
  }
  return total / static_cast<double>(n);
}

// ---- backward pass ----

struct DenseGrad {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

struct SideGrads {
  // Embedding-row gradients are sparse: only rows of features present in
  // the batch appear; absent rows have exactly zero gradient.
  std::unordered_map<uint32_t, Eigen::VectorXd> unigram_rows;
  std::unordered_map<uint32_t, Eigen::VectorXd> bigram_rows;
  Eigen::VectorXd unigram_attention;
  Eigen::VectorXd bigram_attention;
  std::array<DenseGrad, 3> dense;
};

struct Gradients {
  SideGrads context;
  SideGrads response;
  double scale_raw = 0.0;
};

struct BatchResult {
  double loss = 0.0;
  Eigen::MatrixXd scores;
  Gradients grads;
};

namespace detail {

inline void zero_side_grads(const SideParams& side, SideGrads& grads) {
  grads.unigram_rows.clear();
  grads.bigram_rows.clear();
  grads.unigram_attention = Eigen::VectorXd::Zero(side.unigram_attention.size());
  grads.bigram_attention = Eigen::VectorXd::Zero(side.bigram_attention.size());
  for (int layer = 0; layer < 3; ++layer) {
    grads.dense[layer].W = Eigen::MatrixXd::Zero(side.dense[layer].W.rows(),
                                                 side.dense[layer].W.cols());
    grads.dense[layer].b = Eigen::VectorXd::Zero(side.dense[layer].b.size());
  }
}

inline void attend_backward(const Eigen::MatrixXd& table, const Eigen::VectorXd& attention,
                            const std::vector<uint32_t>& ids, const TypeCache& cache,
                            const Eigen::VectorXd& d_reduced,
                            std::unordered_map<uint32_t, Eigen::VectorXd>& row_grads,
                            Eigen::VectorXd& attention_grad) {
  const size_t n = ids.size();
  if (n == 0) return;
  // reduced = Σ w_i m_i with w = softmax(m_i · a)
  Eigen::VectorXd dw(static_cast<Eigen::Index>(n));
  for (size_t i = 0; i < n; ++i) {
    dw[static_cast<Eigen::Index>(i)] = table.row(ids[i]).dot(d_reduced);
  }
  double weighted = cache.weights.dot(dw);
  for (size_t i = 0; i < n; ++i) {
    auto idx = static_cast<Eigen::Index>(i);
    double dlogit = cache.weights[idx] * (dw[idx] - weighted);
    Eigen::VectorXd dm = cache.weights[idx] * d_reduced + dlogit * attention;
    auto [it, inserted] = row_grads.try_emplace(ids[i], std::move(dm));
    if (!inserted) {
      it->second += cache.weights[idx] * d_reduced + dlogit * attention;
    }
    attention_grad += dlogit * table.row(ids[i]).transpose();
  }
}

inline void encode_backward(const SideParams& side, const EncoderDims& dims,
                            const FeatureIds& ids, const EncodeCache& cache,
                            const Eigen::VectorXd& de, SideGrads& grads) {
  // e = u / ‖u‖  →  du = (de − e(e·de)) / ‖u‖
  Eigen::VectorXd du = (de - cache.e * cache.e.dot(de)) / cache.u_norm;

  grads.dense[2].W += cache.h2 * du.transpose();
  grads.dense[2].b += du;
  Eigen::VectorXd dh2 = side.dense[2].W * du;

  Eigen::VectorXd dpre2 = dh2.cwiseProduct(Eigen::VectorXd::Ones(dh2.size()) -
                                           cache.h2.cwiseProduct(cache.h2));
  grads.dense[1].W += cache.h1 * dpre2.transpose();
  grads.dense[1].b += dpre2;
  Eigen::VectorXd dh1 = side.dense[1].W * dpre2;

  Eigen::VectorXd dpre1 = dh1.cwiseProduct(Eigen::VectorXd::Ones(dh1.size()) -
                                           cache.h1.cwiseProduct(cache.h1));
  grads.dense[0].W += cache.z * dpre1.transpose();
  grads.dense[0].b += dpre1;
  Eigen::VectorXd dz = side.dense[0].W * dpre1;

  attend_backward(side.unigram_table, side.unigram_attention, ids.unigrams, cache.uni,
                  dz.head(dims.embed_dim), grads.unigram_rows, grads.unigram_attention);
  attend_backward(side.bigram_table, side.bigram_attention, ids.bigrams, cache.bi,
                  dz.tail(dims.embed_dim), grads.bigram_rows, grads.bigram_attention);
}

}  // namespace detail

// Loss, scores and exact gradients for one batch of in-batch-negative pairs.
inline BatchResult backward(const EncoderParams& params, const std::vector<FeatureIds>& contexts,
                            const std::vector<FeatureIds>& responses, double epsilon) {
  if (contexts.size() != responses.size()) {
    throw std::invalid_argument("batch sides must have equal size");
  }
  const size_t n = contexts.size();
  if (n == 0) throw std::invalid_argument("batch must be non-empty");

  std::vector<detail::EncodeCache> ctx_cache(n), rsp_cache(n);
  Eigen::MatrixXd ectx(n, params.dims.output_dim), ersp(n, params.dims.output_dim);
  for (size_t i = 0; i < n; ++i) {
    detail::encode_cached(params.context, params.dims, contexts[i], ctx_cache[i]);
    detail::encode_cached(params.response, params.dims, responses[i], rsp_cache[i]);
    ectx.row(static_cast<Eigen::Index>(i)) = ctx_cache[i].e;
    ersp.row(static_cast<Eigen::Index>(i)) = rsp_cache[i].e;
  }
  const double scale = params.scale();
  Eigen::MatrixXd dots = ectx * ersp.transpose();

  BatchResult result;
  result.scores = scale * dots;
  result.loss = smoothed_loss(result.scores, epsilon);

  // dLoss/dS = (softmax(S) − T) / n
  const Eigen::Index ni = static_cast<Eigen::Index>(n);
  double off = n > 1 ? epsilon / static_cast<double>(n - 1) : 0.0;
  Eigen::MatrixXd gs(ni, ni);
  for (Eigen::Index i = 0; i < ni; ++i) {
    double row_max = result.scores.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < ni; ++j) {
      gs(i, j) = std::exp(result.scores(i, j) - row_max);
      sum += gs(i, j);
    }
    for (Eigen::Index j = 0; j < ni; ++j) {
      gs(i, j) = gs(i, j) / sum - (i == j ? 1.0 - epsilon : off);
    }
  }
  gs /= static_cast<double>(n);

  detail::zero_side_grads(params.context, result.grads.context);
  detail::zero_side_grads(params.response, result.grads.response);

  // S = exp(scale_raw)·D  →  d scale_raw = scale·Σ G∘D
  result.grads.scale_raw = scale * gs.cwiseProduct(dots).sum();

  Eigen::MatrixXd dectx = scale * gs * ersp;
  Eigen::MatrixXd dersp = scale * gs.transpose() * ectx;
  for (size_t i = 0; i < n; ++i) {
    detail::encode_backward(params.context, params.dims, contexts[i], ctx_cache[i],
                            dectx.row(static_cast<Eigen::Index>(i)).transpose(),
                            result.grads.context);
    detail::encode_backward(params.response, params.dims, responses[i], rsp_cache[i],
                            dersp.row(static_cast<Eigen::Index>(i)).transpose(),
                            result.grads.response);
  }
  return result;
}

inline void sgd_step(EncoderParams& params, const Gradients& grads, double lr) {
  auto apply_side = [lr](SideParams& side, const SideGrads& g) {
    for (const auto& [id, row] : g.unigram_rows) {
      side.unigram_table.row(id) -= lr * row.transpose();
    }
    for (const auto& [id, row] : g.bigram_rows) {
      side.bigram_table.row(id) -= lr * row.transpose();
    }
    side.unigram_attention -= lr * g.unigram_attention;
    side.bigram_attention -= lr * g.bigram_attention;
    for (int layer = 0; layer < 3; ++layer) {
      side.dense[layer].W -= lr * g.dense[layer].W;
      side.dense[layer].b -= lr * g.dense[layer].b;
    }
  };
  apply_side(params.context, grads.context);
  apply_side(params.response, grads.response);
  params.scale_raw -= lr * grads.scale_raw;
}

// ---- persistence ----

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
}

inline void put_matrix(std::string& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f32(out, m(r, c));
  }
}

inline void put_vector(std::string& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f32(out, v[i]);
}

struct ByteReader {
  std::string_view data;
  size_t pos = 0;
  const std::string& path;

  uint32_t u32() {
    if (pos + 4 > data.size()) throw EncoderError("truncated model file " + path);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }

  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

  void matrix(Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
    m.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f32();
    }
  }

  void vector(Eigen::VectorXd& v, Eigen::Index size) {
    v.resize(size);
    for (Eigen::Index i = 0; i < size; ++i) v[i] = f32();
  }
};

inline void put_side(std::string& out, const SideParams& side) {
  put_matrix(out, side.unigram_table);
  put_matrix(out, side.bigram_table);
  put_vector(out, side.unigram_attention);
  put_vector(out, side.bigram_attention);
  for (int layer = 0; layer < 3; ++layer) {
    put_matrix(out, side.dense[layer].W);
    put_vector(out, side.dense[layer].b);
  }
}

inline void read_side(ByteReader& in, const EncoderDims& dims, SideParams& side) {
  in.matrix(side.unigram_table, static_cast<Eigen::Index>(dims.unigram_rows()), dims.embed_dim);
  in.matrix(side.bigram_table, static_cast<Eigen::Index>(dims.bigram_rows()), dims.embed_dim);
  in.vector(side.unigram_attention, dims.embed_dim);
  in.vector(side.bigram_attention, dims.embed_dim);
  const uint32_t sizes[4] = {2 * dims.embed_dim, dims.hidden_dim, dims.hidden_dim,
                             dims.output_dim};
  for (int layer = 0; layer < 3; ++layer) {
    in.matrix(side.dense[layer].W, sizes[layer], sizes[layer + 1]);
    in.vector(side.dense[layer].b, sizes[layer + 1]);
  }
}

}  // namespace detail

inline constexpr char kModelMagic[4] = {'C', 'E', 'N', 'C'};
inline constexpr uint32_t kModelVersion = 1;

inline void EncoderParams::save(const std::string& path) const {
  std::string out;
  out.append(kModelMagic, 4);
  detail::put_u32(out, kModelVersion);
  detail::put_u32(out, dims.unigram_vocab);
  detail::put_u32(out, dims.unigram_buckets);
  detail::put_u32(out, dims.bigram_vocab);
  detail::put_u32(out, dims.bigram_buckets);
  detail::put_u32(out, dims.embed_dim);
  detail::put_u32(out, dims.hidden_dim);
  detail::put_u32(out, dims.output_dim);
  detail::put_side(out, context);
  detail::put_side(out, response);
  detail::put_f32(out, scale_raw);

  std::string tmp = path + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary);
    if (!file) throw EncoderError("cannot write " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
  }
  std::filesystem::rename(tmp, path);
}

inline EncoderParams EncoderParams::load(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw EncoderError("cannot read " + path);
  std::string data((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (data.size() < 8 || data.compare(0, 4, kModelMagic, 4) != 0) {
    throw EncoderError("not an encoder model file: " + path);
  }
  detail::ByteReader in{data, 4, path};
  if (in.u32() != kModelVersion) throw EncoderError("unsupported model version in " + path);
  EncoderParams params;
  params.dims.unigram_vocab = in.u32();
  params.dims.unigram_buckets = in.u32();
  params.dims.bigram_vocab = in.u32();
  params.dims.bigram_buckets = in.u32();
  params.dims.embed_dim = in.u32();
  params.dims.hidden_dim = in.u32();
  params.dims.output_dim = in.u32();
  validate(params.dims);
  detail::read_side(in, params.dims, params.context);
  detail::read_side(in, params.dims, params.response);
  params.scale_raw = in.f32();
  if (in.pos != data.size()) throw EncoderError("trailing bytes in model file " + path);
  return params;
}

// ---- training ----

struct EncoderTrainConfig {
  size_t batch_size = 100;
  double label_smoothing = 0.2;
  double learning_rate = 0.05;
  size_t warmup_steps = 1000;  // linear ramp from 0 to the base rate
  size_t steps = 2000;
  uint64_t seed = 0;
  size_t log_every = 50;
  size_t eval_every = 500;
  size_t eval_batches = 5;  // dev batches per evaluation
};

struct TrainLogEntry {
  size_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct DevEvalEntry {
  size_t step = 0;
  double accuracy = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> losses;
  std::vector<DevEvalEntry> dev_evals;
};

struct TrainResult {
  EncoderParams params;
  TrainLog log;
};

namespace detail {

// Strict 1-of-N: the diagonal must beat every other column in its row.
inline double diagonal_accuracy(const Eigen::MatrixXd& scores) {
  size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    bool win = true;
    for (Eigen::Index j = 0; j < scores.cols() && win; ++j) {
      if (j != i && scores(i, j) >= scores(i, i)) win = false;
    }
    correct += win;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

}  // namespace detail

inline TrainResult train_encoder(const std::vector<std::pair<std::string, std::string>>& pairs,
                                 const std::vector<std::pair<std::string, std::string>>& dev_pairs,
                                 const Featurizer& featurizer, const EncoderDims& dims,
                                 const EncoderTrainConfig& cfg) {
  if (cfg.batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  if (cfg.label_smoothing < 0.0 || cfg.label_smoothing >= 1.0) {
    throw std::invalid_argument("smoothing must be in [0, 1)");
  }
  if (pairs.size() < cfg.batch_size) {
    throw std::invalid_argument("fewer training pairs than one batch");
  }

  std::vector<FeatureIds> ctx_ids, rsp_ids;
  ctx_ids.reserve(pairs.size());
  rsp_ids.reserve(pairs.size());
  for (const auto& [c, r] : pairs) {
    ctx_ids.push_back(featurizer.featurize(c));
    rsp_ids.push_back(featurizer.featurize(r));
  }

  // dev batches are fixed once: a seeded shuffle, then leading full batches
  std::vector<size_t> dev_order(dev_pairs.size());
  std::iota(dev_order.begin(), dev_order.end(), size_t{0});
  SplitMix64 dev_rng(mix64(cfg.seed, 0xdeb));
  for (size_t i = dev_order.size(); i > 1; --i) {
    std::swap(dev_order[i - 1], dev_order[dev_rng.next_below(i)]);
  }
  size_t dev_batches = std::min(cfg.eval_batches, dev_pairs.size() / cfg.batch_size);
  std::vector<FeatureIds> dev_ctx, dev_rsp;
  for (size_t i = 0; i < dev_batches * cfg.batch_size; ++i) {
    dev_ctx.push_back(featurizer.featurize(dev_pairs[dev_order[i]].first));
    dev_rsp.push_back(featurizer.featurize(dev_pairs[dev_order[i]].second));
  }

  TrainResult result;
  result.params = EncoderParams::init(dims, cfg.seed);

  auto eval_dev = [&](size_t step) {
    if (dev_batches == 0) return;
    double correct_fraction = 0.0;
    for (size_t b = 0; b < dev_batches; ++b) {
      std::vector<FeatureIds> bc(dev_ctx.begin() + static_cast<long>(b * cfg.batch_size),
                                 dev_ctx.begin() + static_cast<long>((b + 1) * cfg.batch_size));
      std::vector<FeatureIds> br(dev_rsp.begin() + static_cast<long>(b * cfg.batch_size),
                                 dev_rsp.begin() + static_cast<long>((b + 1) * cfg.batch_size));
      correct_fraction += detail::diagonal_accuracy(score_batch(result.params, bc, br));
    }
    result.log.dev_evals.push_back({step, correct_fraction / static_cast<double>(dev_batches)});
  };

  eval_dev(0);

  SplitMix64 rng(mix64(cfg.seed, 0x5d9));
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // forces a shuffle before the first batch

  std::vector<FeatureIds> batch_ctx(cfg.batch_size), batch_rsp(cfg.batch_size);
  std::vector<size_t> batch_rows(cfg.batch_size);
  for (size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + cfg.batch_size > order.size()) {
      for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.next_below(i)]);
      }
      cursor = 0;
    }
    for (size_t r = 0; r < cfg.batch_size; ++r) {
      batch_rows[r] = order[cursor + r];
      batch_ctx[r] = ctx_ids[batch_rows[r]];
      batch_rsp[r] = rsp_ids[batch_rows[r]];
    }
    cursor += cfg.batch_size;

    double lr = cfg.learning_rate;
    if (cfg.warmup_steps > 0) {
      lr *= std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps));
    }

    BatchResult batch = backward(result.params, batch_ctx, batch_rsp, cfg.label_smoothing);
    if (!std::isfinite(batch.loss)) {
      std::string diag = "loss diverged at step " + std::to_string(step) + "; batch rows:";
      for (size_t r = 0; r < std::min<size_t>(3, cfg.batch_size); ++r) {
        diag += " " + std::to_string(batch_rows[r]) + " (\"" + pairs[batch_rows[r]].first + "\")";
      }
      throw EncoderError(diag);
    }
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      result.log.losses.push_back({step, batch.loss, lr});
    }
    sgd_step(result.params, batch.grads, lr);

    if (cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
      eval_dev(step + 1);
    }
  }
  return result;
}

}  // namespace convbench::encoder
