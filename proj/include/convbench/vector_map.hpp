// Vector-similarity response scorers over any embedding provider. SIM is
// the cosine of the two unit embeddings; MAP scores x·(Wy) + α(x·y) with a
// learned square map W and scalar α, trained by mini-batch gradient descent
// on the batch-softmax dot-product loss with in-batch negatives, sweeping a
// small learning-rate × regularization grid and keeping the model with the
// lowest held-out dev loss.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "convbench/embedding.hpp"
#include "convbench/hash.hpp"

namespace convbench::vectormap {

inline double sim_score(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw std::invalid_argument("embedding dimensions differ");
  return x.dot(y);
}

struct MapModel {
  Eigen::MatrixXd W;   // d×d
  double alpha = 1.0;

  int dim() const { return static_cast<int>(W.rows()); }

  static MapModel zero(int d) {
    MapModel m;
    m.W = Eigen::MatrixXd::Zero(d, d);
    m.alpha = 1.0;
    return m;
  }

  nlohmann::json to_json() const {
    std::vector<double> flat(W.size());
    for (int r = 0; r < W.rows(); ++r) {
      for (int c = 0; c < W.cols(); ++c) flat[static_cast<size_t>(r) * W.cols() + c] = W(r, c);
    }
    return {{"d", W.rows()}, {"alpha", alpha}, {"W", std::move(flat)}};
  }

  static MapModel from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("d") || !j.contains("alpha") || !j.contains("W")) {
      throw std::runtime_error("malformed map model");
    }
    int d = j.at("d").get<int>();
    const auto& flat = j.at("W");
    if (d < 1 || !flat.is_array() || flat.size() != static_cast<size_t>(d) * d) {
      throw std::runtime_error("malformed map model");
    }
    MapModel m;
    m.alpha = j.at("alpha").get<double>();
    m.W.resize(d, d);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) m.W(r, c) = flat[static_cast<size_t>(r) * d + c].get<double>();
    }
    return m;
  }

  void save(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + path);
      out << to_json().dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  static MapModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("malformed map model in " + path);
    return from_json(j);
  }
};

inline double map_score(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const MapModel& m) {
  if (x.size() != y.size()) throw std::invalid_argument("embedding dimensions differ");
  if (m.W.rows() != x.size() || m.W.cols() != x.size()) {
    throw std::invalid_argument("map model dimension differs from embeddings");
  }
  return x.dot(m.W * y) + m.alpha * x.dot(y);
}

// Mean over rows of (logsumexp of the row − its diagonal entry): softmax
// cross-entropy with the true pair on the diagonal. Max-subtracted for
// stability.
inline double dot_product_loss(const Eigen::MatrixXd& scores) {
  if (scores.rows() != scores.cols()) throw std::invalid_argument("score matrix must be square");
  if (scores.rows() == 0) throw std::invalid_argument("score matrix must be non-empty");
  double total = 0.0;
  for (int i = 0; i < scores.rows(); ++i) {
    double row_max = scores.row(i).maxCoeff();
    double sum = 0.0;
    for (int j = 0; j < scores.cols(); ++j) sum += std::exp(scores(i, j) - row_max);
    total += row_max + std::log(sum) - scores(i, i);
  }
  return total / static_cast<double>(scores.rows());
}

struct MapGradient {
  Eigen::MatrixXd dW;
  double dalpha = 0.0;
  double loss = 0.0;  // includes the L2 penalty term
};

// Exact gradients of dot_product_loss(X (W+αI) Yᵀ) + reg‖W‖²_F for a batch
// of embedded rows. X, Y are batch×d.
inline MapGradient analytic_map_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                         const MapModel& m, double reg) {
  if (X.rows() != Y.rows() || X.cols() != Y.cols()) {
    throw std::invalid_argument("batch shapes differ");
  }
  if (m.W.rows() != X.cols()) throw std::invalid_argument("model dimension differs from batch");
  const int n = static_cast<int>(X.rows());
  Eigen::MatrixXd cross = X * Y.transpose();           // x_i · y_j
  Eigen::MatrixXd scores = X * (m.W * Y.transpose()) + m.alpha * cross;

  // dLoss/dS = (softmax(S) − I) / n, rowwise softmax
  Eigen::MatrixXd grad_s(n, n);
  for (int i = 0; i < n; ++i) {
    double row_max = scores.row(i).maxCoeff();
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      grad_s(i, j) = std::exp(scores(i, j) - row_max);
      sum += grad_s(i, j);
    }
    grad_s.row(i) /= sum;
    grad_s(i, i) -= 1.0;
  }
  grad_s /= static_cast<double>(n);

  MapGradient out;
  out.dW = X.transpose() * grad_s * Y + 2.0 * reg * m.W;
  out.dalpha = grad_s.cwiseProduct(cross).sum();
  out.loss = dot_product_loss(scores) + reg * m.W.squaredNorm();
  return out;
}

struct SweepConfig {
  std::vector<double> learning_rates = {0.3, 0.1, 0.03, 0.01};
  std::vector<double> l2_regs = {0.0, 1e-4, 1e-3, 1e-2};
  size_t train_sample = 10000;
  double dev_fraction = 0.1;
  size_t batch_size = 50;
  size_t epochs = 20;
  uint64_t seed = 0;
};

inline void validate(const SweepConfig& cfg) {
  if (cfg.learning_rates.empty() || cfg.l2_regs.empty()) {
    throw std::invalid_argument("sweep grids must be non-empty");
  }
  if (!(cfg.dev_fraction > 0.0 && cfg.dev_fraction < 1.0)) {
    throw std::invalid_argument("dev fraction must be in (0, 1)");
  }
  if (cfg.batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  if (cfg.train_sample < 2) throw std::invalid_argument("train sample must be at least 2");
}

struct GridPointResult {
  double learning_rate = 0.0;
  double l2_reg = 0.0;
  double train_loss = 0.0;  // final epoch mean batch loss
  double dev_loss = 0.0;
  bool diverged = false;
};

struct TrainMapResult {
  MapModel model;
  std::vector<GridPointResult> grid;
  size_t selected = 0;
  size_t train_examples = 0;
  size_t dev_examples = 0;

  nlohmann::ordered_json report() const {
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (const auto& g : grid) {
      points.push_back({{"learning_rate", g.learning_rate},
                        {"l2_reg", g.l2_reg},
                        {"train_loss", g.train_loss},
                        {"dev_loss", g.dev_loss},
                        {"diverged", g.diverged}});
    }
    return nlohmann::ordered_json{{"grid", std::move(points)},
                                  {"selected", selected},
                                  {"train_examples", train_examples},
                                  {"dev_examples", dev_examples}};
  }
};

namespace detail {

// Mean dot-product loss over consecutive full batches (partial tail batch
// dropped: a 1-row batch has no negatives and would only add noise).
inline double mean_batch_loss(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                              const MapModel& m, size_t batch_size) {
  size_t n = static_cast<size_t>(X.rows());
  size_t batches = n / batch_size;
  if (batches == 0) throw std::invalid_argument("fewer examples than one batch");
  double total = 0.0;
  for (size_t b = 0; b < batches; ++b) {
    auto Xb = X.middleRows(static_cast<Eigen::Index>(b * batch_size),
                           static_cast<Eigen::Index>(batch_size));
    auto Yb = Y.middleRows(static_cast<Eigen::Index>(b * batch_size),
                           static_cast<Eigen::Index>(batch_size));
    Eigen::MatrixXd scores = Xb * (m.W * Yb.transpose()) + m.alpha * (Xb * Yb.transpose());
    total += dot_product_loss(scores);
  }
  return total / static_cast<double>(batches);
}

struct SingleTrainResult {
  MapModel model;
  double final_train_loss = 0.0;
  bool diverged = false;
  std::vector<double> batch_losses;  // filled only when trace is requested
};

inline SingleTrainResult train_single(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                      double lr, double reg, size_t batch_size, size_t epochs,
                                      uint64_t seed, bool trace = false) {
  const size_t n = static_cast<size_t>(X.rows());
  const int d = static_cast<int>(X.cols());
  SingleTrainResult out;
  out.model = MapModel::zero(d);
  size_t batches = n / batch_size;
  if (batches == 0) throw std::invalid_argument("fewer training examples than one batch");

  SplitMix64 rng(seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Eigen::MatrixXd Xb(batch_size, d), Yb(batch_size, d);

  double epoch_loss = 0.0;
  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = n; i > 1; --i) {
      size_t j = rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }
    epoch_loss = 0.0;
    for (size_t b = 0; b < batches; ++b) {
      for (size_t r = 0; r < batch_size; ++r) {
        Xb.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(order[b * batch_size + r]));
        Yb.row(static_cast<Eigen::Index>(r)) = Y.row(static_cast<Eigen::Index>(order[b * batch_size + r]));
      }
      MapGradient grad = analytic_map_gradient(Xb, Yb, out.model, reg);
      if (!std::isfinite(grad.loss)) {
        out.diverged = true;
        return out;
      }
      if (trace) out.batch_losses.push_back(grad.loss);
      epoch_loss += grad.loss;
      out.model.W -= lr * grad.dW;
      out.model.alpha -= lr * grad.dalpha;
    }
  }
  if (!out.model.W.allFinite() || !std::isfinite(out.model.alpha)) {
    out.diverged = true;
    return out;
  }
  out.final_train_loss = epoch_loss / static_cast<double>(batches);
  return out;
}

}  // namespace detail

// Embeds the pairs, holds out a dev slice, trains every grid point from the
// same split, and keeps the model with the lowest finite dev loss.
inline TrainMapResult train_map(const std::vector<std::pair<std::string, std::string>>& pairs,
                                const EmbeddingProvider& provider, const SweepConfig& cfg) {
  validate(cfg);
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  SplitMix64 rng(mix64(cfg.seed, 0xd1ce));
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
  if (order.size() > cfg.train_sample) order.resize(cfg.train_sample);

  size_t dev = static_cast<size_t>(std::floor(static_cast<double>(order.size()) * cfg.dev_fraction));
  if (dev < cfg.batch_size || order.size() - dev < cfg.batch_size) {
    throw std::invalid_argument("not enough examples for one train and one dev batch");
  }
  size_t train = order.size() - dev;

  const int d = provider.dim();
  Eigen::MatrixXd X(train, d), Y(train, d), Xd(dev, d), Yd(dev, d);
  for (size_t i = 0; i < train; ++i) {
    X.row(static_cast<Eigen::Index>(i)) = provider.embed(pairs[order[i]].first);
    Y.row(static_cast<Eigen::Index>(i)) = provider.embed(pairs[order[i]].second);
  }
  for (size_t i = 0; i < dev; ++i) {
    Xd.row(static_cast<Eigen::Index>(i)) = provider.embed(pairs[order[train + i]].first);
    Yd.row(static_cast<Eigen::Index>(i)) = provider.embed(pairs[order[train + i]].second);
  }

  TrainMapResult result;
  result.train_examples = train;
  result.dev_examples = dev;
  std::vector<MapModel> models;
  size_t grid_index = 0;
  for (double lr : cfg.learning_rates) {
    for (double reg : cfg.l2_regs) {
      auto single = detail::train_single(X, Y, lr, reg, cfg.batch_size, cfg.epochs,
                                         mix64(cfg.seed, grid_index + 1));
      GridPointResult point;
      point.learning_rate = lr;
      point.l2_reg = reg;
      point.diverged = single.diverged;
      if (!single.diverged) {
        point.train_loss = single.final_train_loss;
        point.dev_loss = detail::mean_batch_loss(Xd, Yd, single.model, cfg.batch_size);
        if (!std::isfinite(point.dev_loss)) point.diverged = true;
      }
      result.grid.push_back(point);
      models.push_back(std::move(single.model));
      ++grid_index;
    }
  }

  size_t best = result.grid.size();
  for (size_t g = 0; g < result.grid.size(); ++g) {
    if (result.grid[g].diverged) continue;
    if (best == result.grid.size() || result.grid[g].dev_loss < result.grid[best].dev_loss) {
      best = g;
    }
  }
  if (best == result.grid.size()) throw std::runtime_error("every sweep grid point diverged");
  result.selected = best;
  result.model = std::move(models[best]);
  return result;
}

}  // namespace convbench::vectormap
