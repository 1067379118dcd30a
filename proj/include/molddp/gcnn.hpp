#pragma once

// PNA-style graph convolution stack, global mean pooling and an FC head,
// with a hand-written reverse pass and AdamW. Templated on the scalar type so
// tests can run everything in double.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "molddp/binio.hpp"
#include "molddp/dataload.hpp"
#include "molddp/error.hpp"
#include "molddp/rng.hpp"

namespace molddp {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Aggregator : std::uint8_t { Mean, Min, Max, Std };
enum class Scaler : std::uint8_t { Identity, Amplification, Attenuation };

inline std::string_view to_string(Aggregator a) {
  switch (a) {
    case Aggregator::Mean: return "mean";
    case Aggregator::Min: return "min";
    case Aggregator::Max: return "max";
    case Aggregator::Std: return "std";
  }
  return "?";
}

inline std::string_view to_string(Scaler s) {
  switch (s) {
    case Scaler::Identity: return "identity";
    case Scaler::Amplification: return "amplification";
    case Scaler::Attenuation: return "attenuation";
  }
  return "?";
}

inline constexpr double kVarianceFloor = 1e-10;

struct ModelConfig {
  int node_features = 0;
  int edge_features = kEdgeFeatures;
  int num_conv_layers = 6;
  int hidden_width = 55;
  int fc_layers = 2;  // hidden FC layers before the width-1 output
  bool use_edge_features = true;
  std::vector<Aggregator> aggregators{Aggregator::Mean, Aggregator::Min, Aggregator::Max, Aggregator::Std};
  std::vector<Scaler> scalers{Scaler::Identity, Scaler::Amplification, Scaler::Attenuation};

  void validate() const {
    require(node_features > 0 && edge_features >= 0, ErrorKind::InvalidArgument, "input widths must be positive");
    require(num_conv_layers >= 1 && hidden_width >= 1 && fc_layers >= 0, ErrorKind::InvalidArgument,
            "layer counts and widths must be positive");
    require(!aggregators.empty(), ErrorKind::InvalidArgument, "at least one aggregator is required");
    require(std::find(scalers.begin(), scalers.end(), Scaler::Identity) != scalers.end(), ErrorKind::InvalidArgument,
            "the identity scaler is required");
    auto unique = [](auto v) {
      std::sort(v.begin(), v.end());
      return std::adjacent_find(v.begin(), v.end()) == v.end();
    };
    require(unique(aggregators) && unique(scalers), ErrorKind::InvalidArgument, "duplicate aggregator or scaler");
  }

  int concat_width() const {
    return static_cast<int>(aggregators.size() * scalers.size()) * hidden_width;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Hyper {
  double learning_rate = 1e-3;
  int local_batch_size = 128;
  int max_epochs = 3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    require(learning_rate > 0, ErrorKind::InvalidArgument, "learning_rate must be positive");
    require(local_batch_size > 0 && max_epochs >= 0, ErrorKind::InvalidArgument, "batch size and epochs");
    require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, ErrorKind::InvalidArgument, "betas must be in (0,1)");
    require(weight_decay >= 0 && epsilon > 0, ErrorKind::InvalidArgument, "weight_decay/epsilon");
  }
};

/// Batch tensors in the model's scalar type plus the incoming-edge index
/// every conv layer needs.
template <class T>
struct GraphBatch {
  std::int64_t num_graphs = 0;
  std::int64_t num_nodes = 0;
  std::int64_t num_edges = 0;
  Mat<T> x;
  Mat<T> edge_attr;
  std::vector<std::int64_t> src, dst;
  std::vector<std::int64_t> batch_vector;
  std::vector<std::int64_t> graph_sizes;
  Vec<T> y;
  std::vector<std::int64_t> in_ptr;   // num_nodes + 1
  std::vector<std::int64_t> in_edge;  // edges grouped by destination, ascending edge id
};

template <class T>
GraphBatch<T> make_graph_batch(std::int64_t num_graphs, std::int64_t num_nodes, const Mat<T>& x,
                               std::vector<std::int64_t> src, std::vector<std::int64_t> dst, const Mat<T>& edge_attr,
                               std::vector<std::int64_t> batch_vector, Vec<T> y) {
  GraphBatch<T> g;
  g.num_graphs = num_graphs;
  g.num_nodes = num_nodes;
  g.num_edges = static_cast<std::int64_t>(src.size());
  require(x.rows() == num_nodes, ErrorKind::ShapeMismatch, "x rows != num_nodes");
  require(dst.size() == src.size(), ErrorKind::ShapeMismatch, "edge_index rows differ");
  require(edge_attr.rows() == g.num_edges, ErrorKind::ShapeMismatch, "edge_attr rows != num_edges");
  require(static_cast<std::int64_t>(batch_vector.size()) == num_nodes, ErrorKind::ShapeMismatch,
          "batch_vector length != num_nodes");
  g.x = x;
  g.edge_attr = edge_attr;
  g.src = std::move(src);
  g.dst = std::move(dst);
  g.batch_vector = std::move(batch_vector);
  g.y = std::move(y);
  g.graph_sizes.assign(static_cast<std::size_t>(num_graphs), 0);
  for (auto b : g.batch_vector) {
    require(b >= 0 && b < num_graphs, ErrorKind::ShapeMismatch, "batch_vector entry out of range");
    ++g.graph_sizes[static_cast<std::size_t>(b)];
  }
  g.in_ptr.assign(static_cast<std::size_t>(num_nodes + 1), 0);
  for (std::int64_t e = 0; e < g.num_edges; ++e) {
    require(g.src[e] >= 0 && g.src[e] < num_nodes && g.dst[e] >= 0 && g.dst[e] < num_nodes,
            ErrorKind::ShapeMismatch, "edge endpoint out of range");
    ++g.in_ptr[static_cast<std::size_t>(g.dst[e] + 1)];
  }
  for (std::int64_t i = 0; i < num_nodes; ++i) g.in_ptr[i + 1] += g.in_ptr[i];
  g.in_edge.resize(static_cast<std::size_t>(g.num_edges));
  std::vector<std::int64_t> fill(g.in_ptr.begin(), g.in_ptr.end() - 1);
  for (std::int64_t e = 0; e < g.num_edges; ++e) g.in_edge[static_cast<std::size_t>(fill[g.dst[e]]++)] = e;
  return g;
}

template <class T>
GraphBatch<T> to_graph_batch(const Batch& b) {
  Mat<T> x = Eigen::Map<const Mat<float>>(b.x.data(), b.num_nodes, b.node_features).template cast<T>();
  Mat<T> ea = Eigen::Map<const Mat<float>>(b.edge_attr.data(), b.num_edges, b.edge_features).template cast<T>();
  std::vector<std::int64_t> src(b.edge_index.begin(), b.edge_index.begin() + b.num_edges);
  std::vector<std::int64_t> dst(b.edge_index.begin() + b.num_edges, b.edge_index.end());
  require(b.y.size() == static_cast<std::size_t>(b.num_graphs), ErrorKind::ShapeMismatch,
          "expected one target per graph");
  Vec<T> y = Eigen::Map<const Vec<float>>(b.y.data(), b.num_graphs).template cast<T>();
  return make_graph_batch<T>(b.num_graphs, b.num_nodes, x, std::move(src), std::move(dst), ea, b.batch_vector,
                             std::move(y));
}

/// A named parameter with its gradient and AdamW moments.
template <class T>
struct Tensor {
  std::string name;
  Mat<T> value, grad, m, v;
};

/// Mean of log(d+1) over node in-degrees.
template <class Range>
double degree_statistic(const Range& degrees) {
  double sum = 0;
  std::int64_t n = 0;
  for (auto d : degrees) {
    sum += std::log(static_cast<double>(d) + 1.0);
    ++n;
  }
  require(n > 0 && sum > 0, ErrorKind::InvalidArgument, "degree statistic needs at least one edge");
  return sum / static_cast<double>(n);
}

/// Scans the given samples and returns the degree statistic.
inline double degree_statistic(const GraphSource& source, std::span<const std::int64_t> indices) {
  std::vector<std::int64_t> degrees;
  for (auto i : indices) {
    const GraphSample g = source.get(i);
    std::vector<std::int64_t> d(static_cast<std::size_t>(g.num_nodes), 0);
    for (std::int64_t e = 0; e < g.num_edges; ++e) ++d[static_cast<std::size_t>(g.target(e))];
    degrees.insert(degrees.end(), d.begin(), d.end());
  }
  return degree_statistic(degrees);
}

template <class T>
struct ConvParams {
  const Mat<T>* msg_x;
  const Mat<T>* msg_e;  // null when edge features are off
  const Mat<T>* msg_b;  // 1 x H
  const Mat<T>* upd_w;  // H x concat
  const Mat<T>* upd_b;  // 1 x H
};

template <class T>
struct ConvCache {
  Mat<T> x_in;
  Mat<T> messages;  // E x H
  Mat<T> agg_mean, agg_min, agg_max, agg_std;
  std::vector<std::int64_t> arg_min, arg_max;  // N x H edge ids, -1 for isolated nodes
  Mat<T> concat;
  Mat<T> pre;
};

namespace detail {

template <class T>
void degree_scales(const ModelConfig& cfg, std::int64_t d, T delta, std::vector<T>& out) {
  out.clear();
  const T l = std::log(static_cast<T>(d) + T(1));
  for (auto s : cfg.scalers) {
    if (d == 0 || s == Scaler::Identity) out.push_back(T(1));
    else if (s == Scaler::Amplification) out.push_back(l / delta);
    else out.push_back(delta / l);
  }
}

}  // namespace detail

/// One PNA convolution. Fills `cache` for the reverse pass when given.
template <class T>
Mat<T> conv_forward(const ModelConfig& cfg, const ConvParams<T>& p, const GraphBatch<T>& g, const Mat<T>& x, T delta,
                    ConvCache<T>* cache = nullptr) {
  const int H = cfg.hidden_width;
  const auto N = g.num_nodes;
  require(x.rows() == N && x.cols() == p.msg_x->cols(), ErrorKind::ShapeMismatch, "conv input shape");
  if (p.msg_e)
    require(g.edge_attr.cols() == p.msg_e->cols(), ErrorKind::ShapeMismatch, "edge feature width");

  const Mat<T> proj = x * p.msg_x->transpose();
  Mat<T> msg(g.num_edges, H);
  if (g.num_edges > 0) {
    if (p.msg_e) msg.noalias() = g.edge_attr * p.msg_e->transpose();
    else msg.setZero();
    for (std::int64_t e = 0; e < g.num_edges; ++e) msg.row(e) += proj.row(g.src[e]) + p.msg_b->row(0);
  }

  const bool want_min = std::find(cfg.aggregators.begin(), cfg.aggregators.end(), Aggregator::Min) != cfg.aggregators.end();
  const bool want_max = std::find(cfg.aggregators.begin(), cfg.aggregators.end(), Aggregator::Max) != cfg.aggregators.end();
  const bool want_std = std::find(cfg.aggregators.begin(), cfg.aggregators.end(), Aggregator::Std) != cfg.aggregators.end();

  Mat<T> mean = Mat<T>::Zero(N, H), mn, mx, sd;
  std::vector<std::int64_t> amin, amax;
  if (want_min) {
    mn = Mat<T>::Zero(N, H);
    amin.assign(static_cast<std::size_t>(N * H), -1);
  }
  if (want_max) {
    mx = Mat<T>::Zero(N, H);
    amax.assign(static_cast<std::size_t>(N * H), -1);
  }
  if (want_std) sd = Mat<T>::Zero(N, H);

  for (std::int64_t i = 0; i < N; ++i) {
    const auto lo = g.in_ptr[i], hi = g.in_ptr[i + 1];
    const auto d = hi - lo;
    if (d == 0) continue;
    for (auto k = lo; k < hi; ++k) mean.row(i) += msg.row(g.in_edge[k]);
    mean.row(i) /= static_cast<T>(d);
    if (want_max || want_min) {
      const auto first = g.in_edge[lo];
      for (int h = 0; h < H; ++h) {
        T best_hi = msg(first, h), best_lo = msg(first, h);
        std::int64_t arg_hi = first, arg_lo = first;
        for (auto k = lo + 1; k < hi; ++k) {
          const auto e = g.in_edge[k];
          const T v = msg(e, h);
          if (v > best_hi) best_hi = v, arg_hi = e;
          if (v < best_lo) best_lo = v, arg_lo = e;
        }
        if (want_max) mx(i, h) = best_hi, amax[i * H + h] = arg_hi;
        if (want_min) mn(i, h) = best_lo, amin[i * H + h] = arg_lo;
      }
    }
    if (want_std) {
      for (auto k = lo; k < hi; ++k) sd.row(i) += (msg.row(g.in_edge[k]) - mean.row(i)).array().square().matrix();
      sd.row(i) = (sd.row(i).array() / static_cast<T>(d) + static_cast<T>(kVarianceFloor)).sqrt().matrix();
    }
  }

  const int S = static_cast<int>(cfg.scalers.size());
  Mat<T> concat(N, cfg.concat_width());
  std::vector<T> scale;
  for (std::int64_t i = 0; i < N; ++i) {
    detail::degree_scales(cfg, g.in_ptr[i + 1] - g.in_ptr[i], delta, scale);
    for (std::size_t a = 0; a < cfg.aggregators.size(); ++a) {
      const Mat<T>* src = nullptr;
      switch (cfg.aggregators[a]) {
        case Aggregator::Mean: src = &mean; break;
        case Aggregator::Min: src = &mn; break;
        case Aggregator::Max: src = &mx; break;
        case Aggregator::Std: src = &sd; break;
      }
      for (int s = 0; s < S; ++s)
        concat.block(i, (static_cast<int>(a) * S + s) * H, 1, H) = src->row(i) * scale[static_cast<std::size_t>(s)];
    }
  }

  Mat<T> pre = concat * p.upd_w->transpose();
  pre.rowwise() += p.upd_b->row(0);
  Mat<T> out = pre.cwiseMax(T(0));
  if (cache) {
    cache->x_in = x;
    cache->messages = std::move(msg);
    cache->agg_mean = std::move(mean);
    cache->agg_min = std::move(mn);
    cache->agg_max = std::move(mx);
    cache->agg_std = std::move(sd);
    cache->arg_min = std::move(amin);
    cache->arg_max = std::move(amax);
    cache->concat = std::move(concat);
    cache->pre = std::move(pre);
  }
  return out;
}

/// Row g of the result is the mean of the rows of x assigned to graph g.
template <class T>
Mat<T> global_mean_pool(const Mat<T>& x, std::span<const std::int64_t> batch_vector, std::int64_t num_graphs) {
  require(static_cast<std::int64_t>(batch_vector.size()) == x.rows(), ErrorKind::ShapeMismatch,
          "batch_vector length != rows");
  Mat<T> out = Mat<T>::Zero(num_graphs, x.cols());
  std::vector<std::int64_t> count(static_cast<std::size_t>(num_graphs), 0);
  for (std::int64_t i = 0; i < x.rows(); ++i) {
    const auto b = batch_vector[static_cast<std::size_t>(i)];
    require(b >= 0 && b < num_graphs, ErrorKind::ShapeMismatch, "batch_vector entry out of range");
    out.row(b) += x.row(i);
    ++count[static_cast<std::size_t>(b)];
  }
  for (std::int64_t b = 0; b < num_graphs; ++b) {
    if (count[static_cast<std::size_t>(b)] == 0)
      fail(ErrorKind::EmptyGraphSlot, "graph slot " + std::to_string(b) + " has no nodes");
    out.row(b) /= static_cast<T>(count[static_cast<std::size_t>(b)]);
  }
  return out;
}

template <class T>
T mse_loss(const Vec<T>& pred, const Vec<T>& target) {
  require(pred.size() == target.size(), ErrorKind::LengthMismatch, "prediction and target lengths differ");
  require(pred.size() > 0, ErrorKind::LengthMismatch, "empty prediction");
  return (pred - target).squaredNorm() / static_cast<T>(pred.size());
}

template <class T>
class Model {
 public:
  /// Deterministic initialisation: every weight is drawn from its own stream
  /// keyed by (seed, tensor position), so the f32 and f64 models start from
  /// the same real-valued draws.
  Model(ModelConfig cfg, double delta, std::uint64_t seed) : cfg_(std::move(cfg)), delta_(static_cast<T>(delta)) {
    cfg_.validate();
    require(delta > 0, ErrorKind::InvalidArgument, "degree statistic must be positive");
    const int H = cfg_.hidden_width;
    for (int l = 0; l < cfg_.num_conv_layers; ++l) {
      const int in = l == 0 ? cfg_.node_features : H;
      const std::string p = "conv" + std::to_string(l) + ".";
      ConvSlots s;
      s.msg_x = add(p + "message.x_weight", H, in);
      s.msg_e = cfg_.use_edge_features ? add(p + "message.e_weight", H, cfg_.edge_features) : -1;
      s.msg_b = add(p + "message.bias", 1, H);
      s.upd_w = add(p + "update.weight", H, cfg_.concat_width());
      s.upd_b = add(p + "update.bias", 1, H);
      conv_.push_back(s);
    }
    for (int k = 0; k < cfg_.fc_layers; ++k) {
      const std::string p = "fc" + std::to_string(k) + ".";
      fc_.push_back({add(p + "weight", H, H), add(p + "bias", 1, H)});
    }
    fc_.push_back({add("out.weight", 1, H), add("out.bias", 1, 1)});

    for (std::size_t t = 0; t < params_.size(); ++t) {
      auto& p = params_[t];
      if (p.name.ends_with("bias")) continue;
      const double a = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
      Rng rng(mix_seed(seed, t));
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.uniform(-a, a));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  T delta() const { return delta_; }
  void set_delta(double d) { delta_ = static_cast<T>(d); }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  ConvParams<T> conv_params(int layer) const {
    const auto& s = conv_[static_cast<std::size_t>(layer)];
    return {&params_[s.msg_x].value, s.msg_e >= 0 ? &params_[s.msg_e].value : nullptr, &params_[s.msg_b].value,
            &params_[s.upd_w].value, &params_[s.upd_b].value};
  }

  /// Forward pass; keeps activations for backward().
  Vec<T> forward(const GraphBatch<T>& g) {
    require(g.x.cols() == cfg_.node_features, ErrorKind::ShapeMismatch, "node feature width");
    batch_ = &g;
    caches_.resize(conv_.size());
    Mat<T> h = g.x;
    for (std::size_t l = 0; l < conv_.size(); ++l)
      h = conv_forward(cfg_, conv_params(static_cast<int>(l)), g, h, delta_, &caches_[l]);
    head_in_.clear();
    head_pre_.clear();
    Mat<T> z = global_mean_pool<T>(h, g.batch_vector, g.num_graphs);
    for (std::size_t k = 0; k < fc_.size(); ++k) {
      head_in_.push_back(z);
      Mat<T> pre = z * params_[fc_[k].w].value.transpose();
      pre.rowwise() += params_[fc_[k].b].value.row(0);
      if (k + 1 < fc_.size()) {
        head_pre_.push_back(pre);
        z = pre.cwiseMax(T(0));
      } else {
        z = std::move(pre);
      }
    }
    return z.col(0);
  }

  /// Accumulates d(loss)/d(params) given d(loss)/d(prediction).
  void backward(const Vec<T>& d_pred) {
    require(batch_ != nullptr, ErrorKind::InvalidArgument, "backward() without forward()");
    const auto& g = *batch_;
    require(d_pred.size() == g.num_graphs, ErrorKind::LengthMismatch, "gradient length != batch size");

    Mat<T> dz = d_pred;
    for (std::size_t k = fc_.size(); k-- > 0;) {
      if (k + 1 < fc_.size()) dz = dz.cwiseProduct((head_pre_[k].array() > T(0)).template cast<T>().matrix());
      auto& W = params_[fc_[k].w];
      auto& b = params_[fc_[k].b];
      W.grad.noalias() += dz.transpose() * head_in_[k];
      b.grad.row(0) += dz.colwise().sum();
      dz = dz * W.value;
    }

    Mat<T> dh(g.num_nodes, cfg_.hidden_width);
    for (std::int64_t i = 0; i < g.num_nodes; ++i) {
      const auto b = g.batch_vector[static_cast<std::size_t>(i)];
      dh.row(i) = dz.row(b) / static_cast<T>(g.graph_sizes[static_cast<std::size_t>(b)]);
    }
    for (std::size_t l = conv_.size(); l-- > 0;) dh = conv_backward(static_cast<int>(l), dh, l > 0);
  }

  /// Forward, mean-squared-error loss and backward in one call.
  T loss_and_grad(const GraphBatch<T>& g) {
    const Vec<T> pred = forward(g);
    const T loss = mse_loss(pred, g.y);
    backward(T(2) * (pred - g.y) / static_cast<T>(g.num_graphs));
    return loss;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  /// Decoupled weight decay followed by the bias-corrected Adam update.
  void adamw_step(const Hyper& hp) {
    ++step_;
    const T lr = static_cast<T>(hp.learning_rate);
    const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
    const T bc1 = T(1) - static_cast<T>(std::pow(hp.beta1, static_cast<double>(step_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(hp.beta2, static_cast<double>(step_)));
    const T decay = T(1) - lr * static_cast<T>(hp.weight_decay);
    const T eps = static_cast<T>(hp.epsilon);
    for (auto& p : params_) {
      p.value *= decay;
      p.m = b1 * p.m + (T(1) - b1) * p.grad;
      p.v = b2 * p.v + (T(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + eps);
    }
  }

  std::vector<T> flat_grads() const { return flatten([](const Tensor<T>& t) -> const Mat<T>& { return t.grad; }); }
  std::vector<T> flat_values() const { return flatten([](const Tensor<T>& t) -> const Mat<T>& { return t.value; }); }

  void set_flat_grads(std::span<const T> flat) { unflatten(flat, [](Tensor<T>& t) -> Mat<T>& { return t.grad; }); }
  void set_flat_values(std::span<const T> flat) {
    unflatten(flat, [](Tensor<T>& t) -> Mat<T>& { return t.value; });
  }

 private:
  struct ConvSlots {
    std::size_t msg_x, msg_b, upd_w, upd_b;
    std::ptrdiff_t msg_e;
  };
  struct FcSlots {
    std::size_t w, b;
  };

  std::size_t add(std::string name, int rows, int cols) {
    Tensor<T> t;
    t.name = std::move(name);
    t.value = Mat<T>::Zero(rows, cols);
    t.grad = Mat<T>::Zero(rows, cols);
    t.m = Mat<T>::Zero(rows, cols);
    t.v = Mat<T>::Zero(rows, cols);
    params_.push_back(std::move(t));
    return params_.size() - 1;
  }

  template <class F>
  std::vector<T> flatten(F pick) const {
    std::vector<T> out;
    out.reserve(num_parameters());
    for (const auto& p : params_) {
      const auto& m = pick(p);
      out.insert(out.end(), m.data(), m.data() + m.size());
    }
    return out;
  }

  template <class F>
  void unflatten(std::span<const T> flat, F pick) {
    require(flat.size() == num_parameters(), ErrorKind::ShapeMismatch, "flat parameter length");
    std::size_t off = 0;
    for (auto& p : params_) {
      auto& m = pick(p);
      std::copy_n(flat.data() + off, m.size(), m.data());
      off += static_cast<std::size_t>(m.size());
    }
  }

  Mat<T> conv_backward(int layer, const Mat<T>& d_out, bool need_input_grad) {
    const auto& g = *batch_;
    const auto& c = caches_[static_cast<std::size_t>(layer)];
    const auto& s = conv_[static_cast<std::size_t>(layer)];
    const int H = cfg_.hidden_width;
    const int S = static_cast<int>(cfg_.scalers.size());
    const auto N = g.num_nodes;

    const Mat<T> d_pre = d_out.cwiseProduct((c.pre.array() > T(0)).template cast<T>().matrix());
    params_[s.upd_w].grad.noalias() += d_pre.transpose() * c.concat;
    params_[s.upd_b].grad.row(0) += d_pre.colwise().sum();
    const Mat<T> d_concat = d_pre * params_[s.upd_w].value;

    Mat<T> d_msg = Mat<T>::Zero(g.num_edges, H);
    std::vector<T> scale;
    Eigen::Matrix<T, 1, Eigen::Dynamic> d_agg(H);
    for (std::int64_t i = 0; i < N; ++i) {
      const auto lo = g.in_ptr[i], hi = g.in_ptr[i + 1];
      const auto d = hi - lo;
      if (d == 0) continue;
      detail::degree_scales(cfg_, d, delta_, scale);
      for (std::size_t a = 0; a < cfg_.aggregators.size(); ++a) {
        d_agg.setZero();
        for (int sc = 0; sc < S; ++sc)
          d_agg += d_concat.block(i, (static_cast<int>(a) * S + sc) * H, 1, H) * scale[static_cast<std::size_t>(sc)];
        switch (cfg_.aggregators[a]) {
          case Aggregator::Mean:
            for (auto k = lo; k < hi; ++k) d_msg.row(g.in_edge[k]) += d_agg / static_cast<T>(d);
            break;
          case Aggregator::Min:
            for (int h = 0; h < H; ++h) d_msg(c.arg_min[i * H + h], h) += d_agg(h);
            break;
          case Aggregator::Max:
            for (int h = 0; h < H; ++h) d_msg(c.arg_max[i * H + h], h) += d_agg(h);
            break;
          case Aggregator::Std: {
            const auto coeff = (d_agg.array() / (static_cast<T>(d) * c.agg_std.row(i).array())).eval();
            for (auto k = lo; k < hi; ++k) {
              const auto e = g.in_edge[k];
              d_msg.row(e).array() += coeff * (c.messages.row(e) - c.agg_mean.row(i)).array();
            }
            break;
          }
        }
      }
    }

    Mat<T> d_proj = Mat<T>::Zero(N, H);
    for (std::int64_t e = 0; e < g.num_edges; ++e) d_proj.row(g.src[e]) += d_msg.row(e);
    params_[s.msg_x].grad.noalias() += d_proj.transpose() * c.x_in;
    if (s.msg_e >= 0) params_[static_cast<std::size_t>(s.msg_e)].grad.noalias() += d_msg.transpose() * g.edge_attr;
    params_[s.msg_b].grad.row(0) += d_msg.colwise().sum();
    if (!need_input_grad) return {};
    return d_proj * params_[s.msg_x].value;
  }

  ModelConfig cfg_;
  T delta_;
  std::int64_t step_ = 0;
  std::vector<Tensor<T>> params_;
  std::vector<ConvSlots> conv_;
  std::vector<FcSlots> fc_;

  const GraphBatch<T>* batch_ = nullptr;
  std::vector<ConvCache<T>> caches_;
  std::vector<Mat<T>> head_in_, head_pre_;
};

/// Applies the FC head to pooled features. `weights` and `biases` are the
/// head layers in order; every layer but the last is followed by ReLU.
template <class T>
Vec<T> head_forward(const Mat<T>& pooled, std::span<const Mat<T>> weights, std::span<const Mat<T>> biases) {
  require(weights.size() == biases.size() && !weights.empty(), ErrorKind::ShapeMismatch, "head layer count");
  Mat<T> z = pooled;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    require(z.cols() == weights[k].cols() && biases[k].cols() == weights[k].rows(), ErrorKind::ShapeMismatch,
            "head layer " + std::to_string(k) + " shape");
    Mat<T> pre = z * weights[k].transpose();
    pre.rowwise() += biases[k].row(0);
    z = k + 1 < weights.size() ? Mat<T>(pre.cwiseMax(T(0))) : pre;
  }
  require(z.cols() == 1, ErrorKind::ShapeMismatch, "head must end in a width-1 layer");
  return z.col(0);
}

struct EvalResult {
  double mse = 0;
  double mae = 0;
  std::int64_t count = 0;
  std::vector<std::pair<double, double>> parity;  // (true, predicted)
};

template <class T>
EvalResult evaluate(Model<T>& model, BatchLoader& loader) {
  EvalResult r;
  double se = 0, ae = 0;
  while (auto b = loader.next()) {
    const auto g = to_graph_batch<T>(*b);
    const Vec<T> pred = model.forward(g);
    for (Eigen::Index k = 0; k < pred.size(); ++k) {
      const double t = static_cast<double>(g.y(k)), p = static_cast<double>(pred(k));
      se += (p - t) * (p - t);
      ae += std::abs(p - t);
      r.parity.emplace_back(t, p);
    }
    r.count += pred.size();
  }
  if (r.count > 0) {
    r.mse = se / static_cast<double>(r.count);
    r.mae = ae / static_cast<double>(r.count);
  }
  return r;
}

// Checkpoint layout (little-endian):
//   "MDCK" | u32 version | u8 scalar bytes | config | f64 delta | i64 step |
//   u32 tensor count | per tensor: name, u32 rows, u32 cols, value, m, v |
//   u32 crc32 of everything before it
inline constexpr std::string_view kCheckpointMagic = "MDCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_config(ByteWriter& w, const ModelConfig& c) {
  w.put(static_cast<std::int32_t>(c.node_features));
  w.put(static_cast<std::int32_t>(c.edge_features));
  w.put(static_cast<std::int32_t>(c.num_conv_layers));
  w.put(static_cast<std::int32_t>(c.hidden_width));
  w.put(static_cast<std::int32_t>(c.fc_layers));
  w.put(static_cast<std::uint8_t>(c.use_edge_features));
  w.put(static_cast<std::uint32_t>(c.aggregators.size()));
  for (auto a : c.aggregators) w.put(static_cast<std::uint8_t>(a));
  w.put(static_cast<std::uint32_t>(c.scalers.size()));
  for (auto s : c.scalers) w.put(static_cast<std::uint8_t>(s));
}

inline ModelConfig get_config(ByteReader& r) {
  ModelConfig c;
  c.node_features = r.get<std::int32_t>();
  c.edge_features = r.get<std::int32_t>();
  c.num_conv_layers = r.get<std::int32_t>();
  c.hidden_width = r.get<std::int32_t>();
  c.fc_layers = r.get<std::int32_t>();
  c.use_edge_features = r.get<std::uint8_t>() != 0;
  c.aggregators.resize(r.get<std::uint32_t>() % 16);
  for (auto& a : c.aggregators) a = static_cast<Aggregator>(r.get<std::uint8_t>() & 3);
  c.scalers.resize(r.get<std::uint32_t>() % 16);
  for (auto& s : c.scalers) s = static_cast<Scaler>(std::min<std::uint8_t>(r.get<std::uint8_t>(), 2));
  return c;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model) {
  ByteWriter w;
  w.put_tag(kCheckpointMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(sizeof(T)));
  detail::put_config(w, model.config());
  w.put(static_cast<double>(model.delta()));
  w.put(model.step());
  w.put(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    w.put_string(p.name);
    w.put(static_cast<std::uint32_t>(p.value.rows()));
    w.put(static_cast<std::uint32_t>(p.value.cols()));
    for (const Mat<T>* m : {&p.value, &p.m, &p.v}) w.put_array(std::span<const T>(m->data(), m->size()));
  }
  w.put(crc32(w.bytes()));
  write_file(path, w.bytes());
}

template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  const Bytes raw = read_file(path, ErrorKind::Io);
  require(raw.size() >= 8, ErrorKind::CorruptIndex, path.string() + ": truncated checkpoint");
  const auto body = std::span(raw).first(raw.size() - 4);
  ByteReader tail{std::span(raw).last(4), ErrorKind::CorruptIndex};
  require(tail.get<std::uint32_t>() == crc32(body), ErrorKind::CorruptIndex, path.string() + ": checksum mismatch");
  ByteReader r(body, ErrorKind::CorruptIndex);
  require(r.get_tag(4) == kCheckpointMagic, ErrorKind::BadMagic, path.string() + ": not a checkpoint");
  require(r.get<std::uint32_t>() == kCheckpointVersion, ErrorKind::VersionUnsupported, path.string());
  require(r.get<std::uint8_t>() == sizeof(T), ErrorKind::SchemaMismatch, path.string() + ": precision differs");
  const ModelConfig cfg = detail::get_config(r);
  const double delta = r.get<double>();
  const auto step = r.get<std::int64_t>();
  Model<T> model(cfg, delta, 0);
  model.set_step(step);
  const auto count = r.get<std::uint32_t>();
  require(count == model.params().size(), ErrorKind::SchemaMismatch, path.string() + ": tensor count");
  for (auto& p : model.params()) {
    require(r.get_string() == p.name, ErrorKind::SchemaMismatch, path.string() + ": tensor name");
    const auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
    require(rows == p.value.rows() && cols == p.value.cols(), ErrorKind::SchemaMismatch, p.name + " shape");
    for (Mat<T>* m : {&p.value, &p.m, &p.v}) r.get_array(std::span<T>(m->data(), m->size()));
  }
  require(r.done(), ErrorKind::CorruptIndex, path.string() + ": trailing bytes");
  return model;
}

}  // namespace molddp
