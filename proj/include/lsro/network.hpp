#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsro/dataset.hpp"
#include "lsro/rng.hpp"
#include "lsro/tensor.hpp"

namespace lsro {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

inline Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::relu ? relu(x) : tanh(x);
}

// Fully connected layer: y = x W + b, W is in x out, b is 1 x out.
struct Dense {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
};

// Glorot-uniform weights, zero biases.
inline Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) throw std::invalid_argument("dense layer: zero dimension");
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-a, a);
  return {Tensor({in, out}, std::move(w), true), Tensor::zeros({1, out}, true)};
}

/// Stack of dense layers with an activation between consecutive layers and
/// none after the last one.
struct Mlp {
  std::vector<Dense> layers;
  Activation activation = Activation::relu;

  static Mlp build(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                   Activation act, Rng& rng) {
    Mlp m;
    m.activation = act;
    std::size_t prev = in;
    for (auto h : hidden) {
      m.layers.push_back(make_dense(prev, h, rng));
      prev = h;
    }
    m.layers.push_back(make_dense(prev, out, rng));
    return m;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i](h);
      if (i + 1 < layers.size()) h = activate(h, activation);
    }
    return h;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps;
    for (const auto& l : layers) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    return ps;
  }

  void zero_grad() const {
    for (auto p : parameters()) p.zero_grad();
  }
};

struct NetworkConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t embed_dim = 32;
  std::size_t num_classes = 2;
  double dropout_rate = 0.5;
  Activation activation = Activation::relu;

  void validate() const {
    if (input_dim == 0 || embed_dim == 0) throw std::invalid_argument("network: zero dimension");
    for (auto h : hidden_dims) {
      if (h == 0) throw std::invalid_argument("network: zero hidden dimension");
    }
    if (num_classes < 2) {
      throw std::invalid_argument("network: num_classes must be >= 2, got " + std::to_string(num_classes));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw std::invalid_argument("network: dropout_rate must lie in [0,1)");
    }
  }

  std::size_t parameter_count() const {
    std::size_t total = 0, prev = input_dim;
    for (auto h : hidden_dims) {
      total += prev * h + h;
      prev = h;
    }
    total += prev * embed_dim + embed_dim;
    total += embed_dim * num_classes + num_classes;
    return total;
  }

  bool operator==(const NetworkConfig&) const = default;
};

/// Feedforward embedder with a classifier head.
///
/// input -> hidden layers (activation) -> linear embedding -> dropout ->
/// classifier logits -> softmax. The embedding is the retrieval feature.
class Network {
 public:
  struct Output {
    Tensor embeddings;
    Tensor probs;
  };

  Network() = default;

  static Network build(const NetworkConfig& config, Rng& rng) {
    config.validate();
    Network net;
    net.config_ = config;
    net.embedder_ = Mlp::build(config.input_dim, config.hidden_dims, config.embed_dim,
                               config.activation, rng);
    net.head_ = make_dense(config.embed_dim, config.num_classes, rng);
    for (const auto& p : net.parameters()) net.velocity_.emplace_back(p.numel(), 0.0);
    return net;
  }

  const NetworkConfig& config() const { return config_; }

  // dropout_rng is required in train mode.
  Output forward(const Tensor& x, bool train, Rng* dropout_rng = nullptr) const {
    if (x.rank() != 2 || x.cols() != config_.input_dim) {
      throw std::invalid_argument("network forward: expected width " +
                                  std::to_string(config_.input_dim) + ", got " + shape_str(x.shape()));
    }
    Tensor emb = embedder_(x);
    Tensor h = emb;
    if (train && config_.dropout_rate > 0.0) {
      if (dropout_rng == nullptr) throw std::invalid_argument("network forward: train mode needs a generator");
      h = dropout(h, config_.dropout_rate, true, *dropout_rng);
    }
    return {emb, softmax_rows(head_(h))};
  }

  std::vector<Tensor> parameters() const {
    auto ps = embedder_.parameters();
    ps.push_back(head_.weight);
    ps.push_back(head_.bias);
    return ps;
  }

  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

  void zero_grad() const {
    for (auto p : parameters()) p.zero_grad();
  }

 private:
  NetworkConfig config_;
  Mlp embedder_;
  Dense head_;
  std::vector<std::vector<double>> velocity_;
};

inline Network build_network(const NetworkConfig& config, Rng& rng) {
  return Network::build(config, rng);
}

/// v <- momentum * v + grad; param <- param - lr * v; then grads are zeroed.
inline void sgd_momentum_step(Network& net, double lr, double momentum) {
  auto params = net.parameters();
  auto& vel = net.velocity();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("sgd_momentum_step: parameter " + std::to_string(i) +
                             " has no gradient; call backward first");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].data();
    auto grad = params[i].mutable_grad();
    auto& v = vel[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      v[j] = momentum * v[j] + grad[j];
      data[j] -= lr * v[j];
    }
    params[i].zero_grad();
  }
}

// Eval-mode embeddings, one row per sample.
inline Tensor extract_embeddings(const Network& net, const Samples& samples) {
  return net.forward(features_matrix(samples), false).embeddings;
}

// Copies of `samples` with features replaced by their embeddings.
inline Samples embed_samples(const Network& net, const Samples& samples) {
  if (samples.empty()) return {};
  const Tensor emb = extract_embeddings(net, samples);
  Samples out = samples;
  const std::size_t d = emb.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].features.assign(emb.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                           emb.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LSROCKPT checkpoints (little-endian):
//   "LSROCKPT" | u32 version | u32 input_dim | u32 n_hidden | n_hidden x u32 |
//   u32 embed_dim | u32 num_classes | f64 dropout_rate | u8 activation |
//   u64 n_values | n_values x f64 (parameters in layer order, W then b)
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'L', 'S', 'R', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto& cfg = net.config();
  io::ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.input_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.hidden_dims.size()));
  for (auto h : cfg.hidden_dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.embed_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.num_classes));
  w.put<double>(cfg.dropout_rate);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(cfg.activation));
  w.put<std::uint64_t>(cfg.parameter_count());
  for (const auto& p : net.parameters())
    for (double v : p.data()) w.put<double>(v);
  w.save(path);
}

/// Loads a checkpoint. When `expected_classes` is given, a head of any other
/// size is rejected. Nothing is returned unless the whole file validates.
inline Network load_checkpoint(const std::filesystem::path& path,
                               std::optional<std::size_t> expected_classes = std::nullopt) {
  auto r = io::ByteReader::load(path);
  if (!r.match(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw std::runtime_error(path.string() + ": bad magic at byte offset 0, not an LSROCKPT file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  NetworkConfig cfg;
  cfg.input_dim = r.get<std::uint32_t>("input_dim");
  const auto n_hidden = r.get<std::uint32_t>("hidden count");
  if (n_hidden > 1024) {
    throw std::runtime_error(path.string() + ": implausible hidden layer count " + std::to_string(n_hidden));
  }
  cfg.hidden_dims.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) cfg.hidden_dims.push_back(r.get<std::uint32_t>("hidden dim"));
  cfg.embed_dim = r.get<std::uint32_t>("embed_dim");
  cfg.num_classes = r.get<std::uint32_t>("num_classes");
  cfg.dropout_rate = r.get<double>("dropout_rate");
  const auto act = r.get<std::uint8_t>("activation");
  if (act > 1) throw std::runtime_error(path.string() + ": invalid activation code " + std::to_string(act));
  cfg.activation = static_cast<Activation>(act);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": invalid stored config: " + e.what());
  }
  if (expected_classes && *expected_classes != cfg.num_classes) {
    throw std::runtime_error(path.string() + ": checkpoint head has " + std::to_string(cfg.num_classes) +
                             " classes, expected " + std::to_string(*expected_classes));
  }
  const auto n_values = r.get<std::uint64_t>("parameter count");
  if (n_values != cfg.parameter_count()) {
    throw std::runtime_error(path.string() + ": parameter count " + std::to_string(n_values) +
                             " does not match config (" + std::to_string(cfg.parameter_count()) + ")");
  }
  r.require(static_cast<std::size_t>(n_values) * 8, "parameters");
  if (r.offset() + n_values * 8 != r.size()) {
    throw std::runtime_error(path.string() + ": " + std::to_string(r.size() - r.offset() - n_values * 8) +
                             " trailing bytes after parameters");
  }
  Rng unused(0);
  Network net = Network::build(cfg, unused);
  for (auto p : net.parameters())
    for (auto& v : p.data()) v = r.get<double>("parameter");
  return net;
}

}  // namespace lsro
