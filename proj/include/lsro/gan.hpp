#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsro/dataset.hpp"
#include "lsro/network.hpp"
#include "lsro/rng.hpp"
#include "lsro/tensor.hpp"

namespace lsro {

struct GanConfig {
  std::size_t latent_dim = 100;
  std::size_t data_dim = 32;
  std::vector<std::size_t> gen_hidden{64};
  std::vector<std::size_t> disc_hidden{64};
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  double lr = 0.0002;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (latent_dim == 0 || data_dim == 0) throw std::invalid_argument("gan: zero dimension");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw std::invalid_argument("gan: beta1 must lie in (0,1)");
    if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw std::invalid_argument("gan: beta2 must lie in (0,1)");
    if (!(lr > 0.0)) throw std::invalid_argument("gan: lr must be > 0");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("gan: adam_eps must be > 0");
    if (batch_size == 0) throw std::invalid_argument("gan: batch_size must be > 0");
  }
};

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;

  static AdamState for_params(std::span<const Tensor> params) {
    AdamState s;
    for (const auto& p : params) {
      s.first.emplace_back(p.numel(), 0.0);
      s.second.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

/// Adam with bias correction. Grads are zeroed afterwards.
inline void adam_step(std::span<Tensor> params, AdamState& state, double lr, double beta1,
                      double beta2, double eps) {
  if (state.first.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.first.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].data();
    auto grad = params[i].mutable_grad();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
      data[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
    params[i].zero_grad();
  }
}

// Per-coordinate affine map between the training-data box and [-1, 1].
struct FeatureScaler {
  std::vector<double> lo;
  std::vector<double> hi;

  static FeatureScaler fit(const Samples& data) {
    if (data.empty()) throw std::invalid_argument("FeatureScaler: no data");
    FeatureScaler s;
    s.lo = data.front().features;
    s.hi = data.front().features;
    for (const auto& smp : data) {
      for (std::size_t j = 0; j < s.lo.size(); ++j) {
        s.lo[j] = std::min(s.lo[j], smp.features[j]);
        s.hi[j] = std::max(s.hi[j], smp.features[j]);
      }
    }
    return s;
  }

  std::size_t dim() const { return lo.size(); }

  double to_unit(std::size_t j, double v) const {
    const double span = hi[j] - lo[j];
    return span > 0.0 ? 2.0 * (v - lo[j]) / span - 1.0 : 0.0;
  }
  double from_unit(std::size_t j, double u) const { return lo[j] + 0.5 * (u + 1.0) * (hi[j] - lo[j]); }
};

// n x latent_dim, entries i.i.d. uniform on [-1, 1].
inline Tensor sample_latent(Rng& rng, std::size_t n, std::size_t latent_dim) {
  if (n == 0 || latent_dim == 0) throw std::invalid_argument("sample_latent: n and latent_dim must be >= 1");
  std::vector<double> z(n * latent_dim);
  for (auto& v : z) v = rng.uniform(-1.0, 1.0);
  return Tensor({n, latent_dim}, std::move(z));
}

struct GanModel {
  GanConfig config;
  Mlp generator;      // latent -> data, tanh applied on output
  Mlp discriminator;  // data -> 1 logit, sigmoid applied on output
  AdamState gen_adam;
  AdamState disc_adam;
  FeatureScaler scaler;
  std::vector<double> disc_loss;  // per-epoch means
  std::vector<double> gen_loss;

  static GanModel init(const GanConfig& cfg, FeatureScaler scaler) {
    cfg.validate();
    if (scaler.dim() != cfg.data_dim) {
      throw std::invalid_argument("gan: data width " + std::to_string(scaler.dim()) +
                                  " != data_dim " + std::to_string(cfg.data_dim));
    }
    Rng rng(derive_seed(cfg.seed, "gan.init"));
    GanModel m;
    m.config = cfg;
    m.generator = Mlp::build(cfg.latent_dim, cfg.gen_hidden, cfg.data_dim, Activation::relu, rng);
    m.discriminator = Mlp::build(cfg.data_dim, cfg.disc_hidden, 1, Activation::relu, rng);
    m.gen_adam = AdamState::for_params(m.generator.parameters());
    m.disc_adam = AdamState::for_params(m.discriminator.parameters());
    m.scaler = std::move(scaler);
    return m;
  }

  // Generator output in unit scale, (-1, 1) per coordinate.
  Tensor generate_unit(const Tensor& latent) const { return tanh(generator(latent)); }
  // Probability that each row is real.
  Tensor discriminate(const Tensor& x) const { return sigmoid(discriminator(x)); }
};

/// Alternating adversarial training: per batch one discriminator step on
/// -[log D(x) + log(1 - D(G(z)))], then one generator step on the
/// non-saturating -log D(G(z)). Real rows are mapped into [-1, 1] with the
/// training-set min/max first.
inline GanModel train_gan(const Samples& real_data, const GanConfig& cfg) {
  if (real_data.empty()) throw std::invalid_argument("train_gan: no training data");
  GanModel model = GanModel::init(cfg, FeatureScaler::fit(real_data));
  const std::size_t d = cfg.data_dim;

  std::vector<double> unit(real_data.size() * d);
  for (std::size_t i = 0; i < real_data.size(); ++i) {
    if (real_data[i].features.size() != d) throw std::invalid_argument("train_gan: ragged feature widths");
    for (std::size_t j = 0; j < d; ++j) unit[i * d + j] = model.scaler.to_unit(j, real_data[i].features[j]);
  }

  Rng shuffle_rng(derive_seed(cfg.seed, "gan.shuffle"));
  Rng latent_rng(derive_seed(cfg.seed, "gan.latent"));
  std::vector<std::size_t> order(real_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto gen_params = model.generator.parameters();
  auto disc_params = model.discriminator.parameters();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double d_sum = 0.0, g_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(order.size(), start + cfg.batch_size) - start;
      std::vector<double> xb;
      xb.reserve(n * d);
      for (std::size_t b = 0; b < n; ++b) {
        const double* row = unit.data() + order[start + b] * d;
        xb.insert(xb.end(), row, row + d);
      }
      const Tensor real({n, d}, std::move(xb));
      const Tensor ones = Tensor::full({n, 1}, 1.0);

      // Discriminator step; fake rows are detached from the generator.
      const Tensor fake = model.generate_unit(sample_latent(latent_rng, n, cfg.latent_dim)).detach();
      const Tensor d_loss = add(scale(mean(safe_log(model.discriminate(real))), -1.0),
                                scale(mean(safe_log(sub(ones, model.discriminate(fake)))), -1.0));
      backward(d_loss);
      adam_step(disc_params, model.disc_adam, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

      // Generator step; discriminator grads from this pass are discarded.
      const Tensor g_fake = model.generate_unit(sample_latent(latent_rng, n, cfg.latent_dim));
      const Tensor g_loss = scale(mean(safe_log(model.discriminate(g_fake))), -1.0);
      backward(g_loss);
      adam_step(gen_params, model.gen_adam, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      model.discriminator.zero_grad();

      d_sum += d_loss.item();
      g_sum += g_loss.item();
      ++batches;
    }
    model.disc_loss.push_back(d_sum / static_cast<double>(batches));
    model.gen_loss.push_back(g_sum / static_cast<double>(batches));
  }
  return model;
}

inline Samples unit_rows_to_samples(const Tensor& unit, const FeatureScaler& scaler) {
  Samples out(unit.rows());
  const std::size_t d = unit.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].features.resize(d);
    for (std::size_t j = 0; j < d; ++j) out[i].features[j] = scaler.from_unit(j, unit.at(i, j));
    out[i].source = SourceFlag::generated;
  }
  return out;
}

/// n unlabeled samples (Z=1, identity and camera -1) in the original
/// feature scale.
inline Samples generate_outliers(const GanModel& model, std::size_t n, Rng& rng) {
  if (n == 0) return {};
  return unit_rows_to_samples(model.generate_unit(sample_latent(rng, n, model.config.latent_dim)),
                              model.scaler);
}

/// Outlier provider drawing uniform noise over the training-data box.
struct NoiseGenerator {
  FeatureScaler box;

  Samples generate(std::size_t n, Rng& rng) const {
    if (n == 0) return {};
    std::vector<double> u(n * box.dim());
    for (auto& v : u) v = rng.uniform(-1.0, 1.0);
    return unit_rows_to_samples(Tensor({n, box.dim()}, std::move(u)), box);
  }
};

inline Samples generate_outliers(const NoiseGenerator& noise, std::size_t n, Rng& rng) {
  return noise.generate(n, rng);
}

// ---------------------------------------------------------------------------
// LSROGANM generator files (little-endian):
//   "LSROGANM" | u32 version | u32 latent_dim | u32 data_dim |
//   u32 n_hidden | n_hidden x u32 | D x f64 lo | D x f64 hi |
//   u64 n_values | n_values x f64 (generator parameters, W then b)
// Only the generator and scaler are stored; enough to sample outliers.
// ---------------------------------------------------------------------------

inline constexpr char kGanMagic[8] = {'L', 'S', 'R', 'O', 'G', 'A', 'N', 'M'};
inline constexpr std::uint32_t kGanVersion = 1;

inline void save_generator(const GanModel& model, const std::filesystem::path& path) {
  const auto& cfg = model.config;
  io::ByteWriter w;
  w.put_bytes(kGanMagic, sizeof(kGanMagic));
  w.put<std::uint32_t>(kGanVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.latent_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.data_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.gen_hidden.size()));
  for (auto h : cfg.gen_hidden) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  for (double v : model.scaler.lo) w.put<double>(v);
  for (double v : model.scaler.hi) w.put<double>(v);
  std::uint64_t count = 0;
  for (const auto& p : model.generator.parameters()) count += p.numel();
  w.put<std::uint64_t>(count);
  for (const auto& p : model.generator.parameters())
    for (double v : p.data()) w.put<double>(v);
  w.save(path);
}

inline GanModel load_generator(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  if (!r.match(kGanMagic, sizeof(kGanMagic))) {
    throw std::runtime_error(path.string() + ": bad magic at byte offset 0, not an LSROGANM file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kGanVersion) {
    throw std::runtime_error(path.string() + ": unsupported generator version " + std::to_string(version));
  }
  GanConfig cfg;
  cfg.latent_dim = r.get<std::uint32_t>("latent_dim");
  cfg.data_dim = r.get<std::uint32_t>("data_dim");
  const auto n_hidden = r.get<std::uint32_t>("hidden count");
  if (n_hidden > 1024) throw std::runtime_error(path.string() + ": implausible hidden layer count");
  cfg.gen_hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) cfg.gen_hidden.push_back(r.get<std::uint32_t>("hidden dim"));
  if (cfg.latent_dim == 0 || cfg.data_dim == 0) throw std::runtime_error(path.string() + ": zero dimension");
  FeatureScaler scaler;
  scaler.lo.resize(cfg.data_dim);
  scaler.hi.resize(cfg.data_dim);
  for (auto& v : scaler.lo) v = r.get<double>("scaler lo");
  for (auto& v : scaler.hi) v = r.get<double>("scaler hi");
  GanModel model = GanModel::init(cfg, std::move(scaler));
  std::uint64_t expected = 0;
  for (const auto& p : model.generator.parameters()) expected += p.numel();
  const auto count = r.get<std::uint64_t>("parameter count");
  if (count != expected) {
    throw std::runtime_error(path.string() + ": parameter count " + std::to_string(count) +
                             " does not match architecture (" + std::to_string(expected) + ")");
  }
  if (r.offset() + count * 8 != r.size()) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(r.offset() + count * 8) +
                             " bytes, file has " + std::to_string(r.size()));
  }
  for (auto p : model.generator.parameters())
    for (auto& v : p.data()) v = r.get<double>("parameter");
  return model;
}

}  // namespace lsro
