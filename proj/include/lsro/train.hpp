#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lsro/dataset.hpp"
#include "lsro/losses.hpp"
#include "lsro/network.hpp"
#include "lsro/rng.hpp"

namespace lsro {

enum class Strategy { baseline, lsro, all_in_one, pseudo_label };

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::baseline: return "baseline";
    case Strategy::lsro: return "lsro";
    case Strategy::all_in_one: return "all_in_one";
    case Strategy::pseudo_label: return "pseudo_label";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "baseline") return Strategy::baseline;
  if (s == "lsro") return Strategy::lsro;
  if (s == "all_in_one") return Strategy::all_in_one;
  if (s == "pseudo_label") return Strategy::pseudo_label;
  throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}

struct TrainConfig {
  Strategy strategy = Strategy::baseline;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr_initial = 0.002;
  double lr_after_decay = 0.0002;
  std::size_t decay_epoch = 40;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::size_t pseudo_warmup_epochs = 20;
  double pseudo_weight = 0.1;
  double lsr_epsilon = 0.0;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("train: epochs must be > 0");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be > 0");
    if (!(lr_after_decay > 0.0 && lr_after_decay <= lr_initial)) {
      throw std::invalid_argument("train: need 0 < lr_after_decay <= lr_initial");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must lie in [0,1)");
    if (decay_epoch > epochs) throw std::invalid_argument("train: decay_epoch exceeds epochs");
    if (!(lsr_epsilon >= 0.0 && lsr_epsilon <= 1.0)) throw std::invalid_argument("train: lsr_epsilon must lie in [0,1]");
    if (pseudo_weight < 0.0) throw std::invalid_argument("train: pseudo_weight must be >= 0");
  }
};

// Step schedule: lr_initial before decay_epoch, lr_after_decay from then on.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return epoch < cfg.decay_epoch ? cfg.lr_initial : cfg.lr_after_decay;
}

struct TrainReport {
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch

  double final_loss() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
  bool operator==(const TrainReport&) const = default;
};

/// Dense class indices 0..K-1 for the identities of a labeled set.
class LabelMap {
 public:
  explicit LabelMap(const Samples& labeled) {
    for (const auto& s : labeled) {
      if (s.labeled()) index_.emplace(s.identity, 0);
    }
    std::size_t k = 0;
    for (auto& [id, idx] : index_) idx = k++;
  }

  std::size_t size() const { return index_.size(); }
  std::size_t operator()(std::int32_t identity) const {
    auto it = index_.find(identity);
    if (it == index_.end()) throw std::out_of_range("unknown identity " + std::to_string(identity));
    return it->second;
  }

 private:
  std::map<std::int32_t, std::size_t> index_;
};

// Head width a strategy needs for K training identities.
inline std::size_t head_size_for(Strategy s, std::size_t num_identities) {
  return s == Strategy::all_in_one ? num_identities + 1 : num_identities;
}

/// Trains `net` on real labeled samples mixed with generated unlabeled ones.
///
/// Real and generated samples are shuffled into one pool each epoch and
/// batched together. Per-sample targets by strategy:
///   real                 one-hot (or LSR when lsr_epsilon > 0)
///   lsro                 uniform 1/K
///   all_in_one           one-hot at the extra class K
///   pseudo_label         pseudo_weight * one-hot(argmax p), from the same
///                        forward pass, only after the warm-up epochs
/// The batch loss is the mean of per-sample losses.
inline TrainReport train(Network& net, const Samples& real_data, const Samples& generated_data,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (real_data.empty()) throw std::invalid_argument("train: no real samples");
  for (const auto& s : real_data) {
    if (!s.labeled()) throw std::invalid_argument("train: real set contains a generated sample");
  }
  for (const auto& s : generated_data) {
    if (s.labeled()) throw std::invalid_argument("train: generated set contains a labeled sample");
  }
  if (cfg.strategy == Strategy::baseline && !generated_data.empty()) {
    throw std::invalid_argument("train: baseline strategy takes no generated samples");
  }
  const LabelMap labels(real_data);
  const std::size_t k = labels.size();
  const std::size_t head = head_size_for(cfg.strategy, k);
  if (net.config().num_classes != head) {
    throw std::invalid_argument("train: strategy " + std::string(strategy_name(cfg.strategy)) + " with " +
                                std::to_string(k) + " identities needs a " + std::to_string(head) +
                                "-way head, network has " + std::to_string(net.config().num_classes));
  }
  const std::size_t width = net.config().input_dim;

  // Pool entries: index >= 0 real, index < 0 generated (-(i+1)).
  std::vector<std::int64_t> pool;
  Rng shuffle_rng(derive_seed(cfg.seed, "train.shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "train.dropout"));

  std::vector<std::size_t> real_class(real_data.size());
  for (std::size_t i = 0; i < real_data.size(); ++i) real_class[i] = labels(real_data[i].identity);
  const LabelDistribution uniform = lsro_distribution(k);

  TrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool use_generated = cfg.strategy != Strategy::baseline &&
                               (cfg.strategy != Strategy::pseudo_label || epoch >= cfg.pseudo_warmup_epochs);
    pool.clear();
    for (std::size_t i = 0; i < real_data.size(); ++i) pool.push_back(static_cast<std::int64_t>(i));
    if (use_generated) {
      for (std::size_t i = 0; i < generated_data.size(); ++i) pool.push_back(-static_cast<std::int64_t>(i) - 1);
    }
    shuffle_rng.shuffle(pool);

    const double lr = lr_at(epoch, cfg);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < pool.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(pool.size(), start + cfg.batch_size);
      const std::size_t n = end - start;
      std::vector<double> x;
      x.reserve(n * width);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = pool[b] >= 0 ? real_data[static_cast<std::size_t>(pool[b])]
                                     : generated_data[static_cast<std::size_t>(-pool[b] - 1)];
        if (s.features.size() != width) {
          throw std::invalid_argument("train: sample width " + std::to_string(s.features.size()) +
                                      " != network input " + std::to_string(width));
        }
        x.insert(x.end(), s.features.begin(), s.features.end());
      }
      const auto out = net.forward(Tensor({n, width}, std::move(x)), true, &dropout_rng);

      std::vector<double> targets(n * head, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        double* row = targets.data() + r * head;
        const auto entry = pool[start + r];
        if (entry >= 0) {
          const std::size_t y = real_class[static_cast<std::size_t>(entry)];
          if (cfg.lsr_epsilon > 0.0) {
            const auto q = lsr_distribution(y, head, cfg.lsr_epsilon);
            std::copy(q.probs.begin(), q.probs.end(), row);
          } else {
            row[y] = 1.0;
          }
          continue;
        }
        switch (cfg.strategy) {
          case Strategy::lsro:
            std::copy(uniform.probs.begin(), uniform.probs.end(), row);
            break;
          case Strategy::all_in_one:
            row[k] = 1.0;
            break;
          case Strategy::pseudo_label: {
            const auto p = out.probs.data().subspan(r * head, head);
            row[pseudo_label(p)] = cfg.pseudo_weight;
            break;
          }
          case Strategy::baseline:
            break;
        }
      }
      Tensor loss = weighted_cross_entropy(out.probs, Tensor({n, head}, std::move(targets)));
      backward(loss);
      sgd_momentum_step(net, lr, cfg.momentum);
      loss_sum += loss.item() * static_cast<double>(n);
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(pool.size()));
  }
  return report;
}

}  // namespace lsro
