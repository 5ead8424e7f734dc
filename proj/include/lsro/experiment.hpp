#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "lsro/config.hpp"
#include "lsro/dataset.hpp"
#include "lsro/gan.hpp"
#include "lsro/network.hpp"
#include "lsro/retrieval.hpp"
#include "lsro/train.hpp"

namespace lsro {

enum class OutlierSource { gan, heldout_real, uniform_noise };

inline std::string_view source_name(OutlierSource s) {
  switch (s) {
    case OutlierSource::gan: return "gan";
    case OutlierSource::heldout_real: return "heldout_real";
    case OutlierSource::uniform_noise: return "uniform_noise";
  }
  return "?";
}

inline OutlierSource parse_source(std::string_view s) {
  if (s == "gan") return OutlierSource::gan;
  if (s == "heldout_real") return OutlierSource::heldout_real;
  if (s == "uniform_noise") return OutlierSource::uniform_noise;
  throw std::invalid_argument("unknown outlier source '" + std::string(s) + "'");
}

/// Number of generated samples: absolute, or a multiple of the real
/// training-set size ("2x").
struct GeneratedCount {
  double value = 0.0;
  bool relative = false;

  static GeneratedCount parse(std::string_view text) {
    GeneratedCount c;
    std::string body(text);
    if (!body.empty() && (body.back() == 'x' || body.back() == 'X')) {
      c.relative = true;
      body.pop_back();
    }
    std::size_t used = 0;
    try {
      c.value = std::stod(body, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad generated count '" + std::string(text) + "'");
    }
    if (used != body.size() || c.value < 0.0 || (!c.relative && c.value != std::floor(c.value))) {
      throw std::invalid_argument("bad generated count '" + std::string(text) + "'");
    }
    return c;
  }

  std::size_t resolve(std::size_t train_size) const {
    return relative ? static_cast<std::size_t>(std::llround(value * static_cast<double>(train_size)))
                    : static_cast<std::size_t>(value);
  }

  bool is_zero() const { return value == 0.0; }

  std::string label() const {
    std::ostringstream os;
    os << value;
    return relative && !is_zero() ? os.str() + "x" : os.str();
  }
};

struct ExperimentConfig {
  SynthConfig synth;
  GanConfig gan;
  NetworkConfig net;
  TrainConfig train;
  std::vector<Strategy> strategies{Strategy::baseline, Strategy::lsro, Strategy::all_in_one,
                                   Strategy::pseudo_label};
  std::vector<GeneratedCount> generated_counts{{0, true}, {1, true}, {2, true}, {3, true}};
  std::vector<OutlierSource> outlier_sources{OutlierSource::gan};
  std::size_t repeats = 5;
  double train_fraction = 0.5;
  std::size_t k_max = 20;
  std::filesystem::path output_dir = "results";

  void validate() const {
    if (repeats < 1) throw ConfigError("experiment.repeats must be >= 1");
    const bool has_zero = std::any_of(generated_counts.begin(), generated_counts.end(),
                                      [](const GeneratedCount& c) { return c.is_zero(); });
    if (!has_zero) throw ConfigError("experiment.generated_counts must include 0 (the baseline cell)");
    if (strategies.empty()) throw ConfigError("experiment.strategies must not be empty");
    if (outlier_sources.empty()) throw ConfigError("experiment.outlier_sources must not be empty");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ConfigError("experiment.train_fraction must lie in (0,1)");
    }
    try {
      synth.validate();
      gan.validate();
      net.validate();
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

/// Desk-scale defaults: 100 identities split in half (50 train), 2 cameras,
/// 3-8 samples per identity per camera, 32-dim features.
inline ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.net.input_dim = cfg.synth.feature_dim;
  cfg.gan.data_dim = cfg.synth.feature_dim;
  return cfg;
}

inline const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys{
      "synth.num_identities", "synth.cameras", "synth.min_per_camera", "synth.max_per_camera",
      "synth.feature_dim", "synth.identity_spread", "synth.camera_shift_scale", "synth.noise_sigma",
      "synth.nuisance_dim", "synth.nuisance_sigma",
      "gan.latent_dim", "gan.gen_hidden", "gan.disc_hidden", "gan.adam_beta1", "gan.adam_beta2",
      "gan.adam_eps", "gan.lr", "gan.epochs", "gan.batch_size",
      "net.hidden_dims", "net.embed_dim", "net.dropout_rate", "net.activation",
      "train.epochs", "train.batch_size", "train.lr_initial", "train.lr_after_decay", "train.decay_epoch",
      "train.momentum", "train.pseudo_warmup_epochs", "train.pseudo_weight", "train.lsr_epsilon",
      "experiment.strategies", "experiment.generated_counts", "experiment.outlier_sources",
      "experiment.repeats", "experiment.train_fraction", "experiment.k_max", "experiment.output_dir"};
  return keys;
}

// Settings not present in `kv` keep their defaults.
inline ExperimentConfig experiment_from(const KeyValueConfig& kv) {
  kv.require_known(known_config_keys());
  ExperimentConfig cfg = default_experiment();
  auto& s = cfg.synth;
  kv.get("synth.num_identities", s.num_identities);
  kv.get("synth.cameras", s.cameras);
  kv.get("synth.min_per_camera", s.min_per_camera);
  kv.get("synth.max_per_camera", s.max_per_camera);
  kv.get("synth.feature_dim", s.feature_dim);
  kv.get("synth.identity_spread", s.identity_spread);
  kv.get("synth.camera_shift_scale", s.camera_shift_scale);
  kv.get("synth.noise_sigma", s.noise_sigma);
  kv.get("synth.nuisance_dim", s.nuisance_dim);
  kv.get("synth.nuisance_sigma", s.nuisance_sigma);

  auto& g = cfg.gan;
  kv.get("gan.latent_dim", g.latent_dim);
  kv.get_list("gan.gen_hidden", g.gen_hidden);
  kv.get_list("gan.disc_hidden", g.disc_hidden);
  kv.get("gan.adam_beta1", g.adam_beta1);
  kv.get("gan.adam_beta2", g.adam_beta2);
  kv.get("gan.adam_eps", g.adam_eps);
  kv.get("gan.lr", g.lr);
  kv.get("gan.epochs", g.epochs);
  kv.get("gan.batch_size", g.batch_size);

  auto& n = cfg.net;
  kv.get_list("net.hidden_dims", n.hidden_dims);
  kv.get("net.embed_dim", n.embed_dim);
  kv.get("net.dropout_rate", n.dropout_rate);
  std::string act = n.activation == Activation::relu ? "relu" : "tanh";
  kv.get("net.activation", act);
  if (act == "relu") n.activation = Activation::relu;
  else if (act == "tanh") n.activation = Activation::tanh;
  else throw ConfigError("net.activation must be relu or tanh, got '" + act + "'");

  auto& t = cfg.train;
  kv.get("train.epochs", t.epochs);
  kv.get("train.batch_size", t.batch_size);
  kv.get("train.lr_initial", t.lr_initial);
  kv.get("train.lr_after_decay", t.lr_after_decay);
  kv.get("train.decay_epoch", t.decay_epoch);
  kv.get("train.momentum", t.momentum);
  kv.get("train.pseudo_warmup_epochs", t.pseudo_warmup_epochs);
  kv.get("train.pseudo_weight", t.pseudo_weight);
  kv.get("train.lsr_epsilon", t.lsr_epsilon);

  try {
    std::vector<std::string> items;
    kv.get_list("experiment.strategies", items);
    if (!items.empty()) {
      cfg.strategies.clear();
      for (const auto& it : items) cfg.strategies.push_back(parse_strategy(it));
    }
    items.clear();
    kv.get_list("experiment.generated_counts", items);
    if (!items.empty()) {
      cfg.generated_counts.clear();
      for (const auto& it : items) cfg.generated_counts.push_back(GeneratedCount::parse(it));
    }
    items.clear();
    kv.get_list("experiment.outlier_sources", items);
    if (!items.empty()) {
      cfg.outlier_sources.clear();
      for (const auto& it : items) cfg.outlier_sources.push_back(parse_source(it));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  kv.get("experiment.repeats", cfg.repeats);
  kv.get("experiment.train_fraction", cfg.train_fraction);
  kv.get("experiment.k_max", cfg.k_max);
  std::string out = cfg.output_dir.string();
  kv.get("experiment.output_dir", out);
  cfg.output_dir = out;

  cfg.net.input_dim = cfg.synth.feature_dim;
  cfg.gan.data_dim = cfg.synth.feature_dim;
  cfg.validate();
  return cfg;
}

struct ResultRow {
  std::string strategy;
  std::string outlier_source;  // "none" when no outliers are used
  std::string gen_label;       // requested count, e.g. "2x"
  std::size_t num_generated = 0;
  std::uint64_t seed = 0;
  double rank1 = 0, rank5 = 0, rank10 = 0, map = 0;
  double train_loss_final = 0;
  double wall_time_seconds = 0;

  auto key() const { return std::make_tuple(strategy, outlier_source, gen_label, seed); }
};

inline const char* kResultHeader =
    "strategy,outlier_source,gen_label,num_generated,seed,rank1,rank5,rank10,map,train_loss_final";

inline std::string csv_line(const ResultRow& r) {
  return r.strategy + "," + r.outlier_source + "," + r.gen_label + "," + std::to_string(r.num_generated) + "," +
         std::to_string(r.seed) + "," + format_fixed(r.rank1) + "," + format_fixed(r.rank5) + "," +
         format_fixed(r.rank10) + "," + format_fixed(r.map) + "," + format_fixed(r.train_loss_final);
}

inline ResultRow parse_result_line(const std::string& line) {
  const auto f = KeyValueConfig::split_list(line);
  if (f.size() != 10) throw std::runtime_error("results csv: expected 10 fields in '" + line + "'");
  ResultRow r;
  r.strategy = f[0];
  r.outlier_source = f[1];
  r.gen_label = f[2];
  r.num_generated = std::stoull(f[3]);
  r.seed = std::stoull(f[4]);
  r.rank1 = std::stod(f[5]);
  r.rank5 = std::stod(f[6]);
  r.rank10 = std::stod(f[7]);
  r.map = std::stod(f[8]);
  r.train_loss_final = std::stod(f[9]);
  return r;
}

inline std::vector<ResultRow> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      if (line != kResultHeader) throw std::runtime_error(path.string() + ": unexpected header");
      header = false;
      continue;
    }
    if (!line.empty()) rows.push_back(parse_result_line(line));
  }
  return rows;
}

struct CellResult {
  ResultRow row;
  Network network;
  TrainReport report;
  Samples query_embeddings;
  Samples gallery_embeddings;
  Samples train;
  Samples outliers;
};

// Trained GANs keyed by cell seed; the GAN depends only on the seed's data.
using GanCache = std::map<std::uint64_t, GanModel>;

/// One experiment cell: data -> split -> outliers -> embedder training ->
/// embedding extraction -> retrieval metrics. Every stage is seeded from
/// (seed, stage tag). Errors are rethrown prefixed with the stage name.
inline CellResult run_cell_detailed(const ExperimentConfig& cfg, Strategy strategy, GeneratedCount count,
                                    OutlierSource source, std::uint64_t seed, GanCache* cache = nullptr) {
  const auto started = std::chrono::steady_clock::now();
  std::string stage = "data";
  try {
    SynthConfig synth = cfg.synth;
    synth.seed = derive_seed(seed, "synth");
    const Samples ds = generate_dataset(synth);
    stage = "split";
    Rng split_rng(derive_seed(seed, "split"));
    SplitResult split = split_protocol(ds, cfg.train_fraction, split_rng);

    const bool uses_outliers = strategy != Strategy::baseline;
    const std::size_t n_gen = uses_outliers ? count.resolve(split.train.size()) : 0;
    Samples outliers;
    if (n_gen > 0) {
      stage = "outliers";
      Rng outlier_rng(derive_seed(seed, "outliers"));
      switch (source) {
        case OutlierSource::gan: {
          GanConfig gan = cfg.gan;
          gan.data_dim = synth.feature_dim;
          gan.seed = derive_seed(seed, "gan");
          const GanModel* model = nullptr;
          GanModel local;
          if (cache != nullptr) {
            auto it = cache->find(seed);
            if (it == cache->end()) it = cache->emplace(seed, train_gan(split.train, gan)).first;
            model = &it->second;
          } else {
            local = train_gan(split.train, gan);
            model = &local;
          }
          outliers = generate_outliers(*model, n_gen, outlier_rng);
          break;
        }
        case OutlierSource::heldout_real:
          outliers = generate_heldout_pool(synth, n_gen);
          break;
        case OutlierSource::uniform_noise:
          outliers = generate_outliers(NoiseGenerator{FeatureScaler::fit(split.train)}, n_gen, outlier_rng);
          break;
      }
    }

    stage = "train";
    NetworkConfig net_cfg = cfg.net;
    net_cfg.input_dim = synth.feature_dim;
    net_cfg.num_classes = head_size_for(strategy, split.train_identities.size());
    Rng init_rng(derive_seed(seed, "net"));
    Network net = build_network(net_cfg, init_rng);
    TrainConfig tcfg = cfg.train;
    tcfg.strategy = strategy;
    tcfg.seed = derive_seed(seed, "train");
    TrainReport report = train(net, split.train, outliers, tcfg);

    stage = "evaluate";
    Samples q = embed_samples(net, split.query);
    Samples g = embed_samples(net, split.gallery);
    const RetrievalMetrics m = evaluate(q, g, QueryMode::single, std::max<std::size_t>(cfg.k_max, 10));

    ResultRow row;
    row.strategy = std::string(strategy_name(strategy));
    row.outlier_source = uses_outliers ? std::string(source_name(source)) : "none";
    row.gen_label = uses_outliers ? count.label() : "0";
    row.num_generated = outliers.size();
    row.seed = seed;
    row.rank1 = m.rank(1);
    row.rank5 = m.rank(5);
    row.rank10 = m.rank(10);
    row.map = m.map;
    row.train_loss_final = report.final_loss();
    row.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {row, std::move(net), std::move(report), std::move(q), std::move(g), std::move(split.train),
            std::move(outliers)};
  } catch (const std::exception& e) {
    throw std::runtime_error("cell " + std::string(strategy_name(strategy)) + "/" + count.label() + "/seed " +
                             std::to_string(seed) + " failed in stage '" + stage + "': " + e.what());
  }
}

inline ResultRow run_cell(const ExperimentConfig& cfg, Strategy strategy, GeneratedCount count,
                          OutlierSource source, std::uint64_t seed, GanCache* cache = nullptr) {
  return run_cell_detailed(cfg, strategy, count, source, seed, cache).row;
}

struct CellSpec {
  Strategy strategy;
  GeneratedCount count;
  OutlierSource source;
  std::uint64_t seed;
};

/// Cross product strategies x sources x counts x repeats. Baseline runs once
/// per seed (count 0, no source); other strategies run every count for every
/// source.
inline std::vector<CellSpec> sweep_cells(const ExperimentConfig& cfg, std::uint64_t base_seed) {
  std::vector<CellSpec> cells;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = base_seed + r;
    for (auto strategy : cfg.strategies) {
      if (strategy == Strategy::baseline) {
        cells.push_back({strategy, GeneratedCount{0, false}, cfg.outlier_sources.front(), seed});
        continue;
      }
      for (auto source : cfg.outlier_sources)
        for (const auto& count : cfg.generated_counts) cells.push_back({strategy, count, source, seed});
    }
  }
  return cells;
}

inline ResultRow key_row(const CellSpec& c) {
  ResultRow r;
  r.strategy = std::string(strategy_name(c.strategy));
  const bool uses = c.strategy != Strategy::baseline;
  r.outlier_source = uses ? std::string(source_name(c.source)) : "none";
  r.gen_label = uses ? c.count.label() : "0";
  r.seed = c.seed;
  return r;
}

inline void write_summary(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

struct SweepOptions {
  std::function<void(const ResultRow&, std::size_t done, std::size_t total)> on_row;
};

/// Runs every sweep cell, appending rows to <output_dir>/results.csv as they
/// finish. Cells already present in the file are skipped. Per-cell wall
/// times go to timings.csv; summary.csv holds means over seeds.
inline std::vector<ResultRow> run_sweep(const ExperimentConfig& cfg, std::uint64_t base_seed,
                                        const SweepOptions& opts = {}) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  const auto results_path = cfg.output_dir / "results.csv";
  const auto timings_path = cfg.output_dir / "timings.csv";

  std::vector<ResultRow> rows;
  std::set<std::tuple<std::string, std::string, std::string, std::uint64_t>> done;
  if (std::filesystem::exists(results_path)) {
    rows = read_results(results_path);
    for (const auto& r : rows) done.insert(r.key());
  } else {
    std::ofstream(results_path) << kResultHeader << '\n';
    std::ofstream(timings_path) << "strategy,outlier_source,gen_label,seed,wall_time_seconds\n";
  }

  const auto cells = sweep_cells(cfg, base_seed);
  GanCache cache;
  std::size_t finished = rows.size();
  for (const auto& cell : cells) {
    if (done.count(key_row(cell).key())) continue;
    if (!cache.empty() && cache.begin()->first != cell.seed) cache.clear();
    ResultRow row = run_cell(cfg, cell.strategy, cell.count, cell.source, cell.seed, &cache);
    {
      std::ofstream out(results_path, std::ios::app);
      out << csv_line(row) << '\n';
      if (!out) throw std::runtime_error("cannot append to " + results_path.string());
    }
    std::ofstream(timings_path, std::ios::app)
        << row.strategy << ',' << row.outlier_source << ',' << row.gen_label << ',' << row.seed << ','
        << format_fixed(row.wall_time_seconds, 3) << '\n';
    done.insert(row.key());
    rows.push_back(row);
    if (opts.on_row) opts.on_row(row, ++finished, cells.size());
  }
  // Summarise the file as written so fresh and resumed sweeps agree byte for byte.
  write_summary(cfg.output_dir / "summary.csv", read_results(results_path));
  return rows;
}

struct SummaryRow {
  std::string strategy, outlier_source, gen_label;
  std::size_t seeds = 0;
  double num_generated = 0, rank1 = 0, rank5 = 0, rank10 = 0, map = 0;
};

inline int strategy_order(const std::string& s) {
  try {
    return static_cast<int>(parse_strategy(s));
  } catch (const std::invalid_argument&) {
    return 99;
  }
}

inline double label_order(const std::string& label) {
  try {
    return GeneratedCount::parse(label).value;
  } catch (const std::invalid_argument&) {
    return 1e300;
  }
}

/// Means over seeds per (strategy, source, count); baseline first, then
/// strategies, sources and counts in ascending order.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::map<std::tuple<int, std::string, double, std::string, std::string>, SummaryRow> groups;
  for (const auto& r : rows) {
    auto& s = groups[{strategy_order(r.strategy), r.outlier_source, label_order(r.gen_label), r.gen_label,
                      r.strategy}];
    s.strategy = r.strategy;
    s.outlier_source = r.outlier_source;
    s.gen_label = r.gen_label;
    ++s.seeds;
    s.num_generated += static_cast<double>(r.num_generated);
    s.rank1 += r.rank1;
    s.rank5 += r.rank5;
    s.rank10 += r.rank10;
    s.map += r.map;
  }
  std::vector<SummaryRow> out;
  for (auto& [_, s] : groups) {
    const double n = static_cast<double>(s.seeds);
    s.num_generated /= n;
    s.rank1 /= n;
    s.rank5 /= n;
    s.rank10 /= n;
    s.map /= n;
    out.push_back(s);
  }
  return out;
}

inline std::string summary_csv(const std::vector<SummaryRow>& summary) {
  std::string out = "strategy,outlier_source,gen_label,seeds,mean_num_generated,rank1,rank5,rank10,map\n";
  for (const auto& s : summary) {
    out += s.strategy + "," + s.outlier_source + "," + s.gen_label + "," + std::to_string(s.seeds) + "," +
           format_fixed(s.num_generated, 1) + "," + format_fixed(s.rank1) + "," + format_fixed(s.rank5) + "," +
           format_fixed(s.rank10) + "," + format_fixed(s.map) + "\n";
  }
  return out;
}

inline void write_summary(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << summary_csv(summarize(rows));
}

/// Plain-text table of per-strategy means (percent), baseline first, plus
/// the count with the best mean rank-1 for each strategy and source.
inline std::string format_report(const std::vector<ResultRow>& rows) {
  const auto summary = summarize(rows);
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-14s %-14s %-6s %5s %8s %8s %8s %8s\n", "strategy", "source", "count",
                "seeds", "rank-1", "rank-5", "rank-10", "mAP");
  os << buf;
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof(buf), "%-14s %-14s %-6s %5zu %8.2f %8.2f %8.2f %8.2f\n", s.strategy.c_str(),
                  s.outlier_source.c_str(), s.gen_label.c_str(), s.seeds, 100 * s.rank1, 100 * s.rank5,
                  100 * s.rank10, 100 * s.map);
    os << buf;
  }
  std::map<std::pair<std::string, std::string>, const SummaryRow*> best;
  for (const auto& s : summary) {
    if (s.strategy == "baseline") continue;
    auto& b = best[{s.strategy, s.outlier_source}];
    if (b == nullptr || s.rank1 > b->rank1) b = &s;
  }
  for (const auto& [key, s] : best) {
    os << "peak rank-1 for " << key.first << "/" << key.second << ": count " << s->gen_label << '\n';
  }
  return os.str();
}

}  // namespace lsro
