// lsro: command-line driver for the desk-scale outlier-regularisation experiments.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "lsro/lsro.hpp"

namespace fs = std::filesystem;
using namespace lsro;

namespace {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  bool quiet = false;
};

// Marks failures caused by bad command-line input rather than by a run.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg =
      g.config_path.empty() ? default_experiment() : experiment_from(KeyValueConfig::load(g.config_path));
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  return cfg.output_dir;
}

void say(const Globals& g, const std::string& text) {
  if (!g.quiet) std::cerr << text << '\n';
}

std::size_t resolve_count(const std::string& text, std::size_t train_size) {
  try {
    return GeneratedCount::parse(text).resolve(train_size);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int cmd_gen_data(const Globals& g) {
  const auto cfg = load_config(g);
  SynthConfig synth = cfg.synth;
  synth.seed = derive_seed(g.seed, "synth");
  const auto ds = generate_dataset(synth);
  Rng split_rng(derive_seed(g.seed, "split"));
  const auto split = split_protocol(ds, cfg.train_fraction, split_rng);
  const auto dir = out_dir(cfg);
  write_features(dir / "train.lsrofeat", split.train);
  write_features(dir / "query.lsrofeat", split.query);
  write_features(dir / "gallery.lsrofeat", split.gallery);
  write_manifest(dir / "manifest.csv", {{"train", "train.lsrofeat"},
                                        {"query", "query.lsrofeat"},
                                        {"gallery", "gallery.lsrofeat"}});
  say(g, "wrote " + std::to_string(split.train.size()) + " train, " + std::to_string(split.query.size()) +
             " query, " + std::to_string(split.gallery.size()) + " gallery samples to " + dir.string());
  if (!split.single_camera_identities.empty()) {
    say(g, "note: " + std::to_string(split.single_camera_identities.size()) +
               " test identities appear under a single camera");
  }
  return 0;
}

int cmd_train_gan(const Globals& g, const std::string& train_path) {
  const auto cfg = load_config(g);
  const auto dir = out_dir(cfg);
  const auto data = read_features(train_path.empty() ? dir / "train.lsrofeat" : fs::path(train_path));
  GanConfig gan = cfg.gan;
  gan.data_dim = data.empty() ? gan.data_dim : data.front().features.size();
  gan.seed = derive_seed(g.seed, "gan");
  const auto model = train_gan(data, gan);
  save_generator(model, dir / "generator.lsroganm");
  std::ofstream curve(dir / "gan_loss.csv");
  curve << "epoch,disc_loss,gen_loss\n";
  for (std::size_t e = 0; e < model.disc_loss.size(); ++e) {
    curve << e << ',' << format_fixed(model.disc_loss[e]) << ',' << format_fixed(model.gen_loss[e]) << '\n';
  }
  say(g, "trained GAN on " + std::to_string(data.size()) + " samples; wrote " +
             (dir / "generator.lsroganm").string());
  return 0;
}

int cmd_sample_outliers(const Globals& g, const std::string& generator_path, const std::string& source_text,
                        const std::string& count_text, const std::string& train_path) {
  const auto cfg = load_config(g);
  const auto dir = out_dir(cfg);
  const OutlierSource source = parse_source(source_text);
  const fs::path train_file = train_path.empty() ? dir / "train.lsrofeat" : fs::path(train_path);
  std::optional<Samples> train_data;
  auto train = [&]() -> const Samples& {
    if (!train_data) train_data = read_features(train_file);
    return *train_data;
  };
  const bool relative = !count_text.empty() && (count_text.back() == 'x' || count_text.back() == 'X');
  const std::size_t n = resolve_count(count_text, relative ? train().size() : 0);
  Rng rng(derive_seed(g.seed, "outliers"));
  Samples outliers;
  switch (source) {
    case OutlierSource::gan:
      outliers = generate_outliers(
          load_generator(generator_path.empty() ? dir / "generator.lsroganm" : fs::path(generator_path)), n, rng);
      break;
    case OutlierSource::uniform_noise:
      outliers = generate_outliers(NoiseGenerator{FeatureScaler::fit(train())}, n, rng);
      break;
    case OutlierSource::heldout_real: {
      SynthConfig synth = cfg.synth;
      synth.seed = derive_seed(g.seed, "synth");
      outliers = generate_heldout_pool(synth, n);
      break;
    }
  }
  write_features(dir / "outliers.lsrofeat", outliers);
  say(g, "wrote " + std::to_string(outliers.size()) + " " + std::string(source_name(source)) + " outliers to " +
             (dir / "outliers.lsrofeat").string());
  return 0;
}

int cmd_train(const Globals& g, const std::string& strategy_text, const std::string& count_text,
              const std::string& source_text) {
  const auto cfg = load_config(g);
  const auto dir = out_dir(cfg);
  GeneratedCount count;
  try {
    count = GeneratedCount::parse(count_text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto cell = run_cell_detailed(cfg, parse_strategy(strategy_text), count, parse_source(source_text), g.seed);
  save_checkpoint(cell.network, dir / "model.lsrockpt");
  write_features(dir / "query_embeddings.lsrofeat", cell.query_embeddings);
  write_features(dir / "gallery_embeddings.lsrofeat", cell.gallery_embeddings);
  std::ofstream(dir / "cell.csv") << kResultHeader << '\n' << csv_line(cell.row) << '\n';
  std::ofstream loss(dir / "train_loss.csv");
  loss << "epoch,loss\n";
  for (std::size_t e = 0; e < cell.report.epoch_loss.size(); ++e) {
    loss << e << ',' << format_fixed(cell.report.epoch_loss[e]) << '\n';
  }
  std::cout << kResultHeader << '\n' << csv_line(cell.row) << '\n';
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& query_path, const std::string& gallery_path,
                 const std::string& mode_text, std::size_t k_max) {
  const auto queries = read_features(query_path);
  const auto gallery = read_features(gallery_path);
  const QueryMode mode = parse_mode(mode_text);
  const auto m = evaluate(queries, gallery, mode, k_max);
  const auto text = metrics_csv(m, mode);
  std::cout << text;
  if (m.num_invalid_queries > 0) {
    say(g, std::to_string(m.num_invalid_queries) + " queries without a cross-camera match were skipped");
  }
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    std::ofstream(fs::path(g.out) / "metrics.csv") << text;
  }
  return 0;
}

int cmd_sweep(const Globals& g) {
  const auto cfg = load_config(g);
  SweepOptions opts;
  if (!g.quiet) {
    opts.on_row = [](const ResultRow& r, std::size_t done, std::size_t total) {
      std::cerr << "[" << done << "/" << total << "] " << r.strategy << " " << r.outlier_source << " "
                << r.gen_label << " seed " << r.seed << ": rank-1 " << format_fixed(r.rank1, 4) << " mAP "
                << format_fixed(r.map, 4) << " (" << format_fixed(r.wall_time_seconds, 1) << " s)\n";
    };
  }
  const auto rows = run_sweep(cfg, g.seed, opts);
  std::cout << format_report(read_results(cfg.output_dir / "results.csv"));
  say(g, "results in " + cfg.output_dir.string());
  (void)rows;
  return 0;
}

int cmd_report(const Globals& g, const std::string& results_path) {
  fs::path path = results_path;
  if (path.empty()) path = fs::path(g.out.empty() ? load_config(g).output_dir : fs::path(g.out)) / "results.csv";
  std::cout << format_report(read_results(path));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label smoothing for outliers: desk-scale re-identification experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "base seed");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  auto* gen = app.add_subcommand("gen-data", "write train/query/gallery feature files");

  std::string train_path;
  auto* gan = app.add_subcommand("train-gan", "train the outlier generator on a feature file");
  gan->add_option("--train", train_path, "training features (default <out>/train.lsrofeat)");

  std::string generator_path, source_text = "gan", count_text = "1x";
  auto* sample = app.add_subcommand("sample-outliers", "draw unlabeled outliers into a feature file");
  sample->add_option("--generator", generator_path, "generator file (default <out>/generator.lsroganm)");
  sample->add_option("--source", source_text, "gan, heldout_real or uniform_noise")
      ->check(CLI::IsMember({"gan", "heldout_real", "uniform_noise"}));
  sample->add_option("--count", count_text, "absolute count or multiple of the training set, e.g. 2x");
  sample->add_option("--train", train_path, "training features for relative counts and noise bounds");

  std::string strategy_text = "lsro", cell_count = "2x", cell_source = "gan";
  auto* train_cmd = app.add_subcommand("train", "run one experiment cell");
  train_cmd->add_option("--strategy", strategy_text, "baseline, lsro, all_in_one or pseudo_label")
      ->check(CLI::IsMember({"baseline", "lsro", "all_in_one", "pseudo_label"}));
  train_cmd->add_option("--count", cell_count, "generated samples, e.g. 2x");
  train_cmd->add_option("--source", cell_source, "gan, heldout_real or uniform_noise")
      ->check(CLI::IsMember({"gan", "heldout_real", "uniform_noise"}));

  std::string query_path, gallery_path, mode_text = "single";
  std::size_t k_max = 20;
  auto* eval = app.add_subcommand("evaluate", "retrieval metrics from embedding files");
  eval->add_option("--query", query_path, "query embeddings")->required()->check(CLI::ExistingFile);
  eval->add_option("--gallery", gallery_path, "gallery embeddings")->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", mode_text, "single or multi")->check(CLI::IsMember({"single", "multi"}));
  eval->add_option("--kmax", k_max, "largest CMC rank")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "full strategy x count x seed sweep");

  std::string results_path;
  auto* report = app.add_subcommand("report", "summary table from a results CSV");
  report->add_option("--results", results_path, "results CSV (default <out>/results.csv)");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g);
    if (gan->parsed()) return cmd_train_gan(g, train_path);
    if (sample->parsed()) return cmd_sample_outliers(g, generator_path, source_text, count_text, train_path);
    if (train_cmd->parsed()) return cmd_train(g, strategy_text, cell_count, cell_source);
    if (eval->parsed()) return cmd_evaluate(g, query_path, gallery_path, mode_text, k_max);
    if (sweep->parsed()) return cmd_sweep(g);
    if (report->parsed()) return cmd_report(g, results_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n' << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
