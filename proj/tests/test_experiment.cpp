#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lsro/experiment.hpp"

using namespace lsro;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(# tiny sweep for tests
synth.num_identities = 12
synth.feature_dim = 8
synth.min_per_camera = 2
synth.max_per_camera = 4
gan.latent_dim = 8
gan.gen_hidden = 16
gan.disc_hidden = 16
gan.epochs = 2
net.hidden_dims = 16
net.embed_dim = 8
train.epochs = 6
train.decay_epoch = 4
train.pseudo_warmup_epochs = 2
experiment.generated_counts = 0, 1x
experiment.repeats = 2
)";

ExperimentConfig small_config(const std::string& out) {
  auto cfg = experiment_from(KeyValueConfig::parse(kSmallConfig, "small.cfg"));
  cfg.output_dir = fs::temp_directory_path() / "lsro_test_experiment" / out;
  fs::remove_all(cfg.output_dir);
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, ParsesValuesListsAndComments) {
  const auto cfg = experiment_from(KeyValueConfig::parse(kSmallConfig));
  EXPECT_EQ(cfg.synth.num_identities, 12u);
  EXPECT_EQ(cfg.net.input_dim, 8u);
  EXPECT_EQ(cfg.gan.data_dim, 8u);
  EXPECT_EQ(cfg.net.hidden_dims, std::vector<std::size_t>{16});
  ASSERT_EQ(cfg.generated_counts.size(), 2u);
  EXPECT_TRUE(cfg.generated_counts[1].relative);
  EXPECT_EQ(cfg.generated_counts[1].label(), "1x");
  EXPECT_EQ(cfg.repeats, 2u);
  EXPECT_EQ(cfg.train.lr_initial, 0.002);
  EXPECT_EQ(cfg.strategies.size(), 4u);
}

TEST(Config, Defaults) {
  const auto cfg = default_experiment();
  EXPECT_EQ(cfg.synth.num_identities, 100u);
  EXPECT_EQ(cfg.train_fraction, 0.5);
  EXPECT_EQ(cfg.synth.cameras, 2u);
  EXPECT_EQ(cfg.synth.min_per_camera, 3u);
  EXPECT_EQ(cfg.synth.max_per_camera, 8u);
  EXPECT_EQ(cfg.synth.feature_dim, 32u);
  EXPECT_EQ(cfg.train.epochs, 50u);
  EXPECT_EQ(cfg.train.decay_epoch, 40u);
  EXPECT_EQ(cfg.train.momentum, 0.9);
  EXPECT_EQ(cfg.net.dropout_rate, 0.5);
  EXPECT_EQ(cfg.train.batch_size, 32u);
  EXPECT_EQ(cfg.gan.latent_dim, 100u);
  EXPECT_EQ(cfg.gan.adam_beta1, 0.5);
  EXPECT_EQ(cfg.gan.adam_beta2, 0.99);
  EXPECT_EQ(cfg.gan.epochs, 30u);
  EXPECT_EQ(cfg.train.pseudo_weight, 0.1);
  EXPECT_EQ(cfg.repeats, 5u);
  EXPECT_EQ(cfg.generated_counts.size(), 4u);
}

TEST(Config, Errors) {
  EXPECT_THROW(KeyValueConfig::parse("synth.cameras 2\n"), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("synth.camras = 2\n")), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("synth.cameras = two\n")), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("synth.cameras = 1\n")), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("experiment.generated_counts = 1x, 2x\n")), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("experiment.strategies = lsro, magic\n")), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("experiment.repeats = 0\n")), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("net.activation = gelu\n")), ConfigError);
  EXPECT_THROW(experiment_from(KeyValueConfig::parse("gan.adam_beta1 = 1.0\n")), ConfigError);
  EXPECT_THROW(KeyValueConfig::load("/nonexistent/file.cfg"), ConfigError);
  try {
    experiment_from(KeyValueConfig::parse("\n# c\nfoo.bar = 1\n", "x.cfg"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:3"), std::string::npos) << e.what();
  }
}

TEST(GeneratedCount, ParseAndResolve) {
  EXPECT_EQ(GeneratedCount::parse("2x").resolve(150), 300u);
  EXPECT_EQ(GeneratedCount::parse("0.5x").resolve(151), 76u);
  EXPECT_EQ(GeneratedCount::parse("40").resolve(150), 40u);
  EXPECT_TRUE(GeneratedCount::parse("0").is_zero());
  EXPECT_EQ(GeneratedCount::parse("0x").label(), "0");
  EXPECT_THROW(GeneratedCount::parse("x"), std::invalid_argument);
  EXPECT_THROW(GeneratedCount::parse("-1"), std::invalid_argument);
  EXPECT_THROW(GeneratedCount::parse("1.5"), std::invalid_argument);
}

TEST(RunCell, DeterministicAndInRange) {
  const auto cfg = small_config("cell");
  for (auto s : {Strategy::baseline, Strategy::lsro}) {
    const auto count = GeneratedCount::parse(s == Strategy::baseline ? "0" : "1x");
    const auto a = run_cell(cfg, s, count, OutlierSource::gan, 3);
    const auto b = run_cell(cfg, s, count, OutlierSource::gan, 3);
    EXPECT_EQ(csv_line(a), csv_line(b));
    for (double v : {a.rank1, a.rank5, a.rank10, a.map}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_LE(a.rank1, a.rank5);
    EXPECT_LE(a.rank5, a.rank10);
  }
}

TEST(RunCell, AllInOneBuildsExtraClassHead) {
  const auto cfg = small_config("aio");
  const auto cell = run_cell_detailed(cfg, Strategy::all_in_one, GeneratedCount::parse("1x"),
                                      OutlierSource::gan, 1);
  EXPECT_EQ(cell.network.config().num_classes, 7u);  // 6 train identities + 1
  EXPECT_EQ(cell.outliers.size(), cell.train.size());
  EXPECT_EQ(cell.row.num_generated, cell.train.size());
}

TEST(RunCell, BaselineEqualsLsroWithoutOutliers) {
  const auto cfg = small_config("eq");
  const auto base = run_cell(cfg, Strategy::baseline, GeneratedCount::parse("0"), OutlierSource::gan, 4);
  const auto lsro = run_cell(cfg, Strategy::lsro, GeneratedCount::parse("0"), OutlierSource::gan, 4);
  EXPECT_EQ(base.rank1, lsro.rank1);
  EXPECT_EQ(base.map, lsro.map);
  EXPECT_EQ(base.train_loss_final, lsro.train_loss_final);
}

TEST(RunCell, EveryOutlierSourceProducesARow) {
  const auto cfg = small_config("sources");
  for (auto src : {OutlierSource::gan, OutlierSource::heldout_real, OutlierSource::uniform_noise}) {
    const auto row = run_cell(cfg, Strategy::lsro, GeneratedCount::parse("1x"), src, 2);
    EXPECT_EQ(row.outlier_source, source_name(src));
    EXPECT_GT(row.num_generated, 0u);
  }
}

TEST(RunCell, StageErrorsNameTheStage) {
  auto cfg = small_config("err");
  cfg.synth.cameras = 1;
  try {
    run_cell(cfg, Strategy::baseline, GeneratedCount::parse("0"), OutlierSource::gan, 1);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("stage 'data'"), std::string::npos) << e.what();
  }
}

TEST(Sweep, RowCountResumeAndSummary) {
  auto cfg = small_config("sweep");
  const std::size_t expected = cfg.repeats * (1 + 3 * cfg.generated_counts.size());
  EXPECT_EQ(sweep_cells(cfg, 10).size(), expected);

  std::size_t callbacks = 0;
  SweepOptions opts;
  opts.on_row = [&](const ResultRow&, std::size_t, std::size_t) { ++callbacks; };
  const auto rows = run_sweep(cfg, 10, opts);
  EXPECT_EQ(rows.size(), expected);
  EXPECT_EQ(callbacks, expected);
  const auto csv = slurp(cfg.output_dir / "results.csv");
  EXPECT_EQ(read_results(cfg.output_dir / "results.csv").size(), expected);
  EXPECT_TRUE(fs::exists(cfg.output_dir / "timings.csv"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "summary.csv"));

  callbacks = 0;
  const auto again = run_sweep(cfg, 10, opts);
  EXPECT_EQ(callbacks, 0u);
  EXPECT_EQ(again.size(), expected);
  EXPECT_EQ(slurp(cfg.output_dir / "results.csv"), csv);

  // Drop the last two rows and resume: the same bytes come back.
  std::istringstream in(csv);
  std::string line, truncated;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  for (std::size_t i = 0; i + 2 < lines.size(); ++i) truncated += lines[i] + "\n";
  std::ofstream(cfg.output_dir / "results.csv", std::ios::trunc) << truncated;
  run_sweep(cfg, 10, opts);
  EXPECT_EQ(callbacks, 2u);
  EXPECT_EQ(slurp(cfg.output_dir / "results.csv"), csv);

  const auto summary = summarize(read_results(cfg.output_dir / "results.csv"));
  ASSERT_FALSE(summary.empty());
  EXPECT_EQ(summary.front().strategy, "baseline");
  EXPECT_EQ(summary.size(), 1 + 3 * cfg.generated_counts.size());
  for (const auto& s : summary) EXPECT_EQ(s.seeds, cfg.repeats);
  EXPECT_EQ(slurp(cfg.output_dir / "summary.csv"), summary_csv(summary));
}

TEST(Sweep, ByteIdenticalAcrossRuns) {
  auto a = small_config("det_a");
  auto b = small_config("det_b");
  a.repeats = b.repeats = 1;
  run_sweep(a, 7);
  run_sweep(b, 7);
  EXPECT_EQ(slurp(a.output_dir / "results.csv"), slurp(b.output_dir / "results.csv"));
  EXPECT_EQ(slurp(a.output_dir / "summary.csv"), slurp(b.output_dir / "summary.csv"));
}

TEST(Report, BaselineFirstAndPeakLine) {
  std::vector<ResultRow> rows;
  auto add = [&](std::string s, std::string src, std::string label, double r1) {
    ResultRow r;
    r.strategy = s;
    r.outlier_source = src;
    r.gen_label = label;
    r.rank1 = r1;
    rows.push_back(r);
  };
  add("lsro", "gan", "2x", 0.6);
  add("lsro", "gan", "1x", 0.7);
  add("pseudo_label", "gan", "1x", 0.4);
  add("baseline", "none", "0", 0.5);
  add("lsro", "gan", "10x", 0.1);
  const auto text = format_report(rows);
  std::istringstream in(text);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(first.rfind("baseline", 0), 0u) << text;
  EXPECT_NE(text.find("peak rank-1 for lsro/gan: count 1x"), std::string::npos) << text;
  EXPECT_LT(text.find(" 2x "), text.find(" 10x ")) << text;
  const auto csv = csv_line(rows[0]);
  const auto back = parse_result_line(csv);
  EXPECT_EQ(csv_line(back), csv);
}
