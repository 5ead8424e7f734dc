#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "lsro/losses.hpp"
#include "lsro/rng.hpp"

using namespace lsro;

namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform());  // Exp(1) gives a uniform Dirichlet
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace

TEST(OneHot, Examples) {
  EXPECT_EQ(one_hot(2, 4).probs, (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(one_hot(0, 2).probs, (std::vector<double>{1, 0}));
  EXPECT_THROW(one_hot(5, 4), std::out_of_range);
  EXPECT_THROW(one_hot(0, 1), std::invalid_argument);
}

TEST(LsrDistribution, Examples) {
  EXPECT_EQ(lsr_distribution(3, 7, 0.0).probs, one_hot(3, 7).probs);
  const auto d = lsr_distribution(2, 5, 0.1);
  const std::vector<double> expected{0.02, 0.02, 0.92, 0.02, 0.02};
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(d.probs[k], expected[k], 1e-15);
  EXPECT_EQ(lsr_distribution(0, 2, 1.0).probs, (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(lsr_distribution(0, 2, 1.5), std::invalid_argument);
  EXPECT_THROW(lsr_distribution(0, 2, -0.1), std::invalid_argument);
}

TEST(LsroDistribution, Examples) {
  EXPECT_EQ(lsro_distribution(4).probs, (std::vector<double>(4, 0.25)));
  for (double v : lsro_distribution(49).probs) EXPECT_NEAR(v, 1.0 / 49, 1e-15);
  EXPECT_EQ(lsro_distribution(2).probs, (std::vector<double>(2, 0.5)));
  EXPECT_THROW(lsro_distribution(1), std::invalid_argument);
}

TEST(AllInOneLabel, ExtraClass) {
  EXPECT_EQ(all_in_one_label(3).probs, (std::vector<double>{0, 0, 0, 1}));
  EXPECT_EQ(all_in_one_label(9).size(), 10u);
  // Real samples under this strategy keep a one-hot over K+1 with no mass on K.
  const auto real = one_hot(1, 4);
  EXPECT_EQ(real.probs[3], 0.0);
}

TEST(LabelDistribution, EveryConstructionSumsToExactlyOne) {
  for (std::size_t k = 2; k <= 1000; ++k) {
    ASSERT_EQ(one_hot(k / 2, k).total(), 1.0) << k;
    ASSERT_EQ(lsro_distribution(k).total(), 1.0) << k;
    ASSERT_EQ(all_in_one_label(k).total(), 1.0) << k;
    for (double eps : {0.0, 0.1, 0.5, 1.0}) {
      const auto d = lsr_distribution(k - 1, k, eps);
      ASSERT_EQ(d.total(), 1.0) << "K=" << k << " eps=" << eps;
      for (double v : d.probs) ASSERT_GE(v, 0.0);
    }
  }
}

TEST(ExactSum, CorrectlyRounded) {
  EXPECT_EQ(exact_sum(std::vector<double>(10, 0.1)), 1.0);
  EXPECT_EQ(exact_sum(std::vector<double>{1e100, 1.0, -1e100}), 1.0);
  EXPECT_EQ(exact_sum(std::vector<double>{}), 0.0);
}

TEST(CrossEntropy, Examples) {
  EXPECT_DOUBLE_EQ(cross_entropy(std::vector<double>{0, 1, 0}, one_hot(1, 3)), 0.0);
  EXPECT_NEAR(cross_entropy(std::vector<double>(4, 0.25), one_hot(2, 4)), 1.386294, 1e-6);
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.7, 0.2, 0.1}, one_hot(1, 3)), 1.609438, 1e-6);
  EXPECT_THROW(cross_entropy(std::vector<double>{0.5, 0.5}, one_hot(1, 3)), std::invalid_argument);
}

TEST(CrossEntropy, ConfidentWrongPredictionIsFinite) {
  const double loss = cross_entropy(std::vector<double>{1.0, 0.0}, one_hot(1, 2));
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, -std::log(kLogFloor), 1e-9);
}

TEST(LsroLoss, Examples) {
  const std::vector<double> p{0.7, 0.2, 0.1};
  EXPECT_NEAR(lsro_loss(p, 0, SourceFlag::real, 3), 0.356675, 1e-6);
  EXPECT_NEAR(lsro_loss(std::vector<double>(6, 1.0 / 6), std::nullopt, SourceFlag::generated, 6), std::log(6.0),
              1e-12);
  // -(1/2)(ln 0.9 + ln 0.1)
  const double by_hand = -0.5 * (std::log(0.9) + std::log(0.1));
  EXPECT_NEAR(by_hand, 1.203973, 1e-6);
  EXPECT_NEAR(lsro_loss(std::vector<double>{0.9, 0.1}, std::nullopt, SourceFlag::generated, 2), by_hand, 1e-15);
}

TEST(LsroLoss, LabelMustMatchSourceFlag) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_THROW(lsro_loss(p, std::nullopt, SourceFlag::real, 2), std::invalid_argument);
  EXPECT_THROW(lsro_loss(p, 1, SourceFlag::generated, 2), std::invalid_argument);
  EXPECT_THROW(lsro_loss(p, 0, SourceFlag::real, 3), std::invalid_argument);
}

TEST(LsrLoss, Examples) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_simplex(rng, 5);
    const std::size_t y = rng.index(5);
    EXPECT_EQ(lsr_loss(p, y, 5, 0.0), cross_entropy(p, one_hot(y, 5)));
    EXPECT_NEAR(lsr_loss(p, y, 5, 1.0), lsro_loss(p, std::nullopt, SourceFlag::generated, 5), 1e-12);
  }
  // -0.9 ln 0.9 - 0.05 (ln 0.9 + ln 0.1)
  const double by_hand = -0.9 * std::log(0.9) - 0.05 * (std::log(0.9) + std::log(0.1));
  EXPECT_NEAR(by_hand, 0.215221, 1e-6);
  EXPECT_NEAR(lsr_loss(std::vector<double>{0.9, 0.1}, 0, 2, 0.1), by_hand, 1e-15);
}

TEST(LossIdentities, MixtureAndSmoothingOverRandomDraws) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.index(30);
    const auto p = random_simplex(rng, k);
    const std::size_t y = rng.index(k);
    const double eps = rng.uniform();
    EXPECT_NEAR(lsr_loss(p, y, k, eps), cross_entropy(p, lsr_distribution(y, k, eps)), 1e-12);
    for (auto z : {SourceFlag::real, SourceFlag::generated}) {
      const double zv = z_value(z);
      const auto label = z == SourceFlag::real ? std::optional<std::size_t>(y) : std::nullopt;
      const double mixture =
          (1 - zv) * cross_entropy(p, one_hot(y, k)) + zv * cross_entropy(p, lsro_distribution(k));
      EXPECT_NEAR(lsro_loss(p, label, z, k), mixture, 1e-12);
    }
  }
}

TEST(LsroLoss, UniformIsTheMinimum) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.index(20);
    const auto p = random_simplex(rng, k);
    const double slack = lsro_loss(p, std::nullopt, SourceFlag::generated, k) - std::log(static_cast<double>(k));
    EXPECT_GE(slack, -1e-9);
  }
}

TEST(PseudoLabel, ArgmaxWithSmallestIndexTies) {
  EXPECT_EQ(pseudo_label(std::vector<double>{0.1, 0.7, 0.2}), 1u);
  EXPECT_EQ(pseudo_label(std::vector<double>{0.5, 0.5}), 0u);
  EXPECT_THROW(pseudo_label(std::vector<double>{}), std::invalid_argument);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> z(6);
    for (auto& v : z) v = rng.uniform(-3, 3);
    std::vector<double> shifted(z);
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted) v += c;
    const auto p = softmax_rows(Tensor({1, 6}, z));
    const auto ps = softmax_rows(Tensor({1, 6}, shifted));
    EXPECT_EQ(pseudo_label(p.data()), pseudo_label(ps.data()));
  }
}

TEST(WeightedCrossEntropy, MatchesPerSampleMeanAndGradients) {
  Rng rng(12);
  const std::size_t n = 4, k = 5;
  std::vector<double> logits(n * k);
  for (auto& v : logits) v = rng.uniform(-2, 2);
  std::vector<double> targets(n * k, 0.0);
  targets[0 * k + 1] = 1.0;
  for (std::size_t j = 0; j < k; ++j) targets[1 * k + j] = 1.0 / k;  // generated, uniform
  targets[2 * k + 4] = 0.1;                                           // weighted pseudo label
  const auto q3 = lsr_distribution(3, k, 0.2);
  std::copy(q3.probs.begin(), q3.probs.end(), targets.begin() + 3 * k);

  const Tensor z({n, k}, logits);
  const Tensor p = softmax_rows(z);
  double expected = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = p.data().subspan(i * k, k);
    LabelDistribution q{std::vector<double>(targets.begin() + i * k, targets.begin() + (i + 1) * k)};
    expected += cross_entropy(row, q);
  }
  EXPECT_NEAR(weighted_cross_entropy(p, Tensor({n, k}, targets)).item(), expected / n, 1e-12);

  const double err = finite_difference_check(
      [&](const std::vector<Tensor>& ps) {
        return weighted_cross_entropy(softmax_rows(ps[0]), Tensor({n, k}, targets));
      },
      {z}, 1e-5);
  EXPECT_LT(err, 1e-4);
}
