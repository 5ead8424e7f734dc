#include <gtest/gtest.h>

#include <cmath>

#include "lsro/retrieval.hpp"
#include "oracles.hpp"

using namespace lsro;

namespace {

Sample make(std::vector<double> f, int id, int cam) {
  Sample s;
  s.features = std::move(f);
  s.identity = id;
  s.camera = cam;
  return s;
}

// Random retrieval instance; small integer features make similarity ties common.
void random_instance(Rng& rng, Samples& queries, Samples& gallery) {
  const std::size_t ids = 1 + rng.index(4);
  const std::size_t dim = 1 + rng.index(3);
  const bool integer = rng.bernoulli(0.5);
  auto vec = [&] {
    std::vector<double> v(dim);
    do {
      for (auto& x : v) x = integer ? static_cast<double>(rng.uniform_int(-2, 2)) : rng.normal();
    } while (norm(v) == 0.0);
    return v;
  };
  queries.clear();
  gallery.clear();
  const std::size_t nq = 1 + rng.index(5);
  const std::size_t ng = 1 + rng.index(10);
  for (std::size_t i = 0; i < nq; ++i)
    queries.push_back(make(vec(), static_cast<int>(rng.index(ids)), static_cast<int>(rng.index(2))));
  for (std::size_t i = 0; i < ng; ++i)
    gallery.push_back(make(vec(), static_cast<int>(rng.index(ids)), static_cast<int>(rng.index(2))));
}

}  // namespace

TEST(Cosine, Examples) {
  const std::vector<double> v{1, 2, 3}, w{-1, -2, -3};
  EXPECT_DOUBLE_EQ(cosine_similarity(v, v), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(v, w), -1.0);
  EXPECT_EQ(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 5}), 0.0);
  EXPECT_THROW(cosine_similarity(std::vector<double>{0, 0}, v), std::invalid_argument);
  EXPECT_THROW(cosine_similarity(std::vector<double>{1, 0}, v), std::invalid_argument);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(5), b(5);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    const double c = cosine_similarity(a, b);
    EXPECT_LE(std::abs(c), 1.0);
  }
}

TEST(RankGallery, CopyRankedFirstAndSameViewExcluded) {
  const auto q = make({1, 2, 3}, 7, 0);
  Samples gallery{make({-1, 0, 0}, 1, 1), make({1, 2, 3}, 7, 0), make({0, 1, 0}, 2, 0), make({1, 2, 3}, 7, 1),
                  make({0.5, -1, 0.2}, 3, 1)};
  const auto r = rank_gallery(q, gallery);
  EXPECT_EQ(r.excluded, std::vector<std::size_t>{1});
  ASSERT_EQ(r.order.size(), 4u);
  EXPECT_EQ(r.order.front(), 3u);
  EXPECT_TRUE(r.relevant.front());
  EXPECT_EQ(std::count(r.order.begin(), r.order.end(), 1u), 0);
}

TEST(RankGallery, TiesGoToLowerIndex) {
  const auto q = make({1, 0}, 0, 0);
  Samples gallery{make({0, 1}, 1, 1), make({2, 0}, 2, 1), make({0, -3}, 0, 1), make({5, 0}, 3, 1)};
  EXPECT_EQ(rank_gallery(q, gallery).order, (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision({true, false, false}), 1.0);
  EXPECT_EQ(average_precision({false, true, false, true, false}), 0.5);
  EXPECT_EQ(average_precision({true, true, true}), 1.0);
  EXPECT_TRUE(std::isnan(average_precision({false, false})));
}

TEST(CmcCurve, Examples) {
  EXPECT_EQ(cmc_curve({{false, true, false}}, 4), (std::vector<double>{0, 1, 1, 1}));
  EXPECT_EQ(cmc_curve({{true}, {true, false}}, 3), (std::vector<double>{1, 1, 1}));
  const auto c = cmc_curve({{false, false, true}, {true}, {false, true}, {false, false, false, false, true}}, 5);
  EXPECT_EQ(c, (std::vector<double>{0.25, 0.5, 0.75, 0.75, 1.0}));
}

TEST(Evaluate, PerfectEmbedding) {
  Samples q{make({1, 0}, 0, 0)};
  Samples g{make({1, 0}, 0, 1), make({0, 1}, 1, 1), make({-1, 0}, 2, 0)};
  const auto m = evaluate(q, g, QueryMode::single, 5);
  EXPECT_EQ(m.rank(1), 1.0);
  EXPECT_EQ(m.map, 1.0);
  EXPECT_EQ(m.cmc, std::vector<double>(5, 1.0));
  EXPECT_EQ(m.num_valid_queries, 1u);
}

TEST(Evaluate, InvalidQueriesAreCountedAndAllInvalidThrows) {
  Samples q{make({1, 0}, 0, 0), make({0, 1}, 5, 0)};
  Samples g{make({1, 0}, 0, 1), make({0, 1}, 5, 0)};
  const auto m = evaluate(q, g, QueryMode::single);
  EXPECT_EQ(m.num_valid_queries, 1u);
  EXPECT_EQ(m.num_invalid_queries, 1u);
  EXPECT_THROW(evaluate({make({0, 1}, 5, 0)}, g, QueryMode::single), std::runtime_error);
  EXPECT_THROW(evaluate(q, g, QueryMode::single, 0), std::invalid_argument);
  EXPECT_THROW(evaluate(q, {make({1, 0, 0}, 0, 1)}, QueryMode::single), std::invalid_argument);
}

TEST(Evaluate, MatchesBruteForceOracleExactly) {
  Rng rng(2017);
  std::size_t checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Samples q, g;
    random_instance(rng, q, g);
    const auto expected = oracle::brute_force(q, g, 10);
    if (expected.ap.empty()) {
      EXPECT_THROW(evaluate(q, g, QueryMode::single, 10), std::runtime_error);
      continue;
    }
    const auto m = evaluate(q, g, QueryMode::single, 10);
    EXPECT_EQ(m.map, expected.map) << trial;
    EXPECT_EQ(m.cmc, expected.cmc) << trial;
    EXPECT_EQ(m.per_query_ap, expected.ap) << trial;
    EXPECT_EQ(m.num_invalid_queries, expected.invalid) << trial;
    EXPECT_EQ(m.rank(1), m.cmc[0]);
    for (std::size_t k = 1; k < m.cmc.size(); ++k) EXPECT_GE(m.cmc[k], m.cmc[k - 1]);
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Evaluate, RandomRankingMatchesAnalyticExpectation) {
  for (std::size_t g = 1; g <= 7; ++g) {
    for (std::size_t r = 1; r <= g; ++r) {
      EXPECT_NEAR(oracle::enumerated_random_ap(g, r), expected_random_ap(g, r), 1e-12) << g << "," << r;
    }
  }
  EXPECT_THROW(expected_random_ap(3, 0), std::invalid_argument);
  EXPECT_THROW(expected_random_ap(3, 4), std::invalid_argument);
}

TEST(Evaluate, InvariantToScalingAndGalleryPermutation) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Samples q, g;
    for (int i = 0; i < 4; ++i) q.push_back(make({rng.normal(), rng.normal(), rng.normal()}, i % 3, i % 2));
    for (int i = 0; i < 9; ++i) g.push_back(make({rng.normal(), rng.normal(), rng.normal()}, i % 3, (i + 1) % 2));
    const auto base = evaluate(q, g, QueryMode::single, 9);

    Samples qs = q, gs = g;
    const double c = rng.uniform(0.01, 100.0);
    for (auto& s : qs)
      for (auto& v : s.features) v *= c;
    for (auto& s : gs)
      for (auto& v : s.features) v *= 1.0 / c;
    const auto scaled = evaluate(qs, gs, QueryMode::single, 9);
    EXPECT_EQ(scaled.cmc, base.cmc);
    EXPECT_NEAR(scaled.map, base.map, 1e-15);

    Samples gp = g;
    rng.shuffle(gp);
    const auto permuted = evaluate(q, gp, QueryMode::single, 9);
    EXPECT_EQ(permuted.cmc, base.cmc);
    EXPECT_NEAR(permuted.map, base.map, 1e-15);
  }
}

TEST(Evaluate, MultiModePoolsQueriesPerView) {
  Samples g{make({1, 0}, 0, 1), make({0, 1}, 1, 1), make({1, 1}, 1, 0)};
  Samples single_q{make({1, 0.1}, 0, 0), make({0.1, 1}, 1, 0)};
  const auto s = evaluate(single_q, g, QueryMode::single);
  const auto m = evaluate(single_q, g, QueryMode::multi);
  EXPECT_EQ(s.cmc, m.cmc);
  EXPECT_EQ(s.map, m.map);

  // Two views of identity 0 under camera 0 pool to their mean, (1, 0).
  Samples q{make({1, 1}, 0, 0), make({1, -1}, 0, 0)};
  Samples g2{make({0.2, 1}, 2, 1), make({1, 0}, 0, 1), make({0.2, -1}, 3, 1)};
  const auto pooled = evaluate(q, g2, QueryMode::multi);
  EXPECT_EQ(pooled.num_valid_queries, 1u);
  EXPECT_EQ(pooled.rank(1), 1.0);
  const auto separate = evaluate(q, g2, QueryMode::single);
  EXPECT_EQ(separate.num_valid_queries, 2u);
  EXPECT_LT(separate.rank(1), 1.0);
  EXPECT_EQ(pool_queries(q).front().features, (std::vector<double>{1, 0}));
}

TEST(Top1Accuracy, Examples) {
  const std::vector<std::size_t> labels{0, 2, 1};
  EXPECT_EQ(top1_accuracy(Tensor({3, 3}, {1, 0, 0, 0, 0, 1, 0, 1, 0}), labels), 1.0);
  EXPECT_EQ(top1_accuracy(Tensor({3, 3}, {0, 1, 0, 1, 0, 0, 0, 0, 1}), labels), 0.0);
  EXPECT_EQ(top1_accuracy(Tensor({2, 2}, {0.5, 0.5, 0.5, 0.5}), std::vector<std::size_t>{0, 1}), 0.5);
  EXPECT_THROW(top1_accuracy(Tensor({1, 2}, {0.5, 0.5}), labels), std::invalid_argument);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> p(12), t(12);
    for (auto& x : p) x = rng.uniform();
    for (std::size_t j = 0; j < 12; ++j) t[j] = std::exp(3 * p[j]) - 7;
    const std::vector<std::size_t> y{rng.index(4), rng.index(4), rng.index(4)};
    EXPECT_EQ(top1_accuracy(Tensor({3, 4}, p), y), top1_accuracy(Tensor({3, 4}, t), y));
  }
}

TEST(MetricsCsv, Layout) {
  RetrievalMetrics m;
  m.cmc = {0.5, 1.0};
  m.map = 0.75;
  m.num_valid_queries = 2;
  EXPECT_EQ(metrics_csv(m, QueryMode::multi),
            "mode,k,value\nmulti,1,0.500000\nmulti,2,1.000000\nmulti,map,0.750000\nmulti,num_valid_queries,2\n");
  EXPECT_EQ(parse_mode("single"), QueryMode::single);
  EXPECT_THROW(parse_mode("both"), std::invalid_argument);
}
