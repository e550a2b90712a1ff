#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "clozerec/errors.h"
#include "clozerec/evaluation.h"
#include "oracles.h"

namespace ev = clozerec::evaluation;

namespace {

std::vector<ev::ScoredEntry> entries(std::initializer_list<std::pair<double, int>> rows) {
  std::vector<ev::ScoredEntry> out;
  int i = 0;
  for (auto [s, y] : rows) out.push_back({"N" + std::to_string(i++), s, y});
  return out;
}

std::vector<oracle::Item> items(const std::vector<ev::ScoredEntry>& e) {
  std::vector<oracle::Item> out;
  for (const auto& x : e) out.push_back({x.score, x.label});
  return out;
}

// Random impression with 2..8 candidates and scores on a coarse grid, so ties are common.
std::vector<ev::ScoredEntry> random_impression(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(2, 8), grid(0, 9), coin(0, 1);
  std::vector<ev::ScoredEntry> e(static_cast<std::size_t>(size(rng)));
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = {"N" + std::to_string(i), grid(rng) / 10.0, coin(rng)};
  }
  return e;
}

}  // namespace

TEST(Auc, KnownValues) {
  EXPECT_DOUBLE_EQ(*ev::auc(entries({{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.6, 0}})), 0.75);
  EXPECT_DOUBLE_EQ(*ev::auc(entries({{0.9, 1}, {0.8, 1}, {0.2, 0}})), 1.0);
  EXPECT_DOUBLE_EQ(*ev::auc(entries({{0.5, 1}, {0.5, 0}, {0.5, 0}})), 0.5);
}

TEST(Auc, SkipsSingleClass) {
  EXPECT_FALSE(ev::auc(entries({{0.9, 1}, {0.1, 1}})).has_value());
  EXPECT_FALSE(ev::auc(entries({{0.9, 0}})).has_value());
}

TEST(Mrr, KnownValues) {
  EXPECT_DOUBLE_EQ(*ev::mrr(entries({{0.9, 1}, {0.5, 0}})), 1.0);
  EXPECT_DOUBLE_EQ(*ev::mrr(entries({{0.9, 0}, {0.8, 0}, {0.7, 1}, {0.6, 0}, {0.5, 0}})), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(*ev::mrr(entries({{0.9, 1}, {0.8, 0}, {0.7, 0}, {0.6, 1}})), 0.625);
  EXPECT_FALSE(ev::mrr(entries({{0.9, 0}})).has_value());
}

TEST(Mrr, TiesBreakByInputOrder) {
  // The positive listed second loses the tie.
  EXPECT_DOUBLE_EQ(*ev::mrr(entries({{0.5, 0}, {0.5, 1}})), 0.5);
  EXPECT_DOUBLE_EQ(*ev::mrr(entries({{0.5, 1}, {0.5, 0}})), 1.0);
}

TEST(Ndcg, KnownValues) {
  EXPECT_DOUBLE_EQ(*ev::ndcg_at_k(entries({{0.9, 1}, {0.1, 0}}), 5), 1.0);
  const double expected = std::log2(2.0) / std::log2(3.0);
  EXPECT_NEAR(*ev::ndcg_at_k(entries({{0.9, 0}, {0.8, 1}, {0.1, 0}}), 5), expected, 1e-15);
  EXPECT_NEAR(expected, 0.6309, 1e-4);
  // Positive at rank 3 with k = 2; it would sit inside the ideal top 2.
  EXPECT_DOUBLE_EQ(*ev::ndcg_at_k(entries({{0.9, 0}, {0.8, 0}, {0.7, 1}}), 2), 0.0);
}

TEST(Ndcg, RejectsZeroCutoffAndSkipsNoPositive) {
  EXPECT_THROW(ev::ndcg_at_k(entries({{0.9, 1}}), 0), clozerec::ArgumentError);
  EXPECT_FALSE(ev::ndcg_at_k(entries({{0.9, 0}}), 5).has_value());
}

TEST(MetricsOracle, MatchesBruteForceOnRandomImpressions) {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto e = random_impression(rng);
    const auto it = items(e);
    const auto a = ev::auc(e);
    const auto m = ev::mrr(e);
    if (a) {
      EXPECT_NEAR(*a, oracle::auc(it), 1e-12);
      ++checked;
    }
    if (m) {
      EXPECT_NEAR(*m, oracle::mrr(it), 1e-12);
      for (std::size_t k : {1, 3, 5, 10}) EXPECT_NEAR(*ev::ndcg_at_k(e, k), oracle::ndcg(it, k), 1e-12);
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(MetricsProperty, InvariantUnderStrictlyIncreasingTransform) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 300; ++trial) {
    auto e = random_impression(rng);
    for (auto& x : e) x.score = u(rng);
    auto cubed = e;
    for (auto& x : cubed) x.score = x.score * x.score * x.score;
    const auto a = ev::evaluate({{"i", e}});
    const auto b = ev::evaluate({{"i", cubed}});
    if (!std::isnan(a.auc)) EXPECT_DOUBLE_EQ(a.auc, b.auc);
    if (!std::isnan(a.mrr)) {
      EXPECT_DOUBLE_EQ(a.mrr, b.mrr);
      EXPECT_DOUBLE_EQ(a.ndcg5, b.ndcg5);
      EXPECT_DOUBLE_EQ(a.ndcg10, b.ndcg10);
    }
  }
}

TEST(MetricsProperty, NdcgBoundedAndSaturatesAtImpressionSize) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const auto e = random_impression(rng);
    if (!ev::mrr(e)) continue;
    for (std::size_t k = 1; k <= 10; ++k) {
      const double v = *ev::ndcg_at_k(e, k);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-15);
    }
    EXPECT_DOUBLE_EQ(*ev::ndcg_at_k(e, e.size()), *ev::ndcg_at_k(e, e.size() + 7));
  }
}

TEST(Evaluate, SingleImpressionEqualsItsMetrics) {
  const auto e = entries({{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.6, 0}});
  const auto r = ev::evaluate({{"a", e}});
  EXPECT_DOUBLE_EQ(r.auc, *ev::auc(e));
  EXPECT_DOUBLE_EQ(r.mrr, *ev::mrr(e));
  EXPECT_DOUBLE_EQ(r.ndcg5, *ev::ndcg_at_k(e, 5));
  EXPECT_DOUBLE_EQ(r.ndcg10, *ev::ndcg_at_k(e, 10));
  EXPECT_EQ(r.impressions, 1u);
}

TEST(Evaluate, DuplicatedImpressionLeavesMeansUnchanged) {
  const auto e = entries({{0.3, 1}, {0.8, 0}, {0.7, 1}});
  const auto one = ev::evaluate({{"a", e}});
  const auto two = ev::evaluate({{"a", e}, {"b", e}});
  EXPECT_DOUBLE_EQ(one.auc, two.auc);
  EXPECT_DOUBLE_EQ(one.mrr, two.mrr);
}

TEST(Evaluate, TalliesSkippedImpressions) {
  const auto r = ev::evaluate({{"both", entries({{0.9, 1}, {0.1, 0}})},
                               {"pos-only", entries({{0.4, 1}, {0.6, 1}})},
                               {"neg-only", entries({{0.4, 0}})}},
                              true);
  EXPECT_EQ(r.auc_skipped, 2u);
  EXPECT_EQ(r.rank_skipped, 1u);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_DOUBLE_EQ(r.mrr, (1.0 + 0.75) / 2.0);
  ASSERT_EQ(r.per_impression.size(), 3u);
  EXPECT_FALSE(r.per_impression[2].mrr.has_value());
}

TEST(Evaluate, RejectsEmptyInput) { EXPECT_THROW(ev::evaluate({}), clozerec::ArgumentError); }

TEST(Evaluate, AllSkippedGivesNullInJson) {
  const auto r = ev::evaluate({{"x", entries({{0.4, 0}})}});
  EXPECT_TRUE(std::isnan(r.auc));
  const auto json = ev::to_json(r);
  EXPECT_NE(json.find("\"auc\": null"), std::string::npos);
  EXPECT_TRUE(std::isnan(ev::metrics_from_json(json).auc));
}

TEST(Evaluate, JsonRoundTrip) {
  const auto r = ev::evaluate({{"a", entries({{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.6, 0}})}});
  const auto back = ev::metrics_from_json(ev::to_json(r));
  EXPECT_EQ(back.auc, r.auc);
  EXPECT_EQ(back.mrr, r.mrr);
  EXPECT_EQ(back.ndcg5, r.ndcg5);
  EXPECT_EQ(back.ndcg10, r.ndcg10);
  EXPECT_EQ(back.impressions, 1u);
}

TEST(Evaluate, PerImpressionCsv) {
  const auto r = ev::evaluate({{"a", entries({{0.9, 1}, {0.8, 0}})}, {"b", entries({{0.1, 0}})}}, true);
  std::ostringstream out;
  ev::write_per_impression_csv(out, r);
  EXPECT_EQ(out.str(), "impression_id,auc,mrr,ndcg@5,ndcg@10\na,1,1,1,1\nb,,,,\n");
}
