#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "clozerec/errors.h"
#include "clozerec/training.h"
#include "fixtures.h"
#include "oracles.h"

namespace be = clozerec::backend;
namespace corpus = clozerec::corpus;
namespace pr = clozerec::prompting;
namespace tr = clozerec::training;

TEST(Loss, KnownValues) {
  EXPECT_NEAR(tr::compute_loss(std::vector<double>{0.5}, std::vector<int>{1}), std::log(2.0), 1e-12);
  EXPECT_NEAR(tr::compute_loss(std::vector<double>{0.5}, std::vector<int>{0}), std::log(2.0), 1e-12);
  EXPECT_NEAR(tr::compute_loss(std::vector<double>{0.9}, std::vector<int>{1}), 0.105360515657826, 1e-12);
  EXPECT_NEAR(tr::compute_loss(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}),
              0.105360515657826, 1e-12);
}

TEST(Loss, ClampKeepsSaturatedProbabilitiesFinite) {
  const double l = tr::compute_loss(std::vector<double>{0.0, 1.0}, std::vector<int>{1, 0});
  EXPECT_NEAR(l, -std::log(tr::kLossEpsilon), 1e-6);
  const auto g = tr::loss_gradient(std::vector<double>{0.0, 0.3}, std::vector<int>{1, 1});
  EXPECT_EQ(g[0], 0.0);
  EXPECT_NEAR(g[1], -1.0 / (2 * 0.3), 1e-12);
}

TEST(Loss, MatchesOracleOnRandomBatches) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 64;
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = trial % 10 == 0 ? std::round(unit(rng)) : unit(rng);  // some exact 0/1 inputs
      y[i] = static_cast<int>(rng() % 2);
    }
    EXPECT_NEAR(tr::compute_loss(p, y), oracle::cross_entropy(p, y, 1e-7), 1e-9);
  }
}

TEST(Loss, PermutationInvariant) {
  std::mt19937_64 rng(3);
  std::vector<double> p{0.1, 0.7, 0.35, 0.99, 0.5};
  std::vector<int> y{0, 1, 1, 0, 1};
  const double base = tr::compute_loss(p, y);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4};
  for (int t = 0; t < 20; ++t) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> pp;
    std::vector<int> yy;
    for (auto i : idx) {
      pp.push_back(p[i]);
      yy.push_back(y[i]);
    }
    EXPECT_NEAR(tr::compute_loss(pp, yy), base, 1e-15);
  }
}

TEST(Loss, ContractViolations) {
  EXPECT_THROW(tr::compute_loss(std::vector<double>{0.5, 0.5}, std::vector<int>{1}),
               clozerec::ContractViolation);
  EXPECT_THROW(tr::compute_loss(std::vector<double>{}, std::vector<int>{}), clozerec::ContractViolation);
}

namespace {

std::vector<be::Parameter> random_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<be::Parameter> ps;
  for (int k = 0; k < 3; ++k) {
    be::Parameter p;
    p.name = "p" + std::to_string(k);
    p.value = be::Matrix::NullaryExpr(4, 5, [&] { return n(rng); });
    p.grad = be::Matrix::NullaryExpr(4, 5, [&] { return n(rng); });
    p.decay = k != 1;
    ps.push_back(std::move(p));
  }
  return ps;
}

}  // namespace

TEST(AdamW, ZeroLearningRateLeavesWeightsBitIdentical) {
  auto ps = random_params(1);
  const auto before = ps;
  tr::AdamW opt({0.0, 0.01});
  for (int i = 0; i < 3; ++i) opt.step(ps);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_TRUE(ps[i].value == before[i].value);
}

TEST(AdamW, FirstStepMovesEachWeightByLearningRate) {
  auto ps = random_params(2);
  const auto before = ps;
  tr::AdamW opt({1e-3, 0.0});
  opt.step(ps);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const be::Matrix expected =
        before[i].value.array() - 1e-3 * before[i].grad.array().sign() *
                                      (before[i].grad.array().abs() / (before[i].grad.array().abs() + 1e-8));
    EXPECT_LT((ps[i].value - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AdamW, DecayOnlyTouchesFlaggedParameters) {
  auto ps = random_params(3);
  for (auto& p : ps) p.grad.setZero();
  const auto before = ps;
  tr::AdamW opt({0.1, 0.5});
  opt.step(ps);
  EXPECT_TRUE(ps[1].value == before[1].value);
  EXPECT_LT((ps[0].value - before[0].value * (1 - 0.1 * 0.5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AdamW, FrozenRowsUntouched) {
  auto ps = random_params(4);
  ps[0].first_trainable_row = 2;
  ps[2].trainable = false;
  const auto before = ps;
  tr::AdamW opt({0.1, 0.1});
  opt.step(ps);
  EXPECT_TRUE(ps[0].value.topRows(2) == before[0].value.topRows(2));
  EXPECT_FALSE(ps[0].value.bottomRows(2) == before[0].value.bottomRows(2));
  EXPECT_TRUE(ps[2].value == before[2].value);
}

TEST(TrainConfig, Validation) {
  tr::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.learning_rate = -1;
  EXPECT_THROW(bad.validate(), clozerec::ArgumentError);
  bad = c;
  bad.learning_rate = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(bad.validate(), clozerec::ArgumentError);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), clozerec::ArgumentError);
  bad = c;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), clozerec::ArgumentError);
  for (double f : {0.0, -0.5, 1.5}) {
    bad = c;
    bad.few_shot_fraction = f;
    EXPECT_THROW(bad.validate(), clozerec::ArgumentError) << f;
  }
}

class Training : public ::testing::Test {
 protected:
  void SetUp() override {
    fixtures::SmallCorpus data(40, 5);
    train_ = corpus::assemble_training_set(
        std::vector<corpus::ImpressionRecord>(data.impressions.begin(), data.impressions.begin() + 30),
        data.catalog, 4, 9);
    valid_ = corpus::assemble_evaluation_set(
        std::vector<corpus::ImpressionRecord>(data.impressions.begin() + 30, data.impressions.end()),
        data.catalog);
    all_ = train_;
    all_.insert(all_.end(), valid_.begin(), valid_.end());
  }

  be::ModelHandle model(std::uint64_t seed = 11) const { return fixtures::tiny_model(all_, seed); }

  static tr::TrainConfig quick(std::size_t epochs = 1) {
    tr::TrainConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 16;
    c.epochs = epochs;
    c.rng_seed = 4;
    return c;
  }

  std::vector<corpus::Sample> train_, valid_, all_;
};

TEST_F(Training, DeterministicLossTrace) {
  const auto spec = pr::find_template(pr::builtin_templates(), "continuous-utility");
  auto a = model();
  auto b = model();
  const auto ra = tr::train(quick(), train_, valid_, spec, a);
  const auto rb = tr::train(quick(), train_, valid_, spec, b);
  ASSERT_EQ(ra.steps.size(), rb.steps.size());
  ASSERT_FALSE(ra.steps.empty());
  for (std::size_t i = 0; i < ra.steps.size(); ++i) EXPECT_EQ(ra.steps[i].loss, rb.steps[i].loss);
  EXPECT_EQ(ra.best.validation.auc, rb.best.validation.auc);
  EXPECT_EQ(ra.steps.size(), (train_.size() + 15) / 16);
}

TEST_F(Training, StepCallbackSeesEveryStep) {
  const auto spec = pr::find_template(pr::builtin_templates(), "discrete-relevance");
  auto m = model();
  std::size_t calls = 0;
  const auto r = tr::train(quick(), train_, valid_, spec, m, [&](const tr::StepLog& s) {
    ++calls;
    EXPECT_EQ(s.step, calls);
    EXPECT_TRUE(std::isfinite(s.loss));
  });
  EXPECT_EQ(calls, r.steps.size());
}

TEST_F(Training, FewShotHalvesTrainingImpressions) {
  const auto spec = pr::find_template(pr::builtin_templates(), "discrete-emotion");
  auto cfg = quick();
  cfg.learning_rate = 0.0;
  cfg.few_shot_fraction = 0.5;
  auto m = model();
  const auto r = tr::train(cfg, train_, valid_, spec, m);
  EXPECT_EQ(r.train_impressions, corpus::count_impressions(train_) / 2);
  EXPECT_LT(r.train_samples, train_.size());
  EXPECT_EQ(r.best.validation.impressions, corpus::count_impressions(valid_));
}

TEST_F(Training, BestEpochHasHighestValidationAuc) {
  const auto spec = pr::find_template(pr::builtin_templates(), "discrete-utility");
  auto m = model();
  const auto r = tr::train(quick(3), train_, valid_, spec, m);
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : r.epochs) {
    if (e.validation.auc > best) {
      best = e.validation.auc;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best.epoch, best_epoch);
  EXPECT_EQ(r.best.validation.auc, best);
  // The returned handle holds the selected weights.
  const auto again = tr::evaluate_samples(m, spec, valid_, 512);
  EXPECT_DOUBLE_EQ(again.auc, best);
}

TEST_F(Training, NonFiniteLossAborts) {
  const auto spec = pr::find_template(pr::builtin_templates(), "discrete-action");
  auto m = model();
  m.model().parameter("layer0.ffn.in.weight").value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    tr::train(quick(), train_, valid_, spec, m);
    FAIL() << "expected TrainingAborted";
  } catch (const clozerec::TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST_F(Training, FrozenBackboneOnlyMovesVirtualRows) {
  const auto spec = pr::find_template(pr::builtin_templates(), "continuous-action");
  auto m = model();
  tr::prepare_model(m, spec, 4);
  const auto before = m.model().parameters();
  auto cfg = quick();
  cfg.freeze_backbone = true;
  cfg.learning_rate = 1e-2;
  tr::train(cfg, train_, {}, spec, m);
  const auto& after = m.model().parameters();
  const auto pre = static_cast<Eigen::Index>(m.pretrained_vocab_size());
  for (std::size_t i = 0; i < after.size(); ++i) {
    if (after[i].name == "embeddings.word") {
      EXPECT_TRUE(after[i].value.topRows(pre) == before[i].value.topRows(pre));
      const auto rows = after[i].value.rows() - pre;
      EXPECT_FALSE(after[i].value.bottomRows(rows) == before[i].value.bottomRows(rows));
    } else {
      EXPECT_TRUE(after[i].value == before[i].value) << after[i].name;
    }
  }
}

TEST_F(Training, MemorizesASmallSet) {
  std::vector<corpus::Sample> small(train_.begin(), train_.begin() + 32);
  const auto spec = pr::find_template(pr::builtin_templates(), "discrete-utility");
  auto m = model();
  auto cfg = quick(30);
  cfg.batch_size = 8;
  cfg.early_stop_drops = 0;
  const auto r = tr::train(cfg, small, {}, spec, m);
  EXPECT_LT(r.steps.back().loss, 0.2);
  const auto report = tr::evaluate_samples(m, spec, small, 512);
  EXPECT_GE(report.auc, 0.99);
}
