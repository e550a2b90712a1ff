#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <memory>

#include <cmath>
#include <random>
#include <sstream>

#include "clozerec/backend.h"
#include "clozerec/errors.h"
#include "clozerec/training.h"
#include "fixtures.h"

namespace be = clozerec::backend;
namespace pr = clozerec::prompting;
namespace corpus = clozerec::corpus;
namespace tr = clozerec::training;

namespace {

std::vector<std::string> base_words() {
  return tr::vocabulary_words({}, pr::builtin_templates());
}

be::ModelHandle fresh_model(std::uint64_t seed = 5, std::vector<std::string> extra = {"news", "the"}) {
  auto words = base_words();
  words.insert(words.end(), extra.begin(), extra.end());
  return be::create_model("tiny-mlm", words, seed);
}

corpus::UserText user_with_titles(std::size_t n, std::size_t words_per_title) {
  corpus::UserText u;
  for (std::size_t i = 0; i < n; ++i) {
    u.segments.emplace_back(corpus::NclsMarker{});
    std::vector<std::string> w(words_per_title, "news");
    u.segments.emplace_back(corpus::HistoryTitle{"N" + std::to_string(i), w});
  }
  u.included_history_count = n;
  return u;
}

const corpus::CandidateText kCandidate{"C", {"the", "news"}};

be::TokenizedInput encode_with(be::ModelHandle& h, const std::string& template_id,
                               const corpus::UserText& user, std::size_t max_len = 512) {
  const auto spec = pr::find_template(pr::builtin_templates(), template_id);
  tr::prepare_model(h, spec, 1);
  return be::encode(h, pr::render(spec, user, kCandidate), max_len);
}

}  // namespace

TEST(Tokenizer, BasicTokenizeLowercasesAndSplitsPunctuation) {
  EXPECT_EQ(be::WordPieceTokenizer::basic_tokenize("User: Does it?"),
            (std::vector<std::string>{"user", ":", "does", "it", "?"}));
  EXPECT_EQ(be::WordPieceTokenizer::basic_tokenize("user's"),
            (std::vector<std::string>{"user", "'", "s"}));
}

TEST(Tokenizer, GreedyWordPieces) {
  be::Vocabulary v({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "play", "##ing", "##s"});
  be::WordPieceTokenizer t(&v);
  EXPECT_EQ(t.word_pieces("playing"), (std::vector<std::string>{"play", "##ing"}));
  EXPECT_EQ(t.word_pieces("plays"), (std::vector<std::string>{"play", "##s"}));
  EXPECT_EQ(t.word_pieces("xyz"), (std::vector<std::string>{"[UNK]"}));
}

TEST(Vocabulary, WriteReadRoundTrip) {
  const auto v = be::build_vocabulary({"b", "a", "b", "c"}, 10);
  std::stringstream buf;
  v.write(buf);
  const auto back = be::Vocabulary::read(buf);
  EXPECT_EQ(back.tokens(), v.tokens());
  EXPECT_EQ(v.token(0), "[PAD]");
}

TEST(ModelHandle, SpecialTokensExist) {
  const auto h = fresh_model();
  const auto& v = h.vocab();
  EXPECT_EQ(v.at("[PAD]"), h.special().pad);
  EXPECT_EQ(v.at("[CLS]"), h.special().cls);
  EXPECT_EQ(v.at("[SEP]"), h.special().sep);
  EXPECT_EQ(v.at("[MASK]"), h.special().mask);
  EXPECT_EQ(h.max_positions(), 512u);
}

TEST(Registration, NineTokensAddedOnceWithSharedIds) {
  auto h = fresh_model();
  const auto before = h.vocab().size();
  const auto spec = pr::find_template(pr::builtin_templates(), "continuous-action");
  be::register_virtual_tokens(h, spec.virtual_token_names(), 3);
  EXPECT_EQ(h.vocab().size(), before + 9);
  EXPECT_EQ(static_cast<std::size_t>(h.model().word_embeddings().rows()), before + 9);
  const auto snapshot = h.model().word_embeddings();
  be::register_virtual_tokens(h, spec.virtual_token_names(), 99);
  EXPECT_EQ(h.vocab().size(), before + 9);
  EXPECT_TRUE(h.model().word_embeddings() == snapshot);
  for (const auto& [name, id] : h.virtual_registry()) {
    EXPECT_GE(static_cast<std::size_t>(id), h.pretrained_vocab_size()) << name;
  }
}

TEST(Registration, NclsSharedAcrossTitles) {
  auto h = fresh_model();
  const auto in = encode_with(h, "discrete-utility", user_with_titles(3, 2));
  const auto ncls = *h.virtual_id(be::kNclsName);
  EXPECT_EQ(std::count(in.ids.begin(), in.ids.end(), ncls), 3);
}

TEST(Registration, CollisionWithPretrainedToken) {
  auto h = fresh_model();
  EXPECT_THROW(be::register_virtual_tokens(h, {"news"}, 1), clozerec::RegistrationError);
}

TEST(Registration, InitialScaleMatchesPretrainedSpread) {
  auto h = fresh_model();
  const auto& emb = h.model().word_embeddings();
  const auto pre = emb.topRows(static_cast<Eigen::Index>(h.pretrained_vocab_size()));
  const double sd = std::sqrt((pre.array() - pre.mean()).square().mean());
  std::vector<std::string> names;
  for (int i = 0; i < 200; ++i) names.push_back("[V_" + std::to_string(i) + "]");
  be::register_virtual_tokens(h, names, 4);
  const auto fresh = h.model().word_embeddings().bottomRows(200);
  const double got = std::sqrt(fresh.array().square().mean());
  EXPECT_NEAR(got / sd, 1.0, 0.05);
  EXPECT_NEAR(fresh.mean(), 0.0, 0.1 * sd);
}

TEST(Encode, FramesWithClsAndSep) {
  auto h = fresh_model();
  const auto in = encode_with(h, "discrete-utility", user_with_titles(2, 2));
  EXPECT_EQ(in.ids.front(), h.special().cls);
  EXPECT_EQ(in.ids.back(), h.special().sep);
  EXPECT_EQ(in.ids[in.mask_position], h.special().mask);
  EXPECT_EQ(in.truncation.dropped_history_entries, 0u);
  EXPECT_EQ(in.truncation.dropped_history_tokens, 0u);
  EXPECT_EQ(in.attention_mask, std::vector<std::uint8_t>(in.size(), 1));
}

TEST(Encode, UnregisteredVirtualTokenFails) {
  auto h = fresh_model();
  const auto spec = pr::find_template(pr::builtin_templates(), "continuous-utility");
  be::register_virtual_tokens(h, {be::kNclsName}, 1);
  EXPECT_THROW(be::encode(h, pr::render(spec, user_with_titles(1, 1), kCandidate)),
               clozerec::RegistrationError);
}

TEST(Encode, TruncationDropsOldestHistoryFirst) {
  auto h = fresh_model();
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t titles = 1 + rng() % 30;
    const std::size_t width = 1 + rng() % 6;
    const std::size_t max_len = 24 + rng() % 60;
    const auto user = user_with_titles(titles, width);
    const auto full = encode_with(h, "discrete-utility", user, 100000);
    be::TokenizedInput cut;
    try {
      cut = encode_with(h, "discrete-utility", user, max_len);
    } catch (const clozerec::EncodingOverflowError&) {
      continue;
    }
    ASSERT_LE(cut.size(), max_len);
    EXPECT_EQ(cut.ids[cut.mask_position], h.special().mask);
    const auto dropped = cut.truncation.dropped_history_tokens;
    EXPECT_EQ(cut.size() + dropped, full.size());
    EXPECT_EQ(dropped, cut.truncation.dropped_history_entries * (width + 1));
    // Surviving tokens keep their relative order: the cut sequence equals the full one with a
    // contiguous block of the oldest history removed.
    std::size_t first_history = 0;
    while (full.roles[first_history] != be::TokenRole::kNcls) ++first_history;
    std::vector<be::TokenId> expected(full.ids.begin(), full.ids.begin() + first_history);
    expected.insert(expected.end(), full.ids.begin() + first_history + dropped, full.ids.end());
    EXPECT_EQ(cut.ids, expected);
    if (cut.size() < full.size()) {
      EXPECT_GT(cut.size() + width + 1, max_len);  // no entry was dropped needlessly
    }
  }
}

TEST(Encode, OverflowWhenNothingLeftToDrop) {
  auto h = fresh_model();
  EXPECT_THROW(encode_with(h, "discrete-utility", user_with_titles(3, 2), 8),
               clozerec::EncodingOverflowError);
}

TEST(Answers, ResolveSingleTokensAndRejectMultiPiece) {
  auto h = fresh_model();
  const auto ids = be::resolve_answers(h, {"good", "bad"});
  EXPECT_NE(ids.positive, ids.negative);
  try {
    be::resolve_answers(h, {"goodish", "bad"});
    FAIL() << "expected ArgumentError";
  } catch (const clozerec::ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("good"), std::string::npos) << e.what();
  }
}

class Scoring : public ::testing::Test {
 protected:
  void SetUp() override {
    handle_ = std::make_unique<be::ModelHandle>(fresh_model(21));
    spec_ = std::make_unique<pr::TemplateSpec>(pr::find_template(pr::builtin_templates(), "hybrid-emotion"));
    tr::prepare_model(*handle_, *spec_, 2);
    for (std::size_t i = 0; i < 4; ++i) {
      inputs_.push_back(be::encode(*handle_, pr::render(*spec_, user_with_titles(i + 1, i + 1), kCandidate)));
    }
  }
  std::unique_ptr<be::ModelHandle> handle_;
  std::unique_ptr<pr::TemplateSpec> spec_;
  std::vector<be::TokenizedInput> inputs_;
};

TEST_F(Scoring, ComplementaryProbabilitiesAndSwapSymmetry) {
  const auto ans = be::resolve_answers(*handle_, spec_->answers());
  const be::AnswerIds swapped{ans.negative, ans.positive};
  for (const auto& in : inputs_) {
    const auto f = be::forward_mask(*handle_, in, ans);
    const auto g = be::forward_mask(*handle_, in, swapped);
    const double p_neg = g.p_positive;
    EXPECT_GT(f.p_positive, 0.0);
    EXPECT_LT(f.p_positive, 1.0);
    EXPECT_EQ(f.p_positive + (1.0 - f.p_positive), 1.0);
    EXPECT_NEAR(f.p_positive, 1.0 - p_neg, 1e-12);
    const double direct = 1.0 / (1.0 + std::exp(f.logits[1] - f.logits[0]));
    EXPECT_NEAR(f.p_positive, direct, 1e-14);
  }
}

TEST_F(Scoring, EqualLogitsGiveOneHalf) {
  const auto ans = be::resolve_answers(*handle_, spec_->answers());
  EXPECT_DOUBLE_EQ(be::forward_mask(*handle_, inputs_[0], {ans.positive, ans.positive}).p_positive, 0.5);
}

TEST_F(Scoring, BatchMatchesSingleItems) {
  const auto ans = be::resolve_answers(*handle_, spec_->answers());
  const auto batch = be::score_mask(*handle_, inputs_, ans);
  ASSERT_EQ(batch.size(), inputs_.size());
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    EXPECT_NEAR(batch[i], be::score_mask(*handle_, {inputs_[i]}, ans)[0], 1e-5);
    EXPECT_NEAR(batch[i], be::forward_mask(*handle_, inputs_[i], ans).p_positive, 1e-12);
  }
}

TEST_F(Scoring, ContractViolations) {
  const auto ans = be::resolve_answers(*handle_, spec_->answers());
  EXPECT_THROW(be::score_mask(*handle_, {}, ans), clozerec::ContractViolation);
  auto bad = inputs_[0];
  bad.mask_position = bad.size() + 3;
  EXPECT_THROW(be::score_mask(*handle_, {bad}, ans), clozerec::ContractViolation);
}

TEST_F(Scoring, FullVocabModeIsAProbability) {
  const auto ans = be::resolve_answers(*handle_, spec_->answers());
  const auto p = be::score_mask(*handle_, inputs_, ans, be::ScoreMode::kFullVocab);
  for (double v : p) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST_F(Scoring, AttentionRowsSumToOne) {
  const auto depth = handle_->model().config().layers;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto w = be::attention_weights(*handle_, inputs_[3], l);
    EXPECT_EQ(static_cast<std::size_t>(w.rows()), handle_->model().config().heads);
    EXPECT_EQ(static_cast<std::size_t>(w.cols()), inputs_[3].size());
    for (Eigen::Index h = 0; h < w.rows(); ++h) EXPECT_NEAR(w.row(h).sum(), 1.0, 1e-5);
  }
  EXPECT_THROW(be::attention_weights(*handle_, inputs_[0], depth), clozerec::ArgumentError);
}

TEST_F(Scoring, AttentionCsvTokenTextsMatchVocabulary) {
  std::ostringstream out;
  be::write_attention_csv_header(out);
  be::write_attention_csv(out, *handle_, inputs_[1], 0, be::attention_weights(*handle_, inputs_[1], 0));
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "layer,head,token_index,token_text,weight");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 5u) << line;
    const auto t = std::stoul(cells[2]);
    EXPECT_EQ(cells[3], handle_->vocab().token(inputs_[1].ids[t]));
    ++rows;
  }
  EXPECT_EQ(rows, handle_->model().config().heads * inputs_[1].size());
}

TEST_F(Scoring, SaveLoadRoundTrip) {
  fixtures::TempDir dir("model");
  handle_->save(dir.path());
  const auto back = be::ModelHandle::load(dir.path());
  EXPECT_EQ(back.vocab().tokens(), handle_->vocab().tokens());
  EXPECT_EQ(back.virtual_registry(), handle_->virtual_registry());
  EXPECT_EQ(back.pretrained_vocab_size(), handle_->pretrained_vocab_size());
  const auto ans = be::resolve_answers(*handle_, spec_->answers());
  EXPECT_EQ(be::score_mask(back, inputs_, ans), be::score_mask(*handle_, inputs_, ans));
}

TEST(ModelResolution, CacheDirectoryById) {
  fixtures::TempDir cache("cache");
  auto h = fresh_model(6);
  h.save(cache.path() / "my-model");
  ::setenv(be::kModelCacheEnv, cache.path().c_str(), 1);
  const auto loaded = be::create_model("my-model", {}, 0);
  ::unsetenv(be::kModelCacheEnv);
  EXPECT_EQ(loaded.vocab().tokens(), h.vocab().tokens());
  EXPECT_THROW(be::create_model("no-such-model", {}, 0), clozerec::ArgumentError);
}

TEST(FreezeBackbone, OnlyVirtualRowsStayTrainable) {
  auto h = fresh_model();
  tr::prepare_model(h, pr::find_template(pr::builtin_templates(), "continuous-relevance"), 1);
  h.set_backbone_frozen(true);
  for (const auto& p : h.model().parameters()) {
    if (p.name == "embeddings.word") {
      EXPECT_TRUE(p.trainable);
      EXPECT_EQ(static_cast<std::size_t>(p.first_trainable_row), h.pretrained_vocab_size());
    } else {
      EXPECT_FALSE(p.trainable) << p.name;
    }
  }
}
