#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "clozerec/errors.h"
#include "clozerec/prompting.h"

namespace pr = clozerec::prompting;
namespace corpus = clozerec::corpus;

namespace {

struct GoldenRow {
  std::string id, positive, negative, rendered;
};

std::vector<GoldenRow> golden_rows() {
  std::ifstream in(std::string(CLOZEREC_TEST_DATA_DIR) + "/templates_golden.tsv");
  std::vector<GoldenRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    GoldenRow r;
    std::getline(cells, r.id, '\t');
    std::getline(cells, r.positive, '\t');
    std::getline(cells, r.negative, '\t');
    std::getline(cells, r.rendered);
    rows.push_back(r);
  }
  return rows;
}

corpus::UserText golden_user() {
  corpus::UserText u;
  u.segments = {corpus::NclsMarker{}, corpus::HistoryTitle{"N1", {"alpha", "beta"}},
                corpus::NclsMarker{}, corpus::HistoryTitle{"N2", {"gamma"}}};
  u.included_history_count = 2;
  return u;
}

const corpus::CandidateText kCandidate{"N3", {"delta", "epsilon"}};

std::size_t count_masks(const pr::PromptSequence& p) {
  std::size_t n = 0;
  for (const auto& s : p.segments) n += std::holds_alternative<pr::MaskSlot>(s) ? 1 : 0;
  return n;
}

std::size_t count_virtual(const pr::PromptSequence& p) {
  std::size_t n = 0;
  for (const auto& s : p.segments) n += std::holds_alternative<pr::VirtualToken>(s) ? 1 : 0;
  return n;
}

}  // namespace

TEST(Templates, GoldenRenderings) {
  const auto rows = golden_rows();
  const auto templates = pr::builtin_templates();
  ASSERT_EQ(rows.size(), 12u);
  ASSERT_EQ(templates.size(), 12u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& spec = templates[i];
    EXPECT_EQ(spec.id(), rows[i].id);
    EXPECT_EQ(spec.answers().positive, rows[i].positive) << spec.id();
    EXPECT_EQ(spec.answers().negative, rows[i].negative) << spec.id();
    EXPECT_EQ(pr::render(spec, golden_user(), kCandidate).text(), rows[i].rendered) << spec.id();
  }
}

TEST(Templates, VirtualTokenCounts) {
  for (const auto& spec : pr::builtin_templates(pr::VirtualCounts::uniform(3))) {
    const auto p = pr::render(spec, golden_user(), kCandidate);
    EXPECT_EQ(count_masks(p), 1u) << spec.id();
    switch (spec.kind()) {
      case pr::TemplateKind::kDiscrete: EXPECT_EQ(count_virtual(p), 0u); break;
      case pr::TemplateKind::kContinuous: EXPECT_EQ(count_virtual(p), 9u) << spec.id(); break;
      case pr::TemplateKind::kHybrid: EXPECT_EQ(count_virtual(p), 6u) << spec.id(); break;
    }
    EXPECT_EQ(spec.virtual_token_count(), count_virtual(p));
  }
}

TEST(Templates, NullPromptHasNoVirtualTokens) {
  const auto spec = pr::find_template(pr::builtin_templates(pr::VirtualCounts::uniform(0)),
                                      "continuous-action");
  const auto p = pr::render(spec, golden_user(), kCandidate);
  EXPECT_EQ(count_virtual(p), 0u);
  EXPECT_EQ(count_masks(p), 1u);
  EXPECT_EQ(p.text(), "[NCLS] alpha beta [NCLS] gamma [SEP] delta epsilon [SEP] [MASK]");
}

TEST(Templates, DiscreteActionAsksTheQuestion) {
  const auto spec = pr::find_template(pr::builtin_templates(), "discrete-action");
  EXPECT_NE(spec.pattern_text().find("[SEP] Does the user click the news? [MASK]"), std::string::npos);
}

TEST(Templates, WithCountsAndNames) {
  const auto spec = pr::find_template(pr::builtin_templates(), "hybrid-utility")
                        .with_counts({2, 1, 5});
  EXPECT_EQ(spec.counts(), (pr::VirtualCounts{2, 1, 0}));
  EXPECT_EQ(spec.virtual_token_names(), (std::vector<std::string>{"[P_1]", "[P_2]", "[Q_1]"}));
}

TEST(Templates, UnknownIdListsBuiltins) {
  try {
    pr::find_template(pr::builtin_templates(), "discrete-magic");
    FAIL() << "expected ArgumentError";
  } catch (const clozerec::ArgumentError& e) {
    const std::string what = e.what();
    for (const auto& t : pr::builtin_templates()) EXPECT_NE(what.find(t.id()), std::string::npos);
  }
}

TEST(Templates, ValidationErrors) {
  const auto ans = pr::default_answers(pr::Perspective::kUtility);
  const auto make = [&](const std::string& pattern, pr::TemplateKind kind, pr::AnswerSpace a) {
    return pr::TemplateSpec("t", kind, pr::Perspective::kUtility, pr::parse_pattern(pattern),
                            pr::VirtualCounts::uniform(2), a);
  };
  EXPECT_NO_THROW(make("<USER> <CANDIDATE> [MASK]", pr::TemplateKind::kDiscrete, ans));
  EXPECT_THROW(make("<USER> <CANDIDATE> [MASK] [MASK]", pr::TemplateKind::kDiscrete, ans),
               clozerec::TemplateError);
  EXPECT_THROW(make("<USER> <CANDIDATE>", pr::TemplateKind::kDiscrete, ans), clozerec::TemplateError);
  EXPECT_THROW(make("<CANDIDATE> [MASK]", pr::TemplateKind::kDiscrete, ans), clozerec::TemplateError);
  EXPECT_THROW(make("[P...] <USER> <CANDIDATE> [MASK]", pr::TemplateKind::kDiscrete, ans),
               clozerec::TemplateError);
  EXPECT_THROW(make("[P...] <USER> <CANDIDATE> [M...] [MASK]", pr::TemplateKind::kHybrid, ans),
               clozerec::TemplateError);
  EXPECT_THROW(make("<USER> <CANDIDATE> [MASK]", pr::TemplateKind::kDiscrete, {"good", "good"}),
               clozerec::TemplateError);
}

TEST(Templates, JsonRoundTrip) {
  const auto templates = pr::builtin_templates(pr::VirtualCounts{1, 2, 3});
  std::stringstream buf;
  pr::write_templates_json(buf, templates);
  const auto back = pr::read_templates_json(buf);
  ASSERT_EQ(back.size(), templates.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id(), templates[i].id());
    EXPECT_EQ(back[i].segments_text(), templates[i].segments_text());
    EXPECT_EQ(back[i].answers(), templates[i].answers());
    EXPECT_EQ(back[i].counts(), templates[i].counts());
  }
}

TEST(Verbalizer, MapsLabels) {
  const auto a = pr::default_answers(pr::Perspective::kAction);
  EXPECT_EQ(pr::verbalize(1, a), "yes");
  EXPECT_EQ(pr::verbalize(0, a), "no");
  EXPECT_THROW(pr::verbalize(2, a), clozerec::ArgumentError);
}

TEST(Render, MaskIndexPointsAtMask) {
  for (const auto& spec : pr::builtin_templates()) {
    const auto p = pr::render(spec, golden_user(), kCandidate);
    ASSERT_LT(p.mask_index, p.segments.size());
    EXPECT_TRUE(std::holds_alternative<pr::MaskSlot>(p.segments[p.mask_index])) << spec.id();
  }
}
