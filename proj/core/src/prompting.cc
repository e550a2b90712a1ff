#include "clozerec/prompting.h"

#include <algorithm>
#include <array>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace clozerec::prompting {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::array<TemplateKind, 3> kKinds = {TemplateKind::kDiscrete, TemplateKind::kContinuous,
                                                TemplateKind::kHybrid};
constexpr std::array<Perspective, 4> kPerspectives = {Perspective::kRelevance, Perspective::kEmotion,
                                                      Perspective::kAction, Perspective::kUtility};

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::string_view to_string(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::kDiscrete: return "discrete";
    case TemplateKind::kContinuous: return "continuous";
    case TemplateKind::kHybrid: return "hybrid";
  }
  return "?";
}

std::string_view to_string(Perspective perspective) {
  switch (perspective) {
    case Perspective::kRelevance: return "relevance";
    case Perspective::kEmotion: return "emotion";
    case Perspective::kAction: return "action";
    case Perspective::kUtility: return "utility";
  }
  return "?";
}

std::string_view to_string(VirtualGroup group) {
  switch (group) {
    case VirtualGroup::kP: return "P";
    case VirtualGroup::kQ: return "Q";
    case VirtualGroup::kM: return "M";
  }
  return "?";
}

TemplateKind parse_kind(std::string_view text) {
  for (auto k : kKinds) {
    if (to_string(k) == text) return k;
  }
  throw TemplateError("unknown template kind: " + std::string(text));
}

Perspective parse_perspective(std::string_view text) {
  for (auto p : kPerspectives) {
    if (to_string(p) == text) return p;
  }
  throw TemplateError("unknown template perspective: " + std::string(text));
}

std::string virtual_token_name(VirtualToken token) {
  return "[" + std::string(to_string(token.group)) + "_" + std::to_string(token.index) + "]";
}

std::size_t VirtualCounts::count(VirtualGroup group) const {
  switch (group) {
    case VirtualGroup::kP: return p;
    case VirtualGroup::kQ: return q;
    case VirtualGroup::kM: return m;
  }
  return 0;
}

TemplateSpec::TemplateSpec(std::string id, TemplateKind kind, Perspective perspective,
                           std::vector<PatternElement> pattern, VirtualCounts counts,
                           AnswerSpace answers)
    : id_(std::move(id)),
      kind_(kind),
      perspective_(perspective),
      pattern_(std::move(pattern)),
      counts_(counts),
      answers_(std::move(answers)) {
  if (kind_ == TemplateKind::kDiscrete) counts_ = {0, 0, 0};
  if (kind_ == TemplateKind::kHybrid) counts_.m = 0;

  std::size_t masks = 0, users = 0, candidates = 0;
  std::set<VirtualGroup> runs;
  for (const auto& el : pattern_) {
    std::visit(overloaded{
                   [&](const MaskSlot&) { ++masks; },
                   [&](const UserSlot&) { ++users; },
                   [&](const CandidateSlot&) { ++candidates; },
                   [&](const VirtualRun& run) {
                     if (kind_ == TemplateKind::kDiscrete) {
                       throw TemplateError(id_ + ": discrete templates take no virtual tokens");
                     }
                     if (kind_ == TemplateKind::kHybrid && run.group == VirtualGroup::kM) {
                       throw TemplateError(id_ + ": hybrid templates take no M tokens");
                     }
                     if (!runs.insert(run.group).second) {
                       throw TemplateError(id_ + ": virtual group " +
                                           std::string(to_string(run.group)) + " appears twice");
                     }
                   },
                   [](const auto&) {},
               },
               el);
  }
  if (masks != 1) {
    throw TemplateError(id_ + ": expected exactly one [MASK], found " + std::to_string(masks));
  }
  if (users != 1 || candidates != 1) {
    throw TemplateError(id_ + ": expected exactly one <USER> and one <CANDIDATE>");
  }
  if (answers_.positive.empty() || answers_.negative.empty() ||
      answers_.positive == answers_.negative) {
    throw TemplateError(id_ + ": answer words must be two distinct non-empty words");
  }
  // Groups absent from the pattern contribute no tokens.
  for (auto g : {VirtualGroup::kP, VirtualGroup::kQ, VirtualGroup::kM}) {
    if (runs.count(g) == 0) {
      (g == VirtualGroup::kP ? counts_.p : g == VirtualGroup::kQ ? counts_.q : counts_.m) = 0;
    }
  }

  for (const auto& el : pattern_) {
    std::visit(overloaded{
                   [&](const VirtualRun& run) {
                     for (std::size_t i = 1; i <= counts_.count(run.group); ++i) {
                       segments_.emplace_back(VirtualToken{run.group, i});
                     }
                   },
                   [&](const auto& other) { segments_.emplace_back(other); },
               },
               el);
  }
}

std::size_t TemplateSpec::virtual_token_count() const {
  return static_cast<std::size_t>(std::count_if(segments_.begin(), segments_.end(), [](const auto& s) {
    return std::holds_alternative<VirtualToken>(s);
  }));
}

std::vector<std::string> TemplateSpec::virtual_token_names() const {
  std::vector<std::string> names;
  for (const auto& s : segments_) {
    if (const auto* v = std::get_if<VirtualToken>(&s)) names.push_back(virtual_token_name(*v));
  }
  return names;
}

TemplateSpec TemplateSpec::with_counts(VirtualCounts counts) const {
  return TemplateSpec(id_, kind_, perspective_, pattern_, counts, answers_);
}

namespace {

std::string element_text(const PatternElement& el) {
  return std::visit(overloaded{
                        [](const Literal& l) { return join(l.words); },
                        [](const UserSlot&) { return std::string("<USER>"); },
                        [](const CandidateSlot&) { return std::string("<CANDIDATE>"); },
                        [](const MaskSlot&) { return std::string("[MASK]"); },
                        [](const SepMarker&) { return std::string("[SEP]"); },
                        [](const VirtualRun& r) {
                          return "[" + std::string(to_string(r.group)) + "...]";
                        },
                    },
                    el);
}

std::string segment_text(const Segment& seg) {
  return std::visit(overloaded{
                        [](const Literal& l) { return join(l.words); },
                        [](const UserSlot&) { return std::string("<USER>"); },
                        [](const CandidateSlot&) { return std::string("<CANDIDATE>"); },
                        [](const MaskSlot&) { return std::string("[MASK]"); },
                        [](const SepMarker&) { return std::string("[SEP]"); },
                        [](const VirtualToken& v) { return virtual_token_name(v); },
                    },
                    seg);
}

template <typename Range, typename Fn>
std::string join_nonempty(const Range& items, Fn fn) {
  std::string out;
  for (const auto& item : items) {
    auto piece = fn(item);
    if (piece.empty()) continue;
    if (!out.empty()) out += ' ';
    out += piece;
  }
  return out;
}

}  // namespace

std::string TemplateSpec::pattern_text() const { return join_nonempty(pattern_, element_text); }

std::string TemplateSpec::segments_text() const { return join_nonempty(segments_, segment_text); }

std::vector<PatternElement> parse_pattern(std::string_view text) {
  std::vector<PatternElement> out;
  std::istringstream in{std::string(text)};
  for (std::string tok; in >> tok;) {
    if (tok == "<USER>") out.emplace_back(UserSlot{});
    else if (tok == "<CANDIDATE>") out.emplace_back(CandidateSlot{});
    else if (tok == "[MASK]") out.emplace_back(MaskSlot{});
    else if (tok == "[SEP]") out.emplace_back(SepMarker{});
    else if (tok == "[P...]") out.emplace_back(VirtualRun{VirtualGroup::kP});
    else if (tok == "[Q...]") out.emplace_back(VirtualRun{VirtualGroup::kQ});
    else if (tok == "[M...]") out.emplace_back(VirtualRun{VirtualGroup::kM});
    else if (!out.empty() && std::holds_alternative<Literal>(out.back())) {
      std::get<Literal>(out.back()).words.push_back(tok);
    } else {
      out.emplace_back(Literal{{tok}});
    }
  }
  return out;
}

AnswerSpace default_answers(Perspective perspective) {
  switch (perspective) {
    case Perspective::kRelevance: return {"related", "unrelated"};
    case Perspective::kEmotion: return {"interesting", "boring"};
    case Perspective::kAction: return {"yes", "no"};
    case Perspective::kUtility: return {"good", "bad"};
  }
  throw TemplateError("unknown perspective");
}

std::string template_id(TemplateKind kind, Perspective perspective) {
  return std::string(to_string(kind)) + "-" + std::string(to_string(perspective));
}

namespace {

std::string_view builtin_pattern(TemplateKind kind, Perspective perspective) {
  using K = TemplateKind;
  using P = Perspective;
  static constexpr std::string_view kHybridPrefix = "[P...] <USER> [SEP] [Q...] <CANDIDATE> [SEP] ";
  switch (kind) {
    case K::kDiscrete:
      switch (perspective) {
        case P::kRelevance: return "<CANDIDATE> is [MASK] to <USER>";
        case P::kEmotion:
          return "The user feels [MASK] about <CANDIDATE> according to his area of interest <USER>";
        case P::kAction:
          return "User: <USER> [SEP] News: <CANDIDATE> [SEP] Does the user click the news? [MASK]";
        case P::kUtility:
          return "Recommending <CANDIDATE> to the user is a [MASK] choice according to <USER>";
      }
      break;
    case K::kContinuous:
      switch (perspective) {
        case P::kRelevance: return "[Q...] <CANDIDATE> [M...] [MASK] [P...] <USER>";
        case P::kEmotion: return "[M...] [MASK] [Q...] <CANDIDATE> [P...] <USER>";
        case P::kAction: return "[P...] <USER> [SEP] [Q...] <CANDIDATE> [SEP] [M...] [MASK]";
        case P::kUtility: return "[Q...] <CANDIDATE> [M...] [MASK] [P...] <USER>";
      }
      break;
    case K::kHybrid: {
      static const std::string relevance =
          std::string(kHybridPrefix) + "This news is [MASK] to the user's area of interest";
      static const std::string emotion =
          std::string(kHybridPrefix) + "The user feels [MASK] about the news";
      static const std::string action =
          std::string(kHybridPrefix) + "Does the user click the news? [MASK]";
      static const std::string utility =
          std::string(kHybridPrefix) + "Recommending the news to the user is a [MASK] choice";
      switch (perspective) {
        case P::kRelevance: return relevance;
        case P::kEmotion: return emotion;
        case P::kAction: return action;
        case P::kUtility: return utility;
      }
      break;
    }
  }
  throw TemplateError("no built-in pattern");
}

}  // namespace

std::vector<TemplateSpec> builtin_templates(VirtualCounts counts) {
  std::vector<TemplateSpec> out;
  for (auto kind : kKinds) {
    for (auto perspective : kPerspectives) {
      out.emplace_back(template_id(kind, perspective), kind, perspective,
                       parse_pattern(builtin_pattern(kind, perspective)), counts,
                       default_answers(perspective));
    }
  }
  return out;
}

const TemplateSpec& find_template(const std::vector<TemplateSpec>& templates, std::string_view id) {
  for (const auto& t : templates) {
    if (t.id() == id) return t;
  }
  std::string known;
  for (const auto& t : templates) known += "\n  " + t.id();
  throw ArgumentError("unknown template '" + std::string(id) + "'; available templates:" + known);
}

namespace {

nlohmann::json to_json_record(const TemplateSpec& spec) {
  return {
      {"id", spec.id()},
      {"kind", to_string(spec.kind())},
      {"perspective", to_string(spec.perspective())},
      {"pattern", spec.pattern_text()},
      {"n", {spec.counts().p, spec.counts().q, spec.counts().m}},
      {"answers", {spec.answers().positive, spec.answers().negative}},
  };
}

TemplateSpec from_json_record(const nlohmann::json& j) {
  try {
    const auto kind = parse_kind(j.at("kind").get<std::string>());
    VirtualCounts counts{0, 0, 0};
    if (j.contains("n")) {
      const auto n = j.at("n").get<std::vector<std::size_t>>();
      if (n.size() != 3) throw TemplateError("\"n\" must list three counts");
      counts = {n[0], n[1], n[2]};
    }
    const auto answers = j.at("answers").get<std::vector<std::string>>();
    if (answers.size() != 2) throw TemplateError("\"answers\" must hold exactly two words");
    return TemplateSpec(j.at("id").get<std::string>(), kind,
                        parse_perspective(j.at("perspective").get<std::string>()),
                        parse_pattern(j.at("pattern").get<std::string>()), counts,
                        {answers[0], answers[1]});
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError(std::string("malformed template record: ") + e.what());
  }
}

}  // namespace

std::vector<TemplateSpec> read_templates_json(std::istream& in) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError(std::string("template file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw TemplateError("template file must hold a JSON array");
  std::vector<TemplateSpec> out;
  for (const auto& record : doc) out.push_back(from_json_record(record));
  return out;
}

void write_templates_json(std::ostream& out, const std::vector<TemplateSpec>& templates) {
  auto doc = nlohmann::json::array();
  for (const auto& t : templates) doc.push_back(to_json_record(t));
  out << doc.dump(2) << '\n';
}

std::string template_to_json(const TemplateSpec& spec) { return to_json_record(spec).dump(); }

TemplateSpec template_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError(std::string("template record is not valid JSON: ") + e.what());
  }
  return from_json_record(j);
}

std::string PromptSequence::text() const {
  return join_nonempty(segments, [](const PromptSegment& seg) {
    return std::visit(overloaded{
                          [](const Literal& l) { return join(l.words); },
                          [](const UserSpan& u) {
                            std::string out;
                            for (const auto& s : u.text.segments) {
                              if (!out.empty()) out += ' ';
                              if (std::holds_alternative<corpus::NclsMarker>(s)) {
                                out += "[NCLS]";
                              } else {
                                out += join(std::get<corpus::HistoryTitle>(s).words);
                              }
                            }
                            return out;
                          },
                          [](const CandidateSpan& c) { return join(c.text.words); },
                          [](const MaskSlot&) { return std::string("[MASK]"); },
                          [](const SepMarker&) { return std::string("[SEP]"); },
                          [](const VirtualToken& v) { return virtual_token_name(v); },
                      },
                      seg);
  });
}

PromptSequence render(const TemplateSpec& spec, const corpus::UserText& user,
                      const corpus::CandidateText& candidate) {
  PromptSequence seq;
  std::size_t masks = 0;
  for (const auto& seg : spec.segments()) {
    std::visit(overloaded{
                   [&](const UserSlot&) { seq.segments.emplace_back(UserSpan{user}); },
                   [&](const CandidateSlot&) { seq.segments.emplace_back(CandidateSpan{candidate}); },
                   [&](const MaskSlot& m) {
                     ++masks;
                     seq.mask_index = seq.segments.size();
                     seq.segments.emplace_back(m);
                   },
                   [&](const Literal& l) { seq.segments.emplace_back(l); },
                   [&](const SepMarker& s) { seq.segments.emplace_back(s); },
                   [&](const VirtualToken& v) { seq.segments.emplace_back(v); },
               },
               seg);
  }
  if (masks != 1) {
    throw TemplateError(spec.id() + ": rendered prompt must contain exactly one [MASK]");
  }
  return seq;
}

const std::string& verbalize(int label, const AnswerSpace& answers) {
  if (label == 1) return answers.positive;
  if (label == 0) return answers.negative;
  throw ArgumentError("label must be 0 or 1, got " + std::to_string(label));
}

}  // namespace clozerec::prompting
