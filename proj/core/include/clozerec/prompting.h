#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "clozerec/corpus.h"
#include "clozerec/errors.h"

namespace clozerec::prompting {

enum class TemplateKind { kDiscrete, kContinuous, kHybrid };
enum class Perspective { kRelevance, kEmotion, kAction, kUtility };

// Virtual-token groups: P precedes <USER>, Q precedes <CANDIDATE>, M precedes [MASK].
enum class VirtualGroup { kP, kQ, kM };

std::string_view to_string(TemplateKind kind);
std::string_view to_string(Perspective perspective);
std::string_view to_string(VirtualGroup group);
TemplateKind parse_kind(std::string_view text);
Perspective parse_perspective(std::string_view text);

struct Literal {
  std::vector<std::string> words;
  friend bool operator==(const Literal&, const Literal&) = default;
};
struct UserSlot {
  friend bool operator==(const UserSlot&, const UserSlot&) = default;
};
struct CandidateSlot {
  friend bool operator==(const CandidateSlot&, const CandidateSlot&) = default;
};
struct MaskSlot {
  friend bool operator==(const MaskSlot&, const MaskSlot&) = default;
};
struct SepMarker {
  friend bool operator==(const SepMarker&, const SepMarker&) = default;
};
// 1-based index inside its group, rendered as "[P_1]".
struct VirtualToken {
  VirtualGroup group;
  std::size_t index;
  friend bool operator==(const VirtualToken&, const VirtualToken&) = default;
};
// Placeholder for "n tokens of `group`" in a template pattern.
struct VirtualRun {
  VirtualGroup group;
  friend bool operator==(const VirtualRun&, const VirtualRun&) = default;
};

using Segment = std::variant<Literal, UserSlot, CandidateSlot, MaskSlot, SepMarker, VirtualToken>;
using PatternElement =
    std::variant<Literal, UserSlot, CandidateSlot, MaskSlot, SepMarker, VirtualRun>;

std::string virtual_token_name(VirtualToken token);

struct AnswerSpace {
  std::string positive;
  std::string negative;
  friend bool operator==(const AnswerSpace&, const AnswerSpace&) = default;
};

struct VirtualCounts {
  std::size_t p = 3;
  std::size_t q = 3;
  std::size_t m = 3;

  static VirtualCounts uniform(std::size_t n) { return {n, n, n}; }
  std::size_t count(VirtualGroup group) const;
  friend bool operator==(const VirtualCounts&, const VirtualCounts&) = default;
};

inline constexpr std::size_t kDefaultVirtualTokens = 3;

class TemplateSpec {
 public:
  // Validates and expands the pattern. Throws TemplateError.
  TemplateSpec(std::string id, TemplateKind kind, Perspective perspective,
               std::vector<PatternElement> pattern, VirtualCounts counts, AnswerSpace answers);

  const std::string& id() const { return id_; }
  TemplateKind kind() const { return kind_; }
  Perspective perspective() const { return perspective_; }
  const std::vector<PatternElement>& pattern() const { return pattern_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const VirtualCounts& counts() const { return counts_; }
  const AnswerSpace& answers() const { return answers_; }

  std::size_t virtual_token_count() const;
  // Distinct virtual-token names in order of first appearance.
  std::vector<std::string> virtual_token_names() const;

  // Same template with re-expanded virtual runs. Hybrid templates ignore `counts.m`.
  TemplateSpec with_counts(VirtualCounts counts) const;

  // Pattern text, e.g. "[Q...] <CANDIDATE> [M...] [MASK] [P...] <USER>".
  std::string pattern_text() const;
  // Expanded segments, e.g. "[Q_1] [Q_2] <CANDIDATE> ...".
  std::string segments_text() const;

 private:
  std::string id_;
  TemplateKind kind_;
  Perspective perspective_;
  std::vector<PatternElement> pattern_;
  VirtualCounts counts_;
  AnswerSpace answers_;
  std::vector<Segment> segments_;
};

// Parses the whitespace-separated pattern syntax: "<USER>", "<CANDIDATE>", "[MASK]", "[SEP]",
// "[P...]", "[Q...]", "[M...]"; any other token is a literal word.
std::vector<PatternElement> parse_pattern(std::string_view text);

AnswerSpace default_answers(Perspective perspective);
std::string template_id(TemplateKind kind, Perspective perspective);

// The twelve built-in templates (3 kinds x 4 perspectives).
std::vector<TemplateSpec> builtin_templates(
    VirtualCounts counts = VirtualCounts::uniform(kDefaultVirtualTokens));

// Looks `id` up among `templates`; throws ArgumentError listing the available ids.
const TemplateSpec& find_template(const std::vector<TemplateSpec>& templates, std::string_view id);

// Template config file: a JSON array of
//   {"id", "kind", "perspective", "pattern", "n": [n1, n2, n3], "answers": [pos, neg]}.
std::vector<TemplateSpec> read_templates_json(std::istream& in);
void write_templates_json(std::ostream& out, const std::vector<TemplateSpec>& templates);
std::string template_to_json(const TemplateSpec& spec);
TemplateSpec template_from_json(const std::string& json_text);

// Rendered prompt. User and candidate slots hold the corpus texts.
struct UserSpan {
  corpus::UserText text;
  friend bool operator==(const UserSpan&, const UserSpan&) = default;
};
struct CandidateSpan {
  corpus::CandidateText text;
  friend bool operator==(const CandidateSpan&, const CandidateSpan&) = default;
};

using PromptSegment =
    std::variant<Literal, UserSpan, CandidateSpan, MaskSlot, SepMarker, VirtualToken>;

struct PromptSequence {
  std::vector<PromptSegment> segments;
  std::size_t mask_index = 0;

  // Space-joined readable rendering; NCLS markers print as "[NCLS]".
  std::string text() const;
  friend bool operator==(const PromptSequence&, const PromptSequence&) = default;
};

PromptSequence render(const TemplateSpec& spec, const corpus::UserText& user,
                      const corpus::CandidateText& candidate);

// 1 -> positive word, 0 -> negative word; other labels throw ArgumentError.
const std::string& verbalize(int label, const AnswerSpace& answers);

}  // namespace clozerec::prompting
