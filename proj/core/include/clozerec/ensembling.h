#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "clozerec/evaluation.h"
#include "clozerec/prompting.h"

namespace clozerec::ensembling {

struct ScoreRow {
  std::string impression_id;
  std::string candidate_id;
  double p_positive = 0.0;
  int label = 0;
};

// One template's scores over an evaluation split, in sample order.
struct ScoreTable {
  std::string template_id;
  std::vector<ScoreRow> rows;
};

// Default member set for cross-type ensembling.
inline const std::vector<std::string> kBestCrossTypeMembers = {
    "discrete-utility", "continuous-utility", "hybrid-action"};

// Sum of member scores per (impression, candidate), keeping the first member's row order.
// `weights`, when given, scales each member (one weight per member). Throws AlignmentError
// naming missing keys when members do not cover the same key set or disagree on labels.
ScoreTable ensemble_scores(const std::vector<ScoreTable>& members,
                           const std::optional<std::vector<double>>& weights = std::nullopt);

std::vector<evaluation::ScoredImpression> to_scored_impressions(const ScoreTable& table);

struct TypedMember {
  prompting::TemplateKind kind;
  ScoreTable scores;
};

struct CrossTypeResult {
  ScoreTable fused;
  evaluation::MetricsReport metrics;
};

// Fuses exactly one member per template kind (discrete, continuous, hybrid) and evaluates.
CrossTypeResult cross_type_ensemble(const std::vector<TypedMember>& members);

// CSV: impression_id,candidate_id,template_id,p_pos,label
void write_scores_csv(std::ostream& out, const ScoreTable& table);
ScoreTable read_scores_csv(std::istream& in, const std::string& source = "<scores>");

}  // namespace clozerec::ensembling
