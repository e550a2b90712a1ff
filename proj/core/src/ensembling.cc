#include "clozerec/ensembling.h"

#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "clozerec/errors.h"

namespace clozerec::ensembling {

namespace {

std::string key_of(const ScoreRow& row) { return row.impression_id + '\x1f' + row.candidate_id; }

std::string describe(const std::string& key) {
  const auto sep = key.find('\x1f');
  return "(" + key.substr(0, sep) + ", " + key.substr(sep + 1) + ")";
}

std::string list_keys(const std::vector<std::string>& keys) {
  std::string out;
  for (std::size_t i = 0; i < keys.size() && i < 10; ++i) out += (i ? " " : "") + describe(keys[i]);
  if (keys.size() > 10) out += " ... (" + std::to_string(keys.size()) + " total)";
  return out;
}

}  // namespace

ScoreTable ensemble_scores(const std::vector<ScoreTable>& members,
                           const std::optional<std::vector<double>>& weights) {
  if (members.empty()) throw ArgumentError("an ensemble needs at least one member");
  if (weights && weights->size() != members.size()) {
    throw ArgumentError("one weight per ensemble member required");
  }
  std::set<std::string> ids;
  for (const auto& m : members) {
    if (!ids.insert(m.template_id).second) {
      throw ArgumentError("ensemble member listed twice: " + m.template_id);
    }
  }

  const auto& base = members.front();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < base.rows.size(); ++i) {
    if (!index.emplace(key_of(base.rows[i]), i).second) {
      throw AlignmentError(base.template_id + " scores " + describe(key_of(base.rows[i])) + " twice");
    }
  }

  ScoreTable fused;
  fused.template_id = "ensemble(";
  for (std::size_t m = 0; m < members.size(); ++m) {
    fused.template_id += (m ? "+" : "") + members[m].template_id;
  }
  fused.template_id += ")";
  fused.rows = base.rows;
  for (auto& row : fused.rows) row.p_positive = 0.0;

  for (std::size_t m = 0; m < members.size(); ++m) {
    const auto& member = members[m];
    const double w = weights ? (*weights)[m] : 1.0;
    std::vector<bool> covered(base.rows.size(), false);
    std::vector<std::string> extra, missing;
    for (const auto& row : member.rows) {
      const auto it = index.find(key_of(row));
      if (it == index.end()) {
        extra.push_back(key_of(row));
        continue;
      }
      if (covered[it->second]) {
        throw AlignmentError(member.template_id + " scores " + describe(key_of(row)) + " twice");
      }
      if (row.label != base.rows[it->second].label) {
        throw AlignmentError(member.template_id + " disagrees on the label of " +
                             describe(key_of(row)));
      }
      covered[it->second] = true;
      fused.rows[it->second].p_positive += w * row.p_positive;
    }
    for (std::size_t i = 0; i < covered.size(); ++i) {
      if (!covered[i]) missing.push_back(key_of(base.rows[i]));
    }
    if (!missing.empty() || !extra.empty()) {
      std::string msg = "member " + member.template_id + " is not aligned with " + base.template_id;
      if (!missing.empty()) msg += "; missing keys: " + list_keys(missing);
      if (!extra.empty()) msg += "; unexpected keys: " + list_keys(extra);
      throw AlignmentError(msg);
    }
  }
  return fused;
}

std::vector<evaluation::ScoredImpression> to_scored_impressions(const ScoreTable& table) {
  std::vector<evaluation::ScoredImpression> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& row : table.rows) {
    auto [it, inserted] = index.emplace(row.impression_id, out.size());
    if (inserted) out.push_back({row.impression_id, {}});
    out[it->second].entries.push_back({row.candidate_id, row.p_positive, row.label});
  }
  return out;
}

CrossTypeResult cross_type_ensemble(const std::vector<TypedMember>& members) {
  std::map<prompting::TemplateKind, const ScoreTable*> by_kind;
  for (const auto& m : members) {
    if (!by_kind.emplace(m.kind, &m.scores).second) {
      throw ArgumentError("cross-type ensembling takes one member per template kind; " +
                          std::string(prompting::to_string(m.kind)) + " appears twice");
    }
  }
  for (auto kind : {prompting::TemplateKind::kDiscrete, prompting::TemplateKind::kContinuous,
                    prompting::TemplateKind::kHybrid}) {
    if (by_kind.count(kind) == 0) {
      throw ArgumentError("cross-type ensembling lacks a " + std::string(prompting::to_string(kind)) +
                          " member");
    }
  }
  std::vector<ScoreTable> tables;
  for (const auto& m : members) tables.push_back(m.scores);
  CrossTypeResult result;
  result.fused = ensemble_scores(tables);
  result.metrics = evaluation::evaluate(to_scored_impressions(result.fused));
  return result;
}

void write_scores_csv(std::ostream& out, const ScoreTable& table) {
  out << "impression_id,candidate_id,template_id,p_pos,label\n";
  for (const auto& row : table.rows) {
    out << row.impression_id << ',' << row.candidate_id << ',' << table.template_id << ','
        << std::setprecision(17) << row.p_positive << ',' << row.label << '\n';
  }
}

ScoreTable read_scores_csv(std::istream& in, const std::string& source) {
  ScoreTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("impression_id,", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw ParseError(source, line_no, "expected 5 comma-separated fields");
    if (table.template_id.empty()) {
      table.template_id = f[2];
    } else if (table.template_id != f[2]) {
      throw ParseError(source, line_no, "mixed template ids in one score table");
    }
    try {
      table.rows.push_back({f[0], f[1], std::stod(f[3]), std::stoi(f[4])});
    } catch (const std::exception&) {
      throw ParseError(source, line_no, "malformed score or label");
    }
  }
  return table;
}

}  // namespace clozerec::ensembling
