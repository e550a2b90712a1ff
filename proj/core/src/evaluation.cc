#include "clozerec/evaluation.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "clozerec/errors.h"
#include "json.hpp"

namespace clozerec::evaluation {

namespace {

// Positions sorted by descending score; equal scores keep input order.
std::vector<std::size_t> descending_order(const std::vector<ScoredEntry>& entries) {
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return entries[a].score > entries[b].score;
  });
  return order;
}

std::size_t positives(const std::vector<ScoredEntry>& entries) {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                [](const ScoredEntry& e) { return e.label == 1; }));
}

double dcg(const std::vector<int>& labels_in_rank_order, std::size_t k) {
  double sum = 0.0;
  for (std::size_t i = 0; i < std::min(k, labels_in_rank_order.size()); ++i) {
    const double gain = std::exp2(static_cast<double>(labels_in_rank_order[i])) - 1.0;
    sum += gain / std::log2(static_cast<double>(i) + 2.0);
  }
  return sum;
}

}  // namespace

std::optional<double> auc(const std::vector<ScoredEntry>& entries) {
  const auto pos = positives(entries);
  const auto neg = entries.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  // Mann-Whitney U with mid-ranks for ties.
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return entries[a].score < entries[b].score; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && entries[order[j]].score == entries[order[i]].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (entries[order[t]].label == 1) positive_rank_sum += mid_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(neg);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::optional<double> mrr(const std::vector<ScoredEntry>& entries) {
  const auto pos = positives(entries);
  if (pos == 0) return std::nullopt;
  const auto order = descending_order(entries);
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (entries[order[rank]].label == 1) sum += 1.0 / static_cast<double>(rank + 1);
  }
  return sum / static_cast<double>(pos);
}

std::optional<double> ndcg_at_k(const std::vector<ScoredEntry>& entries, std::size_t k) {
  if (k == 0) throw ArgumentError("ndcg cutoff k must be at least 1");
  if (positives(entries) == 0) return std::nullopt;
  std::vector<int> ranked, ideal;
  for (auto i : descending_order(entries)) ranked.push_back(entries[i].label);
  for (const auto& e : entries) ideal.push_back(e.label);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  return dcg(ranked, k) / dcg(ideal, k);
}

MetricsReport evaluate(const std::vector<ScoredImpression>& impressions, bool keep_per_impression) {
  if (impressions.empty()) throw ArgumentError("evaluate needs at least one impression");
  MetricsReport report;
  report.impressions = impressions.size();
  double auc_sum = 0, mrr_sum = 0, n5_sum = 0, n10_sum = 0;
  std::size_t auc_n = 0, rank_n = 0;
  for (const auto& imp : impressions) {
    ImpressionMetrics m{imp.impression_id, auc(imp.entries), mrr(imp.entries),
                        ndcg_at_k(imp.entries, 5), ndcg_at_k(imp.entries, 10)};
    if (m.auc) {
      auc_sum += *m.auc;
      ++auc_n;
    } else {
      ++report.auc_skipped;
    }
    if (m.mrr) {
      mrr_sum += *m.mrr;
      n5_sum += *m.ndcg5;
      n10_sum += *m.ndcg10;
      ++rank_n;
    } else {
      ++report.rank_skipped;
    }
    if (keep_per_impression) report.per_impression.push_back(std::move(m));
  }
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  report.auc = auc_n ? auc_sum / static_cast<double>(auc_n) : kNaN;
  const double rn = static_cast<double>(rank_n);
  report.mrr = rank_n ? mrr_sum / rn : kNaN;
  report.ndcg5 = rank_n ? n5_sum / rn : kNaN;
  report.ndcg10 = rank_n ? n10_sum / rn : kNaN;
  return report;
}

std::string to_json(const MetricsReport& report, int indent) {
  nlohmann::json j = {
      {"auc", report.auc},
      {"mrr", report.mrr},
      {"ndcg@5", report.ndcg5},
      {"ndcg@10", report.ndcg10},
      {"impressions", report.impressions},
      {"auc_skipped", report.auc_skipped},
      {"rank_skipped", report.rank_skipped},
  };
  return j.dump(indent);
}

MetricsReport metrics_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  auto number = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  MetricsReport r;
  r.auc = number("auc");
  r.mrr = number("mrr");
  r.ndcg5 = number("ndcg@5");
  r.ndcg10 = number("ndcg@10");
  r.impressions = j.value("impressions", std::size_t{0});
  r.auc_skipped = j.value("auc_skipped", std::size_t{0});
  r.rank_skipped = j.value("rank_skipped", std::size_t{0});
  return r;
}

void write_per_impression_csv(std::ostream& out, const MetricsReport& report) {
  out << "impression_id,auc,mrr,ndcg@5,ndcg@10\n";
  auto cell = [&](const std::optional<double>& v) {
    if (v) out << std::setprecision(17) << *v;
  };
  for (const auto& m : report.per_impression) {
    out << m.impression_id << ',';
    cell(m.auc);
    out << ',';
    cell(m.mrr);
    out << ',';
    cell(m.ndcg5);
    out << ',';
    cell(m.ndcg10);
    out << '\n';
  }
}

}  // namespace clozerec::evaluation
