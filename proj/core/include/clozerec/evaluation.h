#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace clozerec::evaluation {

struct ScoredEntry {
  std::string candidate_id;
  double score = 0.0;
  int label = 0;
};

struct ScoredImpression {
  std::string impression_id;
  std::vector<ScoredEntry> entries;
};

// Per-impression metrics. An empty optional means the impression was skipped for that metric
// (no positive, or for AUC no negative either).
std::optional<double> auc(const std::vector<ScoredEntry>& entries);
std::optional<double> mrr(const std::vector<ScoredEntry>& entries);
std::optional<double> ndcg_at_k(const std::vector<ScoredEntry>& entries, std::size_t k);

struct ImpressionMetrics {
  std::string impression_id;
  std::optional<double> auc, mrr, ndcg5, ndcg10;
};

struct MetricsReport {
  // Unweighted means over non-skipped impressions; NaN when every impression was skipped.
  double auc = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::size_t impressions = 0;
  std::size_t auc_skipped = 0;
  std::size_t rank_skipped = 0;  // impressions without a positive (MRR/NDCG skipped)
  std::vector<ImpressionMetrics> per_impression;
};

// Throws ArgumentError on an empty list.
MetricsReport evaluate(const std::vector<ScoredImpression>& impressions,
                       bool keep_per_impression = false);

std::string to_json(const MetricsReport& report, int indent = 2);
MetricsReport metrics_from_json(const std::string& text);
void write_per_impression_csv(std::ostream& out, const MetricsReport& report);

}  // namespace clozerec::evaluation
