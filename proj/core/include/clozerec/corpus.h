#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "clozerec/errors.h"

namespace clozerec::corpus {

inline constexpr std::size_t kDefaultMaxHistory = 50;
inline constexpr std::size_t kDefaultHistoryTitleWords = 10;
inline constexpr std::size_t kDefaultCandidateTitleWords = 20;
inline constexpr std::size_t kDefaultNegativeRatio = 4;
inline constexpr double kDefaultValidationFraction = 0.05;

struct NewsArticle {
  std::string news_id;
  std::vector<std::string> title_words;
  std::string category;
  std::string subcategory;

  bool empty_title() const { return title_words.empty(); }
};

class NewsCatalog {
 public:
  // Returns false (and keeps the existing entry) when the id is already present.
  bool insert(NewsArticle article);

  const NewsArticle* find(const std::string& news_id) const;
  // Throws MissingNewsError.
  const NewsArticle& at(const std::string& news_id) const;

  std::size_t size() const { return articles_.size(); }
  bool empty() const { return articles_.empty(); }
  std::size_t duplicate_count() const { return duplicates_; }
  std::size_t empty_title_count() const { return empty_titles_; }

  const std::unordered_map<std::string, NewsArticle>& articles() const { return articles_; }

 private:
  std::unordered_map<std::string, NewsArticle> articles_;
  std::size_t duplicates_ = 0;
  std::size_t empty_titles_ = 0;
};

struct Candidate {
  std::string news_id;
  int label = 0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct ImpressionRecord {
  std::string impression_id;
  std::string user_id;
  std::string time;  // as written in the behaviors file
  std::vector<std::string> history_ids;  // oldest first
  std::vector<Candidate> candidates;

  std::size_t positive_count() const;
  std::size_t negative_count() const { return candidates.size() - positive_count(); }
};

// Parses MIND's "M/D/YYYY h:mm:ss AM" timestamps into seconds since epoch (UTC).
std::optional<std::int64_t> parse_mind_time(const std::string& text);

std::vector<std::string> split_words(const std::string& text);

NewsCatalog parse_news(std::istream& in, const std::string& source = "<news>");
std::vector<ImpressionRecord> parse_behaviors(std::istream& in,
                                              const std::string& source = "<behaviors>");

NewsCatalog load_news(const std::string& path);
std::vector<ImpressionRecord> load_behaviors(const std::string& path);

// One history title inside a <USER> text; always preceded by an NCLS marker.
struct HistoryTitle {
  std::string news_id;
  std::vector<std::string> words;

  friend bool operator==(const HistoryTitle&, const HistoryTitle&) = default;
};

struct NclsMarker {
  friend bool operator==(const NclsMarker&, const NclsMarker&) = default;
};

using UserSegment = std::variant<NclsMarker, HistoryTitle>;

struct UserText {
  std::vector<UserSegment> segments;
  std::size_t included_history_count = 0;
  std::size_t dropped_unresolved = 0;

  std::size_t ncls_count() const;
  // Titles in order, oldest first.
  std::vector<const HistoryTitle*> titles() const;

  friend bool operator==(const UserText&, const UserText&) = default;
};

struct CandidateText {
  std::string news_id;
  std::vector<std::string> words;

  friend bool operator==(const CandidateText&, const CandidateText&) = default;
};

struct Sample {
  std::shared_ptr<const UserText> user_text;
  CandidateText candidate_text;
  int label = 0;
  std::string impression_id;

  const std::string& group_key() const { return impression_id; }
  const std::string& candidate_id() const { return candidate_text.news_id; }
};

struct TextLimits {
  std::size_t max_history = kDefaultMaxHistory;
  std::size_t max_history_title_words = kDefaultHistoryTitleWords;
  std::size_t max_candidate_title_words = kDefaultCandidateTitleWords;
};

UserText build_user_text(const std::vector<std::string>& history_ids, const NewsCatalog& catalog,
                         std::size_t max_history = kDefaultMaxHistory,
                         std::size_t max_title_words = kDefaultHistoryTitleWords);

CandidateText build_candidate_text(const std::string& news_id, const NewsCatalog& catalog,
                                   std::size_t max_title_words = kDefaultCandidateTitleWords);

// Per positive: the positive plus min(neg_ratio, negatives) distinct negatives drawn
// uniformly without replacement from the same impression.
std::vector<Sample> assemble_training_set(const std::vector<ImpressionRecord>& impressions,
                                          const NewsCatalog& catalog, std::size_t neg_ratio,
                                          std::uint64_t rng_seed, const TextLimits& limits = {});

// Every candidate of every impression, in file order. Used for validation and test.
std::vector<Sample> assemble_evaluation_set(const std::vector<ImpressionRecord>& impressions,
                                            const NewsCatalog& catalog,
                                            const TextLimits& limits = {});

std::pair<std::vector<ImpressionRecord>, std::vector<ImpressionRecord>> split_validation(
    const std::vector<ImpressionRecord>& impressions, double fraction, std::uint64_t rng_seed);

namespace detail {

// Indices of a uniform random subset of size `count` out of `n`, sorted ascending.
std::vector<std::size_t> choose_subset(std::size_t n, std::size_t count, std::uint64_t rng_seed);

std::size_t rounded_share(double fraction, std::size_t n);

}  // namespace detail

std::vector<ImpressionRecord> downsample_training(const std::vector<ImpressionRecord>& impressions,
                                                  double fraction, std::uint64_t rng_seed);

// Impression-granular down-sampling of already assembled samples: keeps every sample of
// round(fraction * distinct impressions) impressions.
std::vector<Sample> downsample_training(const std::vector<Sample>& samples, double fraction,
                                        std::uint64_t rng_seed);

std::size_t count_impressions(const std::vector<Sample>& samples);

// JSON-lines sample files. Each line: impression_id, candidate_id, user_text, candidate_text,
// label. user_text is a segment list: the string "[NCLS]" for markers, word arrays for titles.
void write_samples_jsonl(std::ostream& out, const std::vector<Sample>& samples);
std::vector<Sample> read_samples_jsonl(std::istream& in, const std::string& source = "<samples>");

}  // namespace clozerec::corpus
