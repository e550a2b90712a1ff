#include "clozerec/corpus.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "random_util.h"

namespace clozerec::corpus {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::vector<std::string> truncated(const std::vector<std::string>& words, std::size_t cap) {
  return {words.begin(), words.begin() + static_cast<std::ptrdiff_t>(std::min(cap, words.size()))};
}

}  // namespace

bool NewsCatalog::insert(NewsArticle article) {
  if (articles_.count(article.news_id) != 0) {
    ++duplicates_;
    return false;
  }
  if (article.empty_title()) ++empty_titles_;
  auto id = article.news_id;
  articles_.emplace(std::move(id), std::move(article));
  return true;
}

const NewsArticle* NewsCatalog::find(const std::string& news_id) const {
  const auto it = articles_.find(news_id);
  return it == articles_.end() ? nullptr : &it->second;
}

const NewsArticle& NewsCatalog::at(const std::string& news_id) const {
  const auto* article = find(news_id);
  if (article == nullptr) throw MissingNewsError(news_id);
  return *article;
}

std::size_t ImpressionRecord::positive_count() const {
  return static_cast<std::size_t>(std::count_if(
      candidates.begin(), candidates.end(), [](const Candidate& c) { return c.label == 1; }));
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

std::optional<std::int64_t> parse_mind_time(const std::string& text) {
  int month = 0, day = 0, year = 0, hour = 0, minute = 0, second = 0;
  char meridiem[3] = {0, 0, 0};
  if (std::sscanf(text.c_str(), "%d/%d/%d %d:%d:%d %2s", &month, &day, &year, &hour, &minute,
                  &second, meridiem) != 7) {
    return std::nullopt;
  }
  const std::string am_pm(meridiem);
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour < 1 || hour > 12 || minute > 59 ||
      second > 60) {
    return std::nullopt;
  }
  if (am_pm == "PM" && hour != 12) hour += 12;
  else if (am_pm == "AM" && hour == 12) hour = 0;
  else if (am_pm != "AM" && am_pm != "PM") return std::nullopt;

  // days_from_civil (proleptic Gregorian).
  const int y = year - (month <= 2 ? 1 : 0);
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned mp = static_cast<unsigned>(month + (month > 2 ? -3 : 9));
  const unsigned doy = (153 * mp + 2) / 5 + static_cast<unsigned>(day) - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const std::int64_t days = static_cast<std::int64_t>(era) * 146097 + doe - 719468;
  return days * 86400 + hour * 3600 + minute * 60 + second;
}

NewsCatalog parse_news(std::istream& in, const std::string& source) {
  NewsCatalog catalog;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 4) {
      throw ParseError(source, line_no,
                       "expected at least 4 tab-separated fields, got " +
                           std::to_string(fields.size()));
    }
    NewsArticle article;
    article.news_id = std::move(fields[0]);
    article.category = std::move(fields[1]);
    article.subcategory = std::move(fields[2]);
    article.title_words = split_words(fields[3]);
    if (article.news_id.empty()) throw ParseError(source, line_no, "empty news id");
    catalog.insert(std::move(article));
  }
  return catalog;
}

std::vector<ImpressionRecord> parse_behaviors(std::istream& in, const std::string& source) {
  std::vector<ImpressionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 5) {
      throw ParseError(source, line_no,
                       "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    ImpressionRecord record;
    record.impression_id = std::move(fields[0]);
    record.user_id = std::move(fields[1]);
    record.time = std::move(fields[2]);
    record.history_ids = split_words(fields[3]);
    for (auto& token : split_words(fields[4])) {
      const auto dash = token.rfind('-');
      const bool ok = dash != std::string::npos && dash > 0 && dash + 2 == token.size() &&
                      (token[dash + 1] == '0' || token[dash + 1] == '1');
      if (!ok) {
        throw ParseError(source, line_no,
                         "candidate token without -0/-1 label suffix: '" + token + "'");
      }
      record.candidates.push_back({token.substr(0, dash), token[dash + 1] - '0'});
    }
    if (record.candidates.empty()) throw ParseError(source, line_no, "impression has no candidates");
    records.push_back(std::move(record));
  }
  return records;
}

NewsCatalog load_news(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open news file: " + path);
  return parse_news(in, path);
}

std::vector<ImpressionRecord> load_behaviors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open behaviors file: " + path);
  return parse_behaviors(in, path);
}

std::size_t UserText::ncls_count() const {
  return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(), [](const auto& s) {
    return std::holds_alternative<NclsMarker>(s);
  }));
}

std::vector<const HistoryTitle*> UserText::titles() const {
  std::vector<const HistoryTitle*> out;
  for (const auto& s : segments) {
    if (const auto* t = std::get_if<HistoryTitle>(&s)) out.push_back(t);
  }
  return out;
}

UserText build_user_text(const std::vector<std::string>& history_ids, const NewsCatalog& catalog,
                         std::size_t max_history, std::size_t max_title_words) {
  UserText text;
  // Walk from the most recent click backwards, then restore chronological order.
  std::vector<const NewsArticle*> retained;
  for (auto it = history_ids.rbegin(); it != history_ids.rend() && retained.size() < max_history;
       ++it) {
    const auto* article = catalog.find(*it);
    if (article == nullptr) {
      ++text.dropped_unresolved;
      continue;
    }
    retained.push_back(article);
  }
  std::reverse(retained.begin(), retained.end());
  for (const auto* article : retained) {
    text.segments.emplace_back(NclsMarker{});
    text.segments.emplace_back(
        HistoryTitle{article->news_id, truncated(article->title_words, max_title_words)});
  }
  text.included_history_count = retained.size();
  return text;
}

CandidateText build_candidate_text(const std::string& news_id, const NewsCatalog& catalog,
                                   std::size_t max_title_words) {
  const auto& article = catalog.at(news_id);
  return {article.news_id, truncated(article.title_words, max_title_words)};
}

namespace detail {

std::size_t rounded_share(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

std::vector<std::size_t> choose_subset(std::size_t n, std::size_t count, std::uint64_t rng_seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  random::Rng rng(rng_seed);
  random::partial_shuffle(order, std::min(count, n), rng);
  order.resize(std::min(count, n));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace detail

std::vector<Sample> assemble_training_set(const std::vector<ImpressionRecord>& impressions,
                                          const NewsCatalog& catalog, std::size_t neg_ratio,
                                          std::uint64_t rng_seed, const TextLimits& limits) {
  std::vector<Sample> samples;
  random::Rng rng(rng_seed);
  for (const auto& imp : impressions) {
    auto user = std::make_shared<const UserText>(build_user_text(
        imp.history_ids, catalog, limits.max_history, limits.max_history_title_words));
    std::vector<const Candidate*> negatives;
    for (const auto& c : imp.candidates) {
      if (c.label == 0) negatives.push_back(&c);
    }
    auto emit = [&](const Candidate& c) {
      samples.push_back(Sample{user,
                               build_candidate_text(c.news_id, catalog,
                                                    limits.max_candidate_title_words),
                               c.label, imp.impression_id});
    };
    for (const auto& c : imp.candidates) {
      if (c.label != 1) continue;
      emit(c);
      const auto take = std::min(neg_ratio, negatives.size());
      random::partial_shuffle(negatives, take, rng);
      for (std::size_t i = 0; i < take; ++i) emit(*negatives[i]);
    }
  }
  return samples;
}

std::vector<Sample> assemble_evaluation_set(const std::vector<ImpressionRecord>& impressions,
                                            const NewsCatalog& catalog,
                                            const TextLimits& limits) {
  std::vector<Sample> samples;
  for (const auto& imp : impressions) {
    auto user = std::make_shared<const UserText>(build_user_text(
        imp.history_ids, catalog, limits.max_history, limits.max_history_title_words));
    for (const auto& c : imp.candidates) {
      samples.push_back(Sample{
          user, build_candidate_text(c.news_id, catalog, limits.max_candidate_title_words),
          c.label, imp.impression_id});
    }
  }
  return samples;
}

std::pair<std::vector<ImpressionRecord>, std::vector<ImpressionRecord>> split_validation(
    const std::vector<ImpressionRecord>& impressions, double fraction, std::uint64_t rng_seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ArgumentError("validation fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  const auto chosen = detail::choose_subset(
      impressions.size(), detail::rounded_share(fraction, impressions.size()), rng_seed);
  std::vector<bool> in_valid(impressions.size(), false);
  for (auto i : chosen) in_valid[i] = true;
  std::pair<std::vector<ImpressionRecord>, std::vector<ImpressionRecord>> out;
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    (in_valid[i] ? out.second : out.first).push_back(impressions[i]);
  }
  return out;
}

namespace {

void check_downsample_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("down-sampling fraction must lie in (0, 1], got " +
                        std::to_string(fraction));
  }
}

}  // namespace

std::vector<ImpressionRecord> downsample_training(const std::vector<ImpressionRecord>& impressions,
                                                  double fraction, std::uint64_t rng_seed) {
  check_downsample_fraction(fraction);
  if (fraction == 1.0) return impressions;
  std::vector<ImpressionRecord> out;
  for (auto i : detail::choose_subset(impressions.size(),
                                      detail::rounded_share(fraction, impressions.size()),
                                      rng_seed)) {
    out.push_back(impressions[i]);
  }
  return out;
}

namespace {

std::vector<std::string> impression_order(const std::vector<Sample>& samples) {
  std::vector<std::string> order;
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (seen.insert(s.impression_id).second) order.push_back(s.impression_id);
  }
  return order;
}

}  // namespace

std::size_t count_impressions(const std::vector<Sample>& samples) {
  return impression_order(samples).size();
}

std::vector<Sample> downsample_training(const std::vector<Sample>& samples, double fraction,
                                        std::uint64_t rng_seed) {
  check_downsample_fraction(fraction);
  if (fraction == 1.0) return samples;
  const auto order = impression_order(samples);
  std::unordered_set<std::string> keep;
  for (auto i : detail::choose_subset(order.size(), detail::rounded_share(fraction, order.size()),
                                      rng_seed)) {
    keep.insert(order[i]);
  }
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (keep.count(s.impression_id) != 0) out.push_back(s);
  }
  return out;
}

namespace {

constexpr const char* kNclsText = "[NCLS]";

nlohmann::json user_text_to_json(const UserText& user) {
  auto segments = nlohmann::json::array();
  for (const auto& seg : user.segments) {
    if (std::holds_alternative<NclsMarker>(seg)) {
      segments.push_back(kNclsText);
    } else {
      const auto& title = std::get<HistoryTitle>(seg);
      segments.push_back({{"id", title.news_id}, {"words", title.words}});
    }
  }
  return segments;
}

UserText user_text_from_json(const nlohmann::json& segments) {
  UserText user;
  for (const auto& seg : segments) {
    if (seg.is_string()) {
      if (seg.get<std::string>() != kNclsText) throw std::runtime_error("unknown user marker");
      user.segments.emplace_back(NclsMarker{});
      ++user.included_history_count;
    } else {
      user.segments.emplace_back(HistoryTitle{seg.at("id").get<std::string>(),
                                              seg.at("words").get<std::vector<std::string>>()});
    }
  }
  return user;
}

}  // namespace

void write_samples_jsonl(std::ostream& out, const std::vector<Sample>& samples) {
  for (const auto& s : samples) {
    nlohmann::json line = {
        {"impression_id", s.impression_id},
        {"candidate_id", s.candidate_text.news_id},
        {"user_text", user_text_to_json(*s.user_text)},
        {"candidate_text", s.candidate_text.words},
        {"label", s.label},
    };
    out << line.dump() << '\n';
  }
}

std::vector<Sample> read_samples_jsonl(std::istream& in, const std::string& source) {
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  std::shared_ptr<const UserText> previous;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto user = user_text_from_json(j.at("user_text"));
      if (previous == nullptr || !(*previous == user)) {
        previous = std::make_shared<const UserText>(std::move(user));
      }
      Sample s;
      s.user_text = previous;
      s.impression_id = j.at("impression_id").get<std::string>();
      s.candidate_text.news_id = j.at("candidate_id").get<std::string>();
      s.candidate_text.words = j.at("candidate_text").get<std::vector<std::string>>();
      s.label = j.at("label").get<int>();
      if (s.label != 0 && s.label != 1) throw std::runtime_error("label must be 0 or 1");
      samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return samples;
}

}  // namespace clozerec::corpus
