#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clozerec/corpus.h"

namespace clozerec::synthetic {

// MIND-format corpus where a click happens exactly when the candidate title shares a keyword
// with some title in the user's history.
struct SyntheticConfig {
  std::size_t impressions = 500;
  std::size_t topics = 8;
  std::size_t keywords_per_topic = 6;
  std::size_t filler_words = 24;
  std::size_t keywords_per_title = 2;
  std::size_t fillers_per_title = 0;
  std::size_t news_per_topic = 40;
  std::size_t users = 120;
  std::size_t interests_per_user = 1;
  std::size_t history_length = 3;
  std::size_t candidates_per_impression = 12;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<corpus::NewsArticle> news;
  std::vector<corpus::ImpressionRecord> impressions;
};

SyntheticCorpus generate(const SyntheticConfig& config);

// The planted rule, checkable against any generated impression.
bool shares_keyword(const corpus::NewsArticle& candidate,
                    const std::vector<const corpus::NewsArticle*>& history);

// Writes news.tsv and behaviors.tsv in MIND's column layout.
void write_mind(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace clozerec::synthetic
