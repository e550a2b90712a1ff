#include "clozerec/synthetic.h"

#include <algorithm>
#include <fstream>
#include <set>

#include "clozerec/errors.h"
#include "random_util.h"

namespace clozerec::synthetic {

namespace {

std::string keyword(std::size_t topic, std::size_t k) {
  return "kw" + std::to_string(topic) + "x" + std::to_string(k);
}

bool is_keyword(const std::string& w) { return w.rfind("kw", 0) == 0; }

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

}  // namespace

bool shares_keyword(const corpus::NewsArticle& candidate,
                    const std::vector<const corpus::NewsArticle*>& history) {
  std::set<std::string> seen;
  for (const auto* h : history) {
    for (const auto& w : h->title_words) {
      if (is_keyword(w)) seen.insert(w);
    }
  }
  return std::any_of(candidate.title_words.begin(), candidate.title_words.end(),
                     [&](const std::string& w) { return is_keyword(w) && seen.count(w) != 0; });
}

SyntheticCorpus generate(const SyntheticConfig& c) {
  if (c.topics < c.interests_per_user + 1 || c.keywords_per_topic < c.keywords_per_title ||
      c.candidates_per_impression < 2 || c.history_length == 0 || c.users == 0 ||
      (c.fillers_per_title > 0 && c.filler_words == 0)) {
    throw ArgumentError("synthetic corpus configuration is degenerate");
  }
  random::Rng rng(c.seed);
  SyntheticCorpus out;

  // News: each title carries distinct keywords of one topic plus filler words.
  std::vector<std::vector<std::size_t>> news_by_topic(c.topics);
  for (std::size_t t = 0; t < c.topics; ++t) {
    for (std::size_t i = 0; i < c.news_per_topic; ++i) {
      std::vector<std::size_t> ks(c.keywords_per_topic);
      for (std::size_t k = 0; k < ks.size(); ++k) ks[k] = k;
      random::partial_shuffle(ks, c.keywords_per_title, rng);
      std::vector<std::string> words;
      for (std::size_t k = 0; k < c.keywords_per_title; ++k) words.push_back(keyword(t, ks[k]));
      for (std::size_t f = 0; f < c.fillers_per_title; ++f) {
        words.push_back("word" + std::to_string(random::uniform_below(rng, c.filler_words)));
      }
      random::shuffle(words, rng);
      corpus::NewsArticle a;
      a.news_id = "N" + std::to_string(out.news.size() + 1);
      a.category = "topic" + std::to_string(t);
      a.subcategory = "sub" + std::to_string(t);
      a.title_words = std::move(words);
      news_by_topic[t].push_back(out.news.size());
      out.news.push_back(std::move(a));
    }
  }

  // Users: a fixed set of interest topics.
  std::vector<std::vector<std::size_t>> interests(c.users);
  for (auto& in : interests) {
    std::vector<std::size_t> topics(c.topics);
    for (std::size_t t = 0; t < c.topics; ++t) topics[t] = t;
    random::partial_shuffle(topics, c.interests_per_user, rng);
    in.assign(topics.begin(), topics.begin() + static_cast<std::ptrdiff_t>(c.interests_per_user));
  }

  auto pick_from = [&](std::size_t topic) {
    const auto& pool = news_by_topic[topic];
    return pool[random::uniform_below(rng, pool.size())];
  };

  for (std::size_t i = 0; i < c.impressions; ++i) {
    const auto user = random::uniform_below(rng, c.users);
    const auto& topics = interests[user];
    corpus::ImpressionRecord rec;
    rec.impression_id = std::to_string(i + 1);
    rec.user_id = "U" + std::to_string(user + 1);
    rec.time = "11/" + std::to_string(9 + i % 6) + "/2019 " + std::to_string(1 + i % 12) + ":" +
               (i % 60 < 10 ? "0" : "") + std::to_string(i % 60) + ":00 " + (i % 2 ? "PM" : "AM");

    std::vector<const corpus::NewsArticle*> history;
    std::set<std::size_t> history_set;
    while (history.size() < c.history_length) {
      const auto n = pick_from(topics[random::uniform_below(rng, topics.size())]);
      if (!history_set.insert(n).second) continue;
      history.push_back(&out.news[n]);
      rec.history_ids.push_back(out.news[n].news_id);
    }

    // Half the candidates come from interest topics, half from anywhere; the rule labels them.
    std::set<std::size_t> chosen;
    bool has_positive = false, has_negative = false;
    std::size_t guard = 0;
    while (rec.candidates.size() < c.candidates_per_impression ||
           ((!has_positive || !has_negative) && guard < 1000)) {
      ++guard;
      std::size_t n;
      if (!has_positive && rec.candidates.size() + 1 >= c.candidates_per_impression) {
        n = pick_from(topics[random::uniform_below(rng, topics.size())]);
      } else if (random::uniform_below(rng, 2) == 0) {
        n = pick_from(topics[random::uniform_below(rng, topics.size())]);
      } else {
        n = pick_from(random::uniform_below(rng, c.topics));
      }
      if (history_set.count(n) != 0 || !chosen.insert(n).second) continue;
      const int label = shares_keyword(out.news[n], history) ? 1 : 0;
      if (rec.candidates.size() >= c.candidates_per_impression) {
        // Only accept what the impression still lacks.
        if ((label == 1 && has_positive) || (label == 0 && has_negative)) continue;
        rec.candidates.pop_back();
      }
      (label ? has_positive : has_negative) = true;
      rec.candidates.push_back({out.news[n].news_id, label});
    }
    out.impressions.push_back(std::move(rec));
  }
  return out;
}

void write_mind(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream news(dir / "news.tsv");
  for (const auto& a : corpus.news) {
    news << a.news_id << '\t' << a.category << '\t' << a.subcategory << '\t' << join(a.title_words)
         << "\t\t\t\t\n";
  }
  std::ofstream behaviors(dir / "behaviors.tsv");
  for (const auto& r : corpus.impressions) {
    behaviors << r.impression_id << '\t' << r.user_id << '\t' << r.time << '\t'
              << join(r.history_ids) << '\t';
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      behaviors << (i ? " " : "") << r.candidates[i].news_id << '-' << r.candidates[i].label;
    }
    behaviors << '\n';
  }
  if (!news || !behaviors) throw std::runtime_error("failed to write corpus under " + dir.string());
}

}  // namespace clozerec::synthetic
