#include "clozerec/tokenizer.h"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

namespace clozerec::backend {

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  for (auto& t : tokens) add(t);
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto id = find(token)) return *id;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::at(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw std::out_of_range("token not in vocabulary: " + std::string(token));
}

Vocabulary Vocabulary::read(std::istream& in) {
  Vocabulary vocab;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.add(line);
  }
  return vocab;
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

namespace {

bool is_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

}  // namespace

std::vector<std::string> WordPieceTokenizer::basic_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return out;
}

std::vector<std::string> WordPieceTokenizer::word_pieces(std::string_view word) const {
  if (word.size() > kMaxWordChars) return {std::string(kUnkToken)};
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<std::string> match;
    while (start < end) {
      std::string candidate(word.substr(start, end - start));
      if (start > 0) candidate = "##" + candidate;
      if (vocab_->find(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (!match) return {std::string(kUnkToken)};
    pieces.push_back(std::move(*match));
    start = end;
  }
  return pieces;
}

std::vector<TokenId> WordPieceTokenizer::encode_words(const std::vector<std::string>& words) const {
  std::vector<TokenId> ids;
  for (const auto& w : words) {
    for (const auto& token : basic_tokenize(w)) {
      for (const auto& piece : word_pieces(token)) ids.push_back(vocab_->at(piece));
    }
  }
  return ids;
}

Vocabulary build_vocabulary(const std::vector<std::string>& corpus_words, std::size_t max_words) {
  Vocabulary vocab;
  for (auto t : {kPadToken, kUnkToken, kClsToken, kSepToken, kMaskToken}) vocab.add(std::string(t));

  std::map<std::string, std::size_t> freq;
  for (const auto& w : corpus_words) {
    for (const auto& t : WordPieceTokenizer::basic_tokenize(w)) ++freq[t];
  }
  std::map<char, bool> chars;
  for (const auto& [w, _] : freq) {
    for (char c : w) chars[c] = true;
  }
  for (const auto& [c, _] : chars) vocab.add(std::string(1, c));
  for (const auto& [c, _] : chars) vocab.add("##" + std::string(1, c));

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::size_t added = 0;
  for (const auto& [w, _] : ranked) {
    if (added >= max_words) break;
    if (w.size() > 1) {
      vocab.add(w);
      ++added;
    }
  }
  return vocab;
}

}  // namespace clozerec::backend
