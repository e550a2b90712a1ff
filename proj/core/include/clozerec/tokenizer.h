#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clozerec::backend {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";

// Word-piece vocabulary in BERT's vocab.txt convention (one token per line, "##" marks a
// word continuation).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  // Returns the id of `token`, appending it when absent.
  TokenId add(const std::string& token);
  std::optional<TokenId> find(std::string_view token) const;
  TokenId at(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static Vocabulary read(std::istream& in);
  void write(std::ostream& out) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Uncased BERT-style tokenization: lower-case, split on whitespace and ASCII punctuation,
// then greedy longest-match word pieces.
class WordPieceTokenizer {
 public:
  explicit WordPieceTokenizer(const Vocabulary* vocab) : vocab_(vocab) {}

  static std::vector<std::string> basic_tokenize(std::string_view text);
  std::vector<std::string> word_pieces(std::string_view word) const;
  std::vector<TokenId> encode_words(const std::vector<std::string>& words) const;

 private:
  const Vocabulary* vocab_;
  static constexpr std::size_t kMaxWordChars = 100;
};

// Vocabulary for a freshly initialized model: special tokens, single characters with their
// "##" continuations, then whole words of `corpus_words` by descending frequency (ties broken
// alphabetically) up to `max_words`.
Vocabulary build_vocabulary(const std::vector<std::string>& corpus_words, std::size_t max_words);

}  // namespace clozerec::backend
