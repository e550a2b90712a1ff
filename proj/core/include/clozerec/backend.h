#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clozerec/masked_lm.h"
#include "clozerec/prompting.h"
#include "clozerec/tokenizer.h"

namespace clozerec::backend {

inline constexpr std::size_t kDefaultMaxLength = 512;  // bert-base-uncased position limit
inline constexpr const char* kNclsName = "[NCLS]";
// Environment variable naming a directory of model checkpoints addressable by id.
inline constexpr const char* kModelCacheEnv = "CLOZEREC_MODEL_CACHE";

struct SpecialTokens {
  TokenId pad = 0, unk = 1, cls = 2, sep = 3, mask = 4;
};

class ModelHandle {
 public:
  ModelHandle(std::string model_id, Vocabulary vocab, MaskedLm model);

  const std::string& model_id() const { return model_id_; }
  const Vocabulary& vocab() const { return vocab_; }
  const SpecialTokens& special() const { return special_; }
  std::size_t max_positions() const { return model_.config().max_positions; }
  std::size_t pretrained_vocab_size() const { return pretrained_vocab_size_; }
  const std::map<std::string, TokenId>& virtual_registry() const { return registry_; }
  std::optional<TokenId> virtual_id(const std::string& name) const;

  MaskedLm& model() { return model_; }
  const MaskedLm& model() const { return model_; }
  WordPieceTokenizer tokenizer() const { return WordPieceTokenizer(&vocab_); }

  // Marks everything but the virtual-token embedding rows frozen (prompt-only tuning), or
  // unfreezes all parameters.
  void set_backbone_frozen(bool frozen);
  bool backbone_frozen() const { return backbone_frozen_; }

  void save(const std::filesystem::path& dir) const;
  static ModelHandle load(const std::filesystem::path& dir);

  friend void register_virtual_tokens(ModelHandle& handle, const std::vector<std::string>& names,
                                      std::uint64_t seed);

 private:
  std::string model_id_;
  Vocabulary vocab_;
  SpecialTokens special_;
  std::size_t pretrained_vocab_size_ = 0;
  bool backbone_frozen_ = false;
  std::map<std::string, TokenId> registry_;
  MaskedLm model_;
};

// Built-in architectures usable as model ids without a checkpoint directory. They start from
// random weights over a vocabulary built from the supplied corpus words.
struct ModelPreset {
  std::string id;
  MaskedLmConfig config;
};
const std::vector<ModelPreset>& model_presets();

// Resolves `model_id` to, in order: a checkpoint directory, a directory under
// $CLOZEREC_MODEL_CACHE, or a preset (initialized from `vocab_corpus` and `seed`).
ModelHandle create_model(const std::string& model_id, const std::vector<std::string>& vocab_corpus,
                         std::uint64_t seed, std::size_t max_vocab_words = 30000);

// Adds one vocabulary entry per new name, with an embedding drawn from N(0, sd^2) where sd is
// the element-wise standard deviation of the pretrained embedding rows. Names already
// registered are skipped; a name that is a pretrained token throws RegistrationError.
void register_virtual_tokens(ModelHandle& handle, const std::vector<std::string>& names,
                             std::uint64_t seed);

// What a token is, for attention export and truncation.
enum class TokenRole : std::uint8_t {
  kCls, kSep, kTemplate, kVirtual, kNcls, kHistory, kCandidate, kMask, kPad
};
std::string_view to_string(TokenRole role);

struct TruncationReport {
  std::size_t dropped_history_entries = 0;
  std::size_t dropped_history_tokens = 0;
};

struct TokenizedInput {
  std::vector<TokenId> ids;
  std::vector<TokenRole> roles;
  std::vector<std::uint8_t> attention_mask;
  std::size_t mask_position = 0;
  TruncationReport truncation;

  std::size_t size() const { return ids.size(); }
};

// Frames the prompt as [CLS] ... [SEP]. Over-long inputs lose whole history entries (NCLS plus
// title), oldest first; the mask, candidate and template tokens are never dropped. Throws
// EncodingOverflowError when the input does not fit even with no history.
TokenizedInput encode(const ModelHandle& handle, const prompting::PromptSequence& prompt,
                      std::size_t max_len = kDefaultMaxLength);

std::vector<std::string> decode_tokens(const ModelHandle& handle, const std::vector<TokenId>& ids);

struct AnswerIds {
  TokenId positive;
  TokenId negative;
};

// Each answer word must be a single vocabulary token.
AnswerIds resolve_answers(const ModelHandle& handle, const prompting::AnswerSpace& answers);

enum class ScoreMode {
  kBinary,     // softmax over the two answer logits
  kFullVocab,  // softmax over the whole vocabulary, positive answer's share
};

// One forward pass at the mask with everything backward() needs.
struct MaskForward {
  MaskedLm::Trace trace;
  std::vector<TokenId> output_ids;
  Eigen::VectorXd logits;
  Eigen::Index positive_index = 0;  // into output_ids / logits
  double p_positive = 0.0;
};

MaskForward forward_mask(const ModelHandle& handle, const TokenizedInput& input,
                         const AnswerIds& answers, ScoreMode mode = ScoreMode::kBinary);

// Accumulates parameter gradients for d(loss)/d(p_positive) = `d_p`.
void backward_mask(ModelHandle& handle, const MaskForward& fwd, double d_p,
                   ScoreMode mode = ScoreMode::kBinary);

// Pads the batch to a common length and returns the positive-answer probability per item.
std::vector<double> score_mask(const ModelHandle& handle, const std::vector<TokenizedInput>& batch,
                               const AnswerIds& answers, ScoreMode mode = ScoreMode::kBinary);

// heads x sequence-length matrix: the mask token's attention row per head at `layer`.
Matrix attention_weights(const ModelHandle& handle, const TokenizedInput& input, std::size_t layer);

// CSV rows: layer,head,token_index,token_text,weight.
void write_attention_csv_header(std::ostream& out);
void write_attention_csv(std::ostream& out, const ModelHandle& handle, const TokenizedInput& input,
                         std::size_t layer, const Matrix& weights);

}  // namespace clozerec::backend
