#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clozerec/tokenizer.h"

namespace clozerec::backend {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct MaskedLmConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t intermediate = 64;
  std::size_t max_positions = 512;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;
};

// A named weight tensor with its gradient accumulator. Rows below `first_trainable_row` are
// frozen when `trainable` is set; `trainable == false` freezes the whole tensor.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;
  bool trainable = true;
  Eigen::Index first_trainable_row = 0;
};

// Post-LN transformer encoder with a tied-embedding MLM head, in the layout of BERT:
// embeddings (word + position) -> LayerNorm -> N x [self-attention, FFN] -> transform ->
// LayerNorm -> decoder over the word embeddings plus a per-token bias.
class MaskedLm {
 public:
  MaskedLm() = default;
  MaskedLm(const MaskedLmConfig& config, std::uint64_t seed);

  const MaskedLmConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  const Matrix& word_embeddings() const { return params_[kWordEmb].value; }
  Matrix& word_embeddings() { return params_[kWordEmb].value; }
  // Appends `rows` to the word embedding matrix and matching zero decoder-bias entries.
  void append_vocabulary_rows(const Matrix& rows);

  struct LayerTrace {
    Matrix input, q, k, v, context, r1_hat, h1, ffn_pre, ffn_act, r2_hat, output;
    Eigen::VectorXd r1_inv_std, r2_inv_std;
    std::vector<Matrix> attention;  // per head, T x T
  };

  struct Trace {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> key_mask;
    Matrix emb_hat;
    Eigen::VectorXd emb_inv_std;
    std::vector<LayerTrace> layers;
    // MLM head at `head_position`.
    Eigen::Index head_position = -1;
    RowVector head_pre, head_act, head_hat, head_out;
    double head_inv_std = 0.0;
  };

  // Encoder forward over one sequence; key_mask[t] == 0 excludes position t as an attention key.
  Trace forward(std::span<const TokenId> ids, std::span<const std::uint8_t> key_mask) const;

  // Runs the MLM head at `position` and returns the logits of `output_ids`.
  Eigen::VectorXd head_logits(Trace& trace, Eigen::Index position,
                              std::span<const TokenId> output_ids) const;

  // Accumulates d(loss)/d(parameters) given d(loss)/d(logits) for the ids passed to
  // head_logits.
  void backward(const Trace& trace, std::span<const TokenId> output_ids,
                const Eigen::VectorXd& d_logits);

  void zero_grad();

  void write(std::ostream& out) const;
  static MaskedLm read(std::istream& in, const MaskedLmConfig& config);

 private:
  void add_parameter(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay,
                     double init_std, double fill, std::mt19937_64& rng);

  // Indices into params_.
  static constexpr std::size_t kWordEmb = 0, kPosEmb = 1, kEmbLnGamma = 2, kEmbLnBeta = 3;
  static constexpr std::size_t kLayerBase = 4, kPerLayer = 16;
  enum LayerParam : std::size_t {
    kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo, kLn1Gamma, kLn1Beta, kW1, kB1, kW2, kB2, kLn2Gamma,
    kLn2Beta
  };
  std::size_t layer_index(std::size_t layer, LayerParam p) const {
    return kLayerBase + layer * kPerLayer + p;
  }
  std::size_t head_base() const { return kLayerBase + config_.layers * kPerLayer; }
  // Head parameters relative to head_base().
  enum HeadParam : std::size_t { kWt, kBt, kLntGamma, kLntBeta, kDecoderBias };

  MaskedLmConfig config_;
  std::vector<Parameter> params_;
};

}  // namespace clozerec::backend
