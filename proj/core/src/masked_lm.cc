#include "clozerec/masked_lm.h"

#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "clozerec/errors.h"
#include "random_util.h"

namespace clozerec::backend {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Matrix apply_gelu(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

void layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps, Matrix& hat,
                Eigen::VectorXd& inv_std, Matrix& out) {
  const auto cols = static_cast<double>(x.cols());
  hat.resize(x.rows(), x.cols());
  inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / cols;
    const double var = (x.row(r).array() - mean).square().sum() / cols;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    hat.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  out = (hat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

Matrix layer_norm_backward(const Matrix& d_out, const Matrix& hat, const Eigen::VectorXd& inv_std,
                           const Matrix& gamma, Matrix& d_gamma, Matrix& d_beta) {
  d_gamma += d_out.cwiseProduct(hat).colwise().sum();
  d_beta += d_out.colwise().sum();
  const Matrix d_hat = d_out.array().rowwise() * gamma.row(0).array();
  const auto cols = static_cast<double>(hat.cols());
  Matrix d_in(d_out.rows(), d_out.cols());
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    const double mean_d = d_hat.row(r).sum() / cols;
    const double mean_dh = d_hat.row(r).dot(hat.row(r)) / cols;
    d_in.row(r) = inv_std[r] * (d_hat.row(r).array() - mean_d - hat.row(r).array() * mean_dh);
  }
  return d_in;
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double max = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - max).exp();
    s.row(r) /= s.row(r).sum();
  }
}

constexpr char kMagic[4] = {'C', 'L', 'Z', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("truncated weights file");
  return value;
}

}  // namespace

void MaskedLm::add_parameter(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay,
                             double init_std, double fill, std::mt19937_64& rng) {
  Parameter p;
  p.name = std::move(name);
  p.value.resize(rows, cols);
  if (init_std > 0.0) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) p.value(r, c) = init_std * random::standard_normal(rng);
    }
  } else {
    p.value.setConstant(fill);
  }
  p.grad = Matrix::Zero(rows, cols);
  p.decay = decay;
  params_.push_back(std::move(p));
}

MaskedLm::MaskedLm(const MaskedLmConfig& config, std::uint64_t seed) : config_(config) {
  if (config.hidden == 0 || config.heads == 0 || config.hidden % config.heads != 0) {
    throw ArgumentError("hidden size must be a positive multiple of the head count");
  }
  if (config.vocab_size == 0 || config.layers == 0 || config.max_positions == 0) {
    throw ArgumentError("vocabulary, depth and position limit must be positive");
  }
  random::Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(config.hidden);
  const auto f = static_cast<Eigen::Index>(config.intermediate);
  const double s = config.init_std;
  add_parameter("embeddings.word", static_cast<Eigen::Index>(config.vocab_size), d, true, s, 0, rng);
  add_parameter("embeddings.position", static_cast<Eigen::Index>(config.max_positions), d, true, s,
                0, rng);
  add_parameter("embeddings.ln.gamma", 1, d, false, 0, 1.0, rng);
  add_parameter("embeddings.ln.beta", 1, d, false, 0, 0.0, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const auto prefix = "layer" + std::to_string(l) + ".";
    add_parameter(prefix + "attn.q.weight", d, d, true, s, 0, rng);
    add_parameter(prefix + "attn.q.bias", 1, d, false, 0, 0.0, rng);
    add_parameter(prefix + "attn.k.weight", d, d, true, s, 0, rng);
    add_parameter(prefix + "attn.k.bias", 1, d, false, 0, 0.0, rng);
    add_parameter(prefix + "attn.v.weight", d, d, true, s, 0, rng);
    add_parameter(prefix + "attn.v.bias", 1, d, false, 0, 0.0, rng);
    add_parameter(prefix + "attn.out.weight", d, d, true, s, 0, rng);
    add_parameter(prefix + "attn.out.bias", 1, d, false, 0, 0.0, rng);
    add_parameter(prefix + "attn.ln.gamma", 1, d, false, 0, 1.0, rng);
    add_parameter(prefix + "attn.ln.beta", 1, d, false, 0, 0.0, rng);
    add_parameter(prefix + "ffn.in.weight", d, f, true, s, 0, rng);
    add_parameter(prefix + "ffn.in.bias", 1, f, false, 0, 0.0, rng);
    add_parameter(prefix + "ffn.out.weight", f, d, true, s, 0, rng);
    add_parameter(prefix + "ffn.out.bias", 1, d, false, 0, 0.0, rng);
    add_parameter(prefix + "ffn.ln.gamma", 1, d, false, 0, 1.0, rng);
    add_parameter(prefix + "ffn.ln.beta", 1, d, false, 0, 0.0, rng);
  }
  add_parameter("mlm.transform.weight", d, d, true, s, 0, rng);
  add_parameter("mlm.transform.bias", 1, d, false, 0, 0.0, rng);
  add_parameter("mlm.ln.gamma", 1, d, false, 0, 1.0, rng);
  add_parameter("mlm.ln.beta", 1, d, false, 0, 0.0, rng);
  add_parameter("mlm.decoder.bias", 1, static_cast<Eigen::Index>(config.vocab_size), false, 0, 0.0,
                rng);
}

Parameter& MaskedLm::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& MaskedLm::parameter(const std::string& name) const {
  return const_cast<MaskedLm*>(this)->parameter(name);
}

void MaskedLm::append_vocabulary_rows(const Matrix& rows) {
  if (rows.cols() != static_cast<Eigen::Index>(config_.hidden)) {
    throw ContractViolation("embedding rows have the wrong width");
  }
  auto& emb = params_[kWordEmb];
  const auto old = emb.value.rows();
  emb.value.conservativeResize(old + rows.rows(), Eigen::NoChange);
  emb.value.bottomRows(rows.rows()) = rows;
  emb.grad = Matrix::Zero(emb.value.rows(), emb.value.cols());

  auto& bias = params_[head_base() + kDecoderBias];
  bias.value.conservativeResize(Eigen::NoChange, old + rows.rows());
  bias.value.rightCols(rows.rows()).setZero();
  bias.grad = Matrix::Zero(1, bias.value.cols());
  config_.vocab_size = static_cast<std::size_t>(emb.value.rows());
}

MaskedLm::Trace MaskedLm::forward(std::span<const TokenId> ids,
                                  std::span<const std::uint8_t> key_mask) const {
  const auto T = static_cast<Eigen::Index>(ids.size());
  if (ids.empty() || ids.size() > config_.max_positions) {
    throw ContractViolation("sequence length must lie in [1, max_positions]");
  }
  if (key_mask.size() != ids.size()) throw ContractViolation("key mask length mismatch");

  Trace trace;
  trace.ids.assign(ids.begin(), ids.end());
  trace.key_mask.assign(key_mask.begin(), key_mask.end());

  const auto& word = params_[kWordEmb].value;
  const auto& pos = params_[kPosEmb].value;
  Matrix x(T, word.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= word.rows()) throw ContractViolation("token id out of range");
    x.row(t) = word.row(id) + pos.row(t);
  }
  Matrix h;
  layer_norm(x, params_[kEmbLnGamma].value, params_[kEmbLnBeta].value, config_.layer_norm_eps,
             trace.emb_hat, trace.emb_inv_std, h);

  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const auto head_dim = static_cast<Eigen::Index>(config_.hidden / config_.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  trace.layers.resize(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto& lt = trace.layers[l];
    auto P = [&](LayerParam p) -> const Matrix& { return params_[layer_index(l, p)].value; };
    lt.input = h;
    lt.q = (h * P(kWq)).rowwise() + P(kBq).row(0);
    lt.k = (h * P(kWk)).rowwise() + P(kBk).row(0);
    lt.v = (h * P(kWv)).rowwise() + P(kBv).row(0);
    lt.context.resize(T, h.cols());
    lt.attention.resize(config_.heads);
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      Matrix s = lt.q.middleCols(hd * head_dim, head_dim) *
                 lt.k.middleCols(hd * head_dim, head_dim).transpose() * scale;
      for (Eigen::Index t = 0; t < T; ++t) {
        if (key_mask[static_cast<std::size_t>(t)] == 0) s.col(t).setConstant(kNegInf);
      }
      softmax_rows(s);
      lt.context.middleCols(hd * head_dim, head_dim) = s * lt.v.middleCols(hd * head_dim, head_dim);
      lt.attention[static_cast<std::size_t>(hd)] = std::move(s);
    }
    const Matrix r1 = h + ((lt.context * P(kWo)).rowwise() + P(kBo).row(0));
    layer_norm(r1, P(kLn1Gamma), P(kLn1Beta), config_.layer_norm_eps, lt.r1_hat, lt.r1_inv_std,
               lt.h1);
    lt.ffn_pre = (lt.h1 * P(kW1)).rowwise() + P(kB1).row(0);
    lt.ffn_act = apply_gelu(lt.ffn_pre);
    const Matrix r2 = lt.h1 + ((lt.ffn_act * P(kW2)).rowwise() + P(kB2).row(0));
    layer_norm(r2, P(kLn2Gamma), P(kLn2Beta), config_.layer_norm_eps, lt.r2_hat, lt.r2_inv_std,
               lt.output);
    h = lt.output;
  }
  return trace;
}

Eigen::VectorXd MaskedLm::head_logits(Trace& trace, Eigen::Index position,
                                      std::span<const TokenId> output_ids) const {
  const auto& last = trace.layers.back().output;
  if (position < 0 || position >= last.rows()) throw ContractViolation("head position out of range");
  const auto base = head_base();
  trace.head_position = position;
  trace.head_pre = last.row(position) * params_[base + kWt].value + params_[base + kBt].value;
  trace.head_act = trace.head_pre.unaryExpr([](double v) { return gelu(v); });
  Matrix hat, out;
  Eigen::VectorXd inv_std;
  layer_norm(trace.head_act, params_[base + kLntGamma].value, params_[base + kLntBeta].value,
             config_.layer_norm_eps, hat, inv_std, out);
  trace.head_hat = hat.row(0);
  trace.head_inv_std = inv_std[0];
  trace.head_out = out.row(0);

  const auto& word = params_[kWordEmb].value;
  const auto& bias = params_[base + kDecoderBias].value;
  Eigen::VectorXd logits(static_cast<Eigen::Index>(output_ids.size()));
  for (std::size_t i = 0; i < output_ids.size(); ++i) {
    const auto id = output_ids[i];
    if (id < 0 || id >= word.rows()) throw ContractViolation("output id out of range");
    logits[static_cast<Eigen::Index>(i)] = trace.head_out.dot(word.row(id)) + bias(0, id);
  }
  return logits;
}

void MaskedLm::backward(const Trace& trace, std::span<const TokenId> output_ids,
                        const Eigen::VectorXd& d_logits) {
  if (trace.head_position < 0) throw ContractViolation("backward before head_logits");
  const auto base = head_base();
  auto& word = params_[kWordEmb];
  auto& dec_bias = params_[base + kDecoderBias];

  RowVector d_head_out = RowVector::Zero(trace.head_out.size());
  for (std::size_t i = 0; i < output_ids.size(); ++i) {
    const auto id = output_ids[i];
    const double g = d_logits[static_cast<Eigen::Index>(i)];
    d_head_out += g * word.value.row(id);
    word.grad.row(id) += g * trace.head_out;
    dec_bias.grad(0, id) += g;
  }
  Eigen::VectorXd inv_std(1);
  inv_std[0] = trace.head_inv_std;
  const Matrix d_act = layer_norm_backward(d_head_out, trace.head_hat, inv_std,
                                           params_[base + kLntGamma].value,
                                           params_[base + kLntGamma].grad,
                                           params_[base + kLntBeta].grad);
  const RowVector d_pre =
      d_act.row(0).array() * trace.head_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  const auto& last = trace.layers.back().output;
  params_[base + kWt].grad += last.row(trace.head_position).transpose() * d_pre;
  params_[base + kBt].grad += d_pre;

  Matrix d_h = Matrix::Zero(last.rows(), last.cols());
  d_h.row(trace.head_position) = d_pre * params_[base + kWt].value.transpose();

  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const auto head_dim = static_cast<Eigen::Index>(config_.hidden / config_.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  for (std::size_t li = config_.layers; li-- > 0;) {
    const auto& lt = trace.layers[li];
    auto W = [&](LayerParam p) -> Parameter& { return params_[layer_index(li, p)]; };

    const Matrix d_r2 = layer_norm_backward(d_h, lt.r2_hat, lt.r2_inv_std, W(kLn2Gamma).value,
                                            W(kLn2Gamma).grad, W(kLn2Beta).grad);
    W(kW2).grad += lt.ffn_act.transpose() * d_r2;
    W(kB2).grad += d_r2.colwise().sum();
    const Matrix d_pre_ffn =
        (d_r2 * W(kW2).value.transpose())
            .cwiseProduct(lt.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    W(kW1).grad += lt.h1.transpose() * d_pre_ffn;
    W(kB1).grad += d_pre_ffn.colwise().sum();
    const Matrix d_h1 = d_r2 + d_pre_ffn * W(kW1).value.transpose();

    const Matrix d_r1 = layer_norm_backward(d_h1, lt.r1_hat, lt.r1_inv_std, W(kLn1Gamma).value,
                                            W(kLn1Gamma).grad, W(kLn1Beta).grad);
    W(kWo).grad += lt.context.transpose() * d_r1;
    W(kBo).grad += d_r1.colwise().sum();
    const Matrix d_context = d_r1 * W(kWo).value.transpose();

    Matrix d_q(lt.q.rows(), lt.q.cols()), d_k(lt.k.rows(), lt.k.cols()),
        d_v(lt.v.rows(), lt.v.cols());
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      const auto& a = lt.attention[static_cast<std::size_t>(hd)];
      const auto cols = Eigen::seqN(hd * head_dim, head_dim);
      const Matrix d_ctx_h = d_context(Eigen::all, cols);
      const Matrix d_a = d_ctx_h * lt.v(Eigen::all, cols).transpose();
      d_v(Eigen::all, cols) = a.transpose() * d_ctx_h;
      const Eigen::VectorXd row_dot = d_a.cwiseProduct(a).rowwise().sum();
      const Matrix d_s = (a.array() * (d_a.colwise() - row_dot).array()).matrix() * scale;
      d_q(Eigen::all, cols) = d_s * lt.k(Eigen::all, cols);
      d_k(Eigen::all, cols) = d_s.transpose() * lt.q(Eigen::all, cols);
    }
    W(kWq).grad += lt.input.transpose() * d_q;
    W(kBq).grad += d_q.colwise().sum();
    W(kWk).grad += lt.input.transpose() * d_k;
    W(kBk).grad += d_k.colwise().sum();
    W(kWv).grad += lt.input.transpose() * d_v;
    W(kBv).grad += d_v.colwise().sum();
    d_h = d_r1 + d_q * W(kWq).value.transpose() + d_k * W(kWk).value.transpose() +
          d_v * W(kWv).value.transpose();
  }

  const Matrix d_x = layer_norm_backward(d_h, trace.emb_hat, trace.emb_inv_std,
                                         params_[kEmbLnGamma].value, params_[kEmbLnGamma].grad,
                                         params_[kEmbLnBeta].grad);
  auto& pos = params_[kPosEmb];
  for (Eigen::Index t = 0; t < d_x.rows(); ++t) {
    word.grad.row(trace.ids[static_cast<std::size_t>(t)]) += d_x.row(t);
    pos.grad.row(t) += d_x.row(t);
  }
}

void MaskedLm::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

void MaskedLm::write(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    write_pod(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(out, static_cast<std::int64_t>(p.value.rows()));
    write_pod(out, static_cast<std::int64_t>(p.value.cols()));
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
  }
}

MaskedLm MaskedLm::read(std::istream& in, const MaskedLmConfig& config) {
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a weights file");
  }
  if (read_pod<std::uint32_t>(in) != kFormatVersion) {
    throw std::runtime_error("unsupported weights format version");
  }
  MaskedLm model(config, 0);
  const auto count = read_pod<std::uint32_t>(in);
  if (count != model.params_.size()) throw std::runtime_error("weights file parameter count mismatch");
  for (auto& p : model.params_) {
    const auto len = read_pod<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = read_pod<std::int64_t>(in);
    const auto cols = read_pod<std::int64_t>(in);
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
      throw std::runtime_error("weights file does not match model layout at " + p.name);
    }
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
    if (!in) throw std::runtime_error("truncated weights file");
  }
  return model;
}

}  // namespace clozerec::backend
