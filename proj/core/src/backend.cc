#include "clozerec/backend.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "clozerec/errors.h"
#include "json.hpp"
#include "random_util.h"

namespace clozerec::backend {

namespace {

SpecialTokens resolve_special(const Vocabulary& vocab) {
  SpecialTokens s;
  try {
    s.pad = vocab.at(kPadToken);
    s.unk = vocab.at(kUnkToken);
    s.cls = vocab.at(kClsToken);
    s.sep = vocab.at(kSepToken);
    s.mask = vocab.at(kMaskToken);
  } catch (const std::out_of_range& e) {
    throw ArgumentError(std::string("vocabulary lacks a special token: ") + e.what());
  }
  return s;
}

}  // namespace

ModelHandle::ModelHandle(std::string model_id, Vocabulary vocab, MaskedLm model)
    : model_id_(std::move(model_id)),
      vocab_(std::move(vocab)),
      special_(resolve_special(vocab_)),
      pretrained_vocab_size_(vocab_.size()),
      model_(std::move(model)) {
  if (model_.config().vocab_size != vocab_.size()) {
    throw ArgumentError("model embedding rows (" + std::to_string(model_.config().vocab_size) +
                        ") do not match vocabulary size (" + std::to_string(vocab_.size()) + ")");
  }
}

std::optional<TokenId> ModelHandle::virtual_id(const std::string& name) const {
  const auto it = registry_.find(name);
  if (it == registry_.end()) return std::nullopt;
  return it->second;
}

void ModelHandle::set_backbone_frozen(bool frozen) {
  backbone_frozen_ = frozen;
  for (auto& p : model_.parameters()) {
    p.trainable = !frozen;
    p.first_trainable_row = 0;
  }
  if (frozen) {
    auto& emb = model_.parameter("embeddings.word");
    emb.trainable = true;
    emb.first_trainable_row = static_cast<Eigen::Index>(pretrained_vocab_size_);
  }
}

void ModelHandle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto& c = model_.config();
  nlohmann::json registry = nlohmann::json::object();
  for (const auto& [name, id] : registry_) registry[name] = id;
  nlohmann::json cfg = {
      {"model_id", model_id_},
      {"vocab_size", c.vocab_size},
      {"hidden", c.hidden},
      {"layers", c.layers},
      {"heads", c.heads},
      {"intermediate", c.intermediate},
      {"max_positions", c.max_positions},
      {"layer_norm_eps", c.layer_norm_eps},
      {"init_std", c.init_std},
      {"pretrained_vocab_size", pretrained_vocab_size_},
      {"virtual_registry", registry},
  };
  std::ofstream(dir / "config.json") << cfg.dump(2) << '\n';
  std::ofstream vocab_out(dir / "vocab.txt");
  vocab_.write(vocab_out);
  std::ofstream weights(dir / "weights.bin", std::ios::binary);
  model_.write(weights);
  if (!weights) throw std::runtime_error("failed to write weights under " + dir.string());
}

ModelHandle ModelHandle::load(const std::filesystem::path& dir) {
  std::ifstream cfg_in(dir / "config.json");
  if (!cfg_in) throw ArgumentError("no config.json in model directory " + dir.string());
  const auto cfg = nlohmann::json::parse(cfg_in);
  MaskedLmConfig c;
  c.vocab_size = cfg.at("vocab_size").get<std::size_t>();
  c.hidden = cfg.at("hidden").get<std::size_t>();
  c.layers = cfg.at("layers").get<std::size_t>();
  c.heads = cfg.at("heads").get<std::size_t>();
  c.intermediate = cfg.at("intermediate").get<std::size_t>();
  c.max_positions = cfg.at("max_positions").get<std::size_t>();
  c.layer_norm_eps = cfg.value("layer_norm_eps", 1e-12);
  c.init_std = cfg.value("init_std", 0.02);

  std::ifstream vocab_in(dir / "vocab.txt");
  if (!vocab_in) throw ArgumentError("no vocab.txt in model directory " + dir.string());
  auto vocab = Vocabulary::read(vocab_in);
  std::ifstream weights(dir / "weights.bin", std::ios::binary);
  if (!weights) throw ArgumentError("no weights.bin in model directory " + dir.string());
  auto model = MaskedLm::read(weights, c);

  ModelHandle handle(cfg.value("model_id", dir.filename().string()), std::move(vocab),
                     std::move(model));
  handle.pretrained_vocab_size_ = cfg.value("pretrained_vocab_size", handle.vocab_.size());
  if (cfg.contains("virtual_registry")) {
    for (const auto& [name, id] : cfg.at("virtual_registry").items()) {
      handle.registry_[name] = id.get<TokenId>();
    }
  }
  return handle;
}

const std::vector<ModelPreset>& model_presets() {
  static const std::vector<ModelPreset> presets = [] {
    std::vector<ModelPreset> p;
    MaskedLmConfig tiny;
    tiny.hidden = 32;
    tiny.layers = 2;
    tiny.heads = 2;
    tiny.intermediate = 64;
    p.push_back({"tiny-mlm", tiny});
    auto tiny4 = tiny;
    tiny4.layers = 4;
    p.push_back({"tiny-mlm-4l", tiny4});
    MaskedLmConfig small;
    small.hidden = 64;
    small.layers = 4;
    small.heads = 4;
    small.intermediate = 256;
    p.push_back({"small-mlm", small});
    return p;
  }();
  return presets;
}

ModelHandle create_model(const std::string& model_id, const std::vector<std::string>& vocab_corpus,
                         std::uint64_t seed, std::size_t max_vocab_words) {
  namespace fs = std::filesystem;
  if (fs::is_directory(model_id) && fs::exists(fs::path(model_id) / "config.json")) {
    return ModelHandle::load(model_id);
  }
  if (const char* cache = std::getenv(kModelCacheEnv); cache != nullptr && *cache != '\0') {
    const auto dir = fs::path(cache) / model_id;
    if (fs::exists(dir / "config.json")) return ModelHandle::load(dir);
  }
  for (const auto& preset : model_presets()) {
    if (preset.id != model_id) continue;
    auto vocab = build_vocabulary(vocab_corpus, max_vocab_words);
    auto config = preset.config;
    config.vocab_size = vocab.size();
    return ModelHandle(model_id, std::move(vocab), MaskedLm(config, seed));
  }
  std::string known;
  for (const auto& preset : model_presets()) known += " " + preset.id;
  throw ArgumentError("cannot resolve model id '" + model_id +
                      "': not a checkpoint directory, not under $" + kModelCacheEnv +
                      ", and not a preset (presets:" + known + ")");
}

void register_virtual_tokens(ModelHandle& handle, const std::vector<std::string>& names,
                             std::uint64_t seed) {
  std::vector<std::string> fresh;
  for (const auto& name : names) {
    if (handle.registry_.count(name) != 0) continue;
    if (std::find(fresh.begin(), fresh.end(), name) != fresh.end()) continue;
    if (handle.vocab_.find(name)) {
      throw RegistrationError("virtual token '" + name + "' collides with a pretrained token");
    }
    fresh.push_back(name);
  }
  if (fresh.empty()) return;

  const auto& emb = handle.model_.word_embeddings();
  const auto pretrained = emb.topRows(static_cast<Eigen::Index>(handle.pretrained_vocab_size_));
  const double mean = pretrained.mean();
  const double sd =
      std::sqrt((pretrained.array() - mean).square().sum() / static_cast<double>(pretrained.size()));

  random::Rng rng(seed);
  Matrix rows(static_cast<Eigen::Index>(fresh.size()), emb.cols());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) rows(r, c) = sd * random::standard_normal(rng);
  }
  handle.model_.append_vocabulary_rows(rows);
  for (const auto& name : fresh) handle.registry_[name] = handle.vocab_.add(name);
  if (handle.backbone_frozen_) handle.set_backbone_frozen(true);
}

std::string_view to_string(TokenRole role) {
  switch (role) {
    case TokenRole::kCls: return "cls";
    case TokenRole::kSep: return "sep";
    case TokenRole::kTemplate: return "template";
    case TokenRole::kVirtual: return "virtual";
    case TokenRole::kNcls: return "ncls";
    case TokenRole::kHistory: return "history";
    case TokenRole::kCandidate: return "candidate";
    case TokenRole::kMask: return "mask";
    case TokenRole::kPad: return "pad";
  }
  return "?";
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Piece {
  TokenId id;
  TokenRole role;
  std::ptrdiff_t history_entry;  // -1 outside <USER>
};

TokenId registered(const ModelHandle& handle, const std::string& name) {
  if (auto id = handle.virtual_id(name)) return *id;
  throw RegistrationError("virtual token '" + name + "' is not registered with model '" +
                          handle.model_id() + "'");
}

}  // namespace

TokenizedInput encode(const ModelHandle& handle, const prompting::PromptSequence& prompt,
                      std::size_t max_len) {
  using namespace prompting;
  const auto tok = handle.tokenizer();
  const auto& sp = handle.special();
  std::vector<Piece> pieces{{sp.cls, TokenRole::kCls, -1}};
  std::size_t masks = 0;
  std::ptrdiff_t history_entries = 0;

  auto push_words = [&](const std::vector<std::string>& words, TokenRole role, std::ptrdiff_t entry) {
    for (auto id : tok.encode_words(words)) pieces.push_back({id, role, entry});
  };
  for (const auto& seg : prompt.segments) {
    std::visit(overloaded{
                   [&](const Literal& l) { push_words(l.words, TokenRole::kTemplate, -1); },
                   [&](const UserSpan& u) {
                     for (const auto& s : u.text.segments) {
                       if (std::holds_alternative<corpus::NclsMarker>(s)) {
                         pieces.push_back(
                             {registered(handle, kNclsName), TokenRole::kNcls, history_entries++});
                       } else {
                         // A title without a preceding marker still counts as its own entry.
                         const auto entry = history_entries == 0 ? history_entries++
                                                                 : history_entries - 1;
                         push_words(std::get<corpus::HistoryTitle>(s).words, TokenRole::kHistory,
                                    entry);
                       }
                     }
                   },
                   [&](const CandidateSpan& c) {
                     push_words(c.text.words, TokenRole::kCandidate, -1);
                   },
                   [&](const MaskSlot&) {
                     ++masks;
                     pieces.push_back({sp.mask, TokenRole::kMask, -1});
                   },
                   [&](const SepMarker&) { pieces.push_back({sp.sep, TokenRole::kSep, -1}); },
                   [&](const VirtualToken& v) {
                     pieces.push_back(
                         {registered(handle, virtual_token_name(v)), TokenRole::kVirtual, -1});
                   },
               },
               seg);
  }
  pieces.push_back({sp.sep, TokenRole::kSep, -1});
  if (masks != 1) throw ContractViolation("prompt must contain exactly one mask slot");

  const auto limit = std::min(max_len, handle.max_positions());
  TokenizedInput out;
  std::ptrdiff_t first_kept_entry = 0;
  if (pieces.size() > limit) {
    std::vector<std::size_t> entry_tokens(static_cast<std::size_t>(history_entries), 0);
    for (const auto& p : pieces) {
      if (p.history_entry >= 0) ++entry_tokens[static_cast<std::size_t>(p.history_entry)];
    }
    std::size_t length = pieces.size();
    while (length > limit && first_kept_entry < history_entries) {
      const auto n = entry_tokens[static_cast<std::size_t>(first_kept_entry++)];
      length -= n;
      out.truncation.dropped_history_tokens += n;
      ++out.truncation.dropped_history_entries;
    }
    if (length > limit) {
      throw EncodingOverflowError("prompt needs " + std::to_string(length) +
                                  " tokens without any history; limit is " +
                                  std::to_string(limit));
    }
  }
  for (const auto& p : pieces) {
    if (p.history_entry >= 0 && p.history_entry < first_kept_entry) continue;
    if (p.role == TokenRole::kMask) out.mask_position = out.ids.size();
    out.ids.push_back(p.id);
    out.roles.push_back(p.role);
  }
  out.attention_mask.assign(out.ids.size(), 1);
  return out;
}

std::vector<std::string> decode_tokens(const ModelHandle& handle, const std::vector<TokenId>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(handle.vocab().token(id));
  return out;
}

AnswerIds resolve_answers(const ModelHandle& handle, const prompting::AnswerSpace& answers) {
  const auto tok = handle.tokenizer();
  auto single = [&](const std::string& word) -> TokenId {
    std::vector<std::string> pieces;
    for (const auto& t : WordPieceTokenizer::basic_tokenize(word)) {
      for (auto& p : tok.word_pieces(t)) pieces.push_back(std::move(p));
    }
    if (pieces.size() == 1 && pieces[0] != kUnkToken) return handle.vocab().at(pieces[0]);

    // Suggest the closest whole-word vocabulary entry by edit distance.
    auto distance = [](const std::string& a, const std::string& b) {
      std::vector<std::size_t> row(b.size() + 1);
      for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
      for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
          const auto up = row[j];
          row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0u : 1u)});
          diag = up;
        }
      }
      return row[b.size()];
    };
    std::string best;
    std::size_t best_d = ~std::size_t{0};
    for (std::size_t id = 0; id < handle.pretrained_vocab_size(); ++id) {
      const auto& t = handle.vocab().token(static_cast<TokenId>(id));
      if (t.size() < 2 || t[0] == '[' || t.rfind("##", 0) == 0) continue;
      const auto d = distance(word, t);
      if (d < best_d) {
        best_d = d;
        best = t;
      }
    }
    std::string joined;
    for (const auto& p : pieces) joined += (joined.empty() ? "" : " ") + p;
    throw ArgumentError("answer word '" + word + "' is not a single vocabulary token (" + joined +
                        ")" + (best.empty() ? "" : "; try a single-token word such as '" + best + "'"));
  };
  return {single(answers.positive), single(answers.negative)};
}

MaskForward forward_mask(const ModelHandle& handle, const TokenizedInput& input,
                         const AnswerIds& answers, ScoreMode mode) {
  if (input.mask_position >= input.ids.size()) {
    throw ContractViolation("mask position " + std::to_string(input.mask_position) +
                            " outside a sequence of length " + std::to_string(input.ids.size()));
  }
  MaskForward fwd;
  fwd.trace = handle.model().forward(input.ids, input.attention_mask);
  if (mode == ScoreMode::kBinary) {
    fwd.output_ids = {answers.positive, answers.negative};
    fwd.positive_index = 0;
  } else {
    fwd.positive_index = answers.positive;
    fwd.output_ids.resize(handle.vocab().size());
    for (std::size_t i = 0; i < fwd.output_ids.size(); ++i) fwd.output_ids[i] = static_cast<TokenId>(i);
  }
  fwd.logits = handle.model().head_logits(fwd.trace, static_cast<Eigen::Index>(input.mask_position),
                                          fwd.output_ids);
  if (mode == ScoreMode::kBinary) {
    const double diff = fwd.logits[1] - fwd.logits[0];
    // Logistic form of the two-way softmax, stable for either sign.
    fwd.p_positive = diff >= 0 ? std::exp(-diff) / (1.0 + std::exp(-diff)) : 1.0 / (1.0 + std::exp(diff));
  } else {
    const double max = fwd.logits.maxCoeff();
    const double z = (fwd.logits.array() - max).exp().sum();
    fwd.p_positive = std::exp(fwd.logits[fwd.positive_index] - max) / z;
  }
  return fwd;
}

void backward_mask(ModelHandle& handle, const MaskForward& fwd, double d_p, ScoreMode mode) {
  Eigen::VectorXd d_logits(fwd.logits.size());
  const double p = fwd.p_positive;
  if (mode == ScoreMode::kBinary) {
    d_logits[0] = d_p * p * (1.0 - p);
    d_logits[1] = -d_logits[0];
  } else {
    const double max = fwd.logits.maxCoeff();
    Eigen::VectorXd s = (fwd.logits.array() - max).exp();
    s /= s.sum();
    d_logits = -d_p * p * s;
    d_logits[fwd.positive_index] += d_p * p;
  }
  handle.model().backward(fwd.trace, fwd.output_ids, d_logits);
}

std::vector<double> score_mask(const ModelHandle& handle, const std::vector<TokenizedInput>& batch,
                               const AnswerIds& answers, ScoreMode mode) {
  if (batch.empty()) throw ContractViolation("score_mask needs a non-empty batch");
  std::size_t width = 0;
  for (const auto& item : batch) width = std::max(width, item.ids.size());
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& item : batch) {
    if (item.mask_position >= item.ids.size()) {
      throw ContractViolation("mask position outside its sequence");
    }
    TokenizedInput padded = item;
    padded.ids.resize(width, handle.special().pad);
    padded.roles.resize(width, TokenRole::kPad);
    padded.attention_mask.resize(width, 0);
    out.push_back(forward_mask(handle, padded, answers, mode).p_positive);
  }
  return out;
}

Matrix attention_weights(const ModelHandle& handle, const TokenizedInput& input, std::size_t layer) {
  const auto depth = handle.model().config().layers;
  if (layer >= depth) {
    throw ArgumentError("layer " + std::to_string(layer) + " out of range; model has " +
                        std::to_string(depth) + " layers");
  }
  if (input.mask_position >= input.ids.size()) throw ContractViolation("mask position out of range");
  const auto trace = handle.model().forward(input.ids, input.attention_mask);
  const auto& heads = trace.layers[layer].attention;
  Matrix out(static_cast<Eigen::Index>(heads.size()), static_cast<Eigen::Index>(input.ids.size()));
  for (std::size_t h = 0; h < heads.size(); ++h) {
    out.row(static_cast<Eigen::Index>(h)) = heads[h].row(static_cast<Eigen::Index>(input.mask_position));
  }
  return out;
}

void write_attention_csv_header(std::ostream& out) {
  out << "layer,head,token_index,token_text,weight\n";
}

void write_attention_csv(std::ostream& out, const ModelHandle& handle, const TokenizedInput& input,
                         std::size_t layer, const Matrix& weights) {
  const auto texts = decode_tokens(handle, input.ids);
  auto quoted = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  for (Eigen::Index h = 0; h < weights.rows(); ++h) {
    for (Eigen::Index t = 0; t < weights.cols(); ++t) {
      out << layer << ',' << h << ',' << t << ',' << quoted(texts[static_cast<std::size_t>(t)]) << ','
          << std::setprecision(17) << weights(h, t) << '\n';
    }
  }
}

}  // namespace clozerec::backend
