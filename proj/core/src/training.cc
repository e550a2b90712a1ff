#include "clozerec/training.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "clozerec/errors.h"
#include "random_util.h"

namespace clozerec::training {

namespace {

void check_loss_inputs(std::span<const double> p, std::span<const int> labels) {
  if (p.size() != labels.size()) {
    throw ContractViolation("loss inputs differ in length: " + std::to_string(p.size()) + " vs " +
                            std::to_string(labels.size()));
  }
  if (p.empty()) throw ContractViolation("loss needs at least one prediction");
}

}  // namespace

double compute_loss(std::span<const double> p_positive, std::span<const int> labels, double eps) {
  check_loss_inputs(p_positive, labels);
  double sum = 0.0;
  for (std::size_t i = 0; i < p_positive.size(); ++i) {
    const double p = std::clamp(p_positive[i], eps, 1.0 - eps);
    sum += labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<double>(p_positive.size());
}

std::vector<double> loss_gradient(std::span<const double> p_positive, std::span<const int> labels,
                                  double eps) {
  check_loss_inputs(p_positive, labels);
  const double n = static_cast<double>(p_positive.size());
  std::vector<double> grad(p_positive.size(), 0.0);
  for (std::size_t i = 0; i < p_positive.size(); ++i) {
    const double p = p_positive[i];
    if (p < eps || p > 1.0 - eps) continue;
    grad[i] = labels[i] == 1 ? -1.0 / (n * p) : 1.0 / (n * (1.0 - p));
  }
  return grad;
}

void AdamW::step(std::vector<backend::Parameter>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(backend::Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(backend::Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (m_.size() != params.size()) throw ContractViolation("optimizer bound to another model");
  ++steps_;
  const auto& c = config_;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    // Rows appended after the optimizer was created (virtual tokens) get fresh moments.
    if (m_[i].rows() != p.value.rows() || m_[i].cols() != p.value.cols()) {
      const auto old_rows = m_[i].rows();
      const auto old_cols = m_[i].cols();
      m_[i].conservativeResize(p.value.rows(), p.value.cols());
      v_[i].conservativeResize(p.value.rows(), p.value.cols());
      m_[i].bottomRows(p.value.rows() - old_rows).setZero();
      v_[i].bottomRows(p.value.rows() - old_rows).setZero();
      m_[i].rightCols(p.value.cols() - old_cols).setZero();
      v_[i].rightCols(p.value.cols() - old_cols).setZero();
    }
    const auto first = std::min(p.first_trainable_row, p.value.rows());
    const auto rows = p.value.rows() - first;
    if (rows == 0) continue;
    auto w = p.value.bottomRows(rows);
    auto g = p.grad.bottomRows(rows);
    auto m = m_[i].bottomRows(rows);
    auto v = v_[i].bottomRows(rows);
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    backend::Matrix update =
        (m.array() / bias1) / ((v.array() / bias2).sqrt() + c.epsilon);
    if (p.decay) update += c.weight_decay * w;
    w -= c.learning_rate * update;
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ArgumentError("learning rate must be a finite non-negative number");
  }
  if (batch_size < 1) throw ArgumentError("batch size must be at least 1");
  if (epochs < 1) throw ArgumentError("epochs must be at least 1");
  if (few_shot_fraction && !(*few_shot_fraction > 0.0 && *few_shot_fraction <= 1.0)) {
    throw ArgumentError("few-shot fraction must lie in (0, 1]");
  }
}

void Checkpoint::restore_into(backend::MaskedLm& model) const {
  auto& params = model.parameters();
  if (weights.size() != params.size()) throw ContractViolation("checkpoint does not fit model");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = weights[i];
}

backend::TokenizedInput prepare_input(const backend::ModelHandle& handle,
                                      const prompting::TemplateSpec& spec,
                                      const corpus::Sample& sample, std::size_t max_len) {
  return backend::encode(handle, prompting::render(spec, *sample.user_text, sample.candidate_text),
                         max_len);
}

std::vector<double> score_samples(const backend::ModelHandle& handle,
                                  const prompting::TemplateSpec& spec,
                                  const std::vector<corpus::Sample>& samples, std::size_t max_len,
                                  backend::ScoreMode mode, std::size_t batch_size) {
  const auto answers = backend::resolve_answers(handle, spec.answers());
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<backend::TokenizedInput> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
      batch.push_back(prepare_input(handle, spec, samples[i], max_len));
    }
    for (double s : backend::score_mask(handle, batch, answers, mode)) scores.push_back(s);
  }
  return scores;
}

std::vector<evaluation::ScoredImpression> group_scores(const std::vector<corpus::Sample>& samples,
                                                       const std::vector<double>& scores) {
  if (samples.size() != scores.size()) throw ContractViolation("one score per sample required");
  std::vector<evaluation::ScoredImpression> out;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto [it, inserted] = index.emplace(s.impression_id, out.size());
    if (inserted) out.push_back({s.impression_id, {}});
    out[it->second].entries.push_back({s.candidate_id(), scores[i], s.label});
  }
  return out;
}

evaluation::MetricsReport evaluate_samples(const backend::ModelHandle& handle,
                                           const prompting::TemplateSpec& spec,
                                           const std::vector<corpus::Sample>& samples,
                                           std::size_t max_len, backend::ScoreMode mode) {
  return evaluation::evaluate(group_scores(samples, score_samples(handle, spec, samples, max_len, mode)));
}

std::vector<std::string> vocabulary_words(const std::vector<const std::vector<corpus::Sample>*>& sets,
                                          const std::vector<prompting::TemplateSpec>& templates) {
  std::vector<std::string> words;
  std::set<const corpus::UserText*> seen_users;
  for (const auto* set : sets) {
    for (const auto& s : *set) {
      if (seen_users.insert(s.user_text.get()).second) {
        for (const auto* title : s.user_text->titles()) {
          words.insert(words.end(), title->words.begin(), title->words.end());
        }
      }
      words.insert(words.end(), s.candidate_text.words.begin(), s.candidate_text.words.end());
    }
  }
  for (const auto& t : templates) {
    for (const auto& seg : t.segments()) {
      if (const auto* lit = std::get_if<prompting::Literal>(&seg)) {
        words.insert(words.end(), lit->words.begin(), lit->words.end());
      }
    }
    words.push_back(t.answers().positive);
    words.push_back(t.answers().negative);
  }
  return words;
}

void prepare_model(backend::ModelHandle& handle, const prompting::TemplateSpec& spec,
                   std::uint64_t seed) {
  std::vector<std::string> names{backend::kNclsName};
  for (auto& n : spec.virtual_token_names()) names.push_back(std::move(n));
  backend::register_virtual_tokens(handle, names, seed);
}

namespace {

std::vector<backend::Matrix> snapshot(const backend::MaskedLm& model) {
  std::vector<backend::Matrix> w;
  for (const auto& p : model.parameters()) w.push_back(p.value);
  return w;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<corpus::Sample>& train_samples,
                  const std::vector<corpus::Sample>& valid_samples,
                  const prompting::TemplateSpec& spec, backend::ModelHandle& handle,
                  const StepCallback& on_step) {
  config.validate();
  const auto samples = config.few_shot_fraction
                           ? corpus::downsample_training(train_samples, *config.few_shot_fraction,
                                                         config.rng_seed)
                           : train_samples;
  if (samples.empty()) throw ArgumentError("training set is empty");

  prepare_model(handle, spec, config.rng_seed);
  handle.set_backbone_frozen(config.freeze_backbone);
  const auto answers = backend::resolve_answers(handle, spec.answers());

  std::vector<backend::TokenizedInput> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(prepare_input(handle, spec, s, config.max_len));

  TrainResult result;
  result.train_samples = samples.size();
  result.train_impressions = corpus::count_impressions(samples);
  result.best.template_id = spec.id();

  AdamW optimizer({config.learning_rate, config.weight_decay});
  auto& model = handle.model();
  random::Rng rng(config.rng_seed);
  std::vector<std::size_t> order(samples.size());
  std::size_t step = 0;
  std::size_t drops = 0;
  double previous_auc = std::numeric_limits<double>::quiet_NaN();
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    random::shuffle(order, rng);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const double n = static_cast<double>(end - start);
      model.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto idx = order[b];
        const auto fwd = backend::forward_mask(handle, inputs[idx], answers, config.score_mode);
        const double p = fwd.p_positive;
        const int y = samples[idx].label;
        batch_loss += compute_loss(std::span<const double>(&p, 1), std::span<const int>(&y, 1)) / n;
        const double d_p = loss_gradient(std::span<const double>(&p, 1), std::span<const int>(&y, 1))[0] / n;
        backend::backward_mask(handle, fwd, d_p, config.score_mode);
      }
      ++step;
      if (!std::isfinite(batch_loss)) {
        std::string ids;
        for (std::size_t b = start; b < end && b < start + 16; ++b) {
          ids += (ids.empty() ? "" : ",") + samples[order[b]].impression_id;
        }
        throw TrainingAborted("non-finite loss at step " + std::to_string(step) + " (epoch " +
                              std::to_string(epoch) + "); batch impressions: " + ids);
      }
      optimizer.step(model.parameters());
      StepLog log{step, epoch, batch_loss, config.learning_rate};
      result.steps.push_back(log);
      if (on_step) on_step(log);
      epoch_loss += batch_loss;
      ++epoch_batches;
    }

    EpochLog elog;
    elog.epoch = epoch;
    elog.mean_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_batches));
    if (!valid_samples.empty()) {
      elog.validation = evaluate_samples(handle, spec, valid_samples, config.max_len, config.score_mode);
    }
    result.epochs.push_back(elog);

    const double auc = elog.validation.auc;
    const bool better = !have_best || valid_samples.empty() ||
                        (std::isfinite(auc) && !(auc <= result.best.validation.auc));
    if (better) {
      result.best.weights = snapshot(model);
      result.best.epoch = epoch;
      result.best.validation = elog.validation;
      have_best = true;
    }
    if (std::isfinite(previous_auc) && std::isfinite(auc) && auc < previous_auc) {
      if (++drops >= config.early_stop_drops && config.early_stop_drops > 0) break;
    } else {
      drops = 0;
    }
    previous_auc = auc;
  }
  result.best.restore_into(model);
  return result;
}

}  // namespace clozerec::training
