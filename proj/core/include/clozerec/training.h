#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clozerec/backend.h"
#include "clozerec/corpus.h"
#include "clozerec/evaluation.h"
#include "clozerec/prompting.h"

namespace clozerec::training {

inline constexpr double kLossEpsilon = 1e-7;

// Mean binary cross-entropy of the positive-answer probabilities, with p clamped to
// [eps, 1 - eps] inside the logs. Throws ContractViolation on length mismatch or empty input.
double compute_loss(std::span<const double> p_positive, std::span<const int> labels,
                    double eps = kLossEpsilon);

// d(loss)/d(p_i) for compute_loss; zero where the clamp is active.
std::vector<double> loss_gradient(std::span<const double> p_positive, std::span<const int> labels,
                                  double eps = kLossEpsilon);

struct AdamWConfig {
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// AdamW with decoupled weight decay, applied to parameters flagged `decay`. Frozen tensors and
// frozen rows are left untouched.
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& config) : config_(config) {}
  void step(std::vector<backend::Parameter>& params);
  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::size_t steps_ = 0;
  std::vector<backend::Matrix> m_, v_;
};

struct TrainConfig {
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  std::size_t batch_size = 128;  // effective batch; gradients accumulate one sample at a time
  std::size_t epochs = 3;
  std::size_t early_stop_drops = 2;  // stop after this many consecutive validation-AUC drops
  std::uint64_t rng_seed = 42;
  std::size_t neg_ratio = corpus::kDefaultNegativeRatio;
  std::size_t max_len = backend::kDefaultMaxLength;
  std::string template_id = "discrete-utility";
  std::optional<double> few_shot_fraction;
  bool freeze_backbone = false;
  backend::ScoreMode score_mode = backend::ScoreMode::kBinary;

  void validate() const;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  evaluation::MetricsReport validation;
};

// Best-so-far model weights plus the validation report that selected them.
struct Checkpoint {
  std::vector<backend::Matrix> weights;
  std::string template_id;
  std::size_t epoch = 0;
  evaluation::MetricsReport validation;

  void restore_into(backend::MaskedLm& model) const;
};

struct TrainResult {
  Checkpoint best;
  std::size_t train_samples = 0;  // after few-shot down-sampling
  std::size_t train_impressions = 0;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

// Prompt rendering plus encoding for a sample under a template.
backend::TokenizedInput prepare_input(const backend::ModelHandle& handle,
                                      const prompting::TemplateSpec& spec,
                                      const corpus::Sample& sample, std::size_t max_len);

// Scores every sample (p_pos) in batches of `batch_size`.
std::vector<double> score_samples(const backend::ModelHandle& handle,
                                  const prompting::TemplateSpec& spec,
                                  const std::vector<corpus::Sample>& samples, std::size_t max_len,
                                  backend::ScoreMode mode = backend::ScoreMode::kBinary,
                                  std::size_t batch_size = 64);

// Groups scored samples by impression (first-appearance order, candidate order preserved).
std::vector<evaluation::ScoredImpression> group_scores(const std::vector<corpus::Sample>& samples,
                                                       const std::vector<double>& scores);

evaluation::MetricsReport evaluate_samples(const backend::ModelHandle& handle,
                                           const prompting::TemplateSpec& spec,
                                           const std::vector<corpus::Sample>& samples,
                                           std::size_t max_len,
                                           backend::ScoreMode mode = backend::ScoreMode::kBinary);

// Words a preset model's vocabulary must cover: sample titles plus template literals and
// answer words.
std::vector<std::string> vocabulary_words(const std::vector<const std::vector<corpus::Sample>*>& sets,
                                          const std::vector<prompting::TemplateSpec>& templates);

// Registers NCLS and the template's virtual tokens with the model.
void prepare_model(backend::ModelHandle& handle, const prompting::TemplateSpec& spec,
                   std::uint64_t seed);

using StepCallback = std::function<void(const StepLog&)>;

// Fine-tunes `handle` on shuffled mini-batches and keeps the epoch with the best validation AUC.
// On return the handle holds the best checkpoint's weights. Throws TrainingAborted when a
// batch loss is not finite.
TrainResult train(const TrainConfig& config, const std::vector<corpus::Sample>& train_samples,
                  const std::vector<corpus::Sample>& valid_samples,
                  const prompting::TemplateSpec& spec, backend::ModelHandle& handle,
                  const StepCallback& on_step = {});

}  // namespace clozerec::training
