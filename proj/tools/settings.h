#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clozerec/backend.h"
#include "clozerec/corpus.h"
#include "clozerec/prompting.h"
#include "clozerec/training.h"
#include "json.hpp"

namespace clozerec::cli {

// Every tunable knob shared by the subcommands. JSON keys are the long flag names with dashes
// turned into underscores.
struct Settings {
  std::string template_id = "discrete-utility";
  std::string model_id = "tiny-mlm";
  double lr = 2e-5;
  double weight_decay = 0.01;
  std::size_t batch_size = 128;
  std::size_t epochs = 3;
  std::size_t early_stop = 2;
  std::size_t neg_ratio = corpus::kDefaultNegativeRatio;
  std::size_t max_len = backend::kDefaultMaxLength;
  std::size_t max_history = corpus::kDefaultMaxHistory;
  std::size_t n_virtual = 3;
  std::optional<double> few_shot;
  std::uint64_t seed = 42;
  bool freeze_backbone = false;
  std::string score_mode = "binary";
  double valid_fraction = corpus::kDefaultValidationFraction;
  double test_fraction = 0.2;
  std::string templates_file;  // empty: built-ins

  training::TrainConfig train_config() const;
  backend::ScoreMode mode() const;

  // Built-ins (or the templates file) with n_virtual tokens per group.
  std::vector<prompting::TemplateSpec> templates() const;
  prompting::TemplateSpec resolve_template() const;
};

nlohmann::json to_json(const Settings& settings);

// Overwrites the fields present in `patch`. Unknown keys throw ArgumentError.
void apply_settings(Settings& settings, const nlohmann::json& patch);

// defaults < config file < flags.
Settings resolve_settings(const std::optional<std::filesystem::path>& config_file,
                          const nlohmann::json& flags);

}  // namespace clozerec::cli
