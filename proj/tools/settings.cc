#include "settings.h"

#include <fstream>

#include "clozerec/errors.h"

namespace clozerec::cli {

training::TrainConfig Settings::train_config() const {
  training::TrainConfig c;
  c.learning_rate = lr;
  c.weight_decay = weight_decay;
  c.batch_size = batch_size;
  c.epochs = epochs;
  c.early_stop_drops = early_stop;
  c.rng_seed = seed;
  c.neg_ratio = neg_ratio;
  c.max_len = max_len;
  c.template_id = template_id;
  c.few_shot_fraction = few_shot;
  c.freeze_backbone = freeze_backbone;
  c.score_mode = mode();
  return c;
}

backend::ScoreMode Settings::mode() const {
  if (score_mode == "binary") return backend::ScoreMode::kBinary;
  if (score_mode == "full-vocab") return backend::ScoreMode::kFullVocab;
  throw ArgumentError("score mode must be 'binary' or 'full-vocab', got '" + score_mode + "'");
}

std::vector<prompting::TemplateSpec> Settings::templates() const {
  const auto counts = prompting::VirtualCounts::uniform(n_virtual);
  if (templates_file.empty()) return prompting::builtin_templates(counts);
  std::ifstream in(templates_file);
  if (!in) throw ArgumentError("cannot read templates file " + templates_file);
  std::vector<prompting::TemplateSpec> out;
  for (const auto& t : prompting::read_templates_json(in)) out.push_back(t.with_counts(counts));
  return out;
}

prompting::TemplateSpec Settings::resolve_template() const {
  return prompting::find_template(templates(), template_id);
}

nlohmann::json to_json(const Settings& s) {
  nlohmann::json j = {
      {"template", s.template_id},
      {"model_id", s.model_id},
      {"lr", s.lr},
      {"weight_decay", s.weight_decay},
      {"batch_size", s.batch_size},
      {"epochs", s.epochs},
      {"early_stop", s.early_stop},
      {"neg_ratio", s.neg_ratio},
      {"max_len", s.max_len},
      {"max_history", s.max_history},
      {"n_virtual", s.n_virtual},
      {"few_shot", nullptr},
      {"seed", s.seed},
      {"freeze_backbone", s.freeze_backbone},
      {"score_mode", s.score_mode},
      {"valid_fraction", s.valid_fraction},
      {"test_fraction", s.test_fraction},
      {"templates_file", s.templates_file},
  };
  if (s.few_shot) j["few_shot"] = *s.few_shot;
  return j;
}

void apply_settings(Settings& s, const nlohmann::json& patch) {
  if (!patch.is_object()) throw ArgumentError("settings must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    try {
      if (key == "template") s.template_id = value.get<std::string>();
      else if (key == "model_id") s.model_id = value.get<std::string>();
      else if (key == "lr") s.lr = value.get<double>();
      else if (key == "weight_decay") s.weight_decay = value.get<double>();
      else if (key == "batch_size") s.batch_size = value.get<std::size_t>();
      else if (key == "epochs") s.epochs = value.get<std::size_t>();
      else if (key == "early_stop") s.early_stop = value.get<std::size_t>();
      else if (key == "neg_ratio") s.neg_ratio = value.get<std::size_t>();
      else if (key == "max_len") s.max_len = value.get<std::size_t>();
      else if (key == "max_history") s.max_history = value.get<std::size_t>();
      else if (key == "n_virtual") s.n_virtual = value.get<std::size_t>();
      else if (key == "few_shot") {
        s.few_shot = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      } else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "freeze_backbone") s.freeze_backbone = value.get<bool>();
      else if (key == "score_mode") s.score_mode = value.get<std::string>();
      else if (key == "valid_fraction") s.valid_fraction = value.get<double>();
      else if (key == "test_fraction") s.test_fraction = value.get<double>();
      else if (key == "templates_file") s.templates_file = value.get<std::string>();
      else throw ArgumentError("unknown setting '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError("setting '" + key + "' has the wrong type: " + e.what());
    }
  }
}

Settings resolve_settings(const std::optional<std::filesystem::path>& config_file,
                          const nlohmann::json& flags) {
  Settings s;
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw ArgumentError("cannot read config file " + config_file->string());
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ArgumentError("config file " + config_file->string() + " is not valid JSON: " + e.what());
    }
    apply_settings(s, cfg);
  }
  apply_settings(s, flags);
  return s;
}

}  // namespace clozerec::cli
