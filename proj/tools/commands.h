#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clozerec/ensembling.h"
#include "clozerec/evaluation.h"
#include "manifest.h"
#include "settings.h"

namespace clozerec::cli {

namespace fs = std::filesystem;

inline constexpr const char* kSplits[] = {"train", "valid", "test"};

struct SynthOptions {
  fs::path out;
  std::size_t impressions = 500;
  std::uint64_t seed = 7;
};
RunManifest cmd_synth(const SynthOptions& options);

// Writes the templates in the JSON record format.
RunManifest cmd_templates(const Settings& settings, const fs::path& out);

struct PrepareOptions {
  fs::path news;
  fs::path behaviors;
  std::optional<fs::path> test_news;       // a held-out MIND split, instead of --test-fraction
  std::optional<fs::path> test_behaviors;
  fs::path out;
};
RunManifest cmd_prepare(const PrepareOptions& options, const Settings& settings);

struct TrainOutcome {
  RunManifest manifest;
  evaluation::MetricsReport validation;
  std::optional<evaluation::MetricsReport> test;
  std::size_t train_impressions = 0;
  std::size_t train_samples = 0;
};
TrainOutcome cmd_train(const fs::path& data_dir, const Settings& settings, const fs::path& out);

RunManifest cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const std::string& split,
                     const Settings& settings, const fs::path& out);

// One training run per n (equal for P, Q and M); writes sweep.csv.
RunManifest cmd_sweep_n(const fs::path& data_dir, const std::vector<std::size_t>& ns,
                        const Settings& settings, const fs::path& out);

// One training run per training-set fraction; writes fewshot.csv.
RunManifest cmd_fewshot(const fs::path& data_dir, const std::vector<double>& fractions,
                        const Settings& settings, const fs::path& out);

struct EnsembleOptions {
  std::vector<fs::path> score_files;  // member score CSVs, or
  std::vector<fs::path> checkpoints;  // member checkpoints scored on `data_dir`/`split`
  fs::path data_dir;
  std::string split = "test";
  std::optional<std::vector<double>> weights;
  bool cross_type = false;  // require one member per template kind
  fs::path out;
};
RunManifest cmd_ensemble(const EnsembleOptions& options, const Settings& settings);

struct AttentionOptions {
  fs::path checkpoint;
  fs::path data_dir;
  std::string split = "test";
  std::optional<std::string> impression_id;
  std::optional<std::string> candidate_id;
  std::optional<std::size_t> sample_index;
  std::vector<std::string> layers = {"first", "last"};  // indices or first/last
  fs::path out;
};
RunManifest cmd_export_attention(const AttentionOptions& options, const Settings& settings);

// Shared helpers, exposed for tests.
std::vector<corpus::Sample> read_split(const fs::path& data_dir, const std::string& split);
ensembling::ScoreTable score_table(const std::string& template_id,
                                   const std::vector<corpus::Sample>& samples,
                                   const std::vector<double>& scores);
nlohmann::json metrics_json(const evaluation::MetricsReport& report);

}  // namespace clozerec::cli
