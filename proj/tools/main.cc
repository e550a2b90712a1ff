#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "clozerec/errors.h"
#include "commands.h"

namespace {

using clozerec::cli::Settings;
namespace fs = std::filesystem;

// Shared tuning flags; only flags actually given land in `patch`.
struct SharedFlags {
  nlohmann::json patch = nlohmann::json::object();
  std::optional<fs::path> config;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file (flags override it)");
    str(app, "--template", "template", "Template id");
    str(app, "--model-id", "model_id", "Checkpoint dir, cache id or preset");
    num<double>(app, "--lr", "lr", "Learning rate");
    num<double>(app, "--weight-decay", "weight_decay", "Decoupled weight decay");
    num<std::size_t>(app, "--batch-size", "batch_size", "Effective batch size");
    num<std::size_t>(app, "--epochs", "epochs", "Training epochs");
    num<std::size_t>(app, "--early-stop", "early_stop", "Consecutive validation AUC drops");
    num<std::size_t>(app, "--neg-ratio", "neg_ratio", "Negatives per positive");
    num<std::size_t>(app, "--max-len", "max_len", "Maximum input tokens");
    num<std::size_t>(app, "--max-history", "max_history", "Most recent clicks kept");
    num<std::size_t>(app, "--n-virtual", "n_virtual", "Virtual tokens per group");
    num<double>(app, "--few-shot", "few_shot", "Training-set fraction");
    num<std::uint64_t>(app, "--seed", "seed", "RNG seed");
    num<double>(app, "--valid-fraction", "valid_fraction", "Validation share of training impressions");
    num<double>(app, "--test-fraction", "test_fraction", "Test share when no test split is given");
    str(app, "--score-mode", "score_mode", "binary or full-vocab");
    str(app, "--templates-file", "templates_file", "Templates JSON replacing the built-ins");
    app->add_flag_function(
        "--freeze-backbone", [this](std::int64_t) { patch["freeze_backbone"] = true; },
        "Train only the virtual-token embeddings");
  }

  Settings resolve() const { return clozerec::cli::resolve_settings(config, patch); }

 private:
  void str(CLI::App* app, const char* flag, const char* key, const char* help) {
    app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { patch[key] = v; }, help);
  }
  template <typename T>
  void num(CLI::App* app, const char* flag, const char* key, const char* help) {
    app->add_option_function<T>(flag, [this, key](const T& v) { patch[key] = v; }, help);
  }
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream cell(item);
    T v{};
    if (!(cell >> v) || !(cell >> std::ws).eof()) {
      throw clozerec::ArgumentError(std::string("bad ") + what + " list entry '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloze-style prompt-learning news recommendation"};
  app.require_subcommand(1);

  fs::path out;
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", out, "Output directory")->required(); };

  SharedFlags shared;

  clozerec::cli::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic MIND-format corpus");
  add_out(synth_cmd);
  synth_cmd->add_option("--impressions", synth.impressions, "Impression count");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");

  auto* templates_cmd = app.add_subcommand("templates", "Export templates as JSON");
  add_out(templates_cmd);
  shared.attach(templates_cmd);

  clozerec::cli::PrepareOptions prepare;
  auto* prepare_cmd = app.add_subcommand("prepare", "Assemble train/valid/test sample files");
  add_out(prepare_cmd);
  prepare_cmd->add_option("--news", prepare.news, "news.tsv")->required()->check(CLI::ExistingFile);
  prepare_cmd->add_option("--behaviors", prepare.behaviors, "behaviors.tsv")
      ->required()
      ->check(CLI::ExistingFile);
  prepare_cmd->add_option("--test-news", prepare.test_news, "news.tsv of a held-out split");
  prepare_cmd->add_option("--test-behaviors", prepare.test_behaviors,
                          "behaviors.tsv of a held-out split");
  shared.attach(prepare_cmd);

  fs::path data_dir, checkpoint;
  std::string split = "test";
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", data_dir, "Prepared data directory")->required();
  };

  auto* train_cmd = app.add_subcommand("train", "Fine-tune one template");
  add_out(train_cmd);
  add_data(train_cmd);
  shared.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Score a split with a checkpoint");
  add_out(eval_cmd);
  add_data(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--split", split, "train, valid or test");
  shared.attach(eval_cmd);

  std::string n_values = "0,1,2,3,4,5";
  auto* sweep_cmd = app.add_subcommand("sweep-n", "Sweep the virtual-token count");
  add_out(sweep_cmd);
  add_data(sweep_cmd);
  sweep_cmd->add_option("--n", n_values, "Comma-separated n values");
  shared.attach(sweep_cmd);

  std::string fractions = "1.0,0.5,0.25";
  auto* fewshot_cmd = app.add_subcommand("fewshot", "Train on down-sampled training sets");
  add_out(fewshot_cmd);
  add_data(fewshot_cmd);
  fewshot_cmd->add_option("--fractions", fractions, "Comma-separated fractions");
  shared.attach(fewshot_cmd);

  clozerec::cli::EnsembleOptions ensemble;
  std::string weights;
  auto* ensemble_cmd = app.add_subcommand("ensemble", "Sum member scores and evaluate");
  add_out(ensemble_cmd);
  ensemble_cmd->add_option("--scores", ensemble.score_files, "Member score CSVs")->delimiter(',');
  ensemble_cmd->add_option("--checkpoints", ensemble.checkpoints, "Member checkpoints")->delimiter(',');
  ensemble_cmd->add_option("--data", ensemble.data_dir, "Prepared data (with --checkpoints)");
  ensemble_cmd->add_option("--split", ensemble.split, "Split scored by --checkpoints");
  ensemble_cmd->add_option("--weights", weights, "Comma-separated member weights");
  ensemble_cmd->add_flag("--cross-type", ensemble.cross_type,
                         "One member per template kind");
  shared.attach(ensemble_cmd);

  clozerec::cli::AttentionOptions attention;
  std::string layers = "first,last";
  auto* attention_cmd = app.add_subcommand("export-attention", "Mask-token attention rows as CSV");
  add_out(attention_cmd);
  add_data(attention_cmd);
  attention_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  attention_cmd->add_option("--split", split, "train, valid or test");
  attention_cmd->add_option("--impression", attention.impression_id, "Impression id");
  attention_cmd->add_option("--candidate", attention.candidate_id, "Candidate news id");
  attention_cmd->add_option("--sample-index", attention.sample_index, "Sample position in split");
  attention_cmd->add_option("--layers", layers, "Indices, first or last");
  shared.attach(attention_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<clozerec::cli::RunManifest> manifest;
    if (synth_cmd->parsed()) {
      synth.out = out;
      manifest = clozerec::cli::cmd_synth(synth);
    } else if (templates_cmd->parsed()) {
      manifest = clozerec::cli::cmd_templates(shared.resolve(), out);
    } else if (prepare_cmd->parsed()) {
      prepare.out = out;
      manifest = clozerec::cli::cmd_prepare(prepare, shared.resolve());
    } else if (train_cmd->parsed()) {
      manifest = clozerec::cli::cmd_train(data_dir, shared.resolve(), out).manifest;
    } else if (eval_cmd->parsed()) {
      manifest = clozerec::cli::cmd_eval(checkpoint, data_dir, split, shared.resolve(), out);
    } else if (sweep_cmd->parsed()) {
      manifest = clozerec::cli::cmd_sweep_n(
          data_dir, parse_list<std::size_t>(n_values, "n"), shared.resolve(), out);
    } else if (fewshot_cmd->parsed()) {
      manifest = clozerec::cli::cmd_fewshot(data_dir, parse_list<double>(fractions, "fraction"),
                                            shared.resolve(), out);
    } else if (ensemble_cmd->parsed()) {
      ensemble.out = out;
      if (!weights.empty()) ensemble.weights = parse_list<double>(weights, "weight");
      manifest = clozerec::cli::cmd_ensemble(ensemble, shared.resolve());
    } else if (attention_cmd->parsed()) {
      attention.checkpoint = checkpoint;
      attention.data_dir = data_dir;
      attention.split = split;
      attention.out = out;
      attention.layers = parse_list<std::string>(layers, "layer");
      manifest = clozerec::cli::cmd_export_attention(attention, shared.resolve());
    }
    if (manifest) std::cout << (manifest->out_dir() / "manifest.json").string() << '\n';
    return 0;
  } catch (const clozerec::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 3;
  } catch (const clozerec::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 4;
  } catch (const clozerec::ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const clozerec::TemplateError& e) {
    std::cerr << "template error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
