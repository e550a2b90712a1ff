#include "commands.h"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "clozerec/errors.h"
#include "clozerec/synthetic.h"

namespace clozerec::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::string number(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string metrics_csv_cells(const evaluation::MetricsReport& r) {
  return number(r.auc) + ',' + number(r.mrr) + ',' + number(r.ndcg5) + ',' + number(r.ndcg10);
}

struct LoadedCheckpoint {
  backend::ModelHandle handle;
  prompting::TemplateSpec spec;
  nlohmann::json sidecar;
};

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw ArgumentError("no checkpoint.json in " + dir.string());
  auto sidecar = nlohmann::json::parse(in);
  auto spec = prompting::template_from_json(sidecar.at("template").dump());
  return {backend::ModelHandle::load(dir), std::move(spec), std::move(sidecar)};
}

evaluation::MetricsReport score_and_report(const backend::ModelHandle& handle,
                                           const prompting::TemplateSpec& spec,
                                           const std::vector<corpus::Sample>& samples,
                                           const Settings& settings, std::vector<double>* scores_out,
                                           bool keep_per_impression = false) {
  auto scores = training::score_samples(handle, spec, samples, settings.max_len, settings.mode());
  auto report = evaluation::evaluate(training::group_scores(samples, scores), keep_per_impression);
  if (scores_out) *scores_out = std::move(scores);
  return report;
}

void write_scores(const fs::path& path, const ensembling::ScoreTable& table) {
  std::ofstream out(path);
  ensembling::write_scores_csv(out, table);
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

prompting::TemplateKind kind_of(const std::string& template_id, const Settings& settings) {
  for (const auto& t : settings.templates()) {
    if (t.id() == template_id) return t.kind();
  }
  return prompting::parse_kind(template_id.substr(0, template_id.find('-')));
}

std::size_t parse_layer(const std::string& text, std::size_t depth) {
  if (text == "first") return 0;
  if (text == "last") return depth - 1;
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || text.empty()) {
    throw ArgumentError("layer must be an index, 'first' or 'last', got '" + text + "'");
  }
  if (v >= depth) {
    throw ArgumentError("layer " + text + " out of range; the model has " + std::to_string(depth) +
                        " layers");
  }
  return v;
}

}  // namespace

std::vector<corpus::Sample> read_split(const fs::path& data_dir, const std::string& split) {
  const auto path = data_dir / (split + ".jsonl");
  std::ifstream in(path);
  if (!in) throw ArgumentError("missing prepared split " + path.string());
  return corpus::read_samples_jsonl(in, path.string());
}

ensembling::ScoreTable score_table(const std::string& template_id,
                                   const std::vector<corpus::Sample>& samples,
                                   const std::vector<double>& scores) {
  if (samples.size() != scores.size()) throw ContractViolation("score_table: size mismatch");
  ensembling::ScoreTable t{template_id, {}};
  t.rows.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    t.rows.push_back({samples[i].impression_id, samples[i].candidate_id(), scores[i], samples[i].label});
  }
  return t;
}

nlohmann::json metrics_json(const evaluation::MetricsReport& report) {
  return nlohmann::json::parse(evaluation::to_json(report));
}

RunManifest cmd_synth(const SynthOptions& options) {
  RunManifest m("synth", options.out);
  synthetic::SyntheticConfig c;
  c.impressions = options.impressions;
  c.seed = options.seed;
  const auto corpus = synthetic::generate(c);
  synthetic::write_mind(corpus, options.out);
  m.set_seed(options.seed);
  m.set_config({{"impressions", c.impressions},
                {"topics", c.topics},
                {"keywords_per_topic", c.keywords_per_topic},
                {"keywords_per_title", c.keywords_per_title},
                {"fillers_per_title", c.fillers_per_title},
                {"history_length", c.history_length},
                {"candidates_per_impression", c.candidates_per_impression},
                {"users", c.users}});
  m.add_output(options.out / "news.tsv");
  m.add_output(options.out / "behaviors.tsv");
  m.extra()["counts"] = {{"news", corpus.news.size()}, {"impressions", corpus.impressions.size()}};
  m.write();
  return m;
}

RunManifest cmd_templates(const Settings& settings, const fs::path& out) {
  RunManifest m("templates", out);
  m.set_config(to_json(settings));
  std::ostringstream s;
  prompting::write_templates_json(s, settings.templates());
  write_text(out / "templates.json", s.str());
  m.add_output(out / "templates.json");
  m.write();
  return m;
}

RunManifest cmd_prepare(const PrepareOptions& o, const Settings& settings) {
  if (o.test_news && !o.test_behaviors) {
    throw ArgumentError("--test-news needs --test-behaviors");
  }
  RunManifest m("prepare", o.out);
  m.set_config(to_json(settings));
  m.set_seed(settings.seed);
  m.add_input(o.news);
  m.add_input(o.behaviors);

  const auto catalog = corpus::load_news(o.news.string());
  auto impressions = corpus::load_behaviors(o.behaviors.string());
  std::vector<corpus::ImpressionRecord> test_imps;
  corpus::NewsCatalog test_catalog;
  const corpus::NewsCatalog* test_cat = &catalog;
  if (o.test_behaviors) {
    m.add_input(*o.test_behaviors);
    test_imps = corpus::load_behaviors(o.test_behaviors->string());
    if (o.test_news) {
      m.add_input(*o.test_news);
      test_catalog = corpus::load_news(o.test_news->string());
      test_cat = &test_catalog;
    }
  } else {
    auto [rest, held_out] = corpus::split_validation(impressions, settings.test_fraction, settings.seed);
    impressions = std::move(rest);
    test_imps = std::move(held_out);
  }
  auto [train_imps, valid_imps] =
      corpus::split_validation(impressions, settings.valid_fraction, settings.seed + 1);

  corpus::TextLimits limits;
  limits.max_history = settings.max_history;
  const std::vector<corpus::Sample> splits[] = {
      corpus::assemble_training_set(train_imps, catalog, settings.neg_ratio, settings.seed, limits),
      corpus::assemble_evaluation_set(valid_imps, catalog, limits),
      corpus::assemble_evaluation_set(test_imps, *test_cat, limits),
  };

  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t i = 0; i < 3; ++i) {
    const auto path = o.out / (std::string(kSplits[i]) + ".jsonl");
    std::ostringstream s;
    corpus::write_samples_jsonl(s, splits[i]);
    write_text(path, s.str());
    m.add_output(path);
    counts[kSplits[i]] = {{"samples", splits[i].size()},
                          {"impressions", corpus::count_impressions(splits[i])}};
  }
  m.extra()["counts"] = counts;
  m.extra()["catalog"] = {{"articles", catalog.size()},
                          {"duplicates", catalog.duplicate_count()},
                          {"empty_titles", catalog.empty_title_count()}};
  m.write();
  return m;
}

TrainOutcome cmd_train(const fs::path& data_dir, const Settings& settings, const fs::path& out) {
  RunManifest m("train", out);
  m.set_config(to_json(settings));
  m.set_seed(settings.seed);
  m.add_input(data_dir / "train.jsonl");
  m.add_input(data_dir / "valid.jsonl");

  const auto spec = settings.resolve_template();
  const auto train_set = read_split(data_dir, "train");
  const auto valid_set = read_split(data_dir, "valid");
  std::vector<corpus::Sample> test_set;
  if (fs::exists(data_dir / "test.jsonl")) {
    m.add_input(data_dir / "test.jsonl");
    test_set = read_split(data_dir, "test");
  }

  auto handle = backend::create_model(
      settings.model_id, training::vocabulary_words({&train_set, &valid_set, &test_set},
                                                    settings.templates()),
      settings.seed);

  fs::create_directories(out);
  const auto log_path = out / "train_log.jsonl";
  std::ofstream log(log_path);
  auto on_step = [&](const training::StepLog& s) {
    log << nlohmann::json{{"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss},
                          {"lr", s.learning_rate}}.dump()
        << '\n';
  };
  const auto result =
      training::train(settings.train_config(), train_set, valid_set, spec, handle, on_step);
  log.close();
  m.add_output(log_path);

  const auto ckpt = out / "checkpoint";
  handle.save(ckpt);
  nlohmann::json sidecar = {
      {"template", nlohmann::json::parse(prompting::template_to_json(spec))},
      {"model_id", settings.model_id},
      {"epoch", result.best.epoch},
      {"validation", metrics_json(result.best.validation)},
      {"settings", to_json(settings)},
  };
  write_text(ckpt / "checkpoint.json", sidecar.dump(2) + "\n");
  for (const char* f : {"config.json", "vocab.txt", "weights.bin", "checkpoint.json"}) {
    m.add_output(ckpt / f);
  }

  TrainOutcome outcome{m, result.best.validation, std::nullopt, result.train_impressions,
                       result.train_samples};
  nlohmann::json metrics = {
      {"template", spec.id()},
      {"model_id", settings.model_id},
      {"best_epoch", result.best.epoch},
      {"train_impressions", result.train_impressions},
      {"train_samples", result.train_samples},
      {"valid_impressions", corpus::count_impressions(valid_set)},
      {"validation", metrics_json(result.best.validation)},
      {"epochs", nlohmann::json::array()},
  };
  for (const auto& e : result.epochs) {
    metrics["epochs"].push_back({{"epoch", e.epoch},
                                 {"mean_loss", e.mean_loss},
                                 {"validation", metrics_json(e.validation)}});
  }

  std::vector<double> scores;
  score_and_report(handle, spec, valid_set, settings, &scores);
  write_scores(out / "scores_valid.csv", score_table(spec.id(), valid_set, scores));
  m.add_output(out / "scores_valid.csv");
  if (!test_set.empty()) {
    outcome.test = score_and_report(handle, spec, test_set, settings, &scores);
    metrics["test_impressions"] = corpus::count_impressions(test_set);
    metrics["test"] = metrics_json(*outcome.test);
    write_scores(out / "scores_test.csv", score_table(spec.id(), test_set, scores));
    m.add_output(out / "scores_test.csv");
  }
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  m.add_output(out / "metrics.json");
  m.write();
  outcome.manifest = m;
  return outcome;
}

RunManifest cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const std::string& split,
                     const Settings& settings, const fs::path& out) {
  RunManifest m("eval", out);
  m.set_config(to_json(settings));
  m.set_seed(settings.seed);
  m.add_input(checkpoint);
  m.add_input(data_dir / (split + ".jsonl"));
  const auto ckpt = load_checkpoint(checkpoint);
  const auto samples = read_split(data_dir, split);
  std::vector<double> scores;
  const auto report = score_and_report(ckpt.handle, ckpt.spec, samples, settings, &scores, true);

  fs::create_directories(out);
  nlohmann::json metrics = {{"template", ckpt.spec.id()}, {"split", split},
                            {"metrics", metrics_json(report)}};
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  write_scores(out / "scores.csv", score_table(ckpt.spec.id(), samples, scores));
  std::ofstream per(out / "per_impression.csv");
  evaluation::write_per_impression_csv(per, report);
  per.close();
  for (const char* f : {"metrics.json", "scores.csv", "per_impression.csv"}) m.add_output(out / f);
  m.write();
  return m;
}

RunManifest cmd_sweep_n(const fs::path& data_dir, const std::vector<std::size_t>& ns,
                        const Settings& settings, const fs::path& out) {
  const auto spec = settings.resolve_template();
  if (spec.kind() == prompting::TemplateKind::kDiscrete) {
    throw ArgumentError("sweep-n needs a continuous or hybrid template; " + spec.id() +
                        " has no virtual tokens");
  }
  if (ns.empty()) throw ArgumentError("sweep-n needs at least one n value");
  RunManifest m("sweep-n", out);
  m.set_config(to_json(settings));
  m.set_seed(settings.seed);
  m.add_input(data_dir);
  m.extra()["n_values"] = ns;

  std::ostringstream csv;
  csv << "n,auc,mrr,ndcg@5,ndcg@10\n";
  for (auto n : ns) {
    Settings s = settings;
    s.n_virtual = n;
    const auto cell = out / ("n" + std::to_string(n));
    const auto run = cmd_train(data_dir, s, cell);
    csv << n << ',' << metrics_csv_cells(run.test.value_or(run.validation)) << '\n';
    for (const auto& o : run.manifest.outputs()) m.add_output(cell / o);
    m.add_output(cell / "manifest.json");
  }
  write_text(out / "sweep.csv", csv.str());
  m.add_output(out / "sweep.csv");
  m.write();
  return m;
}

RunManifest cmd_fewshot(const fs::path& data_dir, const std::vector<double>& fractions,
                        const Settings& settings, const fs::path& out) {
  if (fractions.empty()) throw ArgumentError("fewshot needs at least one fraction");
  RunManifest m("fewshot", out);
  m.set_config(to_json(settings));
  m.set_seed(settings.seed);
  m.add_input(data_dir);
  m.extra()["fractions"] = fractions;

  std::ostringstream csv;
  csv << "fraction,train_impressions,train_samples,valid_impressions,test_impressions,auc,mrr,"
         "ndcg@5,ndcg@10\n";
  for (auto f : fractions) {
    Settings s = settings;
    s.few_shot = f;
    std::ostringstream name;
    name << "fraction-" << f;
    const auto cell = out / name.str();
    const auto run = cmd_train(data_dir, s, cell);
    const auto metrics = nlohmann::json::parse(std::ifstream(cell / "metrics.json"));
    csv << number(f) << ',' << run.train_impressions << ',' << run.train_samples << ','
        << metrics.at("valid_impressions").get<std::size_t>() << ','
        << metrics.value("test_impressions", std::size_t{0}) << ','
        << metrics_csv_cells(run.test.value_or(run.validation)) << '\n';
    for (const auto& o : run.manifest.outputs()) m.add_output(cell / o);
    m.add_output(cell / "manifest.json");
  }
  write_text(out / "fewshot.csv", csv.str());
  m.add_output(out / "fewshot.csv");
  m.write();
  return m;
}

RunManifest cmd_ensemble(const EnsembleOptions& o, const Settings& settings) {
  if (o.score_files.empty() == o.checkpoints.empty()) {
    throw ArgumentError("ensemble needs either score files or checkpoints (not both)");
  }
  RunManifest m("ensemble", o.out);
  m.set_config(to_json(settings));
  m.set_seed(settings.seed);
  fs::create_directories(o.out);

  std::vector<ensembling::ScoreTable> members;
  std::vector<prompting::TemplateKind> kinds;
  for (const auto& f : o.score_files) {
    m.add_input(f);
    std::ifstream in(f);
    if (!in) throw ArgumentError("cannot read score file " + f.string());
    members.push_back(ensembling::read_scores_csv(in, f.string()));
    kinds.push_back(kind_of(members.back().template_id, settings));
  }
  if (!o.checkpoints.empty()) {
    m.add_input(o.data_dir / (o.split + ".jsonl"));
    const auto samples = read_split(o.data_dir, o.split);
    for (std::size_t i = 0; i < o.checkpoints.size(); ++i) {
      m.add_input(o.checkpoints[i]);
      const auto ckpt = load_checkpoint(o.checkpoints[i]);
      std::vector<double> scores;
      score_and_report(ckpt.handle, ckpt.spec, samples, settings, &scores);
      members.push_back(score_table(ckpt.spec.id(), samples, scores));
      kinds.push_back(ckpt.spec.kind());
      const auto path = o.out / ("member-" + std::to_string(i) + "-" + ckpt.spec.id() + ".csv");
      write_scores(path, members.back());
      m.add_output(path);
    }
  }

  nlohmann::json metrics = {{"members", nlohmann::json::array()}};
  for (const auto& t : members) {
    metrics["members"].push_back(
        {{"template", t.template_id},
         {"metrics", metrics_json(evaluation::evaluate(ensembling::to_scored_impressions(t)))}});
  }
  ensembling::ScoreTable fused;
  evaluation::MetricsReport report;
  if (o.cross_type) {
    if (o.weights) throw ArgumentError("--weights cannot be combined with --cross-type");
    std::vector<ensembling::TypedMember> typed;
    for (std::size_t i = 0; i < members.size(); ++i) typed.push_back({kinds[i], members[i]});
    auto r = ensembling::cross_type_ensemble(typed);
    fused = std::move(r.fused);
    report = r.metrics;
  } else {
    fused = ensembling::ensemble_scores(members, o.weights);
    report = evaluation::evaluate(ensembling::to_scored_impressions(fused));
  }
  metrics["ensemble"] = {{"template", fused.template_id}, {"metrics", metrics_json(report)}};
  if (o.weights) metrics["weights"] = *o.weights;

  write_scores(o.out / "scores.csv", fused);
  write_text(o.out / "metrics.json", metrics.dump(2) + "\n");
  m.add_output(o.out / "scores.csv");
  m.add_output(o.out / "metrics.json");
  m.write();
  return m;
}

RunManifest cmd_export_attention(const AttentionOptions& o, const Settings& settings) {
  RunManifest m("export-attention", o.out);
  m.set_config(to_json(settings));
  m.set_seed(settings.seed);
  m.add_input(o.checkpoint);
  m.add_input(o.data_dir / (o.split + ".jsonl"));
  const auto ckpt = load_checkpoint(o.checkpoint);
  const auto samples = read_split(o.data_dir, o.split);

  const corpus::Sample* chosen = nullptr;
  if (o.sample_index) {
    if (*o.sample_index < samples.size()) chosen = &samples[*o.sample_index];
  } else {
    for (const auto& s : samples) {
      if (o.impression_id && s.impression_id != *o.impression_id) continue;
      if (o.candidate_id && s.candidate_id() != *o.candidate_id) continue;
      chosen = &s;
      break;
    }
  }
  if (chosen == nullptr) {
    throw ArgumentError("sample selection matched nothing in the " + o.split + " split");
  }

  const auto depth = ckpt.handle.model().config().layers;
  std::vector<std::size_t> layers;
  for (const auto& text : o.layers) {
    const auto l = parse_layer(text, depth);
    if (std::find(layers.begin(), layers.end(), l) == layers.end()) layers.push_back(l);
  }
  if (layers.empty()) throw ArgumentError("no layers selected");

  const auto input = training::prepare_input(ckpt.handle, ckpt.spec, *chosen, settings.max_len);
  fs::create_directories(o.out);
  const auto path = o.out / "attention.csv";
  std::ofstream csv(path);
  backend::write_attention_csv_header(csv);
  for (auto l : layers) {
    backend::write_attention_csv(csv, ckpt.handle, input, l,
                                 backend::attention_weights(ckpt.handle, input, l));
  }
  csv.close();
  m.add_output(path);
  m.extra()["selection"] = {{"impression_id", chosen->impression_id},
                            {"candidate_id", chosen->candidate_id()},
                            {"label", chosen->label},
                            {"mask_position", input.mask_position},
                            {"tokens", input.size()}};
  m.extra()["layers"] = layers;
  m.write();
  return m;
}

}  // namespace clozerec::cli
