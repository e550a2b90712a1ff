#include <benchmark/benchmark.h>

#include <random>

#include "clozerec/backend.h"
#include "clozerec/evaluation.h"
#include "clozerec/training.h"

namespace be = clozerec::backend;
namespace corpus = clozerec::corpus;
namespace ev = clozerec::evaluation;
namespace pr = clozerec::prompting;
namespace tr = clozerec::training;

namespace {

std::vector<ev::ScoredImpression> random_impressions(std::size_t count, std::size_t candidates) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ev::ScoredImpression> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i].impression_id = std::to_string(i);
    for (std::size_t c = 0; c < candidates; ++c) {
      out[i].entries.push_back({"N" + std::to_string(c), unit(rng), c == 0 ? 1 : static_cast<int>(rng() % 8 == 0)});
    }
  }
  return out;
}

void BM_Evaluate(benchmark::State& state) {
  const auto imps = random_impressions(1000, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ev::evaluate(imps));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_Evaluate)->Arg(8)->Arg(40);

struct ModelFixture {
  be::ModelHandle handle;
  pr::TemplateSpec spec;
  be::TokenizedInput input;
  be::AnswerIds answers;
};

ModelFixture make_fixture(const std::string& preset, std::size_t history_titles) {
  std::vector<std::string> words = tr::vocabulary_words({}, pr::builtin_templates());
  for (int w = 0; w < 200; ++w) words.push_back("word" + std::to_string(w));
  auto handle = be::create_model(preset, words, 3);
  auto spec = pr::find_template(pr::builtin_templates(), "hybrid-utility");
  tr::prepare_model(handle, spec, 3);
  corpus::UserText user;
  for (std::size_t t = 0; t < history_titles; ++t) {
    user.segments.emplace_back(corpus::NclsMarker{});
    std::vector<std::string> title;
    for (int k = 0; k < 10; ++k) title.push_back("word" + std::to_string((t * 10 + k) % 200));
    user.segments.emplace_back(corpus::HistoryTitle{"N" + std::to_string(t), title});
  }
  user.included_history_count = history_titles;
  auto input = be::encode(handle, pr::render(spec, user, {"C", {"word1", "word2", "word3"}}));
  auto answers = be::resolve_answers(handle, spec.answers());
  return {std::move(handle), std::move(spec), std::move(input), answers};
}

void BM_ForwardMask(benchmark::State& state) {
  auto f = make_fixture("tiny-mlm", static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(be::forward_mask(f.handle, f.input, f.answers).p_positive);
  state.counters["tokens"] = static_cast<double>(f.input.size());
}
BENCHMARK(BM_ForwardMask)->Arg(3)->Arg(20)->Arg(45);

void BM_ForwardBackwardMask(benchmark::State& state) {
  auto f = make_fixture("tiny-mlm", static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    const auto fwd = be::forward_mask(f.handle, f.input, f.answers);
    be::backward_mask(f.handle, fwd, fwd.p_positive - 1.0);
  }
  state.counters["tokens"] = static_cast<double>(f.input.size());
}
BENCHMARK(BM_ForwardBackwardMask)->Arg(3)->Arg(20)->Arg(45);

void BM_ForwardSmallPreset(benchmark::State& state) {
  auto f = make_fixture("small-mlm", 20);
  for (auto _ : state) benchmark::DoNotOptimize(be::forward_mask(f.handle, f.input, f.answers).p_positive);
  state.counters["tokens"] = static_cast<double>(f.input.size());
}
BENCHMARK(BM_ForwardSmallPreset);

}  // namespace

BENCHMARK_MAIN();
