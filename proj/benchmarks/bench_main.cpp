#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "wsforge/endmodel.hpp"
#include "wsforge/labelmodels.hpp"
#include "wsforge/lfkit.hpp"
#include "wsforge/lfstats.hpp"

using namespace wsforge;

namespace {

const ClassSpace kBinary({"neg", "pos"}, 1);

VoteMatrix sample_votes(std::size_t n, std::size_t m) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VoteMatrix v(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = u(rng) < 0.5;
    for (std::size_t a = 0; a < m; ++a) {
      const double r = u(rng);
      v(i, a) = r < 0.3 ? kAbstain : (r < 0.3 + 0.7 * (0.6 + 0.05 * static_cast<double>(a % 6)) ? y : 1 - y);
    }
  }
  return v;
}

std::vector<Document> sample_docs(std::size_t n) {
  const std::vector<std::string> words{"free", "call", "now", "prize", "see", "you", "later", "thanks",
                                       "win",  "txt",  "ok",  "home",  "the", "a",   "12345", "cash"};
  std::mt19937_64 rng(2);
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    for (int w = 0; w < 12; ++w) t += words[rng() % words.size()] + " ";
    docs.push_back({"d" + std::to_string(i), t, static_cast<ClassIndex>(rng() % 2)});
  }
  return docs;
}

void BM_FitDawidSkene(benchmark::State& state) {
  auto v = sample_votes(static_cast<std::size_t>(state.range(0)), 10);
  for (auto _ : state) benchmark::DoNotOptimize(fit(ModelKind::DawidSkene, v, kBinary));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitDawidSkene)->Arg(1000)->Arg(10000);

void BM_FitFlyingSquid(benchmark::State& state) {
  auto v = sample_votes(static_cast<std::size_t>(state.range(0)), 10);
  for (auto _ : state) benchmark::DoNotOptimize(fit(ModelKind::FlyingSquid, v, kBinary));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitFlyingSquid)->Arg(1000)->Arg(10000);

void BM_Stats(benchmark::State& state) {
  auto v = sample_votes(10000, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(compute_stats(v, std::nullopt, kBinary));
}
BENCHMARK(BM_Stats)->Arg(5)->Arg(20);

void BM_ApplyRules(benchmark::State& state) {
  auto docs = sample_docs(5000);
  std::vector<LabelingFunction> lfs;
  for (const char* body : {R"({"rules": [{"if": {"keyword_any": ["free", "prize"]}, "emit": 1}], "default": -1})",
                           R"({"rules": [{"if": {"regex": "[0-9]{5}"}, "emit": 1}], "default": -1})",
                           R"({"rules": [{"if": {"keyword_any": ["thanks", "later"]}, "emit": 0}], "default": -1})"}) {
    LabelingFunction lf;
    lf.name = "lf" + std::to_string(lfs.size());
    lf.body = parse_rule_program(std::string_view(body), 2);
    lfs.push_back(std::move(lf));
  }
  ApplyOptions options;
  options.threads = static_cast<unsigned>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(apply_all(lfs, docs, kBinary, options));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_ApplyRules)->Arg(1)->Arg(4);

void BM_Featurize(benchmark::State& state) {
  auto docs = sample_docs(1000);
  FeatureConfig f;
  f.ngram_max = static_cast<int>(state.range(0));
  for (auto _ : state)
    for (const auto& d : docs) benchmark::DoNotOptimize(featurize(d.text, f));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_Featurize)->Arg(1)->Arg(2);

void BM_Train(benchmark::State& state) {
  auto docs = sample_docs(5000);
  std::vector<std::string> texts;
  std::vector<ClassIndex> y;
  for (const auto& d : docs) {
    texts.push_back(d.text);
    y.push_back(*d.gold);
  }
  FeatureConfig f;
  f.l2_normalize = true;
  auto data = make_training_set(texts, y, 2, f);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.threads = static_cast<unsigned>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train(data, f, cfg));
}
BENCHMARK(BM_Train)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
