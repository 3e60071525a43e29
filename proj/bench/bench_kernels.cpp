// Serial reference kernels against their OpenMP counterparts. Run with
// OMP_NUM_THREADS set to compare scaling; outputs are identical either way.

#include <map>

#include <benchmark/benchmark.h>

#include "embkit/attnstats.hpp"
#include "embkit/contrastive.hpp"
#include "embkit/kernels/similarity.hpp"
#include "embkit/random.hpp"
#include "embkit/saha.hpp"
#include "oracles/attention_reference.hpp"
#include "oracles/instances.hpp"

namespace {

using namespace embkit;

constexpr std::size_t kDim = 128;
constexpr std::size_t kQueries = 256;
constexpr std::size_t kTopK = 60;

struct Corpus {
  std::vector<float> rows;
  std::vector<float> queries;
  kernels::PanelMatrix panels;
};

const Corpus& corpus(std::size_t n) {
  static std::map<std::size_t, Corpus> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Rng rng(n);
  Corpus c;
  c.rows = oracle::random_unit_rows(rng, n, kDim);
  c.queries = oracle::random_unit_rows(rng, kQueries, kDim);
  c.panels = kernels::PanelMatrix(c.rows, n, kDim);
  return cache.emplace(n, std::move(c)).first->second;
}

void BM_TopkSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto& c = corpus(n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::topk_serial(c.rows, n, kDim, c.queries, kTopK, {}));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kQueries * n));
}
BENCHMARK(BM_TopkSerial)->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);

void BM_TopkParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto& c = corpus(n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::topk_parallel(c.panels, c.queries, kTopK, {}, 4096));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kQueries * n));
}
BENCHMARK(BM_TopkParallel)->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);

std::pair<attn::AttentionDump, attn::TokenTypeMap> attention_input() {
  Rng rng(7);
  auto dump = oracle::random_dump(rng, 16, 8, 256);
  std::vector<attn::TokenType> labels(256, attn::TokenType::user);
  for (std::size_t i = 0; i < 32; ++i) labels[i] = attn::TokenType::system;
  for (std::size_t i = 200; i < 256; ++i) labels[i] = attn::TokenType::image;
  labels.back() = attn::TokenType::assistant;
  return {std::move(dump), attn::TokenTypeMap::with_outputs(labels, attn::OutputMode::attending)};
}

void BM_AttentionSerial(benchmark::State& state) {
  const auto [dump, map] = attention_input();
  for (auto _ : state) benchmark::DoNotOptimize(attn::efficiency_report_serial(dump, map, {}));
}
BENCHMARK(BM_AttentionSerial)->Unit(benchmark::kMillisecond);

void BM_AttentionParallel(benchmark::State& state) {
  const auto [dump, map] = attention_input();
  for (auto _ : state) benchmark::DoNotOptimize(attn::efficiency_report(dump, map, {}));
}
BENCHMARK(BM_AttentionParallel)->Unit(benchmark::kMillisecond);

void BM_InfoNceGradient(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  contrastive::ClusterBatch batch;
  batch.rows = rows;
  batch.dim = 64;
  for (std::size_t i = 0; i < rows * 64; ++i) {
    batch.queries.push_back(rng.normal());
    batch.candidates.push_back(rng.normal());
  }
  for (auto _ : state) benchmark::DoNotOptimize(contrastive::infonce_grad(batch, LossConfig{}));
}
BENCHMARK(BM_InfoNceGradient)->Arg(16)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Mine(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto inst = oracle::random_instance(11, n, n, 64, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, MinerConfig{15, 4}));
  }
}
BENCHMARK(BM_Mine)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
