#include <benchmark/benchmark.h>

#include <numeric>

#include "circuitscope/attribution.hpp"
#include "circuitscope/backward.hpp"
#include "circuitscope/checkpoint.hpp"
#include "circuitscope/circuit.hpp"
#include "circuitscope/forward.hpp"
#include "circuitscope/head_metrics.hpp"
#include "circuitscope/tasks.hpp"

using namespace circuitscope;

namespace {

// The 4-layer, 4-head shape of the IOI runs.
ModelConfig ioi_config() {
  ModelConfig c;
  c.n_layers = 4;
  c.n_heads = 4;
  c.d_model = 32;
  c.d_mlp = 128;
  c.vocab_size = 512;
  c.max_seq_len = 16;
  c.seed = 1;
  return c;
}

const Model& ioi_model() {
  static const Model model(build_model(ioi_config()));
  return model;
}

const TaskDataset& ioi_data(int n) {
  static const TaskDataset ds = gen_ioi(70, 3);
  static TaskDataset sub;
  sub = ds;
  sub.examples.resize(static_cast<std::size_t>(n));
  return sub;
}

void BM_Forward(benchmark::State& state) {
  const auto& ex = ioi_data(1).examples[0];
  for (auto _ : state) benchmark::DoNotOptimize(forward(ioi_model(), ex.clean));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMicrosecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto& ex = ioi_data(1).examples[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(backward_metric(ioi_model(), ex.clean, ex.answer_position, ex.metric));
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMicrosecond);

void BM_EapIg(benchmark::State& state) {
  const TaskDataset ds = ioi_data(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(eap_ig(ioi_model(), ds, 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EapIg)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Faithfulness(benchmark::State& state) {
  const TaskDataset ds = ioi_data(8);
  const FaithfulnessEvaluator eval(ioi_model(), ds);
  std::vector<char> in(ioi_model().graph().edges().size(), 0);
  for (std::size_t i = 0; i < in.size(); i += 20) in[i] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(eval(in));
}
BENCHMARK(BM_Faithfulness)->Unit(benchmark::kMillisecond);

void BM_InductionScore(benchmark::State& state) {
  const auto corpus = gen_induction_corpus(50, 16, 4);
  for (auto _ : state) benchmark::DoNotOptimize(induction_score(ioi_model(), HeadId{1, 0}, corpus));
}
BENCHMARK(BM_InductionScore)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
