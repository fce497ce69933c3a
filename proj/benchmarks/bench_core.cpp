// Microbenchmarks for the hot paths: dense matmul, the encoder forward at
// several sequence lengths, suppression, and AP evaluation.

#include <benchmark/benchmark.h>

#include "atal/evaluation.hpp"
#include "atal/model.hpp"
#include "atal/postprocess.hpp"
#include "atal/rng.hpp"
#include "atal/tape.hpp"
#include "atal/training.hpp"

using namespace atal;

namespace {

Tensor gaussian(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_gaussian();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = gaussian({n, n}, 1);
  const Tensor b = gaussian({n, n}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_EncoderForward(benchmark::State& state) {
  const int t = static_cast<int>(state.range(0));
  ModelConfig cfg;
  cfg.feature_dim = 32;
  cfg.num_heads = 4;
  cfg.ff_dim = 64;
  cfg.head_hidden_1 = 192;
  cfg.head_hidden_2 = 288;
  ModelParams params = init_params(cfg, 3);
  const Tensor features = gaussian({t, cfg.feature_dim}, 4);
  for (auto _ : state) {
    Tape tape;
    ModelGraph graph(tape, params, false);
    const Tape::Id enc = graph.encode(features);
    benchmark::DoNotOptimize(graph.heads(enc, NormMode::kTrain, false));
  }
}
BENCHMARK(BM_EncoderForward)->Arg(84)->Arg(168)->Arg(336);

void BM_TrainingStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.feature_dim = 32;
  cfg.num_heads = 4;
  cfg.ff_dim = 64;
  cfg.head_hidden_1 = 192;
  cfg.head_hidden_2 = 288;
  ModelParams params = init_params(cfg, 5);
  const Tensor features = gaussian({84, cfg.feature_dim}, 6);
  std::vector<uint8_t> labels(84, 0), valid(84, 1);
  for (int i = 20; i < 26; ++i) labels[static_cast<size_t>(i)] = 1;
  Tensor targets({84, 2});
  for (auto _ : state) {
    Tape tape;
    ModelGraph graph(tape, params, true);
    const auto heads = graph.heads(graph.encode(features), NormMode::kTrain, false, valid);
    const Tape::Id cls = focal_loss_node(tape, heads.p_event, labels, 0.25, 2.0, valid);
    const Tape::Id reg = regression_loss_node(tape, heads.reg, targets, labels);
    const Tape::Id total = total_loss_node(tape, cls, reg, 1.0);
    tape.backward(total);
    benchmark::DoNotOptimize(tape.grad(graph.param_id(params.cls_head.out_w)));
  }
}
BENCHMARK(BM_TrainingStep);

void BM_HardNms(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(7);
  std::vector<ScoredSegment> cands;
  for (int i = 0; i < n; ++i) {
    const double s = rng.uniform(0, 160);
    cands.push_back(ScoredSegment{s, s + rng.uniform(0.5, 12), rng.next_double(), "c"});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(nms(cands, 0.5));
  }
}
BENCHMARK(BM_HardNms)->Arg(100)->Arg(1000);

void BM_AveragePrecision(benchmark::State& state) {
  Rng rng(8);
  SegmentsByVideo gt;
  PredictionsByVideo preds;
  for (int v = 0; v < 10; ++v) {
    const std::string video = "v" + std::to_string(v);
    for (int g = 0; g < 8; ++g) {
      const double s = rng.uniform(0, 170);
      gt[video].push_back({s, s + rng.uniform(1, 8)});
    }
    for (int p = 0; p < 40; ++p) {
      const double s = rng.uniform(0, 170);
      preds[video].push_back(ScoredSegment{s, s + rng.uniform(1, 8), rng.next_double(), "c"});
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(average_precision(preds, gt, 0.5));
  }
}
BENCHMARK(BM_AveragePrecision);

}  // namespace

BENCHMARK_MAIN();
