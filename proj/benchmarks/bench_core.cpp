// Microbenchmarks for the hot paths: dense matmul, windowed attention,
// BEV convolution, chamfer loss, and one full two-frame training step.
#include <benchmark/benchmark.h>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "tmae/attention.hpp"
#include "tmae/model.hpp"
#include "tmae/pillars.hpp"
#include "tmae/tensor.hpp"
#include "tmae/training.hpp"
#include "tmae/windows.hpp"

using namespace tmae;

namespace {

AttnParams make_attn(int64_t d, Rng& rng) {
  AttnParams p;
  double s = 1.0 / std::sqrt(static_cast<double>(d));
  auto mk = [&](Shape sh, double std) { return Tensor::randn(std::move(sh), rng, std, false); };
  p.wq = mk({d, d}, s);
  p.bq = mk({d}, 0.1);
  p.wk = mk({d, d}, s);
  p.bk = mk({d}, 0.1);
  p.wv = mk({d, d}, s);
  p.bv = mk({d}, 0.1);
  p.wo = mk({d, d}, s);
  p.bo = mk({d}, 0.1);
  p.mlp_w1 = mk({d, 4 * d}, s);
  p.mlp_b1 = mk({4 * d}, 0.1);
  p.mlp_w2 = mk({4 * d, d}, 0.5 * s);
  p.mlp_b2 = mk({d}, 0.1);
  p.ln1_g = Tensor::full({d}, 1.0);
  p.ln1_b = Tensor::zeros({d});
  p.ln2_g = Tensor::full({d}, 1.0);
  p.ln2_b = Tensor::zeros({d});
  return p;
}

void bm_matmul(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng, 1.0, false);
  Tensor b = Tensor::randn({n, n}, rng, 1.0, false);
  for (auto _ : state) {
    Tape tp;
    Tensor c = matmul(tp, a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);

void bm_sra_block(benchmark::State& state) {
  int64_t tokens = state.range(0), d = 64, heads = 4;
  Rng rng(2);
  std::vector<std::pair<int32_t, int32_t>> coords;
  for (int64_t i = 0; i < tokens; ++i)
    coords.push_back({static_cast<int32_t>(i % 48), static_cast<int32_t>((i * 7) % 48)});
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  int64_t n = static_cast<int64_t>(coords.size());
  WindowPartition part = partition_windows(coords, 8, 8, false);
  Tensor x = Tensor::randn({n, d}, rng, 1.0, false);
  Tensor pe = positional_encoding(coords, d);
  AttnParams p = make_attn(d, rng);
  for (auto _ : state) {
    Tape tp;
    Tensor y = sra_block(tp, x, pe, part, p, heads, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bm_sra_block)->Arg(128)->Arg(512);

void bm_conv_bev(benchmark::State& state) {
  int64_t d = 64, h = 50, w = 50;
  Rng rng(3);
  Tensor x = Tensor::randn({d, h, w}, rng, 1.0, false);
  Tensor wt = Tensor::randn({d, d, 3, 3}, rng, 0.05, false);
  Tensor b = Tensor::zeros({d});
  for (auto _ : state) {
    Tape tp;
    Tensor y = conv2d_3x3(tp, x, wt, b);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * d * d * 9 * h * w);
}
BENCHMARK(bm_conv_bev);

void bm_chamfer(benchmark::State& state) {
  int64_t rows = state.range(0), kp = 16, kg = 64;
  Rng rng(4);
  Tensor pred = Tensor::randn({rows, 3 * kp}, rng, 1.0, false);
  Tensor tgt = Tensor::randn({rows, 3 * kg}, rng, 1.0, false);
  for (auto _ : state) {
    Tape tp;
    Tensor l = chamfer_set_loss(tp, pred, tgt, kp, kg);
    benchmark::DoNotOptimize(l.data());
  }
  state.SetItemsProcessed(state.iterations() * rows * kp * kg);
}
BENCHMARK(bm_chamfer)->Arg(64)->Arg(512);

void bm_train_step(benchmark::State& state) {
  ModelConfig m;
  GridConfig grid;
  SceneConfig sc = SceneConfig::default_desk();
  auto frames = gen_synthetic_sequence(sc);
  PointFrame cur = frames[5];
  PointFrame prev = transform_to_frame(frames[2], cur.pose);
  Rng init(5);
  ParamStore store = build_params(m, init);
  TrainConfig tc;
  uint64_t salt = 0;
  for (auto _ : state) {
    Rng step_rng(1000 + salt++);
    Tape tp;
    Tensor loss = forward_tmae(tp, prev, cur, store, m, grid, step_rng);
    store.zero_grads();
    tp.backward(loss);
    adamw_step(store, 1e-3, tc);
    benchmark::DoNotOptimize(loss.data());
  }
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
