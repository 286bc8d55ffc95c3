#include <benchmark/benchmark.h>

#include "lupi/autodiff.hpp"
#include "lupi/data.hpp"
#include "lupi/model.hpp"
#include "lupi/train.hpp"

using namespace lupi;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, RngState& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

void BM_MatmulForward(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  RngState rng(1);
  Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  Var av = constant(a), bv = constant(b);
  for (auto _ : state) {
    Var c = matmul(av, bv);
    benchmark::DoNotOptimize(c->value[0]);
  }
}
BENCHMARK(BM_MatmulForward)->Arg(32)->Arg(64)->Arg(128);

void BM_LinearBackward(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  RngState rng(2);
  Tensor x = random_matrix(16, n, rng);
  Tensor W = random_matrix(n, n, rng);
  Tensor b({n});
  for (auto _ : state) {
    Var Wv = param(W), bv = param(b);
    Var root = sum(square(linear(constant(x), Wv, bv)));
    backward(root);
    benchmark::DoNotOptimize(Wv->grad[0]);
  }
}
BENCHMARK(BM_LinearBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_ModelLossBackward(benchmark::State& state) {
  ModelArch arch;  // default desk-scale architecture, 256-d input
  Model m = build_lupi(arch, {4.0, 1}, 3);
  RngState rng(4);
  TripletDataset ds;
  std::size_t n = 32;
  ds.x = random_matrix(n, arch.input_dim, rng);
  ds.xstar = random_matrix(n, arch.input_dim, rng);
  ds.masks = Tensor({n, arch.input_dim});
  ds.num_classes = arch.num_classes;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    ds.y.push_back(static_cast<int>(rng.below(arch.num_classes)));
    ds.has_star.push_back(1);
    idx.push_back(i);
  }
  RngState noise(7);
  for (auto _ : state) {
    Var loss = model_loss(m, ds, idx, 0.4, &noise);
    backward(loss);
    benchmark::DoNotOptimize(loss->value[0]);
  }
}
BENCHMARK(BM_ModelLossBackward);

void BM_Generate(benchmark::State& state) {
  GenConfig cfg;
  for (auto _ : state) {
    TripletDataset ds = generate(cfg, 256, 1.0, 7);
    benchmark::DoNotOptimize(ds.x[0]);
  }
}
BENCHMARK(BM_Generate);

}  // namespace

BENCHMARK_MAIN();
