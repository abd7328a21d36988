#include <benchmark/benchmark.h>

#include "adanet/net.hpp"
#include "adanet/optim.hpp"
#include "adanet/relax.hpp"
#include "adanet/rng.hpp"
#include "adanet/tensor.hpp"

namespace {

void BM_NeuralSort(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  adanet::SeededRng rng(5);
  std::vector<double> d(n);
  for (auto& x : d) x = rng.normal(0.0, 1.0);
  adanet::Value pi = adanet::make_const({n}, d);
  for (auto _ : state) {
    auto P = adanet::neuralsort(pi, 0.5);
    benchmark::DoNotOptimize(P.matrix->data.data());
  }
}
BENCHMARK(BM_NeuralSort)->Arg(8)->Arg(20)->Arg(64);

void BM_BackboneForward(benchmark::State& state) {
  adanet::BackboneSpec spec;
  adanet::ParamStore ps;
  adanet::SeededRng rng(5);
  adanet::AdaptiveNet net(ps, spec, rng);
  std::vector<double> grid(spec.tokens());
  for (auto& x : grid) x = rng.uniform(0.0, 2.0);
  for (auto _ : state) {
    adanet::Value h = net.encode_modality(0, net.embed(0, grid),
                                          adanet::ModalityGates::all_on(spec.layers[0]));
    benchmark::DoNotOptimize(h->data.data());
  }
}
BENCHMARK(BM_BackboneForward);

void BM_BackboneBackward(benchmark::State& state) {
  adanet::BackboneSpec spec;
  adanet::ParamStore ps;
  adanet::SeededRng rng(5);
  adanet::AdaptiveNet net(ps, spec, rng);
  std::vector<double> grid(spec.tokens()), occ(spec.tokens(), 0.0);
  for (auto& x : grid) x = rng.uniform(0.0, 2.0);
  occ[5] = 1.0;
  int n = spec.tokens();
  for (auto _ : state) {
    adanet::Value h = net.encode_modality(0, net.embed(0, grid),
                                          adanet::ModalityGates::all_on(spec.layers[0]));
    std::vector<adanet::ModalityTokens> toks = {
        {h, {}, n},
        {adanet::make_const({n, spec.width},
                            std::vector<double>(static_cast<std::size_t>(n) * spec.width, 0.0)),
         {},
         n}};
    adanet::Value loss = net.detection_loss(net.fuse_and_head(toks), occ);
    ps.zero_grad();
    adanet::backward(loss);
    benchmark::DoNotOptimize(loss->item());
  }
}
BENCHMARK(BM_BackboneBackward);

}  // namespace

BENCHMARK_MAIN();
