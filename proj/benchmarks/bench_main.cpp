#include <vector>

#include <benchmark/benchmark.h>

#include "eegldm/controlnet/adapter.hpp"
#include "eegldm/denoiser/unet.hpp"
#include "eegldm/diffusion/diffusion.hpp"
#include "eegldm/evalkit/metrics.hpp"
#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/rng.hpp"

namespace {

using namespace eegldm;
using nd::Shape;
using nd::Tensor;
using nd::Var;

const latentvae::LatentDims kLatent{4, 8, 14};

void BM_Conv2dForward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  nd::Rng rng(1);
  const Var<float> x(nd::randn<float>({8, channels, 8, 14}, rng));
  const Var<float> w(nd::randn<float>({channels, channels, 3, 3}, rng, 0.1));
  const Var<float> b(Tensor<float>(Shape{channels}));
  for (auto _ : state) benchmark::DoNotOptimize(nd::conv2d(x, w, b, 1, 1).value().data());
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  nd::Rng rng(2);
  const Var<float> x(nd::randn<float>({8, 64, 8, 14}, rng), true);
  const Var<float> w(nd::randn<float>({64, 64, 3, 3}, rng, 0.1), true);
  const Var<float> b(Tensor<float>(Shape{64}), true);
  for (auto _ : state) {
    auto y = nd::sum(nd::conv2d(x, w, b, 1, 1));
    y.backward();
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMicrosecond);

void BM_UNetPredict(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  nd::ParameterTree<float> tree;
  nd::Rng rng(3);
  denoiser::UNet<float> unet(tree, "unet", {}, rng);
  const auto z = nd::randn<float>(kLatent.batch_shape(batch), rng);
  const std::vector<std::size_t> ts(batch, 100);
  for (auto _ : state) benchmark::DoNotOptimize(unet.predict(z, ts).data());
}
BENCHMARK(BM_UNetPredict)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_FusedForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  nd::ParameterTree<float> tree;
  nd::Rng rng(4);
  denoiser::UNet<float> unet(tree, "unet", {}, rng);
  controlnet::Adapter<float> adapter(tree, "adapter", unet, {}, kLatent, rng);
  const Var<float> z(nd::randn<float>(kLatent.batch_shape(batch), rng));
  const Var<float> y(nd::randn<float>({batch, 16, 560}, rng));
  const std::vector<std::size_t> subjects(batch, 0), ts(batch, 100);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        controlnet::fused_forward(unet, adapter, z, y, subjects, ts).value().data());
  }
}
BENCHMARK(BM_FusedForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_AdapterTrainStep(benchmark::State& state) {
  nd::ParameterTree<float> tree;
  nd::Rng rng(5);
  denoiser::UNet<float> unet(tree, "unet", {}, rng);
  controlnet::Adapter<float> adapter(tree, "adapter", unet, {}, kLatent, rng);
  tree.set_trainable("unet.", false);
  const auto schedule = diffusion::NoiseSchedule::linear(200, 1e-4, 2e-2);
  controlnet::ConditionedBatch<float> batch{nd::randn<float>(kLatent.batch_shape(8), rng),
                                            nd::randn<float>({8, 16, 560}, rng),
                                            std::vector<std::size_t>(8, 0)};
  std::uint64_t seed = 0;
  for (auto _ : state) {
    tree.zero_grad();
    auto loss = controlnet::adapter_loss(unet, adapter, batch, schedule, ++seed);
    loss.backward();
    benchmark::DoNotOptimize(loss.value().data());
  }
}
BENCHMARK(BM_AdapterTrainStep)->Unit(benchmark::kMillisecond);

void BM_DdimSample(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  nd::ParameterTree<float> tree;
  nd::Rng rng(6);
  denoiser::UNet<float> unet(tree, "unet", {}, rng);
  const auto schedule = diffusion::NoiseSchedule::linear(200, 1e-4, 2e-2);
  diffusion::DenoiseFn<float> fn = [&](const Tensor<float>& z_t, std::size_t t) {
    return unet.predict(z_t, std::vector<std::size_t>(z_t.dim(0), t));
  };
  for (auto _ : state) {
    benchmark::DoNotOptimize(diffusion::sample(fn, schedule, steps, kLatent.batch_shape(4), 7).data());
  }
}
BENCHMARK(BM_DdimSample)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_FrechetDistance(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  nd::Rng rng(7);
  std::normal_distribution<double> n;
  std::vector<evalkit::Embedding> a(4 * dim), b(4 * dim);
  for (auto* set : {&a, &b}) {
    for (auto& e : *set) {
      e.resize(dim);
      for (auto& v : e) v = n(rng);
    }
  }
  const auto ga = evalkit::fit_gaussian(a), gb = evalkit::fit_gaussian(b);
  for (auto _ : state) benchmark::DoNotOptimize(evalkit::frechet_distance(ga, gb));
}
BENCHMARK(BM_FrechetDistance)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
