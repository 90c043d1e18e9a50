#include <benchmark/benchmark.h>

#include "shapeguide/codec.hpp"
#include "shapeguide/diffusion.hpp"
#include "shapeguide/metrics.hpp"
#include "shapeguide/train.hpp"

using namespace shapeguide;

namespace {

DenoiseInput<float> input_for(const BackboneConfig& c, std::size_t batch, Rng& rng) {
  DenoiseInput<float> in;
  in.z_t = Tensor<float>::normal(batch * c.n_latent, c.latent_dim, 1.0f, rng);
  in.z_c = Tensor<float>::normal(batch * c.n_latent, c.latent_dim, 1.0f, rng);
  for (std::size_t i = 0; i < batch; ++i) {
    in.t.push_back(static_cast<double>(1 + rng.below(c.n_steps)));
    in.prompts.push_back(render_text(sample_shape(rng, Category::Chair)));
  }
  return in;
}

}  // namespace

static void BM_Attention(benchmark::State& state) {
  Rng rng(1);
  const auto seq = static_cast<std::size_t>(state.range(0));
  const auto q = Tensor<float>::normal(seq, 32, 1.0f, rng);
  const auto k = Tensor<float>::normal(seq, 32, 1.0f, rng);
  const auto v = Tensor<float>::normal(seq, 32, 1.0f, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(attention(q, k, v, 4, seq));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seq));
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(66)->Arg(132);

static void BM_Forward(benchmark::State& state) {
  Rng rng(2);
  const BackboneConfig c;
  const auto base = Denoiser<float>::backbone(c, rng);
  const auto m = Denoiser<float>::from_pretrained(static_cast<Variant>(state.range(0)), base, rng);
  const auto in = input_for(c, 8, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(in));
  state.SetLabel(std::string(variant_name(m.variant())));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Forward)
    ->Arg(static_cast<int>(Variant::TextOnly))
    ->Arg(static_cast<int>(Variant::CrossEntity))
    ->Arg(static_cast<int>(Variant::ControlNet))
    ->Unit(benchmark::kMillisecond);

static void BM_TrainingStep(benchmark::State& state) {
  Rng rng(3);
  const BackboneConfig c;
  const auto schedule = NoiseSchedule::standard(c.n_steps);
  auto m = Denoiser<float>::from_pretrained(Variant::CrossEntity, Denoiser<float>::backbone(c, rng), rng);
  const auto in = input_for(c, 8, rng);
  TrainingBatch<float> batch{in.z_t, in.prompts, in.z_c};
  AdamState adam;
  for (auto _ : state) {
    m.zero_grad();
    const auto loss = training_loss(m, schedule, batch, rng);
    backward(loss);
    clip_gradients(m, 1.0);
    adam_update(m, adam, 1e-3);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

static void BM_Sample(benchmark::State& state) {
  Rng rng(4);
  const BackboneConfig c;
  const auto schedule = NoiseSchedule::standard(c.n_steps);
  const auto m = Denoiser<float>::from_pretrained(Variant::CrossEntity, Denoiser<float>::backbone(c, rng), rng);
  const auto in = input_for(c, 1, rng);
  SampleOptions options;
  options.n_steps = static_cast<std::size_t>(state.range(0));
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(sample(m, schedule, in.prompts, in.z_c, options, rng));
}
BENCHMARK(BM_Sample)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_CodecRoundTrip(benchmark::State& state) {
  Rng rng(5);
  const Codec codec;
  const auto grid = voxelize(sample_shape(rng, Category::Lamp));
  for (auto _ : state) benchmark::DoNotOptimize(codec.decode(codec.encode(grid)));
}
BENCHMARK(BM_CodecRoundTrip);

static void BM_Voxelize(benchmark::State& state) {
  Rng rng(6);
  const auto spec = sample_shape(rng, Category::Table);
  for (auto _ : state) benchmark::DoNotOptimize(voxelize(spec));
}
BENCHMARK(BM_Voxelize);

static void BM_Chamfer(benchmark::State& state) {
  Rng rng(7);
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng ra = rng.fork(1), rb = rng.fork(2);
  const auto a = point_cloud(voxelize(sample_shape(rng, Category::Chair)), n, ra);
  const auto b = point_cloud(voxelize(sample_shape(rng, Category::Chair)), n, rb);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer(a, b));
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Chamfer)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_ChamferBruteForce(benchmark::State& state) {
  Rng rng(7);
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng ra = rng.fork(1), rb = rng.fork(2);
  const auto a = point_cloud(voxelize(sample_shape(rng, Category::Chair)), n, ra);
  const auto b = point_cloud(voxelize(sample_shape(rng, Category::Chair)), n, rb);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer_brute_force(a, b));
}
BENCHMARK(BM_ChamferBruteForce)->Arg(1024);

BENCHMARK_MAIN();
