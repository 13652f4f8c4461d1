#include <benchmark/benchmark.h>

#include <random>

#include "octoforce/arch.hpp"
#include "octoforce/autodiff.hpp"
#include "octoforce/ops.hpp"
#include "octoforce/parallel.hpp"
#include "octoforce/phantom.hpp"

using namespace octoforce;

namespace {

Tensorf random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(shape.numel()));
  for (auto& x : v) x = g(rng);
  return Tensorf(std::move(shape), std::move(v), grad);
}

void BM_Conv3dForward(benchmark::State& state) {
  const auto e = state.range(0);
  const auto c = state.range(1);
  auto x = random_tensor(Shape{8, e, e, e, c}, 1);
  auto w = random_tensor(Shape{3, 3, 3, c, c}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, {}, 1));
  state.SetItemsProcessed(state.iterations() * 8 * e * e * e * 27 * c * c);
}
BENCHMARK(BM_Conv3dForward)->Args({16, 8})->Args({8, 32})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto e = state.range(0);
  const auto c = state.range(1);
  auto x = random_tensor(Shape{8, e, e, e, c}, 1, true);
  auto w = random_tensor(Shape{3, 3, 3, c, c}, 2, true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    backward(sum(conv3d(x, w, {}, 2)));
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({16, 8})->Unit(benchmark::kMillisecond);

void BM_SiamcnnInfer64(benchmark::State& state) {
  set_num_threads(static_cast<int>(state.range(0)));
  auto model = build_siamcnn(default_arch(ModelKind::siamcnn));
  auto r = random_tensor(model.input_shape(1), 3);
  auto s = random_tensor(model.input_shape(1), 4);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(r, s, Mode::infer));
  set_num_threads(1);
}
BENCHMARK(BM_SiamcnnInfer64)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep32(benchmark::State& state) {
  ArchSpec spec;
  spec.input_extent = 32;
  spec.init_channels = 8;
  spec.path_blocks = {{16, 2, 4}, {16, 1, 4}, {32, 2, 4}};
  spec.joint_blocks = {{64, 2, 4}, {64, 1, 4}, {128, 2, 4}, {128, 1, 4}, {128, 2, 4}, {128, 1, 4}};
  auto model = build_model<float>(static_cast<ModelKind>(state.range(0)), spec);
  auto r = random_tensor(model.input_shape(8), 5);
  auto s = random_tensor(model.input_shape(8), 6);
  auto target = random_tensor(Shape{8, 3}, 7);
  for (auto _ : state) {
    model.zero_grad();
    backward(mse_loss(model.forward(r, s, Mode::train), target));
  }
  state.SetLabel(std::string(to_string(model.kind())));
}
BENCHMARK(BM_TrainStep32)
    ->Arg(static_cast<int>(ModelKind::siamcnn))
    ->Arg(static_cast<int>(ModelKind::diffcnn_minus))
    ->Arg(static_cast<int>(ModelKind::surfcnn_depth))
    ->Unit(benchmark::kMillisecond);

void BM_RenderVolume32(benchmark::State& state) {
  PhantomSpec spec;
  spec.grid = {32, 32, 32};
  const ToolPose pose{10.0, 5.0, -3.0, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(render_volume(spec, {}, pose, 1));
}
BENCHMARK(BM_RenderVolume32)->Unit(benchmark::kMillisecond);

void BM_ExtractSurfaces(benchmark::State& state) {
  PhantomSpec spec;
  spec.grid = {64, 64, 64};
  spec.raw_grid = {64, 64, 64};
  const auto v = render_volume(spec, {}, std::nullopt, 1);
  for (auto _ : state) benchmark::DoNotOptimize(extract_surfaces(v));
}
BENCHMARK(BM_ExtractSurfaces)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
