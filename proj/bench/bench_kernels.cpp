// Serial reference vs OpenMP kernels on representative problem sizes.

#include <random>

#include <benchmark/benchmark.h>

#include "ablreg/kernels.hpp"
#include "ablreg/synth.hpp"

using namespace ablreg;

namespace {

const Volume& bench_volume() {
  static const Volume v = [] {
    VolumeGeometry g;
    g.dims = {128, 128, 128};
    Volume out = Volume::zeros(g, Modality::US3D);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& s : out.scalars) s = u(rng);
    return out;
  }();
  return v;
}

SlicePose bench_pose() { return centred_slice_pose(Vec3(64, 64, 64), rot_x(20.0) * rot_z(10.0), {100.0, 80.0, 0.5}); }

std::vector<Vec3> random_points(std::size_t n, double extent, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> out(n);
  for (Vec3& p : out) p = Vec3(u(rng), u(rng), u(rng));
  return out;
}

template <bool Parallel>
void BM_ResamplePlane(benchmark::State& state) {
  const Volume& v = bench_volume();
  const SlicePose pose = bench_pose();
  std::vector<double> values(static_cast<std::size_t>(pose.nu) * pose.nv);
  std::vector<std::uint8_t> valid(values.size());
  for (auto _ : state) {
    if (Parallel) {
      kernels::parallel::resample_plane(v, pose, values, valid);
    } else {
      kernels::serial::resample_plane(v, pose, values, valid);
    }
    benchmark::DoNotOptimize(values.data());
  }
}

template <bool Parallel>
void BM_MipBehindPlane(benchmark::State& state) {
  const Volume& v = bench_volume();
  const SlicePose pose = bench_pose();
  std::vector<double> values(static_cast<std::size_t>(pose.nu) * pose.nv);
  std::vector<std::uint8_t> valid(values.size());
  for (auto _ : state) {
    if (Parallel) {
      kernels::parallel::mip_behind_plane(v, pose, 0.5, 61, {}, values, valid);
    } else {
      kernels::serial::mip_behind_plane(v, pose, 0.5, 61, {}, values, valid);
    }
    benchmark::DoNotOptimize(values.data());
  }
}

template <bool Parallel>
void BM_TpsEvaluate(benchmark::State& state) {
  const auto sources = random_points(300, 60.0, 2);
  auto targets = sources;
  for (Vec3& t : targets) t += Vec3(1.0, -0.5, 0.25);
  targets[0] += Vec3(3.0, 0.0, 0.0);
  const TpsWarp w = tps_fit(sources, targets);
  const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 60.0, 3);
  std::vector<Vec3> out(pts.size());
  const kernels::TpsCoefficients c{w.sources, w.weights, &w.affine};
  for (auto _ : state) {
    if (Parallel) {
      kernels::parallel::tps_evaluate(c, pts, out);
    } else {
      kernels::serial::tps_evaluate(c, pts, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_CpdEStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_points(n, 50.0, 4);
  const auto y = random_points(n, 50.0, 5);
  for (auto _ : state) {
    const auto r = Parallel ? kernels::parallel::cpd_estep(x, y, 25.0, 1e-3, false)
                            : kernels::serial::cpd_estep(x, y, 25.0, 1e-3, false);
    benchmark::DoNotOptimize(r.np);
  }
}

}  // namespace

BENCHMARK(BM_ResamplePlane<false>);
BENCHMARK(BM_ResamplePlane<true>);
BENCHMARK(BM_MipBehindPlane<false>);
BENCHMARK(BM_MipBehindPlane<true>);
BENCHMARK(BM_TpsEvaluate<false>)->Arg(10000);
BENCHMARK(BM_TpsEvaluate<true>)->Arg(10000);
BENCHMARK(BM_CpdEStep<false>)->Arg(1000)->Arg(3000);
BENCHMARK(BM_CpdEStep<true>)->Arg(1000)->Arg(3000);

BENCHMARK_MAIN();
