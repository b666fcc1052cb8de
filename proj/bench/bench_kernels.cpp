// Times the parallel kernels against the serial reference on generator- and
// discriminator-shaped convolutions, plus one full tiny-generator forward.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eva/generator.hpp"
#include "eva/kernels.hpp"

using namespace eva;
using namespace eva::kernels;

namespace {

double seconds_per_call(const std::function<void()>& fn, double budget = 0.5) {
  fn();  // warm-up
  int calls = 0;
  const auto start = std::chrono::steady_clock::now();
  double elapsed = 0;
  do {
    fn();
    ++calls;
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  } while (elapsed < budget && calls < 1000);
  return elapsed / calls;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void report(const std::string& name, double ref, double par) {
  std::printf("%-44s reference %9.3f ms   parallel %9.3f ms   speedup %6.2fx\n", name.c_str(), ref * 1e3, par * 1e3,
              ref / par);
}

void bench_conv1d(const std::string& name, const Conv1dGeometry& g, std::mt19937_64& rng) {
  const auto x = random_vec(static_cast<std::size_t>(g.batch * g.in_channels * g.in_length), rng);
  const auto w = random_vec(static_cast<std::size_t>(g.out_channels * (g.in_channels / g.groups) * g.kernel), rng);
  const auto b = random_vec(static_cast<std::size_t>(g.out_channels), rng);
  std::vector<float> y(static_cast<std::size_t>(g.batch * g.out_channels * g.out_length));
  const double ref = seconds_per_call([&] { reference::conv1d_forward(g, x.data(), w.data(), b.data(), y.data()); });
  const double par = seconds_per_call([&] { conv1d_forward(g, x.data(), w.data(), b.data(), y.data()); });
  report(name + " fwd", ref, par);

  std::vector<float> dx(x.size()), dw(w.size()), db(b.size());
  const double ref_b = seconds_per_call([&] {
    reference::conv1d_backward_input(g, y.data(), w.data(), dx.data());
    reference::conv1d_backward_weight(g, y.data(), x.data(), dw.data(), db.data());
  });
  const double par_b = seconds_per_call([&] {
    conv1d_backward_input(g, y.data(), w.data(), dx.data());
    conv1d_backward_weight(g, y.data(), x.data(), dw.data(), db.data());
  });
  report(name + " bwd", ref_b, par_b);
}

void bench_conv2d(const std::string& name, const Conv2dGeometry& g, std::mt19937_64& rng) {
  const auto x = random_vec(static_cast<std::size_t>(g.batch * g.in_channels * g.in_h * g.in_w), rng);
  const auto w = random_vec(static_cast<std::size_t>(g.out_channels * g.in_channels * g.kernel_h * g.kernel_w), rng);
  const auto b = random_vec(static_cast<std::size_t>(g.out_channels), rng);
  std::vector<float> y(static_cast<std::size_t>(g.batch * g.out_channels * g.out_h * g.out_w));
  const double ref = seconds_per_call([&] { reference::conv2d_forward(g, x.data(), w.data(), b.data(), y.data()); });
  const double par = seconds_per_call([&] { conv2d_forward(g, x.data(), w.data(), b.data(), y.data()); });
  report(name + " fwd", ref, par);
}

}  // namespace

int main() {
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
  std::mt19937_64 rng(7);
  bench_conv1d("conv1d MRF 64ch k7 d3 L=3072", Conv1dGeometry::make(1, 64, 64, 3072, 7, 1, 9, 3, 1), rng);
  bench_conv1d("conv1d bridge 32->256 k7 L=256", Conv1dGeometry::make(1, 32, 256, 256, 7, 1, 3, 1, 1), rng);
  bench_conv1d("conv1d depthwise 256ch k7 L=256", Conv1dGeometry::make(1, 256, 256, 256, 7, 1, 3, 1, 256), rng);
  bench_conv1d("conv1d batch4 32ch k11 L=8192", Conv1dGeometry::make(4, 32, 32, 8192, 11, 1, 5, 1, 1), rng);
  bench_conv2d("conv2d MPD 32->128 (5,1) s3", Conv2dGeometry::make(1, 32, 128, 400, 5, 5, 1, 3, 1, 2, 0), rng);
  bench_conv2d("conv2d MRD 32->32 (3,9) s(1,2)", Conv2dGeometry::make(1, 32, 32, 257, 64, 3, 9, 1, 2, 1, 4), rng);

  Generator<float> g(GeneratorConfig::evagan_tiny(), 0);
  Tensor<float> mel(Shape{1, g.config().mel_bins, 48}, std::vector<float>(static_cast<std::size_t>(g.config().mel_bins) * 48, -3.0f));
  NoGradGuard guard;
  set_backend(Backend::reference);
  const double ref = seconds_per_call([&] { g.forward(mel, false, nullptr); });
  set_backend(Backend::parallel);
  const double par = seconds_per_call([&] { g.forward(mel, false, nullptr); });
  report("tiny generator forward, 48 frames", ref, par);
  return 0;
}
