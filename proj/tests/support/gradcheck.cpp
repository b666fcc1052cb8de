#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "eva/autograd.hpp"
#include "eva/ops.hpp"
#include "eva/signal.hpp"

namespace eva::testing {

Tensor<double> random_leaf(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(element_count(shape)));
  for (auto& x : v) x = d(rng);
  return Tensor<double>(shape, std::move(v), true);
}

Tensor<double> random_away_from_zero(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(static_cast<std::size_t>(element_count(shape)));
  for (auto& x : v) x = sign(rng) ? d(rng) : -d(rng);
  return Tensor<double>(shape, std::move(v), true);
}

GradcheckResult gradcheck(const std::string& name, std::vector<Tensor<double>> inputs, const GradFn& f, int probes,
                          std::mt19937_64& rng, double h) {
  GradcheckResult result;
  result.name = name;
  const Tensor<double> probe_out = [&] {
    NoGradGuard guard;
    return f(inputs);
  }();
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> weights(probe_out.numel());
  for (auto& w : weights) w = nd(rng);
  const Tensor<double> contract(probe_out.shape(), weights);

  for (auto& t : inputs) t.zero_grad();
  const auto out = f(inputs);
  backward(reduce(mul(out, contract), Reduction::sum));

  auto objective = [&]() {
    NoGradGuard guard;
    const auto y = f(inputs);
    double acc = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * weights[i];
    return acc;
  };

  std::vector<std::size_t> differentiable;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].requires_grad()) differentiable.push_back(i);
  }
  for (int p = 0; p < probes; ++p) {
    auto& t = inputs[differentiable[static_cast<std::size_t>(p) % differentiable.size()]];
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, t.numel() - 1)(rng);
    const double analytic = t.has_grad() ? t.grad()[k] : 0.0;
    const double saved = t.data()[k];
    t.data()[k] = saved + h;
    const double up = objective();
    t.data()[k] = saved - h;
    const double down = objective();
    t.data()[k] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.probes;
  }
  return result;
}

std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::vector<GradcheckResult> r;
  using T = Tensor<double>;
  using In = const std::vector<T>&;
  auto leaf = [&](const Shape& s, double lo = -1.0, double hi = 1.0) { return random_leaf(s, rng, lo, hi); };
  auto away = [&](const Shape& s, double lo, double hi) { return random_away_from_zero(s, rng, lo, hi); };

  r.push_back(gradcheck("add", {leaf({3, 4}), leaf({3, 4})}, [](In x) { return add(x[0], x[1]); }, n, rng));
  r.push_back(gradcheck("sub", {leaf({3, 4}), leaf({3, 4})}, [](In x) { return sub(x[0], x[1]); }, n, rng));
  r.push_back(gradcheck("mul", {leaf({3, 4}), leaf({3, 4})}, [](In x) { return mul(x[0], x[1]); }, n, rng));
  r.push_back(gradcheck("div", {leaf({3, 4}), away({3, 4}, 0.5, 2.0)}, [](In x) { return div(x[0], x[1]); }, n, rng));
  r.push_back(gradcheck("scale", {leaf({5})}, [](In x) { return scale(x[0], -2.5); }, n, rng));
  r.push_back(gradcheck("add_scalar", {leaf({5})}, [](In x) { return add_scalar(x[0], 0.75); }, n, rng));
  r.push_back(gradcheck("add_n", {leaf({2, 3}), leaf({2, 3}), leaf({2, 3})},
                        [](In x) { return add_n(std::span<const T>(x)); }, n, rng));
  r.push_back(gradcheck("silu", {leaf({4, 5}, -3, 3)}, [](In x) { return activation(x[0], Activation::silu()); }, n, rng));
  r.push_back(gradcheck("leaky_relu", {away({4, 5}, 0.05, 2.0)},
                        [](In x) { return activation(x[0], Activation::leaky_relu(0.1)); }, n, rng));
  r.push_back(gradcheck("tanh", {leaf({4, 5}, -2, 2)}, [](In x) { return activation(x[0], Activation::tanh()); }, n, rng));
  r.push_back(
      gradcheck("sigmoid", {leaf({4, 5}, -3, 3)}, [](In x) { return activation(x[0], Activation::sigmoid()); }, n, rng));
  r.push_back(gradcheck("log", {leaf({6}, 0.2, 3.0)}, [](In x) { return log(x[0]); }, n, rng));
  r.push_back(gradcheck("log_clamped", {leaf({12}, 0.01, 3.0)}, [](In x) { return log_clamped(x[0], 1e-7); }, n, rng));
  r.push_back(gradcheck("reduce_mean_abs", {away({3, 7}, 0.05, 1.0)},
                        [](In x) { return reduce(x[0], Reduction::mean_abs); }, n, rng));
  r.push_back(gradcheck("reduce_mean_sq", {leaf({3, 7})}, [](In x) { return reduce(x[0], Reduction::mean_sq); }, n, rng));
  r.push_back(gradcheck("reduce_sum", {leaf({3, 7})}, [](In x) { return reduce(x[0], Reduction::sum); }, n, rng));
  r.push_back(gradcheck("reduce_mean", {leaf({3, 7})}, [](In x) { return reduce(x[0], Reduction::mean); }, n, rng));
  r.push_back(gradcheck("l2_norm", {leaf({4, 6})}, [](In x) { return l2_norm(x[0]); }, n, rng));
  r.push_back(gradcheck("reshape", {leaf({2, 6})}, [](In x) { return reshape(x[0], Shape{3, 4}); }, n, rng));
  r.push_back(gradcheck("transpose_last2", {leaf({2, 3, 5})}, [](In x) { return transpose_last2(x[0]); }, n, rng));
  r.push_back(gradcheck("pad_reflect", {leaf({2, 2, 9})}, [](In x) { return pad_reflect(x[0], 3, 5); }, n, rng));
  r.push_back(gradcheck("slice_last", {leaf({2, 3, 10})}, [](In x) { return slice_last(x[0], 2, 5); }, n, rng));
  r.push_back(gradcheck("layer_norm_channels", {leaf({2, 5, 7}), leaf({5}, 0.5, 1.5), leaf({5})},
                        [](In x) { return layer_norm_channels(x[0], x[1], x[2], 1e-6); }, n, rng));
  r.push_back(gradcheck("conv1d", {leaf({2, 3, 17}), leaf({4, 3, 5}), leaf({4})},
                        [](In x) { return conv1d(x[0], x[1], x[2], {1, 2, 1, 1}); }, n, rng));
  r.push_back(gradcheck("conv1d_strided_dilated", {leaf({2, 4, 23}), leaf({6, 4, 3}), leaf({6})},
                        [](In x) { return conv1d(x[0], x[1], x[2], {2, 3, 3, 1}); }, n, rng));
  r.push_back(gradcheck("conv1d_grouped", {leaf({1, 6, 15}), leaf({6, 2, 3}), leaf({6})},
                        [](In x) { return conv1d(x[0], x[1], x[2], {1, 1, 1, 3}); }, n, rng));
  r.push_back(gradcheck("conv1d_depthwise_nobias", {leaf({2, 4, 13}), leaf({4, 1, 7})},
                        [](In x) { return conv1d(x[0], x[1], T(), {1, 3, 1, 4}); }, n, rng));
  r.push_back(gradcheck("conv_transpose1d", {leaf({2, 4, 6}), leaf({4, 3, 8}), leaf({3})},
                        [](In x) { return conv_transpose1d(x[0], x[1], x[2], 4, 2); }, n, rng));
  r.push_back(gradcheck("conv_transpose1d_odd", {leaf({1, 3, 5}), leaf({3, 2, 5})},
                        [](In x) { return conv_transpose1d(x[0], x[1], T(), 3, 1); }, n, rng));
  r.push_back(gradcheck("conv2d", {leaf({2, 2, 9, 6}), leaf({3, 2, 3, 3}), leaf({3})},
                        [](In x) { return conv2d(x[0], x[1], x[2], {1, 1, 1, 1}); }, n, rng));
  r.push_back(gradcheck("conv2d_strided", {leaf({1, 3, 17, 5}), leaf({2, 3, 9, 3}), leaf({2})},
                        [](In x) { return conv2d(x[0], x[1], x[2], {2, 1, 4, 1}); }, n, rng));
  r.push_back(gradcheck("conv2d_period", {leaf({2, 1, 14, 3}), leaf({4, 1, 5, 1}), leaf({4})},
                        [](In x) { return conv2d(x[0], x[1], x[2], {3, 1, 2, 0}); }, n, rng));
  r.push_back(gradcheck("linear_last", {leaf({2, 3, 5}), leaf({4, 5})}, [](In x) { return linear_last(x[0], x[1]); }, n,
                        rng));
  {
    const std::vector<std::uint8_t> keep{1, 0, 1};
    r.push_back(gradcheck("drop_path", {leaf({3, 2, 4})},
                          [keep](In x) { return drop_path(x[0], std::span<const std::uint8_t>(keep), 0.8); }, n, rng));
  }
  r.push_back(gradcheck("stft_magnitude", {leaf({2, 40})},
                        [](In x) { return stft_magnitude(x[0], 16, 4, 12, true); }, n, rng));
  r.push_back(gradcheck("stft_magnitude_uncentered", {leaf({1, 37})},
                        [](In x) { return stft_magnitude(x[0], 8, 3, 8, false); }, n, rng));
  {
    SpectralConfig c;
    c.sample_rate = 8000;
    c.n_fft = 32;
    c.hop_length = 8;
    c.win_length = 32;
    c.mel_bins = 6;
    const MelFrontend<double> fe(c);
    r.push_back(gradcheck("mel_frontend", {leaf({1, 64})}, [fe](In x) { return fe(x[0]); }, n, rng));
  }
  return r;
}

}  // namespace eva::testing
