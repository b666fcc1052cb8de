#include <doctest.h>

#include <cmath>
#include <random>

#include "eva/autograd.hpp"
#include "eva/balancer.hpp"
#include "eva/ops.hpp"

using namespace eva;

namespace {

using Grads = std::vector<std::vector<double>>;

double norm(const std::vector<double>& g) {
  double s = 0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

std::vector<double> random_direction(std::size_t n, double length, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0, 1);
  std::vector<double> g(n);
  for (auto& v : g) v = nd(rng);
  const double s = length / norm(g);
  for (auto& v : g) v *= s;
  return g;
}

BalancerConfig instant(std::size_t n) {
  BalancerConfig c;
  c.names.clear();
  for (std::size_t i = 0; i < n; ++i) c.names.push_back("l" + std::to_string(i));
  c.weights.assign(n, 1.0);
  c.ema_decay = 0.0;
  return c;
}

}  // namespace

TEST_CASE("two losses with norms 2 and 0.5 each contribute 0.5") {
  Balancer<double> b(instant(2));
  std::mt19937_64 rng(1);
  b.combine({random_direction(16, 2.0, rng), random_direction(16, 0.5, rng)});
  for (const auto& [name, n] : b.realized_norms()) CHECK(n == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("a single loss is normalised to the reference norm") {
  std::mt19937_64 rng(2);
  for (double raw : {1e-3, 0.7, 1e3}) {
    Balancer<double> b(instant(1));
    const auto out = b.combine({random_direction(10, raw, rng)});
    CHECK(norm(out) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("identical gradients with weights 3 and 1 give the unit direction") {
  auto c = instant(2);
  c.weights = {3.0, 1.0};
  Balancer<double> b(c);
  std::mt19937_64 rng(3);
  const auto g = random_direction(12, 4.0, rng);
  const auto out = b.combine({g, g});
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(out[k] == doctest::Approx(g[k] / 4.0).epsilon(1e-9));
  CHECK(b.shares().at("l0") == 0.75);
}

TEST_CASE("shares and realized norms") {
  Balancer<double> b(BalancerConfig{});
  for (const auto& [name, s] : b.shares()) CHECK(s == 0.25);
  auto c = instant(4);
  c.reference_norm = 2.0;
  Balancer<double> inst(c);
  std::mt19937_64 rng(4);
  inst.combine({random_direction(8, 1e-3, rng), random_direction(8, 1.0, rng), random_direction(8, 10.0, rng),
                random_direction(8, 1e3, rng)});
  for (const auto& [name, n] : inst.realized_norms()) CHECK(std::abs(n - 0.5) < 1e-6);

  BalancerConfig empty;
  empty.names.clear();
  empty.weights.clear();
  CHECK_THROWS_AS(Balancer<double>{empty}, std::invalid_argument);
  auto bad = instant(2);
  bad.weights = {1.0, 0.0};
  CHECK_THROWS_AS(Balancer<double>{bad}, std::invalid_argument);
  bad = instant(2);
  bad.ema_decay = 1.0;
  CHECK_THROWS_AS(Balancer<double>{bad}, std::invalid_argument);
}

TEST_CASE("scaling one loss leaves the injected gradient unchanged") {
  std::mt19937_64 rng(5);
  Grads g;
  for (double n : {1e-3, 0.1, 10.0, 1e3}) g.push_back(random_direction(20, n, rng));
  Balancer<double> a(instant(4));
  const auto base = a.combine(g);
  for (std::size_t i = 0; i < 4; ++i) {
    Grads scaled = g;
    for (auto& v : scaled[i]) v *= 10.0;
    Balancer<double> b(instant(4));
    const auto out = b.combine(scaled);
    for (std::size_t k = 0; k < out.size(); ++k) CHECK(std::abs(out[k] - base[k]) < 1e-6);
  }
}

TEST_CASE("balanced gradients keep each loss's direction") {
  std::mt19937_64 rng(6);
  const auto g0 = random_direction(6, 3.0, rng), g1 = random_direction(6, 0.2, rng);
  Balancer<double> b(instant(2));
  const auto only0 = b.combine({g0, std::vector<double>(6, 0.0)});
  // The zero loss contributes nothing; the other is a positive multiple of its raw gradient.
  const double ratio = only0[0] / g0[0];
  CHECK(ratio > 0);
  for (std::size_t k = 0; k < 6; ++k) CHECK(only0[k] == doctest::Approx(ratio * g0[k]));
  (void)g1;
}

TEST_CASE("EMA is bias corrected and total norm stays bounded") {
  auto c = instant(3);
  c.ema_decay = 0.9;
  Balancer<double> b(c);
  std::mt19937_64 rng(7);
  // Constant norms: the corrected EMA equals the norm from the first step.
  for (int step = 0; step < 30; ++step) {
    const auto out = b.combine({random_direction(32, 5.0, rng), random_direction(32, 0.01, rng),
                                random_direction(32, 200.0, rng)});
    CHECK(norm(out) <= 1.0 + 1e-9);
    for (const auto& [name, n] : b.realized_norms()) CHECK(n == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }
  CHECK(b.state().step == 30);
}

TEST_CASE("dead loss warning after the configured streak") {
  auto c = instant(2);
  c.dead_loss_steps = 5;
  Balancer<double> b(c);
  std::mt19937_64 rng(8);
  for (int step = 0; step < 5; ++step) b.combine({random_direction(4, 1.0, rng), std::vector<double>(4, 0.0)});
  CHECK(b.warnings().empty());
  b.combine({random_direction(4, 1.0, rng), std::vector<double>(4, 0.0)});
  REQUIRE(b.warnings().size() == 1);
  CHECK(b.warnings()[0].find("l1") != std::string::npos);
}

TEST_CASE("balance backpropagates each loss to the output only") {
  Tensor<double> w(Shape{3}, std::vector<double>{1.0, 2.0, 3.0}, true);
  Tensor<double> out(Shape{3}, std::vector<double>{0.5, -1.0, 2.0}, true);
  const auto y = mul(out, w);
  const std::vector<Tensor<double>> losses{reduce(y, Reduction::sum), scale(reduce(y, Reduction::mean_sq), 100.0)};
  Balancer<double> b(instant(2));
  const auto inj = b.balance(std::span<const Tensor<double>>(losses), out);
  CHECK_FALSE(w.has_grad());
  CHECK(inj.size() == 3);
  for (const auto& [name, n] : b.realized_norms()) CHECK(n == doctest::Approx(0.5).epsilon(1e-9));
  CHECK_THROWS_AS(b.balance(std::span<const Tensor<double>>(losses), y), std::invalid_argument);
}

TEST_CASE("state round-trips through JSON") {
  auto c = instant(2);
  c.ema_decay = 0.5;
  Balancer<double> a(c), b(c);
  std::mt19937_64 rng(9);
  a.combine({random_direction(4, 1.0, rng), random_direction(4, 2.0, rng)});
  b.load_json(a.to_json());
  const Grads next{random_direction(4, 3.0, rng), random_direction(4, 0.1, rng)};
  CHECK(a.combine(next) == b.combine(next));
  auto other = instant(3);
  Balancer<double> wrong(other);
  CHECK_THROWS(wrong.load_json(a.to_json()));
}
