#include <doctest.h>

#include <cmath>

#include "icrl/errors.hpp"
#include "icrl/grad_check.hpp"
#include "icrl/ops.hpp"
#include "test_util.hpp"

using namespace icrl;
using icrl::testing::max_abs_diff;
using icrl::testing::random_tensor;
using icrl::testing::values;

namespace {

// Direct-definition convolution used as the oracle.
std::vector<double> conv_oracle(const Tensor64& x, const Tensor64& k, const Tensor64& b,
                                std::size_t stride, std::size_t pad) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(O * Ho * Wo, 0.0);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double acc = b.defined() ? b.data()[o] : 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long z = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              if (y < 0 || z < 0 || y >= static_cast<long>(H) || z >= static_cast<long>(W)) continue;
              acc += k.data()[((o * C + c) * kh + u) * kw + v] * x.data()[(c * H + y) * W + z];
            }
        out[(o * Ho + i) * Wo + j] = acc;
      }
  return out;
}

GradCheckReport check(const std::function<Tensor64(ParameterSet<double>&)>& f,
                      ParameterSet<double>& params) {
  GradCheckOptions opt;
  opt.step = 1e-4;
  return grad_check([&] { return f(params); }, params, opt);
}

}  // namespace

TEST_CASE("matmul and transpose match loops") {
  std::mt19937_64 rng(1);
  const auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  const auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.data()[i * 4 + k] * b.data()[k * 2 + j];
      CHECK(c.data()[i * 2 + j] == doctest::Approx(acc).epsilon(1e-14));
    }
  const auto t = transpose(a);
  REQUIRE(t.shape() == Shape{4, 3});
  CHECK(t.data()[1 * 3 + 2] == a.data()[2 * 4 + 1]);
  CHECK_THROWS_AS(matmul(a, a), ContractError);
}

TEST_CASE("conv2d matches direct definition") {
  std::mt19937_64 rng(2);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {1, 0}, {2, 1}}) {
    const auto x = random_tensor({2, 5, 5}, rng);
    const auto k = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({3}, rng);
    const auto y = conv2d(x, k, b, stride, pad);
    CHECK(max_abs_diff(values(y), conv_oracle(x, k, b, stride, pad)) < 1e-12);
  }
  const auto x = random_tensor({2, 4, 4}, rng);
  const auto k = random_tensor({3, 2, 1, 1}, rng);
  CHECK(max_abs_diff(values(conv2d(x, k, Tensor64{})), conv_oracle(x, k, Tensor64{}, 1, 0)) < 1e-12);
  CHECK_THROWS_AS(conv2d(x, random_tensor({3, 3, 1, 1}, rng), Tensor64{}), ContractError);
}

TEST_CASE("maxpool picks the window maximum, first on ties") {
  const Tensor64 x({1, 2, 4}, {1, 5, 2, 2, 3, 0, 2, 2}, true);
  const auto y = maxpool2d(x, 2, 2);
  REQUIRE(y.shape() == Shape{1, 1, 2});
  CHECK(y.data()[0] == 5);
  CHECK(y.data()[1] == 2);
  backward(sum(y));
  const std::vector<double> g(x.grad().begin(), x.grad().end());
  CHECK(g == std::vector<double>{0, 1, 1, 0, 0, 0, 0, 0});
}

TEST_CASE("elementwise ops") {
  const Tensor64 x({4}, {-2.0, -0.0, 0.5, 40.0});
  CHECK(values(relu(x)) == std::vector<double>{0, 0, 0.5, 40});
  const auto s = values(sigmoid(x));
  for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(1 / (1 + std::exp(-x.data()[i]))));
  const auto big = values(sigmoid(Tensor64({2}, {-800.0, 800.0})));
  CHECK(big[0] == 0.0);
  CHECK(big[1] == 1.0);
  const Tensor64 y({4}, {1, 2, 3, 4});
  CHECK(values(hadamard(x, y)) == std::vector<double>{-2, -0.0, 1.5, 160});
  CHECK(values(add(x, y)) == std::vector<double>{-1, 2, 3.5, 44});
  CHECK(values(sub(y, x)) == std::vector<double>{3, 2, 2.5, -36});
  CHECK(values(scale(y, 0.5)) == std::vector<double>{0.5, 1, 1.5, 2});
  CHECK(values(scale_by(y, Tensor64::scalar(2.0))) == std::vector<double>{2, 4, 6, 8});
  CHECK(sum(y).item() == 10);
  CHECK_THROWS_AS(add(x, Tensor64({3}, {1, 2, 3})), ContractError);
}

TEST_CASE("reduce_mean over each axis") {
  const Tensor64 x({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(values(reduce_mean(x, 0)) == std::vector<double>{2.5, 3.5, 4.5});
  CHECK(values(reduce_mean(x, 1)) == std::vector<double>{2, 5});
  CHECK_THROWS_AS(reduce_mean(x, 2), ContractError);
}

TEST_CASE("l2_normalize gives unit rows") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({5, 7}, rng);
  const auto y = l2_normalize(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double sq = 0;
    for (std::size_t c = 0; c < 7; ++c) sq += y.data()[r * 7 + c] * y.data()[r * 7 + c];
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(values(l2_normalize(Tensor64({2}, {3.0, 4.0}))) == std::vector<double>{0.6, 0.8});
}

TEST_CASE("softmax cross-entropy matches log-sum-exp") {
  const Tensor64 logits({2, 3}, {1, 2, 3, 1000, 0, -1000});
  const std::vector<std::size_t> labels{2, 1};
  const double row0 = -(3 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double row1 = 1000.0;  // log-sum-exp is 1000 to double precision
  CHECK(softmax_cross_entropy(logits, labels).item() == doctest::Approx((row0 + row1) / 2));
  const std::vector<std::size_t> bad{3, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), ContractError);
}

TEST_CASE("stack, select, reshape and flip") {
  const Tensor64 a({2}, {1, 2}), b({2}, {3, 4});
  const std::vector<Tensor64> parts{a, b};
  const auto s = stack(std::span<const Tensor64>(parts));
  CHECK(s.shape() == Shape{2, 2});
  CHECK(values(select(s, 1)) == std::vector<double>{3, 4});
  CHECK(reshape(s, {4}).shape() == Shape{4});
  CHECK_THROWS_AS(reshape(s, {3}), ContractError);
  const Tensor64 img({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(values(flip_horizontal(img)) == std::vector<double>{3, 2, 1, 6, 5, 4});
}

TEST_CASE("backward accumulates through shared inputs") {
  const Tensor64 x({3}, {1, 2, 3}, true);
  backward(sum(hadamard(x, x)));  // d/dx sum x^2 = 2x
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("no-grad guard records nothing") {
  const Tensor64 x({2}, {1, 2}, true);
  NoGradGuard guard;
  const auto y = hadamard(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("analytic gradients of every op agree with central differences") {
  std::mt19937_64 rng(4);
  ParameterSet<double> p;
  p.add("x", random_tensor({2, 5, 5}, rng));
  p.add("k", random_tensor({3, 2, 3, 3}, rng));
  p.add("b", random_tensor({3}, rng));
  p.add("m", random_tensor({3, 4}, rng));
  p.add("s", Tensor64::scalar(1.7, true));
  const std::vector<std::size_t> labels{0, 2, 1};

  auto loss = [&](ParameterSet<double>& q) {
    const auto conv = conv2d(q.get("x"), q.get("k"), q.get("b"), 1, 1);  // 3x5x5
    const auto pooled = maxpool2d(relu(conv), 2, 1);                     // 3x4x4
    const auto flat = reshape(pooled, {3, 16});
    const auto mean = reduce_mean(flat, 1);                              // 3
    const auto gated = hadamard(sigmoid(flat), flat);
    const auto proj = matmul(transpose(q.get("m")), reshape(mean, {3, 1}));  // 4x1
    const auto unit = l2_normalize(reshape(gated, {6, 8}));
    const auto logits = scale_by(matmul(reshape(unit, {3, 16}), transpose(flat)), q.get("s"));
    const auto ce = softmax_cross_entropy(logits, labels);
    return add(add(ce, scale(sum(proj), 0.3)), sub(reduce_mean(mean, 0), sum(select(flat, 1))));
  };
  const auto report = check(loss, p);
  INFO("worst " << report.worst_param << "[" << report.worst_index << "] analytic "
                << report.worst_analytic << " numeric " << report.worst_numeric);
  CHECK(report.passed(1e-6));
  CHECK(report.checked + report.skipped_nonsmooth == 2 * 25 + 54 + 3 + 12 + 1);
}
