#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mapo/autodiff.hpp"
#include "mapo/error.hpp"
#include "mapo/kernels.hpp"
#include "op_catalogue.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mapo;
using mapo::testing::check_gradients;
using mapo::testing::random_tensor;

namespace {

}  // namespace

TEST_SUITE("tensor-autodiff") {
  TEST_CASE("tensor construction checks extents and data length") {
    CHECK(Tensor().rank() == 0);
    CHECK(Tensor().size() == 1);
    CHECK_THROWS_AS(Tensor({2, 0}), ContractViolation);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ContractViolation);
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(t.reshaped({4}), ContractViolation);
  }

  TEST_CASE("elementwise basics") {
    ad::Tape t;
    auto a = t.constant(Tensor({2}, {1, 2}));
    auto b = t.constant(Tensor({2}, {3, 4}));
    CHECK(ad::add(a, b).value() == Tensor({2}, {4, 6}));
    CHECK(ad::sigmoid(t.constant(Tensor::scalar(0.0))).value().item() == 0.5);
    CHECK(ad::log(t.constant(Tensor::scalar(0.5))).value().item() == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(ad::log(t.constant(Tensor::scalar(0.5))).value().item() ==
          doctest::Approx(-0.69314718055994530942).epsilon(1e-15));
    CHECK_THROWS_AS(ad::log(t.constant(Tensor::scalar(0.0))), std::domain_error);
    CHECK_THROWS_AS(ad::add(a, t.constant(Tensor({3}))), ContractViolation);
    // scalar broadcast
    CHECK(ad::mul(a, t.constant(Tensor::scalar(2.0))).value() == Tensor({2}, {2, 4}));
    // generic dispatcher agrees with the named ops
    CHECK(ad::elementwise(ad::Elementwise::sub, a, b).value() == ad::sub(a, b).value());
    CHECK(ad::elementwise(ad::Elementwise::clamp, b, std::nullopt, 0.0, 3.5).value() == Tensor({2}, {3, 3.5}));
  }

  TEST_CASE("sigmoid and softplus stay finite for extreme inputs") {
    ad::Tape t;
    auto x = t.constant(Tensor({4}, {-1000, -40, 40, 1000}));
    CHECK(ad::sigmoid(x).value().all_finite());
    CHECK(ad::softplus(x).value().all_finite());
    CHECK(ad::softplus(x).value()[3] == 1000.0);
  }

  TEST_CASE("conv2d fixed cases") {
    ad::Tape t;
    auto ones = t.constant(Tensor({1, 3, 3}, 1.0));
    auto two = t.constant(Tensor({1, 1, 1, 1}, 2.0));
    CHECK(ad::conv2d(ones, two).value() == Tensor({1, 3, 3}, 2.0));

    std::mt19937_64 g(3);
    const Tensor img = random_tensor(g, {1, 5, 4});
    Tensor ident({1, 1, 3, 3}, 0.0);
    ident[4] = 1.0;
    CHECK(ad::conv2d(t.constant(img), t.constant(ident)).value() == img);
    CHECK_THROWS_AS(ad::conv2d(ones, t.constant(Tensor({1, 1, 2, 2}))), ContractViolation);
    CHECK_THROWS_AS(ad::conv2d(ones, t.constant(Tensor({1, 2, 3, 3}))), ContractViolation);
  }

  TEST_CASE("conv2d matches the nested-loop oracle") {
    std::mt19937_64 g(11);
    for (int rep = 0; rep < 20; ++rep) {
      const Tensor in = random_tensor(g, {1, 4, 4});
      const Tensor k = random_tensor(g, {2, 1, 3, 3});
      ad::Tape t;
      const Tensor got = ad::conv2d(t.constant(in), t.constant(k)).value();
      const Tensor want = oracle::conv(in, k);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
  }

  TEST_CASE("serial and parallel kernels agree bit for bit") {
    std::mt19937_64 g(5);
    for (auto [c, h, w, f, k] : std::vector<std::array<std::size_t, 5>>{
             {1, 4, 4, 2, 3}, {3, 9, 7, 4, 3}, {8, 32, 32, 8, 3}, {16, 16, 16, 4, 1}, {2, 1, 1, 3, 3}}) {
      kernels::ConvDims d{c, h, w, f, k, k};
      const Tensor in = random_tensor(g, {d.input_size()});
      const Tensor ker = random_tensor(g, {d.kernel_size()});
      const Tensor go = random_tensor(g, {d.output_size()});
      std::vector<double> a(d.output_size()), b(d.output_size());
      kernels::serial::conv2d_forward(d, in.data(), ker.data(), a);
      kernels::parallel::conv2d_forward(d, in.data(), ker.data(), b);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));

      std::vector<double> gi_s(d.input_size(), 0.5), gi_p(d.input_size(), 0.5);
      kernels::serial::conv2d_backward_input(d, go.data(), ker.data(), gi_s);
      kernels::parallel::conv2d_backward_input(d, go.data(), ker.data(), gi_p);
      for (std::size_t i = 0; i < gi_s.size(); ++i) CHECK(gi_s[i] == doctest::Approx(gi_p[i]).epsilon(1e-13));

      std::vector<double> gk_s(d.kernel_size(), 0.0), gk_p(d.kernel_size(), 0.0);
      kernels::serial::conv2d_backward_kernel(d, go.data(), in.data(), gk_s);
      kernels::parallel::conv2d_backward_kernel(d, go.data(), in.data(), gk_p);
      for (std::size_t i = 0; i < gk_s.size(); ++i) CHECK(gk_s[i] == doctest::Approx(gk_p[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("distance transform matches brute force in both variants") {
    std::mt19937_64 g(9);
    std::bernoulli_distribution b(0.1);
    for (int rep = 0; rep < 30; ++rep) {
      const std::size_t h = 1 + g() % 20, w = 1 + g() % 20;
      std::vector<unsigned char> feat(h * w);
      for (auto& f : feat) f = b(g);
      std::vector<double> s(h * w), p(h * w);
      kernels::serial::squared_distance_transform(h, w, feat, s);
      kernels::parallel::squared_distance_transform(h, w, feat, p);
      const bool any = std::any_of(feat.begin(), feat.end(), [](unsigned char c) { return c != 0; });
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double best = kernels::kFar;
          for (std::size_t yy = 0; yy < h; ++yy)
            for (std::size_t xx = 0; xx < w; ++xx)
              if (feat[yy * w + xx]) {
                const double dy = double(y) - double(yy), dx = double(x) - double(xx);
                best = std::min(best, dy * dy + dx * dx);
              }
          const std::size_t i = y * w + x;
          CHECK(s[i] == p[i]);
          if (any) CHECK(s[i] == best);
          else CHECK(s[i] >= kernels::kFar);
        }
    }
  }

  TEST_CASE("reductions") {
    ad::Tape t;
    CHECK(ad::mean(t.constant(Tensor({4}, {1, 2, 3, 4}))).value().item() == 2.5);
    CHECK(ad::sum(t.constant(Tensor({4}, {1, 2, 3, 4}))).value().item() == 10.0);
    CHECK(ad::mean(t.constant(Tensor({4}))).shape().empty());
    // A zero-element tensor cannot be formed, so an empty reduction cannot be requested.
    CHECK_THROWS_AS(Tensor({0}), ContractViolation);

    std::mt19937_64 g(21);
    for (int rep = 0; rep < 50; ++rep) {
      const Tensor x = random_tensor(g, {10}, 0.0, 1.0);
      CHECK(std::abs(ad::mean(t.constant(x)).value().item() - oracle::kahan_mean(x.data())) <= 1e-12);
    }
  }

  TEST_CASE("backward basics") {
    {
      ad::Tape t;
      auto x = t.variable(Tensor({4}, {1, -2, 3, 0.5}));
      t.backward(ad::mean(x));
      CHECK(t.grad(x) == Tensor({4}, 0.25));
      CHECK_THROWS_AS(t.backward(ad::mean(x)), ContractViolation);
      t.zero_grad();
      CHECK_NOTHROW(t.backward(ad::sum(x)));
      CHECK(t.grad(x) == Tensor({4}, 1.0));
    }
    {
      ad::Tape t;
      auto w = t.variable(Tensor::scalar(0.0));
      t.backward(ad::sigmoid(w));
      CHECK(t.grad(w).item() == 0.25);
    }
    {
      ad::Tape t;
      auto x = t.variable(Tensor({2}));
      CHECK_THROWS_AS(t.backward(x), ContractViolation);  // not a scalar
      ad::Tape other;
      auto y = other.variable(Tensor::scalar(1.0));
      CHECK_THROWS_AS(t.backward(y), ContractViolation);  // foreign tape
    }
  }

  TEST_CASE("tape topology and single visit per node") {
    ad::Tape t;
    auto x = t.variable(Tensor({3}, {0.1, 0.2, 0.3}));
    auto y = ad::mul(x, x);
    auto z = ad::add(y, ad::sigmoid(x));
    auto l = ad::sum(ad::mul(z, y));
    for (std::size_t id = 0; id < t.node_count(); ++id)
      for (auto in : t.inputs(id)) CHECK(in < id);
    t.backward(l);
    CHECK(t.backward_visits() == t.node_count());
    CHECK(t.kind(l.id()) == ad::OpKind::sum);
  }

  TEST_CASE("dropout contracts") {
    std::mt19937_64 g(1);
    ad::Tape t;
    const Tensor x = random_tensor(g, {64});
    auto v = t.constant(x);
    CHECK(ad::dropout(v, 0.0, 99, true).value() == x);
    CHECK(ad::dropout(v, 0.4, 99, false).value() == x);
    CHECK(ad::dropout(v, 0.4, 99, true).value() == ad::dropout(v, 0.4, 99, true).value());
    CHECK_FALSE(ad::dropout(v, 0.4, 99, true).value() == ad::dropout(v, 0.4, 100, true).value());
    CHECK_THROWS_AS(ad::dropout(v, 1.0, 1, true), ContractViolation);
    CHECK_THROWS_AS(ad::dropout(v, -0.1, 1, true), ContractViolation);

    const Tensor big({100000}, 1.0);
    const auto out = ad::dropout(t.constant(big), 0.5, 12345, true).value();
    const auto zeros = std::count(out.values().begin(), out.values().end(), 0.0);
    CHECK(std::abs(static_cast<double>(zeros) / 1e5 - 0.5) <= 0.01);
    for (double o : out.values()) CHECK((o == 0.0 || o == 2.0));
  }

  TEST_CASE("inverted dropout is unbiased") {
    // Standard error per element: |x| * sqrt(rate / (1 - rate) / N).
    const Tensor x({6}, {0.5, -1.0, 2.0, 0.25, -0.75, 1.5});
    const double rate = 0.3;
    const int n = 10000;
    std::vector<double> acc(x.size(), 0.0);
    ad::Tape t;
    auto v = t.constant(x);
    for (int s = 0; s < n; ++s) {
      const auto o = ad::dropout(v, rate, static_cast<std::uint64_t>(s), true).value();
      for (std::size_t i = 0; i < x.size(); ++i) acc[i] += o[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double se = std::abs(x[i]) * std::sqrt(rate / (1.0 - rate) / n);
      CHECK(std::abs(acc[i] / n - x[i]) <= 3.0 * se);
    }
  }

  TEST_CASE("pooling, upsampling, concat and reshape shapes") {
    ad::Tape t;
    auto a = t.constant(Tensor({2, 4, 6}, 1.0));
    CHECK(ad::avg_pool2(a).shape() == Shape{2, 2, 3});
    CHECK(ad::upsample2(a).shape() == Shape{2, 8, 12});
    CHECK(ad::concat_channels(a, t.constant(Tensor({3, 4, 6}))).shape() == Shape{5, 4, 6});
    CHECK(ad::reshape(a, {48}).shape() == Shape{48});
    CHECK_THROWS_AS(ad::avg_pool2(t.constant(Tensor({1, 3, 4}))), ContractViolation);
    CHECK_THROWS_AS(ad::concat_channels(a, t.constant(Tensor({1, 4, 5}))), ContractViolation);
  }

  TEST_CASE("gradient check: every differentiable operation, 100 random tensors each") {
    for (const auto& c : testing::op_catalogue()) {
      const auto r = testing::check_op(c, 100);
      INFO(c.name << ": " << r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("gradient check: three-layer composition") {
    std::mt19937_64 g(31);
    const auto f = [](ad::Tape&, const std::vector<ad::Var>& v) {
      auto h = ad::relu(ad::channel_bias(ad::conv2d(v[0], v[1]), v[2]));
      h = ad::sigmoid(ad::conv2d(h, v[3]));
      return ad::mean(ad::softplus(ad::upsample2(ad::avg_pool2(h))));
    };
    for (int rep = 0; rep < 20; ++rep) {
      const auto r = check_gradients(f, {random_tensor(g, {2, 4, 4}), random_tensor(g, {3, 2, 3, 3}),
                                         random_tensor(g, {3}), random_tensor(g, {2, 3, 3, 3})});
      INFO(r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("forward values and gradients are bitwise reproducible") {
    std::mt19937_64 g(8);
    const Tensor x = random_tensor(g, {2, 6, 6});
    const Tensor k = random_tensor(g, {3, 2, 3, 3});
    const auto run = [&] {
      ad::Tape t;
      auto xv = t.variable(x);
      auto kv = t.variable(k);
      auto l = ad::mean(ad::sigmoid(ad::dropout(ad::conv2d(xv, kv), 0.2, 5, true)));
      t.backward(l);
      return std::pair{t.grad(kv), l.value().item()};
    };
    CHECK(run() == run());
  }
}
