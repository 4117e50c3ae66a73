#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "mapo/error.hpp"
#include "mapo/losses.hpp"
#include "mapo/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mapo;
using mapo::testing::random_mask;
using mapo::testing::random_tensor;

namespace {

Tensor probs(std::mt19937_64& g, std::size_t h, std::size_t w) { return random_tensor(g, {h, w}, 0.01, 0.99); }

BinaryMask square(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t side) {
  BinaryMask m(h, w);
  for (std::size_t y = y0; y < y0 + side; ++y)
    for (std::size_t x = x0; x < x0 + side; ++x) m.set(y * w + x, true);
  return m;
}

double value(ad::Var v) { return v.value().item(); }

}  // namespace

TEST_SUITE("losses-metrics") {
  TEST_CASE("binary mask construction") {
    CHECK_THROWS_AS(BinaryMask(1, 2, {0, 2}), ContractViolation);
    CHECK_THROWS_AS(BinaryMask(1, 2, {0}), ContractViolation);
    const auto m = BinaryMask::from_probabilities(Tensor({1, 3}, {0.49, 0.5, 0.9}));
    CHECK(m == BinaryMask(1, 3, {0, 1, 1}));
    CHECK(m.count() == 2);
  }

  TEST_CASE("dice loss values") {
    ad::Tape t;
    const BinaryMask gt(1, 4, {1, 0, 1, 0});
    CHECK(value(loss::dice_loss(t.constant(Tensor({1, 4}, {1, 1, 0, 0})), gt)) ==
          doctest::Approx(1.0 - (2.0 + 1e-6) / (4.0 + 1e-6)).epsilon(1e-14));
    CHECK(value(loss::dice_loss(t.constant(Tensor({1, 4}, {1, 1, 0, 0})), gt)) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(std::abs(value(loss::dice_loss(t.constant(gt.as_tensor()), gt))) < 1e-5);
    const BinaryMask empty(2, 2);
    CHECK(std::abs(value(loss::dice_loss(t.constant(Tensor({2, 2}, 0.0)), empty))) < 1e-12);
    CHECK_THROWS_AS(loss::dice_loss(t.constant(Tensor({2, 2})), gt), ContractViolation);
  }

  TEST_CASE("bce and log-likelihood values") {
    ad::Tape t;
    const BinaryMask m(1, 2, {1, 0});
    const auto p = t.constant(Tensor({1, 2}, {0.9, 0.2}));
    const double oracle = (-std::log(0.9) - std::log(0.8)) / 2.0;
    CHECK(value(loss::bce_loss(p, m)) == doctest::Approx(oracle).epsilon(1e-14));
    CHECK(value(loss::bce_loss(p, m)) == doctest::Approx(0.164252).epsilon(1e-6));
    CHECK(value(loss::mask_loglik(p, m)) == doctest::Approx(-0.164252).epsilon(1e-6));

    std::mt19937_64 g(1);
    const auto half = t.constant(Tensor({2, 2}, 0.5));
    CHECK(value(loss::bce_loss(half, random_mask(g, 2, 2))) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(value(loss::mask_loglik(half, BinaryMask(2, 2, {1, 1, 1, 1}))) ==
          doctest::Approx(-std::log(2.0)).epsilon(1e-14));
    const BinaryMask gt(2, 2, {1, 0, 0, 1});
    CHECK(value(loss::bce_loss(t.constant(gt.as_tensor()), gt)) <= -std::log(1.0 - 1e-7) * (1 + 1e-9));
  }

  TEST_CASE("log-likelihood is the negated bce on random inputs") {
    std::mt19937_64 g(2);
    for (int rep = 0; rep < 100; ++rep) {
      ad::Tape t;
      const auto p = t.constant(probs(g, 5, 7));
      const auto m = random_mask(g, 5, 7);
      CHECK(std::abs(value(loss::mask_loglik(p, m)) + value(loss::bce_loss(p, m))) <= 1e-12);
    }
  }

  TEST_CASE("dpo loss values") {
    ad::Tape t;
    const auto s = [&](double v) { return t.constant(Tensor::scalar(v)); };
    CHECK(value(loss::dpo_from_logliks(s(-0.2), s(-0.3), s(-0.8), s(-0.5), 0.1)) ==
          doctest::Approx(std::log1p(std::exp(-0.04))).epsilon(1e-14));
    CHECK(value(loss::dpo_from_logliks(s(-0.2), s(-0.3), s(-0.8), s(-0.5), 0.1)) ==
          doctest::Approx(0.6733472).epsilon(1e-7));

    std::mt19937_64 g(3);
    for (int rep = 0; rep < 20; ++rep) {
      const Tensor p = probs(g, 4, 4);
      loss::DpoConfig cfg;
      cfg.beta = 0.05 + rep;
      const double l = value(loss::dpo_loss(t.constant(p), t.constant(p), random_mask(g, 4, 4), random_mask(g, 4, 4), cfg));
      CHECK(std::abs(l - std::log(2.0)) <= 1e-9);
    }
    const Tensor p = probs(g, 2, 2);
    CHECK_THROWS_AS(loss::dpo_loss(t.constant(p), t.variable(p), BinaryMask(2, 2), BinaryMask(2, 2), {}),
                    ContractViolation);
  }

  TEST_CASE("dpo loss is decreasing in the margin and matches -log sigmoid") {
    ad::Tape t;
    const auto s = [&](double v) { return t.constant(Tensor::scalar(v)); };
    double prev = std::numeric_limits<double>::infinity();
    for (double delta = -30.0; delta <= 30.0; delta += 0.25) {
      // With beta = 1 and zero reference terms the margin equals theta_pos - theta_neg.
      const double l = value(loss::dpo_from_logliks(s(delta), s(0.0), s(0.0), s(0.0), 1.0));
      CHECK(l < prev);
      prev = l;
      CHECK(std::abs(l - (-std::log(1.0 / (1.0 + std::exp(-delta))))) <= 1e-10);
    }
  }

  TEST_CASE("raising p where pos=1 and neg=0 never increases the dpo loss") {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> bump(1e-4, 0.05);
    for (int rep = 0; rep < 100; ++rep) {
      const Tensor pt = probs(g, 4, 4), pr = probs(g, 4, 4);
      const auto pos = random_mask(g, 4, 4), neg = random_mask(g, 4, 4);
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < 16; ++i)
        if (pos[i] && !neg[i]) idx.push_back(i);
      if (idx.empty()) continue;
      Tensor raised = pt;
      const std::size_t i = idx[g() % idx.size()];
      raised[i] = std::min(0.999, raised[i] + bump(g));
      ad::Tape t;
      const double before = value(loss::dpo_loss(t.constant(pt), t.constant(pr), pos, neg, {}));
      const double after = value(loss::dpo_loss(t.constant(raised), t.constant(pr), pos, neg, {}));
      CHECK(after <= before);
    }
  }

  TEST_CASE("combined loss recomposition") {
    std::mt19937_64 g(5);
    for (int rep = 0; rep < 100; ++rep) {
      ad::Tape t;
      const auto pt = t.constant(probs(g, 4, 5)), pr = t.constant(probs(g, 4, 5));
      const auto gt = random_mask(g, 4, 5), pos = random_mask(g, 4, 5), neg = random_mask(g, 4, 5);
      loss::DpoConfig cfg;
      const double want = 0.5 * (value(loss::dice_loss(pt, gt)) + value(loss::bce_loss(pt, gt))) +
                          value(loss::dpo_loss(pt, pr, pos, neg, cfg));
      CHECK(std::abs(value(loss::combined_loss(pt, pr, gt, pos, neg, cfg)) - want) <= 1e-12);
      cfg.lambda = 0.0;
      CHECK(value(loss::combined_loss(pt, pr, gt, pos, neg, cfg)) == value(loss::dpo_loss(pt, pr, pos, neg, cfg)));
    }
    ad::Tape t;
    const BinaryMask gt(2, 2, {1, 0, 1, 1});
    const auto p = t.constant(gt.as_tensor());
    const double got = value(loss::combined_loss(p, p, gt, gt, BinaryMask(2, 2), {}));
    CHECK(got == doctest::Approx(0.5 * value(loss::bce_loss(p, gt)) + std::log(2.0)).epsilon(1e-5));
  }

  TEST_CASE("dpo config validation") {
    loss::DpoConfig c;
    CHECK_NOTHROW(c.validate());
    c.beta = 0.0;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
    c = {};
    c.tau = 1.5;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
    c = {};
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
  }

  TEST_CASE("loss gradients pass finite differences") {
    std::mt19937_64 g(6);
    for (int rep = 0; rep < 30; ++rep) {
      const auto gt = random_mask(g, 3, 4), pos = random_mask(g, 3, 4), neg = random_mask(g, 3, 4);
      const Tensor ref = probs(g, 3, 4);
      // Differentiate through a sigmoid so the probabilities stay inside (0, 1).
      const auto check = [&](auto&& f) {
        const auto r = testing::check_gradients(
            [&](ad::Tape& t, const std::vector<ad::Var>& v) { return f(t, ad::sigmoid(v[0])); },
            {random_tensor(g, {3, 4}, -3, 3)});
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-4);
      };
      check([&](ad::Tape&, ad::Var p) { return loss::dice_loss(p, gt); });
      check([&](ad::Tape&, ad::Var p) { return loss::bce_loss(p, gt); });
      check([&](ad::Tape&, ad::Var p) { return loss::mask_loglik(p, pos); });
      check([&](ad::Tape& t, ad::Var p) { return loss::dpo_loss(p, t.constant(ref), pos, neg, {}); });
      check([&](ad::Tape& t, ad::Var p) { return loss::combined_loss(p, t.constant(ref), gt, pos, neg, {}); });
    }
  }

  TEST_CASE("dice score") {
    const BinaryMask a(1, 8, {1, 1, 1, 1, 0, 0, 0, 0});
    const BinaryMask b(1, 8, {0, 0, 1, 1, 1, 1, 0, 0});
    CHECK(metrics::dice_score(a, b) == 0.5);
    CHECK(metrics::dice_score(a, a) == 1.0);
    CHECK(metrics::dice_score(BinaryMask(2, 2), BinaryMask(2, 2)) == 1.0);
    CHECK_THROWS_AS(metrics::dice_score(a, BinaryMask(2, 4)), ContractViolation);

    std::mt19937_64 g(7);
    for (int rep = 0; rep < 500; ++rep) {
      const std::size_t h = 1 + g() % 9, w = 1 + g() % 9;
      const auto x = random_mask(g, h, w, 0.3), y = random_mask(g, h, w, 0.3);
      CHECK(metrics::dice_score(x, y) == doctest::Approx(oracle::dice(x, y)).epsilon(1e-15));
      CHECK(metrics::dice_score(x, y) == metrics::dice_score(y, x));
    }
  }

  TEST_CASE("dice score is invariant under a shared pixel permutation") {
    std::mt19937_64 g(8);
    for (int rep = 0; rep < 50; ++rep) {
      const auto x = random_mask(g, 6, 6), y = random_mask(g, 6, 6);
      std::vector<std::size_t> perm(36);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), g);
      BinaryMask px(6, 6), py(6, 6);
      for (std::size_t i = 0; i < 36; ++i) {
        px.set(i, x[perm[i]]);
        py.set(i, y[perm[i]]);
      }
      CHECK(metrics::dice_score(px, py) == metrics::dice_score(x, y));
    }
  }

  TEST_CASE("surface extraction") {
    const auto sq = square(5, 5, 1, 1, 3);
    const auto s = metrics::surface(sq);
    CHECK(s.count() == 8);
    CHECK_FALSE(s.at(2, 2));
    // Border pixels of a full frame count as surface.
    BinaryMask full(3, 3, std::vector<std::uint8_t>(9, 1));
    CHECK(metrics::surface(full).count() == 8);
  }

  TEST_CASE("average surface distance") {
    CHECK(metrics::average_surface_distance(square(6, 6, 1, 1, 2), square(6, 6, 1, 2, 2)) == 0.5);
    const auto m = square(8, 8, 2, 2, 3);
    CHECK(metrics::average_surface_distance(m, m) == 0.0);
    CHECK_FALSE(metrics::average_surface_distance(BinaryMask(4, 4), square(4, 4, 0, 0, 2)).has_value());
    CHECK_FALSE(metrics::average_surface_distance(square(4, 4, 0, 0, 2), BinaryMask(4, 4)).has_value());
    CHECK(metrics::average_surface_distance(BinaryMask(4, 4), BinaryMask(4, 4)) == 0.0);
  }

  TEST_CASE("average surface distance matches the all-pairs oracle") {
    std::mt19937_64 g(9);
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t h = 2 + g() % 10, w = 2 + g() % 10;
      const auto a = random_mask(g, h, w, 0.4), b = random_mask(g, h, w, 0.4);
      const auto got = metrics::average_surface_distance(a, b);
      const auto want = oracle::asd(a, b);
      REQUIRE(got.has_value() == want.has_value());
      if (got) CHECK(std::abs(*got - *want) <= 1e-9);
      if (got) CHECK(*got == *metrics::average_surface_distance(b, a));
    }
  }

  TEST_CASE("average surface distance is translation invariant") {
    std::mt19937_64 g(10);
    for (int rep = 0; rep < 30; ++rep) {
      // Shapes live in the top-left 6x6 of a 12x12 frame and are shifted by (dy, dx) <= 4.
      BinaryMask a(12, 12), b(12, 12), sa(12, 12), sb(12, 12);
      const std::size_t dy = g() % 5, dx = g() % 5;
      std::bernoulli_distribution coin(0.5);
      for (std::size_t y = 1; y < 6; ++y)
        for (std::size_t x = 1; x < 6; ++x) {
          const bool va = coin(g), vb = coin(g);
          a.set(y * 12 + x, va);
          b.set(y * 12 + x, vb);
          sa.set((y + dy) * 12 + x + dx, va);
          sb.set((y + dy) * 12 + x + dx, vb);
        }
      const auto d0 = metrics::average_surface_distance(a, b), d1 = metrics::average_surface_distance(sa, sb);
      REQUIRE(d0.has_value() == d1.has_value());
      if (d0) CHECK(std::abs(*d0 - *d1) <= 1e-12);
    }
  }
}
