#pragma once

// Catalogue of differentiable operations with random-input generators for
// finite-difference gradient checks.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mapo/autodiff.hpp"
#include "support.hpp"

namespace mapo::testing {

struct OpCase {
  const char* name;
  std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> f;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
};

// Weighted sum turns any tensor-valued op into a scalar objective with
// distinct sensitivities per output element.
inline ad::Var weighted(ad::Tape& t, ad::Var v, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  return ad::sum(ad::mul(v, t.constant(random_tensor(g, v.shape(), 0.5, 1.5))));
}

inline Tensor away_from(Tensor t, double point, double margin) {
  for (auto& x : t.data())
    if (std::abs(x - point) < margin) x = point + (x < point ? -margin : margin);
  return t;
}

inline std::vector<OpCase> op_catalogue() {
  const auto shape = [](std::mt19937_64& g) { return Shape{1 + g() % 3, 2 + g() % 3}; };
  return {
    {"add", [](auto& t, auto& v) { return weighted(t, ad::add(v[0], v[1]), 1); },
     [shape](std::mt19937_64& g) { auto s = shape(g); return std::vector{random_tensor(g, s), random_tensor(g, s)}; }},
    {"sub", [](auto& t, auto& v) { return weighted(t, ad::sub(v[0], v[1]), 2); },
     [shape](std::mt19937_64& g) { auto s = shape(g); return std::vector{random_tensor(g, s), random_tensor(g, s)}; }},
    {"mul", [](auto& t, auto& v) { return weighted(t, ad::mul(v[0], v[1]), 3); },
     [shape](std::mt19937_64& g) { auto s = shape(g); return std::vector{random_tensor(g, s), random_tensor(g, s)}; }},
    {"mul-broadcast", [](auto& t, auto& v) { return weighted(t, ad::mul(v[0], v[1]), 3); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g)), random_tensor(g, {})}; }},
    {"div", [](auto& t, auto& v) { return weighted(t, ad::div(v[0], v[1]), 4); },
     [shape](std::mt19937_64& g) { auto s = shape(g); return std::vector{random_tensor(g, s), random_tensor(g, s, 0.5, 2.0)}; }},
    {"div-broadcast", [](auto& t, auto& v) { return weighted(t, ad::div(v[0], v[1]), 4); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g)), random_tensor(g, {}, 0.5, 2.0)}; }},
    {"sigmoid", [](auto& t, auto& v) { return weighted(t, ad::sigmoid(v[0]), 5); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g), -4, 4)}; }},
    {"log", [](auto& t, auto& v) { return weighted(t, ad::log(v[0]), 6); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g), 0.2, 3.0)}; }},
    {"relu", [](auto& t, auto& v) { return weighted(t, ad::relu(v[0]), 7); },
     [shape](std::mt19937_64& g) { return std::vector{away_from(random_tensor(g, shape(g)), 0.0, 1e-3)}; }},
    {"clamp", [](auto& t, auto& v) { return weighted(t, ad::clamp(v[0], -0.5, 0.5), 8); },
     [shape](std::mt19937_64& g) {
       return std::vector{away_from(away_from(random_tensor(g, shape(g)), -0.5, 1e-3), 0.5, 1e-3)};
     }},
    {"softplus", [](auto& t, auto& v) { return weighted(t, ad::softplus(v[0]), 9); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g), -5, 5)}; }},
    {"scale", [](auto& t, auto& v) { return weighted(t, ad::scale(v[0], -1.7), 10); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g))}; }},
    {"sum", [](auto&, auto& v) { return ad::sum(ad::mul(v[0], v[0])); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g))}; }},
    {"mean", [](auto&, auto& v) { return ad::mean(ad::mul(v[0], v[0])); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g))}; }},
    {"conv2d", [](auto& t, auto& v) { return weighted(t, ad::conv2d(v[0], v[1]), 11); },
     [shape](std::mt19937_64& g) {
       const std::size_t c = 1 + g() % 2, f = 1 + g() % 2, k = (g() % 2) ? 3 : 1;
       return std::vector{random_tensor(g, {c, 2 + g() % 3, 2 + g() % 3}), random_tensor(g, {f, c, k, k})};
     }},
    {"channel_bias", [](auto& t, auto& v) { return weighted(t, ad::channel_bias(v[0], v[1]), 12); },
     [shape](std::mt19937_64& g) {
       const std::size_t c = 1 + g() % 3;
       return std::vector{random_tensor(g, {c, 2, 3}), random_tensor(g, {c})};
     }},
    {"dropout", [](auto& t, auto& v) { return weighted(t, ad::dropout(v[0], 0.3, 77, true), 13); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g))}; }},
    {"avg_pool2", [](auto& t, auto& v) { return weighted(t, ad::avg_pool2(v[0]), 14); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, {1 + g() % 2, 2 * (1 + g() % 2), 2 * (1 + g() % 2)})}; }},
    {"upsample2", [](auto& t, auto& v) { return weighted(t, ad::upsample2(v[0]), 15); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, {1 + g() % 2, 1 + g() % 3, 1 + g() % 3})}; }},
    {"concat", [](auto& t, auto& v) { return weighted(t, ad::concat_channels(v[0], v[1]), 16); },
     [shape](std::mt19937_64& g) {
       const std::size_t h = 1 + g() % 3, w = 1 + g() % 3;
       return std::vector{random_tensor(g, {1 + g() % 2, h, w}), random_tensor(g, {1 + g() % 2, h, w})};
     }},
    {"reshape", [](auto& t, auto& v) { return weighted(t, ad::reshape(v[0], {v[0].size()}), 17); },
     [shape](std::mt19937_64& g) { return std::vector{random_tensor(g, shape(g))}; }},
  };
}

/// Worst relative error of an operation over `reps` random input draws.
inline GradCheck check_op(const OpCase& c, int reps) {
  std::mt19937_64 g(std::hash<std::string>{}(c.name) & 0xFFFF);
  GradCheck worst;
  for (int rep = 0; rep < reps; ++rep) {
    const auto r = check_gradients(c.f, c.inputs(g));
    if (r.max_rel_error >= worst.max_rel_error) worst = r;
  }
  return worst;
}

}  // namespace mapo::testing
