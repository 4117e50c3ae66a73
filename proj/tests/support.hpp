#pragma once

// Shared helpers for the test binaries: seeded random tensors and masks,
// and a central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mapo/autodiff.hpp"
#include "mapo/mask.hpp"
#include "mapo/segnet.hpp"
#include "mapo/tensor.hpp"

namespace mapo::testing {

inline Tensor random_tensor(std::mt19937_64& gen, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = u(gen);
  return t;
}

inline BinaryMask random_mask(std::mt19937_64& gen, std::size_t h, std::size_t w, double density = 0.5) {
  std::bernoulli_distribution b(density);
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, b(gen));
  return m;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Element-wise relative error |a - n| / max(|a|, |n|, floor) between the
/// tape gradient and a central difference, maximised over all inputs.
inline GradCheck check_gradients(const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& f,
                                 std::vector<Tensor> inputs, double h = 1e-5, double floor = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(f(tape, vars));
  std::vector<Tensor> analytic;
  for (const auto& v : vars) analytic.push_back(tape.grad(v));

  const auto eval = [&](const std::vector<Tensor>& xs) {
    ad::Tape t;
    std::vector<ad::Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    return f(t, vs).value().item();
  };

  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
      const double a = analytic[i][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = "input " + std::to_string(i) + " element " + std::to_string(j) + ": analytic " +
                    std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Single-width pixel-mlp whose logit is gain * (centre pixel - 0.5) + offset.
/// gain 0 gives a constant map sigmoid(offset).
inline segnet::ModelState handcrafted_mlp(std::size_t h, std::size_t w, double gain, double offset = 0.0) {
  segnet::ModelSpec spec;
  spec.kind = segnet::ModelKind::pixel_mlp;
  spec.channels = {1, 1, 1};
  spec.height = h;
  spec.width = w;
  auto state = segnet::init_params(spec, 0);
  auto& p = state.mutable_params();
  for (auto& t : p)
    for (auto& x : t.value.data()) x = 0.0;
  p[0].value[4] = 1.0;  // hidden0 centre tap
  p[2].value[0] = 1.0;
  p[4].value[0] = 1.0;
  p[6].value[0] = gain;
  p[7].value[0] = offset - 0.5 * gain;
  return state;
}

}  // namespace mapo::testing
