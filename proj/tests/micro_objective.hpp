#pragma once

// Finite-difference check of the full per-sample training objective on a
// two-sample 8x8 micro-dataset: one sample carries a preference pair, the
// other only supervision.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mapo/trainer.hpp"
#include "support.hpp"

namespace mapo::testing {

/// 8x8 crops (offset 4,4) of the first two samples of a 16x16 dataset.
inline std::vector<data::Sample> micro_samples(const data::Dataset& ds) {
  std::vector<data::Sample> micro;
  const std::size_t w = ds.spec.width;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& src = ds.samples[k];
    data::Sample s;
    s.id = src.id;
    s.image = Tensor({1, 8, 8});
    std::vector<std::uint8_t> bits(64);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        s.image[y * 8 + x] = src.image[(y + 4) * w + x + 4];
        bits[y * 8 + x] = src.gt.at(y + 4, x + 4);
      }
    s.gt = BinaryMask(8, 8, bits);
    micro.push_back(s);
  }
  return micro;
}

/// Worst relative error between the tape gradient of the mean objective and
/// central differences over every parameter of an 8x8 model.
inline double micro_objective_check(const data::Dataset& ds, const segnet::ModelSpec& spec,
                                    const train::TrainConfig& cfg) {
  const auto micro = micro_samples(ds);
  const auto st = segnet::init_params(spec, 4);
  const auto ref_state = segnet::init_params(spec, 5);
  std::vector<Tensor> refs;
  for (const auto& s : micro) refs.push_back(segnet::predict(ref_state, s.image));
  std::mt19937_64 g(2);
  const pref::PreferencePair pair{random_mask(g, 8, 8), random_mask(g, 8, 8), 0, 3, 0.8, 0.4, 0.3};
  const std::vector<const pref::PreferencePair*> pairs{&pair, nullptr};

  const auto total = [&](const segnet::ModelState& m, train::Gradients* grads) {
    double v = 0.0;
    train::Gradients acc;
    for (std::size_t k = 0; k < 2; ++k) {
      train::Gradients gk;
      v += train::dpo_sample_objective(m, micro[k], &refs[k], pairs[k], cfg, grads ? &gk : nullptr);
      if (!grads) continue;
      if (acc.empty()) acc = gk;
      else
        for (std::size_t p = 0; p < acc.size(); ++p)
          for (std::size_t j = 0; j < acc[p].size(); ++j) acc[p][j] += gk[p][j];
    }
    if (grads) *grads = acc;
    return v / 2.0;
  };
  train::Gradients analytic;
  total(st, &analytic);
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t p = 0; p < st.params().size(); ++p)
    for (std::size_t j = 0; j < st.params()[p].value.size(); ++j) {
      auto plus = st, minus = st;
      plus.mutable_params()[p].value[j] += h;
      minus.mutable_params()[p].value[j] -= h;
      const double numeric = (total(plus, nullptr) - total(minus, nullptr)) / (2 * h);
      const double a = analytic[p][j] / 2.0;
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-5}));
    }
  return worst;
}

/// The two architectures at 8x8 with small widths.
inline std::vector<segnet::ModelSpec> micro_specs() {
  segnet::ModelSpec mlp;
  mlp.kind = segnet::ModelKind::pixel_mlp;
  mlp.channels = {4, 4, 4};
  mlp.height = 8;
  mlp.width = 8;
  segnet::ModelSpec unet;
  unet.channels = {2, 3, 4};
  unet.height = 8;
  unet.width = 8;
  return {mlp, unet};
}

}  // namespace mapo::testing
