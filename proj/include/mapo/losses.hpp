#pragma once

// Differentiable segmentation objectives over probability maps [H,W].

#include "mapo/autodiff.hpp"
#include "mapo/mask.hpp"

namespace mapo::loss {

inline constexpr double kDiceSmooth = 1e-6;
inline constexpr double kProbClamp = 1e-7;

struct DpoConfig {
  double beta = 0.1;    // margin sensitivity
  double tau = 0.3;     // minimum Dice gap of an admissible bad example
  double lambda = 0.5;  // weight of the supervised Dice + BCE terms

  /// Throws ContractViolation unless beta > 0, tau in [0,1], lambda >= 0.
  void validate() const;
  friend bool operator==(const DpoConfig&, const DpoConfig&) = default;
};

/// 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps).
ad::Var dice_loss(ad::Var p, const BinaryMask& gt);

/// Mean binary cross-entropy; p is clamped to [1e-7, 1 - 1e-7] first.
ad::Var bce_loss(ad::Var p, const BinaryMask& gt);

/// Per-pixel averaged Bernoulli log-likelihood of `mask` under p.
/// Equals -bce_loss(p, mask).
ad::Var mask_loglik(ad::Var p, const BinaryMask& mask);

/// softplus(-margin), margin = beta * ((theta_pos - ref_pos) - (theta_neg - ref_neg)).
/// Arguments are log-likelihood scalars.
ad::Var dpo_from_logliks(ad::Var theta_pos, ad::Var ref_pos, ad::Var theta_neg, ad::Var ref_neg, double beta);

/// Preference loss of the trainable map p_theta against the frozen p_ref.
/// p_ref must not require grad.
ad::Var dpo_loss(ad::Var p_theta, ad::Var p_ref, const BinaryMask& pos, const BinaryMask& neg, const DpoConfig& cfg);

/// dice_loss + bce_loss.
ad::Var supervised_loss(ad::Var p, const BinaryMask& gt);

/// lambda * (dice_loss + bce_loss) + dpo_loss.
ad::Var combined_loss(ad::Var p_theta, ad::Var p_ref, const BinaryMask& gt, const BinaryMask& pos,
                      const BinaryMask& neg, const DpoConfig& cfg);

}  // namespace mapo::loss
