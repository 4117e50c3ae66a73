#include "mapo/losses.hpp"

#include "mapo/error.hpp"

namespace mapo::loss {

void DpoConfig::validate() const {
  require(beta > 0.0, "beta must be positive");
  require(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
  require(lambda >= 0.0, "lambda must be non-negative");
}

namespace {

void check_map(ad::Var p, const BinaryMask& m) {
  require(p.valid(), "use of an unbound Var");
  const Shape expected{m.height(), m.width()};
  require(p.shape() == expected,
          "probability map " + to_string(p.shape()) + " does not match mask " + to_string(expected));
}

ad::Var scalar(ad::Tape& t, double v) { return t.constant(Tensor::scalar(v)); }

}  // namespace

ad::Var dice_loss(ad::Var p, const BinaryMask& gt) {
  check_map(p, gt);
  ad::Tape& t = *p.tape();
  ad::Var g = t.constant(gt.as_tensor());
  ad::Var eps = scalar(t, kDiceSmooth);
  ad::Var numer = ad::add(ad::scale(ad::sum(ad::mul(p, g)), 2.0), eps);
  ad::Var denom = ad::add(ad::add(ad::sum(p), scalar(t, static_cast<double>(gt.count()))), eps);
  return ad::sub(scalar(t, 1.0), ad::div(numer, denom));
}

ad::Var mask_loglik(ad::Var p, const BinaryMask& mask) {
  check_map(p, mask);
  ad::Tape& t = *p.tape();
  ad::Var pc = ad::clamp(p, kProbClamp, 1.0 - kProbClamp);
  ad::Var y = t.constant(mask.as_tensor());
  ad::Var one = scalar(t, 1.0);
  ad::Var pos = ad::mul(y, ad::log(pc));
  ad::Var neg = ad::mul(ad::sub(one, y), ad::log(ad::sub(one, pc)));
  return ad::mean(ad::add(pos, neg));
}

ad::Var bce_loss(ad::Var p, const BinaryMask& gt) { return ad::scale(mask_loglik(p, gt), -1.0); }

ad::Var dpo_from_logliks(ad::Var theta_pos, ad::Var ref_pos, ad::Var theta_neg, ad::Var ref_neg, double beta) {
  require(beta > 0.0, "beta must be positive");
  ad::Var margin = ad::sub(ad::sub(theta_pos, ref_pos), ad::sub(theta_neg, ref_neg));
  return ad::softplus(ad::scale(margin, -beta));
}

ad::Var dpo_loss(ad::Var p_theta, ad::Var p_ref, const BinaryMask& pos, const BinaryMask& neg,
                 const DpoConfig& cfg) {
  require(p_theta.valid() && p_ref.valid(), "use of an unbound Var");
  require(!p_ref.requires_grad(), "the reference probability map must not carry gradients");
  require(pos.same_shape(neg), "preferred and rejected masks differ in shape");
  require(p_theta.shape() == p_ref.shape(), "policy and reference maps differ in shape");
  return dpo_from_logliks(mask_loglik(p_theta, pos), mask_loglik(p_ref, pos), mask_loglik(p_theta, neg),
                          mask_loglik(p_ref, neg), cfg.beta);
}

ad::Var supervised_loss(ad::Var p, const BinaryMask& gt) { return ad::add(dice_loss(p, gt), bce_loss(p, gt)); }

ad::Var combined_loss(ad::Var p_theta, ad::Var p_ref, const BinaryMask& gt, const BinaryMask& pos,
                      const BinaryMask& neg, const DpoConfig& cfg) {
  ad::Var dpo = dpo_loss(p_theta, p_ref, pos, neg, cfg);
  return ad::add(ad::scale(supervised_loss(p_theta, gt), cfg.lambda), dpo);
}

}  // namespace mapo::loss
