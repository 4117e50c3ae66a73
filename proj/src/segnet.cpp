#include "mapo/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "mapo/error.hpp"
#include "mapo/rng.hpp"

namespace mapo::segnet {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::tiny_unet ? "tiny-unet" : "pixel-mlp";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "tiny-unet") return ModelKind::tiny_unet;
  if (name == "pixel-mlp") return ModelKind::pixel_mlp;
  throw ContractViolation("unknown model kind '" + name + "' (expected tiny-unet or pixel-mlp)");
}

ModelState::ModelState(ModelSpec spec, std::vector<NamedTensor> params, std::uint64_t version,
                       std::vector<std::string> lineage)
    : spec_(std::move(spec)), params_(std::move(params)), version_(version), lineage_(std::move(lineage)) {}

std::vector<NamedTensor>& ModelState::mutable_params() {
  require(!frozen_, "a frozen reference model cannot be modified");
  return params_;
}

void ModelState::set_version(std::uint64_t v) {
  require(!frozen_, "a frozen reference model cannot be modified");
  require(v >= version_, "model versions are monotone");
  version_ = v;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool ModelState::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const NamedTensor& p) { return p.value.all_finite(); });
}

ModelState clone_frozen(const ModelState& state) {
  ModelState copy = state;
  copy.frozen_ = true;
  return copy;
}

namespace {

ad::Var conv_layer(std::span<const ad::Var> p, std::size_t& next, ad::Var x) {
  ad::Var w = p[next++];
  ad::Var b = p[next++];
  return ad::channel_bias(ad::conv2d(x, w), b);
}

class SiteDropout {
 public:
  SiteDropout(const ModelSpec& spec, const ForwardOptions& opts) : opts_(opts) {
    sites_.insert(spec.dropout_sites.begin(), spec.dropout_sites.end());
  }

  // Activation followed by dropout (when the layer is a dropout site).
  ad::Var operator()(ad::Var x) {
    const std::size_t site = layer_++;
    ad::Var h = ad::relu(x);
    if (!opts_.stochastic || !sites_.contains(site)) return h;
    return ad::dropout(h, opts_.dropout_rate, rng::derive(opts_.seed, {site}), true);
  }

 private:
  const ForwardOptions& opts_;
  std::set<std::size_t> sites_;
  std::size_t layer_ = 0;
};

ParamDecl conv_weight(std::string name, std::size_t out, std::size_t in, std::size_t k) {
  return {std::move(name) + ".weight", Shape{out, in, k, k}, in * k * k};
}
ParamDecl conv_bias(std::string name, std::size_t out) { return {std::move(name) + ".bias", Shape{out}, 0}; }

// Two resolution drops, two 3x3 convolutions per encoder level, one per
// decoder level, skip connections by channel concatenation.
class TinyUNet final : public Architecture {
 public:
  std::vector<ParamDecl> declare(const ModelSpec& s) const override {
    const std::size_t c0 = s.channels[0], c1 = s.channels[1], c2 = s.channels[2];
    std::vector<ParamDecl> out;
    auto conv = [&](const std::string& name, std::size_t o, std::size_t i, std::size_t k) {
      out.push_back(conv_weight(name, o, i, k));
      out.push_back(conv_bias(name, o));
    };
    conv("enc0a", c0, s.in_channels, 3);
    conv("enc0b", c0, c0, 3);
    conv("enc1a", c1, c0, 3);
    conv("enc1b", c1, c1, 3);
    conv("mid_a", c2, c1, 3);
    conv("mid_b", c2, c2, 3);
    conv("dec1", c1, c2 + c1, 3);
    conv("dec0", c0, c1 + c0, 3);
    conv("head", 1, c0, 1);
    return out;
  }

  std::size_t hidden_layers(const ModelSpec&) const override { return 8; }

  ad::Var logits(const ModelSpec& s, std::span<const ad::Var> p, ad::Var image,
                 const ForwardOptions& opts) const override {
    SiteDropout act(s, opts);
    std::size_t k = 0;
    ad::Var e0 = act(conv_layer(p, k, image));
    e0 = act(conv_layer(p, k, e0));
    ad::Var e1 = act(conv_layer(p, k, ad::avg_pool2(e0)));
    e1 = act(conv_layer(p, k, e1));
    ad::Var m = act(conv_layer(p, k, ad::avg_pool2(e1)));
    m = act(conv_layer(p, k, m));
    ad::Var d1 = act(conv_layer(p, k, ad::concat_channels(ad::upsample2(m), e1)));
    ad::Var d0 = act(conv_layer(p, k, ad::concat_channels(ad::upsample2(d1), e0)));
    return conv_layer(p, k, d0);
  }
};

// Per-pixel MLP: a 3x3 first layer gives each pixel its neighbourhood, the
// remaining layers are 1x1.
class PixelMlp final : public Architecture {
 public:
  std::vector<ParamDecl> declare(const ModelSpec& s) const override {
    std::vector<ParamDecl> out;
    auto conv = [&](const std::string& name, std::size_t o, std::size_t i, std::size_t k) {
      out.push_back(conv_weight(name, o, i, k));
      out.push_back(conv_bias(name, o));
    };
    conv("hidden0", s.channels[0], s.in_channels, 3);
    conv("hidden1", s.channels[1], s.channels[0], 1);
    conv("hidden2", s.channels[2], s.channels[1], 1);
    conv("head", 1, s.channels[2], 1);
    return out;
  }

  std::size_t hidden_layers(const ModelSpec&) const override { return 3; }

  ad::Var logits(const ModelSpec& s, std::span<const ad::Var> p, ad::Var image,
                 const ForwardOptions& opts) const override {
    SiteDropout act(s, opts);
    std::size_t k = 0;
    ad::Var h = act(conv_layer(p, k, image));
    h = act(conv_layer(p, k, h));
    h = act(conv_layer(p, k, h));
    return conv_layer(p, k, h);
  }
};

}  // namespace

const Architecture& architecture(ModelKind kind) {
  static const TinyUNet unet;
  static const PixelMlp mlp;
  if (kind == ModelKind::tiny_unet) return unet;
  return mlp;
}

std::size_t hidden_layer_count(const ModelSpec& spec) { return architecture(spec.kind).hidden_layers(spec); }

ModelSpec resolved(ModelSpec spec) {
  if (spec.dropout_sites.empty()) {
    const std::size_t n = hidden_layer_count(spec);
    for (std::size_t i = 0; i < n; ++i) spec.dropout_sites.push_back(i);
  }
  return spec;
}

void validate(const ModelSpec& spec) {
  require(spec.channels.size() == 3, "model needs exactly three layer widths");
  for (auto c : spec.channels) require(c > 0, "zero-width layer in model spec");
  require(spec.in_channels > 0, "model needs at least one input channel");
  require(spec.height > 0 && spec.width > 0, "model input extents must be positive");
  if (spec.kind == ModelKind::tiny_unet)
    require(spec.height % 4 == 0 && spec.width % 4 == 0, "tiny-unet needs height and width divisible by 4");
  const std::size_t n = hidden_layer_count(spec);
  const ModelSpec r = resolved(spec);
  require(!r.dropout_sites.empty(), "at least one dropout site is required");
  for (std::size_t i = 0; i < r.dropout_sites.size(); ++i) {
    require(r.dropout_sites[i] < n, "dropout site " + std::to_string(r.dropout_sites[i]) + " out of range");
    if (i) require(r.dropout_sites[i] > r.dropout_sites[i - 1], "dropout sites must be strictly increasing");
  }
}

ModelState init_params(const ModelSpec& spec_in, std::uint64_t seed) {
  validate(spec_in);
  ModelSpec spec = resolved(spec_in);
  const auto decls = architecture(spec.kind).declare(spec);
  std::vector<NamedTensor> params;
  params.reserve(decls.size());
  for (std::size_t i = 0; i < decls.size(); ++i) {
    Tensor t(decls[i].shape, 0.0);
    if (decls[i].fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(decls[i].fan_in));
      std::mt19937_64 gen(rng::derive(seed, {i}));
      for (double& v : t.data()) v = (2.0 * rng::to_unit(gen()) - 1.0) * bound;
    }
    params.push_back({decls[i].name, std::move(t)});
  }
  return ModelState(std::move(spec), std::move(params), 0, {"init:" + std::to_string(seed)});
}

BoundForward forward(ad::Tape& tape, const ModelState& state, const Tensor& image, const ForwardOptions& opts,
                     bool track_grad) {
  const ModelSpec& spec = state.spec();
  const Shape expected{spec.in_channels, spec.height, spec.width};
  require(image.shape() == expected,
          "image shape " + mapo::to_string(image.shape()) + " does not match model input " + mapo::to_string(expected));
  require(opts.dropout_rate >= 0.0 && opts.dropout_rate < 1.0, "dropout rate must lie in [0, 1)");
  require(!(track_grad && state.frozen()), "cannot attach gradients to a frozen reference model");
  BoundForward out;
  out.params.reserve(state.params().size());
  for (const auto& p : state.params())
    out.params.push_back(track_grad ? tape.variable(p.value) : tape.constant(p.value));
  ad::Var x = tape.constant(image);
  ad::Var z = architecture(spec.kind).logits(spec, out.params, x, opts);
  ad::Var p = ad::clamp(ad::sigmoid(z), kProbFloor, 1.0 - kProbFloor);
  out.probs = ad::reshape(p, Shape{spec.height, spec.width});
  return out;
}

Tensor predict(const ModelState& state, const Tensor& image, const ForwardOptions& opts) {
  ad::Tape tape;
  return forward(tape, state, image, opts, false).probs.value();
}

}  // namespace mapo::segnet
