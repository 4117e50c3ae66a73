#pragma once

// Segmentation-model contract. A model maps an image [C,H,W] to a
// per-pixel foreground probability map [H,W]. Every architecture exposes
// the same entry points, so the rest of the pipeline never looks at layers;
// dropout can be switched on at inference time with a caller-chosen rate.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mapo/autodiff.hpp"
#include "mapo/tensor.hpp"

namespace mapo::segnet {

/// Probabilities leaving any model are clamped to [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-7;

enum class ModelKind { tiny_unet, pixel_mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelSpec {
  ModelKind kind = ModelKind::tiny_unet;
  /// tiny_unet: widths of the three resolution levels.
  /// pixel_mlp: widths of the three hidden layers.
  std::vector<std::size_t> channels{4, 8, 16};
  std::size_t in_channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  /// Hidden-layer indices followed by dropout. Empty means "all hidden layers".
  std::vector<std::size_t> dropout_sites;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Number of hidden (activation-producing) layers of the architecture.
std::size_t hidden_layer_count(const ModelSpec& spec);
/// Spec with an empty dropout_sites list expanded to every hidden layer.
ModelSpec resolved(ModelSpec spec);
/// Throws ContractViolation on zero widths, bad sites or unsupported sizes.
void validate(const ModelSpec& spec);

struct ParamDecl {
  std::string name;
  Shape shape;
  /// Inputs feeding one output unit; 0 marks a bias (initialised to zero).
  std::size_t fan_in = 0;
};

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

class ModelState {
 public:
  ModelState() = default;
  ModelState(ModelSpec spec, std::vector<NamedTensor> params, std::uint64_t version,
             std::vector<std::string> lineage);

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<NamedTensor>& params() const noexcept { return params_; }
  /// Mutable parameter access; rejected on frozen states.
  std::vector<NamedTensor>& mutable_params();

  std::uint64_t version() const noexcept { return version_; }
  void set_version(std::uint64_t v);
  bool frozen() const noexcept { return frozen_; }
  const std::vector<std::string>& lineage() const noexcept { return lineage_; }
  void append_lineage(std::string entry) { lineage_.push_back(std::move(entry)); }

  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const ModelState&, const ModelState&) = default;

 private:
  friend ModelState clone_frozen(const ModelState& state);

  ModelSpec spec_;
  std::vector<NamedTensor> params_;
  std::uint64_t version_ = 0;
  std::vector<std::string> lineage_;
  bool frozen_ = false;
};

/// Per-call dropout control. stochastic=false ignores rate and seed.
struct ForwardOptions {
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  bool stochastic = false;
};

class Architecture {
 public:
  virtual ~Architecture() = default;
  virtual std::vector<ParamDecl> declare(const ModelSpec& spec) const = 0;
  virtual std::size_t hidden_layers(const ModelSpec& spec) const = 0;
  /// Returns pre-sigmoid logits [1,H,W].
  virtual ad::Var logits(const ModelSpec& spec, std::span<const ad::Var> params, ad::Var image,
                         const ForwardOptions& opts) const = 0;
};

const Architecture& architecture(ModelKind kind);

/// Fan-in-scaled uniform initialisation: weights ~ U(-b, b), b = sqrt(6 / fan_in),
/// giving standard deviation sqrt(2 / fan_in); biases start at zero.
ModelState init_params(const ModelSpec& spec, std::uint64_t seed);

struct BoundForward {
  ad::Var probs;                // [H,W]
  std::vector<ad::Var> params;  // one leaf per parameter, in declared order
};

/// Forward pass on `tape`. With track_grad the parameters become gradient
/// leaves (rejected for frozen states); otherwise they are constants.
BoundForward forward(ad::Tape& tape, const ModelState& state, const Tensor& image, const ForwardOptions& opts,
                     bool track_grad);

/// Probability map [H,W] without gradient tracking.
Tensor predict(const ModelState& state, const Tensor& image, const ForwardOptions& opts = {});

/// Deep copy that can no longer be trained. Keeps the source version.
ModelState clone_frozen(const ModelState& state);

// Checkpoint file: one line of JSON manifest (spec, version, lineage,
// parameter names and shapes) followed by every parameter as raw
// little-endian IEEE-754 doubles in declared order.
std::string encode_checkpoint(const ModelState& state);
ModelState decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path);

}  // namespace mapo::segnet
