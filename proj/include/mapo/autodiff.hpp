#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns every value computed during one forward pass. Nodes are
// appended in evaluation order, so the append order is already a
// topological order and backward() walks it in reverse. Var is a cheap
// handle (tape pointer plus node index); it is only valid while its tape
// lives. One tape is single-threaded; independent tapes may run in parallel.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mapo/tensor.hpp"

namespace mapo::ad {

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  div,
  sigmoid,
  log,
  relu,
  clamp,
  softplus,
  scale,
  conv2d,
  channel_bias,
  sum,
  mean,
  dropout,
  avg_pool,
  upsample,
  concat,
  reshape,
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var variable(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Accumulates d(loss)/d(node) for every node that requires grad. The
  /// loss must be a single-element node of this tape. A second call without
  /// zero_grad() in between is a contract violation.
  void backward(Var loss);
  void zero_grad();
  bool backward_done() const noexcept { return backward_done_; }

  /// Gradient of the last backward pass; zeros when no path reached `v`.
  Tensor grad(Var v) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return backward_visits_; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  // Op-author interface.
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Upstream gradient of a node while its backward function runs.
  std::span<const double> upstream(std::size_t id) const;
  /// Gradient buffer of an input node, allocated on first use.
  std::span<double> sink(std::size_t id);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<Tensor> grad;
  };

  // deque keeps references to earlier values stable while nodes are appended.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
  std::size_t backward_visits_ = 0;
};

enum class Elementwise { add, sub, mul, sigmoid, log, relu, clamp };

/// Generic dispatcher. Binary kinds take equal shapes or a single-element
/// operand that is broadcast. clamp uses [lo, hi].
Var elementwise(Elementwise kind, Var a, std::optional<Var> b = std::nullopt, double lo = 0.0, double hi = 1.0);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var sigmoid(Var a);
/// Throws std::domain_error on any non-positive input.
Var log(Var a);
Var relu(Var a);
Var clamp(Var a, double lo, double hi);
/// log(1 + exp(a)), evaluated without overflow.
Var softplus(Var a);
Var scale(Var a, double factor);

/// Same-padded cross-correlation: input [C,H,W], kernel [F,C,kh,kw] with odd
/// kh, kw; result [F,H,W].
Var conv2d(Var input, Var kernel);
/// Adds bias[c] to every pixel of channel c of a [C,H,W] tensor.
Var channel_bias(Var input, Var bias);

Var sum(Var a);
Var mean(Var a);

/// Inverted dropout with a counter-based mask keyed by (seed, element index).
/// Disabled or rate 0 returns `a` itself.
Var dropout(Var a, double rate, std::uint64_t seed, bool enabled);

/// Dropout keep decision for one element; exposed for tests.
bool dropout_keeps(std::uint64_t seed, std::size_t index, double rate) noexcept;

/// 2x2 average pooling of [C,H,W] with even H, W.
Var avg_pool2(Var a);
/// Nearest-neighbour 2x upsampling of [C,H,W].
Var upsample2(Var a);
/// Channel concatenation of [C1,H,W] and [C2,H,W].
Var concat_channels(Var a, Var b);
Var reshape(Var a, Shape shape);

}  // namespace mapo::ad
