#include "mapo/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mapo/error.hpp"
#include "mapo/kernels.hpp"
#include "mapo/rng.hpp"

namespace mapo::ad {

const Tensor& Var::value() const {
  require(tape_ != nullptr, "use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const {
  require(tape_ != nullptr, "use of an unbound Var");
  return tape_->requires_grad(id_);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{OpKind::leaf, std::move(value), true, {}, {}, std::nullopt});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::leaf, std::move(value), false, {}, {}, std::nullopt});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (auto id : inputs) {
    require(id < nodes_.size(), "node input refers to a later node");
    needs = needs || nodes_[id].requires_grad;
  }
  Node node{kind, std::move(value), needs, std::move(inputs), {}, std::nullopt};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<const double> Tape::upstream(std::size_t id) const { return nodes_[id].grad->data(); }

std::span<double> Tape::sink(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad) n.grad.emplace(n.value.shape(), 0.0);
  return n.grad->data();
}

void Tape::backward(Var loss) {
  require(loss.tape() == this, "backward() on a Var from another tape");
  require(!backward_done_, "backward() called twice without zero_grad()");
  require(loss.size() == 1, "backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  backward_done_ = true;
  backward_visits_ = 0;
  if (!nodes_[loss.id()].requires_grad) return;
  sink(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad) continue;
    ++backward_visits_;
    if (n.backward) n.backward(*this, i);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.reset();
  backward_done_ = false;
  backward_visits_ = 0;
}

Tensor Tape::grad(Var v) const {
  require(v.tape() == this, "grad() of a Var from another tape");
  const Node& n = nodes_[v.id()];
  if (n.grad) return *n.grad;
  return Tensor(n.value.shape(), 0.0);
}

namespace {

Tape& common_tape(Var a, Var b) {
  require(a.valid() && b.valid(), "use of an unbound Var");
  require(a.tape() == b.tape(), "operands live on different tapes");
  return *a.tape();
}

Var binary(OpKind kind, Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool same = x.shape() == y.shape();
  const bool xs = x.size() == 1 && !same;
  const bool ys = y.size() == 1 && !same;
  require(same || xs || ys, "shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  Tensor out(xs ? y.shape() : x.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[xs ? 0 : i];
    const double v = y[ys ? 0 : i];
    switch (kind) {
      case OpKind::add: out[i] = u + v; break;
      case OpKind::sub: out[i] = u - v; break;
      case OpKind::div: out[i] = u / v; break;
      default: out[i] = u * v; break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(kind, std::move(out), {ia, ib}, [kind, ia, ib, xs, ys, n](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    if (tp.requires_grad(ia)) {
      auto ga = tp.sink(ia);
      const Tensor& y = tp.value(ib);
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == OpKind::mul) d = g[i] * y[ys ? 0 : i];
        if (kind == OpKind::div) d = g[i] / y[ys ? 0 : i];
        ga[xs ? 0 : i] += d;
      }
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.sink(ib);
      const Tensor& x = tp.value(ia);
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == OpKind::sub) d = -d;
        if (kind == OpKind::mul) d = g[i] * x[xs ? 0 : i];
        if (kind == OpKind::div) {
          const double v = tp.value(ib)[ys ? 0 : i];
          d = -g[i] * x[xs ? 0 : i] / (v * v);
        }
        gb[ys ? 0 : i] += d;
      }
    }
  });
}

// Unary op whose local derivative depends on (input, output).
template <class Forward, class Derivative>
Var unary(OpKind kind, Var a, Forward fwd, Derivative deriv) {
  require(a.valid(), "use of an unbound Var");
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  return t.record(kind, std::move(out), {ia}, [ia, deriv](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    auto gx = tp.sink(ia);
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_image(const Tensor& t, const char* what) {
  require(t.rank() == 3, std::string(what) + " expects a [C,H,W] tensor, got " + to_string(t.shape()));
}

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::mul, a, b); }
Var div(Var a, Var b) { return binary(OpKind::div, a, b); }

Var sigmoid(Var a) {
  return unary(OpKind::sigmoid, a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
  return unary(OpKind::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
  require(lo <= hi, "clamp bounds out of order");
  return unary(OpKind::clamp, a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(OpKind::softplus, a,
               [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
               [](double x, double) { return stable_sigmoid(x); });
}

Var scale(Var a, double factor) {
  return unary(OpKind::scale, a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var elementwise(Elementwise kind, Var a, std::optional<Var> b, double lo, double hi) {
  auto need_b = [&]() -> Var {
    require(b.has_value(), "binary elementwise op without second operand");
    return *b;
  };
  switch (kind) {
    case Elementwise::add: return add(a, need_b());
    case Elementwise::sub: return sub(a, need_b());
    case Elementwise::mul: return mul(a, need_b());
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::log: return log(a);
    case Elementwise::relu: return relu(a);
    case Elementwise::clamp: return clamp(a, lo, hi);
  }
  throw ContractViolation("unknown elementwise kind");
}

Var conv2d(Var input, Var kernel) {
  Tape& t = common_tape(input, kernel);
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  require_image(x, "conv2d");
  require(k.rank() == 4, "conv2d kernel must be [F,C,kh,kw], got " + to_string(k.shape()));
  require(k.shape()[1] == x.shape()[0], "conv2d channel mismatch: input " + to_string(x.shape()) + ", kernel " +
                                            to_string(k.shape()));
  require(k.shape()[2] % 2 == 1 && k.shape()[3] % 2 == 1, "conv2d kernel extents must be odd");
  const kernels::ConvDims d{x.shape()[0], x.shape()[1], x.shape()[2], k.shape()[0], k.shape()[2], k.shape()[3]};
  Tensor out(Shape{d.filters, d.height, d.width});
  kernels::parallel::conv2d_forward(d, x.data(), k.data(), out.data());
  const std::size_t ix = input.id(), ik = kernel.id();
  return t.record(OpKind::conv2d, std::move(out), {ix, ik}, [d, ix, ik](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    if (tp.requires_grad(ix)) kernels::parallel::conv2d_backward_input(d, g, tp.value(ik).data(), tp.sink(ix));
    if (tp.requires_grad(ik)) kernels::parallel::conv2d_backward_kernel(d, g, tp.value(ix).data(), tp.sink(ik));
  });
}

Var channel_bias(Var input, Var bias) {
  Tape& t = common_tape(input, bias);
  const Tensor& x = input.value();
  require_image(x, "channel_bias");
  const std::size_t c = x.shape()[0], plane = x.shape()[1] * x.shape()[2];
  require(bias.size() == c, "channel_bias needs one bias per channel");
  Tensor out = x;
  const Tensor& b = bias.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += b[ch];
  const std::size_t ix = input.id(), ib = bias.id();
  return t.record(OpKind::channel_bias, std::move(out), {ix, ib}, [ix, ib, c, plane](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    if (tp.requires_grad(ix)) {
      auto gx = tp.sink(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.sink(ib);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[ch * plane + i];
        gb[ch] += acc;
      }
    }
  });
}

namespace {
Var reduce(OpKind kind, Var a) {
  require(a.valid(), "use of an unbound Var");
  const Tensor& x = a.value();
  require(x.size() > 0, "reduction of an empty tensor");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double factor = kind == OpKind::mean ? 1.0 / static_cast<double>(x.size()) : 1.0;
  const std::size_t ia = a.id();
  return a.tape()->record(kind, Tensor::scalar(acc * factor), {ia}, [ia, factor](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0] * factor;
    for (double& v : tp.sink(ia)) v += g;
  });
}
}  // namespace

Var sum(Var a) { return reduce(OpKind::sum, a); }
Var mean(Var a) { return reduce(OpKind::mean, a); }

bool dropout_keeps(std::uint64_t seed, std::size_t index, double rate) noexcept {
  return rng::uniform(seed, index) >= rate;
}

Var dropout(Var a, double rate, std::uint64_t seed, bool enabled) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  require(a.valid(), "use of an unbound Var");
  if (!enabled || rate == 0.0) return a;
  const Tensor& x = a.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.size());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    factor[i] = dropout_keeps(seed, i, rate) ? keep_scale : 0.0;
    out[i] = x[i] * factor[i];
  }
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::dropout, std::move(out), {ia},
                          [ia, factor = std::move(factor)](Tape& tp, std::size_t self) {
                            auto g = tp.upstream(self);
                            auto gx = tp.sink(ia);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
                          });
}

Var avg_pool2(Var a) {
  require(a.valid(), "use of an unbound Var");
  const Tensor& x = a.value();
  require_image(x, "avg_pool2");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial extents, got " + to_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t base = (ch * h + 2 * y) * w + 2 * xx;
        out[(ch * oh + y) * ow + xx] = 0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
      }
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::avg_pool, std::move(out), {ia}, [ia, c, h, w](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    auto gx = tp.sink(ia);
    const std::size_t oh = h / 2, ow = w / 2;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double q = 0.25 * g[(ch * oh + y) * ow + xx];
          const std::size_t base = (ch * h + 2 * y) * w + 2 * xx;
          gx[base] += q;
          gx[base + 1] += q;
          gx[base + w] += q;
          gx[base + w + 1] += q;
        }
  });
}

Var upsample2(Var a) {
  require(a.valid(), "use of an unbound Var");
  const Tensor& x = a.value();
  require_image(x, "upsample2");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = 2 * h, ow = 2 * w;
  Tensor out(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(ch * oh + y) * ow + xx] = x[(ch * h + y / 2) * w + xx / 2];
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::upsample, std::move(out), {ia}, [ia, c, h, w](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    auto gx = tp.sink(ia);
    const std::size_t oh = 2 * h, ow = 2 * w;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * oh + y) * ow + xx];
  });
}

Var concat_channels(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_image(x, "concat_channels");
  require_image(y, "concat_channels");
  require(x.shape()[1] == y.shape()[1] && x.shape()[2] == y.shape()[2],
          "concat_channels spatial mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  std::vector<double> data(x.values());
  data.insert(data.end(), y.values().begin(), y.values().end());
  const std::size_t na = x.size();
  Tensor out(Shape{x.shape()[0] + y.shape()[0], x.shape()[1], x.shape()[2]}, std::move(data));
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::concat, std::move(out), {ia, ib}, [ia, ib, na](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    if (tp.requires_grad(ia)) {
      auto ga = tp.sink(ia);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.sink(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    }
  });
}

Var reshape(Var a, Shape shape) {
  require(a.valid(), "use of an unbound Var");
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::reshape, std::move(out), {ia}, [ia](Tape& tp, std::size_t self) {
    auto g = tp.upstream(self);
    auto gx = tp.sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

}  // namespace mapo::ad
