#include "mapo/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mapo/error.hpp"
#include "mapo/kernels.hpp"

namespace mapo {

BinaryMask::BinaryMask(std::size_t height, std::size_t width)
    : height_(height), width_(width), bits_(height * width, 0) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  require(bits_.size() == height_ * width_, "mask bit count does not match its shape");
  for (auto b : bits_) require(b <= 1, "mask values must be 0 or 1");
}

BinaryMask BinaryMask::from_probabilities(const Tensor& p, double threshold) {
  require(p.rank() == 2, "probability map must be [H,W], got " + to_string(p.shape()));
  BinaryMask m(p.shape()[0], p.shape()[1]);
  for (std::size_t i = 0; i < p.size(); ++i) m.bits_[i] = p[i] >= threshold ? 1 : 0;
  return m;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Tensor BinaryMask::as_tensor() const {
  std::vector<double> v(bits_.begin(), bits_.end());
  return Tensor(Shape{height_, width_}, std::move(v));
}

}  // namespace mapo

namespace mapo::metrics {

double dice_score(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.same_shape(gt), "dice_score: mask shapes differ");
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    a += pred[i];
    b += gt[i];
    inter += pred[i] && gt[i];
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

BinaryMask surface(const BinaryMask& mask) {
  const std::size_t h = mask.height(), w = mask.width();
  BinaryMask out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || !mask.at(y - 1, x) ||
                        !mask.at(y + 1, x) || !mask.at(y, x - 1) || !mask.at(y, x + 1);
      out.set(y * w + x, edge);
    }
  return out;
}

namespace {
// Mean distance from the surface pixels of `from` to the nearest surface
// pixel of `to`.
double directed_mean(const BinaryMask& from, const BinaryMask& to) {
  std::vector<double> dist(to.size());
  kernels::parallel::squared_distance_transform(to.height(), to.width(), to.bits(), dist);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i]) {
      acc += std::sqrt(dist[i]);
      ++n;
    }
  return acc / static_cast<double>(n);
}
}  // namespace

std::optional<double> average_surface_distance(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.same_shape(gt), "average_surface_distance: mask shapes differ");
  const bool pe = pred.empty(), ge = gt.empty();
  if (pe && ge) return 0.0;
  if (pe != ge) return std::nullopt;
  const BinaryMask sp = surface(pred), sg = surface(gt);
  return 0.5 * (directed_mean(sp, sg) + directed_mean(sg, sp));
}

}  // namespace mapo::metrics
