#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mapo/tensor.hpp"

namespace mapo {

/// Strictly binary [height, width] mask.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width);
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);

  /// Pixels with p >= threshold become foreground. `p` must be [H,W].
  static BinaryMask from_probabilities(const Tensor& p, double threshold = 0.5);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }
  bool same_shape(const BinaryMask& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  bool at(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }
  void set(std::size_t i, bool value) { bits_[i] = value ? 1 : 0; }

  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  /// 0/1 values as a [H,W] tensor.
  Tensor as_tensor() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace mapo
