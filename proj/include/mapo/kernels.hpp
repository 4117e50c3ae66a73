#pragma once

// Data-parallel numeric kernels. Each kernel exists twice: a plain serial
// reference kept for testing and benchmarking, and an OpenMP version used by
// the engine. Both produce results that do not depend on the thread count.

#include <cstddef>
#include <span>

namespace mapo::kernels {

/// Geometry of a same-padded 2-D cross-correlation.
/// input [channels, height, width], kernel [filters, channels, kh, kw],
/// output [filters, height, width]. kh and kw are odd.
struct ConvDims {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t filters = 1;
  std::size_t kh = 1;
  std::size_t kw = 1;

  std::size_t input_size() const noexcept { return channels * height * width; }
  std::size_t kernel_size() const noexcept { return filters * channels * kh * kw; }
  std::size_t output_size() const noexcept { return filters * height * width; }
};

/// Squared Euclidean distance from every pixel of an [height, width] grid to
/// the nearest pixel with feature[i] != 0. Pixels are unreachable (value
/// at least kFar) when the grid holds no feature at all.
inline constexpr double kFar = 1e20;

namespace serial {
void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> kernel,
                    std::span<double> output);
// The backward kernels accumulate into their destination.
void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input);
void conv2d_backward_kernel(const ConvDims& d, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_kernel);
void squared_distance_transform(std::size_t height, std::size_t width, std::span<const unsigned char> feature,
                                std::span<double> out);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> kernel,
                    std::span<double> output);
void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input);
void conv2d_backward_kernel(const ConvDims& d, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_kernel);
void squared_distance_transform(std::size_t height, std::size_t width, std::span<const unsigned char> feature,
                                std::span<double> out);
}  // namespace parallel

}  // namespace mapo::kernels
