#include <vector>

#include "dt1d.hpp"
#include "mapo/kernels.hpp"

namespace mapo::kernels::serial {

namespace {
// Signed offset of input row/column for output position `o` and tap `t`.
inline long tap(std::size_t o, std::size_t t, std::size_t half) {
  return static_cast<long>(o) + static_cast<long>(t) - static_cast<long>(half);
}
}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> kernel,
                    std::span<double> output) {
  const std::size_t ph = d.kh / 2, pw = d.kw / 2;
  for (std::size_t f = 0; f < d.filters; ++f)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d.channels; ++c)
          for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const long iy = tap(y, ky, ph);
            if (iy < 0 || iy >= static_cast<long>(d.height)) continue;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              const long ix = tap(x, kx, pw);
              if (ix < 0 || ix >= static_cast<long>(d.width)) continue;
              acc += kernel[((f * d.channels + c) * d.kh + ky) * d.kw + kx] *
                     input[(c * d.height + static_cast<std::size_t>(iy)) * d.width + static_cast<std::size_t>(ix)];
            }
          }
        output[(f * d.height + y) * d.width + x] = acc;
      }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
  const std::size_t ph = d.kh / 2, pw = d.kw / 2;
  for (std::size_t f = 0; f < d.filters; ++f)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        const double g = grad_output[(f * d.height + y) * d.width + x];
        for (std::size_t c = 0; c < d.channels; ++c)
          for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const long iy = tap(y, ky, ph);
            if (iy < 0 || iy >= static_cast<long>(d.height)) continue;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              const long ix = tap(x, kx, pw);
              if (ix < 0 || ix >= static_cast<long>(d.width)) continue;
              grad_input[(c * d.height + static_cast<std::size_t>(iy)) * d.width + static_cast<std::size_t>(ix)] +=
                  g * kernel[((f * d.channels + c) * d.kh + ky) * d.kw + kx];
            }
          }
      }
}

void conv2d_backward_kernel(const ConvDims& d, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_kernel) {
  const std::size_t ph = d.kh / 2, pw = d.kw / 2;
  for (std::size_t f = 0; f < d.filters; ++f)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t ky = 0; ky < d.kh; ++ky)
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          double acc = 0.0;
          for (std::size_t y = 0; y < d.height; ++y) {
            const long iy = tap(y, ky, ph);
            if (iy < 0 || iy >= static_cast<long>(d.height)) continue;
            for (std::size_t x = 0; x < d.width; ++x) {
              const long ix = tap(x, kx, pw);
              if (ix < 0 || ix >= static_cast<long>(d.width)) continue;
              acc += grad_output[(f * d.height + y) * d.width + x] *
                     input[(c * d.height + static_cast<std::size_t>(iy)) * d.width + static_cast<std::size_t>(ix)];
            }
          }
          grad_kernel[((f * d.channels + c) * d.kh + ky) * d.kw + kx] += acc;
        }
}

void squared_distance_transform(std::size_t height, std::size_t width, std::span<const unsigned char> feature,
                                std::span<double> out) {
  for (std::size_t i = 0; i < height * width; ++i) out[i] = feature[i] ? 0.0 : kFar;
  detail::DistanceScratch scratch(std::max(height, width));
  for (std::size_t x = 0; x < width; ++x) detail::transform_line(out.data() + x, height, width, scratch);
  for (std::size_t y = 0; y < height; ++y) detail::transform_line(out.data() + y * width, width, 1, scratch);
}

}  // namespace mapo::kernels::serial
