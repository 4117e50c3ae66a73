#include <algorithm>
#include <vector>

#include "dt1d.hpp"
#include "mapo/kernels.hpp"

namespace mapo::kernels::parallel {

namespace {
// Below this many output values a parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 4096;

struct Window {
  std::size_t out_begin;
  std::size_t out_end;
  long shift;
};

// Output rows (or columns) whose tap `t` lands inside [0, extent).
inline Window window(std::size_t extent, std::size_t t, std::size_t half) {
  const long shift = static_cast<long>(t) - static_cast<long>(half);
  const long lo = std::max<long>(0, -shift);
  const long hi = std::min<long>(static_cast<long>(extent), static_cast<long>(extent) - shift);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi)), shift};
}
}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> kernel,
                    std::span<double> output) {
  const std::size_t plane = d.height * d.width;
  const long filters = static_cast<long>(d.filters);
#pragma omp parallel for schedule(static) if (d.output_size() * d.channels * d.kh * d.kw >= kMinParallelWork)
  for (long fi = 0; fi < filters; ++fi) {
    const auto f = static_cast<std::size_t>(fi);
    double* out = output.data() + f * plane;
    std::fill(out, out + plane, 0.0);
    for (std::size_t c = 0; c < d.channels; ++c) {
      const double* in = input.data() + c * plane;
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        const Window wy = window(d.height, ky, d.kh / 2);
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          const Window wx = window(d.width, kx, d.kw / 2);
          const double w = kernel[((f * d.channels + c) * d.kh + ky) * d.kw + kx];
          for (std::size_t y = wy.out_begin; y < wy.out_end; ++y) {
            double* orow = out + y * d.width;
            const double* irow = in + static_cast<std::size_t>(static_cast<long>(y) + wy.shift) * d.width;
            for (std::size_t x = wx.out_begin; x < wx.out_end; ++x)
              orow[x] += w * irow[static_cast<std::size_t>(static_cast<long>(x) + wx.shift)];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
  const std::size_t plane = d.height * d.width;
  const long channels = static_cast<long>(d.channels);
#pragma omp parallel for schedule(static) if (d.output_size() * d.channels * d.kh * d.kw >= kMinParallelWork)
  for (long ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double* gin = grad_input.data() + c * plane;
    for (std::size_t f = 0; f < d.filters; ++f) {
      const double* gout = grad_output.data() + f * plane;
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        const Window wy = window(d.height, ky, d.kh / 2);
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          const Window wx = window(d.width, kx, d.kw / 2);
          const double w = kernel[((f * d.channels + c) * d.kh + ky) * d.kw + kx];
          for (std::size_t y = wy.out_begin; y < wy.out_end; ++y) {
            const double* grow = gout + y * d.width;
            double* irow = gin + static_cast<std::size_t>(static_cast<long>(y) + wy.shift) * d.width;
            for (std::size_t x = wx.out_begin; x < wx.out_end; ++x)
              irow[static_cast<std::size_t>(static_cast<long>(x) + wx.shift)] += w * grow[x];
          }
        }
      }
    }
  }
}

void conv2d_backward_kernel(const ConvDims& d, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_kernel) {
  const std::size_t plane = d.height * d.width;
  const long filters = static_cast<long>(d.filters);
#pragma omp parallel for schedule(static) if (d.output_size() * d.channels * d.kh * d.kw >= kMinParallelWork)
  for (long fi = 0; fi < filters; ++fi) {
    const auto f = static_cast<std::size_t>(fi);
    const double* gout = grad_output.data() + f * plane;
    for (std::size_t c = 0; c < d.channels; ++c) {
      const double* in = input.data() + c * plane;
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        const Window wy = window(d.height, ky, d.kh / 2);
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          const Window wx = window(d.width, kx, d.kw / 2);
          double acc = 0.0;
          for (std::size_t y = wy.out_begin; y < wy.out_end; ++y) {
            const double* grow = gout + y * d.width;
            const double* irow = in + static_cast<std::size_t>(static_cast<long>(y) + wy.shift) * d.width;
            for (std::size_t x = wx.out_begin; x < wx.out_end; ++x)
              acc += grow[x] * irow[static_cast<std::size_t>(static_cast<long>(x) + wx.shift)];
          }
          grad_kernel[((f * d.channels + c) * d.kh + ky) * d.kw + kx] += acc;
        }
      }
    }
  }
}

void squared_distance_transform(std::size_t height, std::size_t width, std::span<const unsigned char> feature,
                                std::span<double> out) {
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  const bool big = height * width >= kMinParallelWork;
#pragma omp parallel if (big)
  {
    detail::DistanceScratch scratch(std::max(height, width));
#pragma omp for schedule(static)
    for (long i = 0; i < h * w; ++i) out[static_cast<std::size_t>(i)] = feature[static_cast<std::size_t>(i)] ? 0.0 : kFar;
#pragma omp for schedule(static)
    for (long x = 0; x < w; ++x) detail::transform_line(out.data() + x, height, width, scratch);
#pragma omp for schedule(static)
    for (long y = 0; y < h; ++y) detail::transform_line(out.data() + y * w, width, 1, scratch);
  }
}

}  // namespace mapo::kernels::parallel
