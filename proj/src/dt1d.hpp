#pragma once

// One-dimensional squared distance transform of a sampled function
// (lower envelope of parabolas), shared by both kernel variants.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

namespace mapo::kernels::detail {

struct DistanceScratch {
  explicit DistanceScratch(std::size_t n) : f(n), v(n), z(n + 1), d(n) {}
  std::vector<double> f;
  std::vector<std::size_t> v;
  std::vector<double> z;
  std::vector<double> d;
};

/// Transforms `n` samples located at data[0], data[stride], ... in place.
inline void transform_line(double* data, std::size_t n, std::size_t stride, DistanceScratch& s) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < n; ++q) s.f[q] = data[q * stride];
  auto intersect = [&](std::size_t q, std::size_t p) {
    const double qd = static_cast<double>(q), pd = static_cast<double>(p);
    return ((s.f[q] + qd * qd) - (s.f[p] + pd * pd)) / (2.0 * qd - 2.0 * pd);
  };
  std::size_t k = 0;
  s.v[0] = 0;
  s.z[0] = -inf;
  s.z[1] = inf;
  for (std::size_t q = 1; q < n; ++q) {
    double sep = intersect(q, s.v[k]);
    while (sep <= s.z[k]) {
      --k;
      sep = intersect(q, s.v[k]);
    }
    ++k;
    s.v[k] = q;
    s.z[k] = sep;
    s.z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (s.z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(s.v[k]);
    s.d[q] = dq * dq + s.f[s.v[k]];
  }
  for (std::size_t q = 0; q < n; ++q) data[q * stride] = s.d[q];
}

}  // namespace mapo::kernels::detail
