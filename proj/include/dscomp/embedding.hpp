#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "dscomp/tensor.hpp"

namespace dscomp {

/// Interleaved [sin(t w_0), cos(t w_0), sin(t w_1), ...] with w_k = 10000^(-k / (dim/2)).
template <Real T>
Tensor<T> timestep_embedding(double t, std::int64_t dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw std::invalid_argument("timestep_embedding: dim must be positive and even, got " + std::to_string(dim));
  }
  Tensor<T> out({dim});
  const std::int64_t half = dim / 2;
  for (std::int64_t k = 0; k < half; ++k) {
    const double w = std::exp(-std::log(10000.0) * double(k) / double(half));
    out[2 * k] = T(std::sin(t * w));
    out[2 * k + 1] = T(std::cos(t * w));
  }
  return out;
}

/// Fixed 2-D sinusoidal table [grid_h*grid_w x dim]: first half encodes rows,
/// second half columns. dim must be divisible by 4.
template <Real T>
Tensor<T> sincos_2d_table(std::int64_t grid_h, std::int64_t grid_w, std::int64_t dim) {
  if (dim % 4 != 0) throw std::invalid_argument("sincos_2d_table: dim must be divisible by 4");
  Tensor<T> out({grid_h * grid_w, dim});
  const std::int64_t half = dim / 2;
  for (std::int64_t y = 0; y < grid_h; ++y)
    for (std::int64_t x = 0; x < grid_w; ++x) {
      const auto ey = timestep_embedding<T>(double(y), half);
      const auto ex = timestep_embedding<T>(double(x), half);
      const std::int64_t row = y * grid_w + x;
      for (std::int64_t k = 0; k < half; ++k) {
        out.at(row, k) = ey[k];
        out.at(row, half + k) = ex[k];
      }
    }
  return out;
}

}  // namespace dscomp
