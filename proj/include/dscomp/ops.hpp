#pragma once

#include <cstdint>
#include <vector>

#include "dscomp/autograd.hpp"

namespace dscomp {

/// Leaf that never receives gradient.
template <Real T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

// Dense products. All operands are 2-D.
template <Real T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a · bᵀ without materializing the transpose.
template <Real T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> transpose(const Var<T>& a);

// Elementwise, identical shapes.
template <Real T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> scale(const Var<T>& a, T s);
template <Real T> Var<T> add_scalar(const Var<T>& a, T s);
template <Real T> Var<T> square(const Var<T>& a);

// Broadcasts over a 2-D [m x n] operand: row vector has n entries, column vector m.
template <Real T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <Real T> Var<T> mul_row(const Var<T>& a, const Var<T>& row);
template <Real T> Var<T> add_col(const Var<T>& a, const Var<T>& col);

template <Real T> Var<T> reshape(const Var<T>& a, Shape shape);

/// Max-subtracted softmax along `axis`, accumulated in double.
template <Real T> Var<T> softmax(const Var<T>& x, std::size_t axis);

/// Normalizes over the last axis; gain and bias have the last extent.
template <Real T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));
template <Real T> Var<T> layer_norm(const Var<T>& x, T eps = T(1e-5));

/// x is [C x H x W]; statistics per group of C/groups channels.
template <Real T>
Var<T> group_norm(const Var<T>& x, std::int64_t groups, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5));

template <Real T> Var<T> gelu(const Var<T>& x);
template <Real T> Var<T> relu(const Var<T>& x);
template <Real T> Var<T> silu(const Var<T>& x);

/// 3x3 cross-correlation, stride 1, zero padding 1. x [C x H x W], kernels [C' x C x 3 x 3].
template <Real T> Var<T> conv2d(const Var<T>& x, const Var<T>& kernels);
/// 2x2 mean pooling of a [C x H x W] map with even H, W.
template <Real T> Var<T> avg_pool2(const Var<T>& x);
/// Nearest-neighbour 2x upsampling of a [C x H x W] map.
template <Real T> Var<T> upsample2(const Var<T>& x);

template <Real T> Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis);
template <Real T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::int64_t begin, std::int64_t end);

template <Real T> Var<T> sum(const Var<T>& x);
template <Real T> Var<T> mean(const Var<T>& x);

/// Tracks the smallest |input| seen by relu while active; used to detect
/// evaluation points that sit on the kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;
  double min_distance() const;
};

namespace detail {
void note_kink_distance(double d);
}

}  // namespace dscomp
