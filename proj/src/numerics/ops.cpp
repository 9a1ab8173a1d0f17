#include "dscomp/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numbers>

namespace dscomp {

namespace detail {

bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

namespace {
struct KinkState {
  int depth = 0;
  double min_distance = std::numeric_limits<double>::infinity();
};
KinkState& kink_state() {
  thread_local KinkState s;
  return s;
}
}  // namespace

void note_kink_distance(double d) {
  auto& s = kink_state();
  if (s.depth > 0) s.min_distance = std::min(s.min_distance, d);
}

}  // namespace detail

KinkMonitor::KinkMonitor() {
  auto& s = detail::kink_state();
  if (s.depth++ == 0) s.min_distance = std::numeric_limits<double>::infinity();
}
KinkMonitor::~KinkMonitor() { --detail::kink_state().depth; }
double KinkMonitor::min_distance() const { return detail::kink_state().min_distance; }

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

/// C (+)= op(A) · op(B), all row-major. op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(const T* a, bool ta, const T* b, bool tb, T* c, std::int64_t m, std::int64_t k,
          std::int64_t n, bool accumulate) {
  MMap<T> C(c, m, n);
  if (!accumulate) C.setZero();
  if (!ta && !tb) {
    C.noalias() += CMap<T>(a, m, k) * CMap<T>(b, k, n);
  } else if (!ta && tb) {
    C.noalias() += CMap<T>(a, m, k) * CMap<T>(b, n, k).transpose();
  } else if (ta && !tb) {
    C.noalias() += CMap<T>(a, k, m).transpose() * CMap<T>(b, k, n);
  } else {
    C.noalias() += CMap<T>(a, k, m).transpose() * CMap<T>(b, n, k).transpose();
  }
}

template <typename T>
Tensor<T>* grad_of(Node<T>& n, std::size_t i) {
  auto& in = *n.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

template <typename T>
const Tensor<T>& value_of(Node<T>& n, std::size_t i) {
  return n.inputs[i]->value;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void require_2d(const Shape& s, const char* op) {
  require(s.size() == 2, std::string(op) + ": expected a 2-D operand, got " + shape_str(s));
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace

template <Real T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_2d(a.shape(), "matmul");
  require_2d(b.shape(), "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner extents differ, " + shape_str(a.shape()) + " · " +
                             shape_str(b.shape()));
  Tensor<T> out({m, n});
  gemm(a.value().ptr(), false, b.value().ptr(), false, out.ptr(), m, k, n, false);
  return Var<T>::make(std::move(out), {a, b}, [m, k, n](Node<T>& node) {
    const T* g = node.grad.ptr();
    if (auto* ga = grad_of(node, 0)) gemm(g, false, value_of(node, 1).ptr(), true, ga->ptr(), m, n, k, true);
    if (auto* gb = grad_of(node, 1)) gemm(value_of(node, 0).ptr(), true, g, false, gb->ptr(), k, m, n, true);
  });
}

template <Real T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_2d(a.shape(), "matmul_nt");
  require_2d(b.shape(), "matmul_nt");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  require(b.dim(1) == k, "matmul_nt: inner extents differ, " + shape_str(a.shape()) + " · " +
                             shape_str(b.shape()) + "ᵀ");
  Tensor<T> out({m, n});
  gemm(a.value().ptr(), false, b.value().ptr(), true, out.ptr(), m, k, n, false);
  return Var<T>::make(std::move(out), {a, b}, [m, k, n](Node<T>& node) {
    const T* g = node.grad.ptr();
    // out = a bᵀ: da = g b, db = gᵀ a
    if (auto* ga = grad_of(node, 0)) gemm(g, false, value_of(node, 1).ptr(), false, ga->ptr(), m, n, k, true);
    if (auto* gb = grad_of(node, 1)) gemm(g, true, value_of(node, 0).ptr(), false, gb->ptr(), n, m, k, true);
  });
}

template <Real T>
Var<T> transpose(const Var<T>& a) {
  require_2d(a.shape(), "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  MMap<T>(out.ptr(), n, m) = CMap<T>(a.value().ptr(), m, n).transpose();
  return Var<T>::make(std::move(out), {a}, [m, n](Node<T>& node) {
    if (auto* ga = grad_of(node, 0)) MMap<T>(ga->ptr(), m, n) += CMap<T>(node.grad.ptr(), n, m).transpose();
  });
}

template <Real T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& node) {
    for (std::size_t j = 0; j < 2; ++j)
      if (auto* g = grad_of(node, j))
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i];
  });
}

template <Real T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& node) {
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i];
    if (auto* g = grad_of(node, 1))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= node.grad[i];
  });
}

template <Real T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& node) {
    const auto& av = value_of(node, 0);
    const auto& bv = value_of(node, 1);
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i] * bv[i];
    if (auto* g = grad_of(node, 1))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i] * av[i];
  });
}

template <Real T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return Var<T>::make(std::move(out), {a}, [s](Node<T>& node) {
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += s * node.grad[i];
  });
}

template <Real T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v += s;
  return Var<T>::make(std::move(out), {a}, [](Node<T>& node) {
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i];
  });
}

template <Real T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= v;
  return Var<T>::make(std::move(out), {a}, [](Node<T>& node) {
    const auto& av = value_of(node, 0);
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += T(2) * av[i] * node.grad[i];
  });
}

template <Real T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require_2d(a.shape(), "add_row");
  const auto m = a.dim(0), n = a.dim(1);
  require(static_cast<std::int64_t>(row.numel()) == n,
          "add_row: row has " + std::to_string(row.numel()) + " entries, expected " + std::to_string(n));
  Tensor<T> out = a.value();
  const auto& r = row.value();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return Var<T>::make(std::move(out), {a, row}, [m, n](Node<T>& node) {
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i];
    if (auto* g = grad_of(node, 1))
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) (*g)[j] += node.grad[i * n + j];
  });
}

template <Real T>
Var<T> mul_row(const Var<T>& a, const Var<T>& row) {
  require_2d(a.shape(), "mul_row");
  const auto m = a.dim(0), n = a.dim(1);
  require(static_cast<std::int64_t>(row.numel()) == n,
          "mul_row: row has " + std::to_string(row.numel()) + " entries, expected " + std::to_string(n));
  Tensor<T> out = a.value();
  const auto& r = row.value();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] *= r[j];
  return Var<T>::make(std::move(out), {a, row}, [m, n](Node<T>& node) {
    const auto& av = value_of(node, 0);
    const auto& r = value_of(node, 1);
    if (auto* g = grad_of(node, 0))
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) (*g)[i * n + j] += node.grad[i * n + j] * r[j];
    if (auto* g = grad_of(node, 1))
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) (*g)[j] += node.grad[i * n + j] * av[i * n + j];
  });
}

template <Real T>
Var<T> add_col(const Var<T>& a, const Var<T>& col) {
  require_2d(a.shape(), "add_col");
  const auto m = a.dim(0), n = a.dim(1);
  require(static_cast<std::int64_t>(col.numel()) == m,
          "add_col: column has " + std::to_string(col.numel()) + " entries, expected " + std::to_string(m));
  Tensor<T> out = a.value();
  const auto& c = col.value();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += c[i];
  return Var<T>::make(std::move(out), {a, col}, [m, n](Node<T>& node) {
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i];
    if (auto* g = grad_of(node, 1))
      for (std::int64_t i = 0; i < m; ++i) {
        T s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += node.grad[i * n + j];
        (*g)[i] += s;
      }
  });
}

template <Real T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return Var<T>::make(std::move(out), {a}, [](Node<T>& node) {
    if (auto* g = grad_of(node, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += node.grad[i];
  });
}

namespace {
// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  require(axis < s.size(), std::string(op) + ": axis " + std::to_string(axis) +
                               " out of range for " + shape_str(s));
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}
}  // namespace

template <Real T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.extent * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t e = 0; e < sp.extent; ++e) mx = std::max(mx, double(xv[base + e * sp.inner]));
      // Exponentials in T, normalizer accumulated in double.
      const T shift = T(mx);
      double total = 0;
      for (std::int64_t e = 0; e < sp.extent; ++e) {
        const T v = std::exp(xv[base + e * sp.inner] - shift);
        out[base + e * sp.inner] = v;
        total += double(v);
      }
      const double inv = 1.0 / total;
      for (std::int64_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] = T(double(out[base + e * sp.inner]) * inv);
    }
  }
  return Var<T>::make(std::move(out), {x}, [sp](Node<T>& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& y = node.value;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const std::int64_t base = o * sp.extent * sp.inner + in;
        double dot = 0;
        for (std::int64_t e = 0; e < sp.extent; ++e) {
          const auto idx = base + e * sp.inner;
          dot += double(node.grad[idx]) * double(y[idx]);
        }
        for (std::int64_t e = 0; e < sp.extent; ++e) {
          const auto idx = base + e * sp.inner;
          (*g)[idx] += T(double(y[idx]) * (double(node.grad[idx]) - dot));
        }
      }
    }
  });
}

namespace {

// Shared normalization kernel: rows of `len` contiguous elements (after
// grouping) are normalized; the affine map indexes channels via `channel_of`.
template <typename T>
struct NormCache {
  std::vector<T> xhat;
  std::vector<T> inv_std;
};

template <typename T>
void normalize_rows(const T* x, std::int64_t rows, std::int64_t len, T eps, NormCache<T>& cache) {
  cache.xhat.resize(static_cast<std::size_t>(rows * len));
  cache.inv_std.resize(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = x + r * len;
    double mu = 0;
    for (std::int64_t j = 0; j < len; ++j) mu += row[j];
    mu /= double(len);
    double var = 0;
    for (std::int64_t j = 0; j < len; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= double(len);
    const double inv = 1.0 / std::sqrt(var + double(eps));
    cache.inv_std[r] = T(inv);
    for (std::int64_t j = 0; j < len; ++j) cache.xhat[r * len + j] = T((row[j] - mu) * inv);
  }
}

// dx for y = xhat (no affine), given dxhat.
template <typename T>
void normalize_rows_backward(const NormCache<T>& cache, const T* dxhat, std::int64_t rows,
                             std::int64_t len, T* dx) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* dh = dxhat + r * len;
    const T* xh = cache.xhat.data() + r * len;
    double m1 = 0, m2 = 0;
    for (std::int64_t j = 0; j < len; ++j) {
      m1 += dh[j];
      m2 += double(dh[j]) * xh[j];
    }
    m1 /= double(len);
    m2 /= double(len);
    const double inv = cache.inv_std[r];
    for (std::int64_t j = 0; j < len; ++j) dx[r * len + j] += T(inv * (dh[j] - m1 - xh[j] * m2));
  }
}

}  // namespace

template <Real T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const std::int64_t len = x.shape().back();
  require(static_cast<std::int64_t>(gain.numel()) == len && static_cast<std::int64_t>(bias.numel()) == len,
          "layer_norm: affine extent must equal " + std::to_string(len));
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / len;
  auto cache = std::make_shared<NormCache<T>>();
  normalize_rows(x.value().ptr(), rows, len, eps, *cache);
  Tensor<T> out(x.shape());
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < len; ++j) out[r * len + j] = cache->xhat[r * len + j] * gv[j] + bv[j];
  return Var<T>::make(std::move(out), {x, gain, bias}, [cache, rows, len](Node<T>& node) {
    const auto& gv = value_of(node, 1);
    const T* dy = node.grad.ptr();
    if (auto* gg = grad_of(node, 1))
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < len; ++j) (*gg)[j] += dy[r * len + j] * cache->xhat[r * len + j];
    if (auto* gb = grad_of(node, 2))
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < len; ++j) (*gb)[j] += dy[r * len + j];
    if (auto* gx = grad_of(node, 0)) {
      std::vector<T> dxhat(static_cast<std::size_t>(rows * len));
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < len; ++j) dxhat[r * len + j] = dy[r * len + j] * gv[j];
      normalize_rows_backward(*cache, dxhat.data(), rows, len, gx->ptr());
    }
  });
}

template <Real T>
Var<T> layer_norm(const Var<T>& x, T eps) {
  const std::int64_t len = x.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / len;
  auto cache = std::make_shared<NormCache<T>>();
  normalize_rows(x.value().ptr(), rows, len, eps, *cache);
  Tensor<T> out(x.shape(), cache->xhat);
  return Var<T>::make(std::move(out), {x}, [cache, rows, len](Node<T>& node) {
    if (auto* gx = grad_of(node, 0)) normalize_rows_backward(*cache, node.grad.ptr(), rows, len, gx->ptr());
  });
}

template <Real T>
Var<T> group_norm(const Var<T>& x, std::int64_t groups, const Var<T>& gain, const Var<T>& bias, T eps) {
  require(x.shape().size() == 3, "group_norm: expected [C x H x W], got " + shape_str(x.shape()));
  const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  require(groups > 0 && c % groups == 0,
          "group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  require(static_cast<std::int64_t>(gain.numel()) == c && static_cast<std::int64_t>(bias.numel()) == c,
          "group_norm: affine extent must equal channel count");
  const std::int64_t len = (c / groups) * hw;
  auto cache = std::make_shared<NormCache<T>>();
  normalize_rows(x.value().ptr(), groups, len, eps, *cache);
  Tensor<T> out(x.shape());
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < hw; ++p) out[ch * hw + p] = cache->xhat[ch * hw + p] * gv[ch] + bv[ch];
  return Var<T>::make(std::move(out), {x, gain, bias}, [cache, groups, len, c, hw](Node<T>& node) {
    const auto& gv = value_of(node, 1);
    const T* dy = node.grad.ptr();
    if (auto* gg = grad_of(node, 1))
      for (std::int64_t ch = 0; ch < c; ++ch) {
        T s = 0;
        for (std::int64_t p = 0; p < hw; ++p) s += dy[ch * hw + p] * cache->xhat[ch * hw + p];
        (*gg)[ch] += s;
      }
    if (auto* gb = grad_of(node, 2))
      for (std::int64_t ch = 0; ch < c; ++ch) {
        T s = 0;
        for (std::int64_t p = 0; p < hw; ++p) s += dy[ch * hw + p];
        (*gb)[ch] += s;
      }
    if (auto* gx = grad_of(node, 0)) {
      std::vector<T> dxhat(static_cast<std::size_t>(c * hw));
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < hw; ++p) dxhat[ch * hw + p] = dy[ch * hw + p] * gv[ch];
      normalize_rows_backward(*cache, dxhat.data(), groups, len, gx->ptr());
    }
  });
}

template <Real T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = xv[i];
    out[i] = T(0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)));
  }
  return Var<T>::make(std::move(out), {x}, [](Node<T>& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& xv = value_of(node, 0);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g->numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*g)[i] += T(node.grad[i] * (cdf + v * pdf));
    }
  });
}

template <Real T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = xv[i] > T(0) ? xv[i] : T(0);
    closest = std::min(closest, std::abs(double(xv[i])));
  }
  detail::note_kink_distance(closest);
  return Var<T>::make(std::move(out), {x}, [](Node<T>& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& xv = value_of(node, 0);
    for (std::size_t i = 0; i < g->numel(); ++i)
      if (xv[i] > T(0)) (*g)[i] += node.grad[i];
  });
}

template <Real T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = xv[i];
    out[i] = T(v / (1.0 + std::exp(-v)));
  }
  return Var<T>::make(std::move(out), {x}, [](Node<T>& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& xv = value_of(node, 0);
    for (std::size_t i = 0; i < g->numel(); ++i) {
      const double v = xv[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      (*g)[i] += T(node.grad[i] * (s * (1.0 + v * (1.0 - s))));
    }
  });
}

namespace {

// cols is [C*9 x H*W]
template <typename T>
void im2col3(const T* x, std::int64_t c, std::int64_t h, std::int64_t w, T* cols) {
  const std::int64_t hw = h * w;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + ((ch * 3 + ky) * 3 + kx) * hw;
        for (std::int64_t i = 0; i < h; ++i) {
          const std::int64_t si = i + ky - 1;
          for (std::int64_t j = 0; j < w; ++j) {
            const std::int64_t sj = j + kx - 1;
            row[i * w + j] = (si >= 0 && si < h && sj >= 0 && sj < w) ? x[(ch * h + si) * w + sj] : T(0);
          }
        }
      }
}

template <typename T>
void col2im3(const T* cols, std::int64_t c, std::int64_t h, std::int64_t w, T* x) {
  const std::int64_t hw = h * w;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + ((ch * 3 + ky) * 3 + kx) * hw;
        for (std::int64_t i = 0; i < h; ++i) {
          const std::int64_t si = i + ky - 1;
          if (si < 0 || si >= h) continue;
          for (std::int64_t j = 0; j < w; ++j) {
            const std::int64_t sj = j + kx - 1;
            if (sj >= 0 && sj < w) x[(ch * h + si) * w + sj] += row[i * w + j];
          }
        }
      }
}

}  // namespace

template <Real T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels) {
  require(x.shape().size() == 3, "conv2d: input must be [C x H x W], got " + shape_str(x.shape()));
  require(kernels.shape().size() == 4 && kernels.dim(2) == 3 && kernels.dim(3) == 3,
          "conv2d: kernels must be [C' x C x 3 x 3], got " + shape_str(kernels.shape()));
  require(kernels.dim(1) == x.dim(0), "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                          " kernels " + shape_str(kernels.shape()));
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), co = kernels.dim(0);
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c * 9 * h * w));
  im2col3(x.value().ptr(), c, h, w, cols->data());
  Tensor<T> out({co, h, w});
  gemm(kernels.value().ptr(), false, cols->data(), false, out.ptr(), co, c * 9, h * w, false);
  return Var<T>::make(std::move(out), {x, kernels}, [cols, c, h, w, co](Node<T>& node) {
    const T* g = node.grad.ptr();
    if (auto* gk = grad_of(node, 1)) gemm(g, false, cols->data(), true, gk->ptr(), co, h * w, c * 9, true);
    if (auto* gx = grad_of(node, 0)) {
      std::vector<T> dcols(static_cast<std::size_t>(c * 9 * h * w));
      gemm(value_of(node, 1).ptr(), true, g, false, dcols.data(), c * 9, co, h * w, false);
      col2im3(dcols.data(), c, h, w, gx->ptr());
    }
  });
}

template <Real T>
Var<T> avg_pool2(const Var<T>& x) {
  require(x.shape().size() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
          "avg_pool2: expected [C x H x W] with even H, W, got " + shape_str(x.shape()));
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = h / 2, wo = w / 2;
  Tensor<T> out({c, ho, wo});
  const auto& xv = x.value();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j) {
        const T* p = xv.ptr() + (ch * h + 2 * i) * w + 2 * j;
        out.at(ch, i, j) = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  return Var<T>::make(std::move(out), {x}, [c, h, w, ho, wo](Node<T>& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          const T d = T(0.25) * node.grad.at(ch, i, j);
          T* p = g->ptr() + (ch * h + 2 * i) * w + 2 * j;
          p[0] += d;
          p[1] += d;
          p[w] += d;
          p[w + 1] += d;
        }
  });
}

template <Real T>
Var<T> upsample2(const Var<T>& x) {
  require(x.shape().size() == 3, "upsample2: expected [C x H x W], got " + shape_str(x.shape()));
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  const auto& xv = x.value();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < 2 * h; ++i)
      for (std::int64_t j = 0; j < 2 * w; ++j) out.at(ch, i, j) = xv.at(ch, i / 2, j / 2);
  return Var<T>::make(std::move(out), {x}, [c, h, w](Node<T>& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < 2 * h; ++i)
        for (std::int64_t j = 0; j < 2 * w; ++j) g->at(ch, i / 2, j / 2) += node.grad.at(ch, i, j);
  });
}

template <Real T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: empty input list");
  if (xs.size() == 1) return xs.front();
  const Shape& s0 = xs.front().shape();
  require(axis < s0.size(), "concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (d != axis && s[d] != s0[d]) ok = false;
    require(ok, "concat: extent mismatch " + shape_str(s0) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  const auto sp = split_axis(out_shape, axis, "concat");
  Tensor<T> out(out_shape);
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& xv = xs[k].value();
    const std::int64_t block = extents[k] * sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(xv.ptr() + o * block, block, out.ptr() + o * sp.extent * sp.inner + offset * sp.inner);
    offset += extents[k];
  }
  return Var<T>::make(std::move(out), xs, [extents, sp](Node<T>& node) {
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::int64_t block = extents[k] * sp.inner;
      if (auto* g = grad_of(node, k))
        for (std::int64_t o = 0; o < sp.outer; ++o) {
          const T* src = node.grad.ptr() + o * sp.extent * sp.inner + offset * sp.inner;
          T* dst = g->ptr() + o * block;
          for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      offset += extents[k];
    }
  });
}

template <Real T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::int64_t begin, std::int64_t end) {
  const auto sp = split_axis(x.shape(), axis, "slice");
  require(0 <= begin && begin < end && end <= sp.extent,
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
              shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::int64_t block = (end - begin) * sp.inner;
  for (std::int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.value().ptr() + o * sp.extent * sp.inner + begin * sp.inner, block, out.ptr() + o * block);
  return Var<T>::make(std::move(out), {x}, [sp, begin, block](Node<T>& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      T* dst = g->ptr() + o * sp.extent * sp.inner + begin * sp.inner;
      const T* src = node.grad.ptr() + o * block;
      for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

template <Real T>
Var<T> sum(const Var<T>& x) {
  double s = 0;
  for (auto v : x.value().data()) s += v;
  return Var<T>::make(Tensor<T>({1}, T(s)), {x}, [](Node<T>& node) {
    if (auto* g = grad_of(node, 0))
      for (auto& v : g->data()) v += node.grad[0];
  });
}

template <Real T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

#define DSCOMP_INSTANTIATE_OPS(T)                                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                  \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                               \
  template Var<T> transpose(const Var<T>&);                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                     \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                     \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                     \
  template Var<T> scale(const Var<T>&, T);                                               \
  template Var<T> add_scalar(const Var<T>&, T);                                          \
  template Var<T> square(const Var<T>&);                                                 \
  template Var<T> add_row(const Var<T>&, const Var<T>&);                                 \
  template Var<T> mul_row(const Var<T>&, const Var<T>&);                                 \
  template Var<T> add_col(const Var<T>&, const Var<T>&);                                 \
  template Var<T> reshape(const Var<T>&, Shape);                                         \
  template Var<T> softmax(const Var<T>&, std::size_t);                                   \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);            \
  template Var<T> layer_norm(const Var<T>&, T);                                          \
  template Var<T> group_norm(const Var<T>&, std::int64_t, const Var<T>&, const Var<T>&, T); \
  template Var<T> gelu(const Var<T>&);                                                   \
  template Var<T> relu(const Var<T>&);                                                   \
  template Var<T> silu(const Var<T>&);                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&);                                  \
  template Var<T> avg_pool2(const Var<T>&);                                              \
  template Var<T> upsample2(const Var<T>&);                                              \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                       \
  template Var<T> slice(const Var<T>&, std::size_t, std::int64_t, std::int64_t);         \
  template Var<T> sum(const Var<T>&);                                                    \
  template Var<T> mean(const Var<T>&);

DSCOMP_INSTANTIATE_OPS(float)
DSCOMP_INSTANTIATE_OPS(double)

}  // namespace dscomp
