#include "dscomp/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace dscomp {

template <Real T>
AttentionParams<T> AttentionParams<T>::create(const std::string& prefix, std::int64_t d_model, int heads,
                                              std::mt19937_64& rng) {
  if (heads < 1 || d_model % heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.w_q = Parameter<T>(prefix + ".w_q", init::fan_in<T>({d_model, d_model}, d_model, rng), true);
  p.w_k = Parameter<T>(prefix + ".w_k", init::fan_in<T>({d_model, d_model}, d_model, rng), true);
  p.w_v = Parameter<T>(prefix + ".w_v", init::fan_in<T>({d_model, d_model}, d_model, rng), true);
  return p;
}

namespace {

template <Real T>
Var<T> attend(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads) {
  const std::int64_t d = q.dim(1);
  const std::int64_t dk = d / heads;
  const T inv_sqrt_dk = T(1.0 / std::sqrt(double(dk)));
  if (heads == 1) {
    auto weights = softmax(scale(matmul_nt(q, k), inv_sqrt_dk), 1);
    return matmul(weights, v);
  }
  std::vector<Var<T>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const std::int64_t b = h * dk, e = b + dk;
    auto logits = scale(matmul_nt(slice(q, 1, b, e), slice(k, 1, b, e)), inv_sqrt_dk);
    outs.push_back(matmul(softmax(logits, 1), slice(v, 1, b, e)));
  }
  return concat(outs, 1);
}

template <Real T>
void check_tokens(const Var<T>& x, std::int64_t d, const char* what) {
  if (!x.defined() || x.shape().size() != 2) {
    throw ShapeError(std::string(what) + ": expected a [T x d] token matrix");
  }
  if (x.dim(1) != d) {
    throw ShapeError(std::string(what) + ": width " + std::to_string(x.dim(1)) +
                     " does not match d_model " + std::to_string(d));
  }
}

}  // namespace

template <Real T>
Var<T> self_attention(const Var<T>& x, const AttentionParams<T>& p) {
  check_tokens(x, p.d_model(), "self_attention");
  return attend(matmul(x, p.w_q.var), matmul(x, p.w_k.var), matmul(x, p.w_v.var), p.heads);
}

template <Real T>
Var<T> mixture_attention(const Var<T>& x_bg, const Var<T>& x_ref, const AttentionParams<T>& p) {
  check_tokens(x_bg, p.d_model(), "mixture_attention (background)");
  if (!x_ref.defined()) return self_attention(x_bg, p);
  check_tokens(x_ref, p.d_model(), "mixture_attention (reference)");
  const auto kv_in = concat<T>({x_bg, x_ref}, 0);
  return attend(matmul(x_bg, p.w_q.var), matmul(kv_in, p.w_k.var), matmul(kv_in, p.w_v.var), p.heads);
}

template struct AttentionParams<float>;
template struct AttentionParams<double>;
template Var<float> self_attention(const Var<float>&, const AttentionParams<float>&);
template Var<double> self_attention(const Var<double>&, const AttentionParams<double>&);
template Var<float> mixture_attention(const Var<float>&, const Var<float>&, const AttentionParams<float>&);
template Var<double> mixture_attention(const Var<double>&, const Var<double>&, const AttentionParams<double>&);

}  // namespace dscomp
