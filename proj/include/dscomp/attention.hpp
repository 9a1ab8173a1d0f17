#pragma once

#include <random>
#include <string>

#include "dscomp/ops.hpp"
#include "dscomp/parameter.hpp"

namespace dscomp {

enum class StreamTag { Reference, Background };

inline const char* to_string(StreamTag t) {
  return t == StreamTag::Reference ? "ref" : "bg";
}

/// Bias-free query/key/value projections shared by every stream that uses them.
template <Real T>
struct AttentionParams {
  Parameter<T> w_q, w_k, w_v;
  int heads = 1;

  std::int64_t d_model() const { return w_q.shape()[0]; }
  std::int64_t d_k() const { return d_model() / heads; }

  static AttentionParams create(const std::string& prefix, std::int64_t d_model, int heads,
                                std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    f(w_q);
    f(w_k);
    f(w_v);
  }
};

/// softmax(Q Kᵀ / sqrt(d_k)) V per head with Q, K, V all projected from x.
template <Real T>
Var<T> self_attention(const Var<T>& x, const AttentionParams<T>& p);

/// Queries from x_bg; keys and values from the row concatenation [x_bg; x_ref].
/// An undefined x_ref is the empty reference set.
template <Real T>
Var<T> mixture_attention(const Var<T>& x_bg, const Var<T>& x_ref, const AttentionParams<T>& p);

}  // namespace dscomp
