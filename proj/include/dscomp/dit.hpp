#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dscomp/backbone.hpp"

namespace dscomp {

struct DiTConfig {
  std::int64_t image_size = 32;
  std::int64_t in_channels = 7;
  std::int64_t out_channels = 3;
  std::int64_t patch = 4;
  std::int64_t width = 64;
  int depth = 8;
  int heads = 2;
  std::int64_t time_dim = 128;
  int max_timestep = 1000;

  std::int64_t grid() const { return image_size / patch; }
  std::int64_t tokens() const { return grid() * grid(); }
  void validate() const;
};

/// Non-overlapping patches in raster order; token features ordered (channel, row, col).
template <Real T>
Tensor<T> patchify(const Tensor<T>& img, std::int64_t patch);
template <Real T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::int64_t patch, std::int64_t channels, std::int64_t height,
                     std::int64_t width);
template <Real T>
Var<T> patchify(const Var<T>& img, std::int64_t patch);
template <Real T>
Var<T> unpatchify(const Var<T>& tokens, std::int64_t patch, std::int64_t channels, std::int64_t height,
                  std::int64_t width);

/// Parallel attention + MLP block with AdaLN-Zero modulation and a gated residual.
template <Real T>
struct DiTBlockParams {
  Parameter<T> mod_w, mod_b;  // tau -> (shift, scale, gate), zero-initialized
  AttentionParams<T> attn;
  Parameter<T> w_m;  // d -> 4d
  Parameter<T> w_o;  // [attn, mlp] (5d) -> d

  std::int64_t width() const { return w_m.shape()[0]; }

  static DiTBlockParams create(const std::string& prefix, std::int64_t width, std::int64_t cond_dim, int heads,
                               std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    f(mod_w); f(mod_b);
    attn.visit(f);
    f(w_m); f(w_o);
  }
};

template <Real T>
struct AdaLNOutput {
  Var<T> h_tilde;  // normalize(h) * (1 + scale) + shift
  Var<T> gate;     // [d]
};

/// tau is the conditioning vector [1 x cond_dim].
template <Real T>
AdaLNOutput<T> adaln_zero(const Var<T>& h, const Var<T>& tau, const DiTBlockParams<T>& p);

template <Real T>
struct DiTBlockOutput {
  Var<T> h_bg, h_ref;
  LayerTrace<T> trace;
};

template <Real T>
DiTBlockOutput<T> dit_block_forward(const Var<T>& h_bg, const Var<T>& h_ref, const Var<T>& tau_bg,
                                    const Var<T>& tau_ref, const DiTBlockParams<T>& p_bg,
                                    const DiTBlockParams<T>& p_ref);

template <Real T>
DiTBlockOutput<T> dit_block_forward(const Var<T>& h_bg, const Var<T>& h_ref, const Var<T>& tau,
                                    const DiTBlockParams<T>& p) {
  return dit_block_forward(h_bg, h_ref, tau, tau, p, p);
}

template <Real T>
struct DiTWeights {
  DiTConfig config;
  Parameter<T> patch_w, patch_b;
  Parameter<T> time_w1, time_b1, time_w2, time_b2;
  std::vector<DiTBlockParams<T>> blocks;
  Parameter<T> final_w, final_b;  // zero-initialized unpatch head
  Tensor<T> positions;            // fixed sinusoidal table, not learned

  static DiTWeights create(const DiTConfig& cfg, std::uint64_t seed, const std::string& prefix = "");

  template <typename F>
  void visit(F&& f) {
    f(patch_w); f(patch_b);
    f(time_w1); f(time_b1); f(time_w2); f(time_b2);
    for (auto& b : blocks) b.visit(f);
    f(final_w); f(final_b);
  }

  ParameterRefs<T> parameters() {
    ParameterRefs<T> out;
    visit([&](Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  DiTWeights clone(const std::string& from_prefix = "", const std::string& to_prefix = "") const;
};

/// Conditioning vector tau = MLP(sinusoid(t)) as [1 x width].
template <Real T>
Var<T> dit_time_features(int t, const DiTWeights<T>& w);

/// Token embedding of a 7-channel stream input: patch projection plus positions.
template <Real T>
Var<T> dit_embed(const Tensor<T>& channels, const DiTWeights<T>& w);

/// Final normalization and unpatch head on background tokens.
template <Real T>
Var<T> dit_head(const Var<T>& tokens, const DiTWeights<T>& w);

template <Real T>
BackboneOutput<T> dit_forward(const BackboneInput<T>& in, const DiTWeights<T>& bg, const DiTWeights<T>& ref);

template <Real T>
BackboneOutput<T> dit_forward(const BackboneInput<T>& in, const DiTWeights<T>& bb) {
  return dit_forward(in, bb, bb);
}

}  // namespace dscomp
