#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dscomp/backbone.hpp"

namespace dscomp {

/// Desk-scale U-Net plan. Interaction blocks live at two resolutions
/// (image/2 with width0 channels, image/4 with width1); the decoder mirrors
/// the encoder with additive skips.
struct UNetConfig {
  std::int64_t image_size = 32;
  std::int64_t in_channels = 7;
  std::int64_t out_channels = 3;
  std::int64_t width0 = 32;
  std::int64_t width1 = 64;
  int depth = 8;
  int groups = 8;
  int heads = 2;
  std::int64_t time_dim = 128;
  int max_timestep = 1000;

  void validate() const;
};

struct UNetSite {
  std::string id;  // d0, d1, ... for the encoder, u0, u1, ... for the decoder
  int level = 0;   // 0: image/2, 1: image/4
  bool encoder = true;
  int skip_from = -1;  // encoder block feeding this decoder block, -1 if none
};

std::vector<UNetSite> unet_plan(const UNetConfig& cfg);

/// Local residual block R_l: GN-SiLU-conv, timestep shift, GN-SiLU-conv, skip.
template <Real T>
struct ResBlockParams {
  Parameter<T> gn1_gain, gn1_bias, conv1, time_proj, time_bias, gn2_gain, gn2_bias, conv2;
  int groups = 8;

  template <typename F>
  void visit(F&& f) {
    f(gn1_gain); f(gn1_bias); f(conv1); f(time_proj); f(time_bias); f(gn2_gain); f(gn2_bias); f(conv2);
  }
};

template <Real T>
struct UNetBlockParams {
  ResBlockParams<T> res;
  Parameter<T> ln1_gain, ln1_bias;
  AttentionParams<T> attn;
  Parameter<T> ln2_gain, ln2_bias;
  Parameter<T> w1, w2;  // feed-forward d -> 4d -> d

  std::int64_t width() const { return w1.shape()[0]; }

  static UNetBlockParams create(const std::string& prefix, std::int64_t width, std::int64_t time_dim, int groups,
                                int heads, std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    res.visit(f);
    f(ln1_gain); f(ln1_bias);
    attn.visit(f);
    f(ln2_gain); f(ln2_bias); f(w1); f(w2);
  }
};

template <Real T>
struct UNetBlockOutput {
  Var<T> y_bg, y_ref;  // feature maps [C x H x W]
  LayerTrace<T> trace;
};

/// One dual-stream block. The reference stream runs self-attention with
/// p_ref; the background stream runs mixture attention with p_bg over its own
/// normalized tokens and the reference stream's. t_act is the activated
/// timestep embedding [1 x time_dim] of each stream's backbone. An undefined
/// x_ref skips the reference stream.
template <Real T>
UNetBlockOutput<T> unet_block_forward(const Var<T>& x_bg, const Var<T>& x_ref, const Var<T>& t_bg,
                                      const Var<T>& t_ref, const UNetBlockParams<T>& p_bg,
                                      const UNetBlockParams<T>& p_ref);

/// Shared-parameter form: one record and one timestep embedding serve both streams.
template <Real T>
UNetBlockOutput<T> unet_block_forward(const Var<T>& x_bg, const Var<T>& x_ref, const Var<T>& t_act,
                                      const UNetBlockParams<T>& p) {
  return unet_block_forward(x_bg, x_ref, t_act, t_act, p, p);
}

/// Full parameter record of one U-Net.
template <Real T>
struct UNetWeights {
  UNetConfig config;
  Parameter<T> time_w1, time_b1, time_w2, time_b2;
  Parameter<T> stem, stem_bias;
  Parameter<T> down_conv, up_conv;
  Parameter<T> out_gn_gain, out_gn_bias, out_conv, out_bias;
  std::vector<UNetBlockParams<T>> blocks;

  static UNetWeights create(const UNetConfig& cfg, std::uint64_t seed, const std::string& prefix = "");

  template <typename F>
  void visit(F&& f) {
    f(time_w1); f(time_b1); f(time_w2); f(time_b2);
    f(stem); f(stem_bias); f(down_conv); f(up_conv);
    for (auto& b : blocks) b.visit(f);
    f(out_gn_gain); f(out_gn_bias); f(out_conv); f(out_bias);
  }

  ParameterRefs<T> parameters() {
    ParameterRefs<T> out;
    visit([&](Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  /// Deep copy: independent records, optionally renamed with a new prefix.
  UNetWeights clone(const std::string& from_prefix = "", const std::string& to_prefix = "") const;
};

/// Activated timestep embedding silu(MLP(sinusoid(t))) as [1 x time_dim].
template <Real T>
Var<T> unet_time_features(int t, const UNetWeights<T>& w);

/// Dual-stream forward. bg drives the ε head; ref (may alias bg) processes the
/// reference stream when in.reference is present.
template <Real T>
BackboneOutput<T> unet_forward(const BackboneInput<T>& in, const UNetWeights<T>& bg, const UNetWeights<T>& ref);

template <Real T>
BackboneOutput<T> unet_forward(const BackboneInput<T>& in, const UNetWeights<T>& bb) {
  return unet_forward(in, bb, bb);
}

/// [C x H x W] map to [H*W x C] tokens and back.
template <Real T>
Var<T> map_to_tokens(const Var<T>& x);
template <Real T>
Var<T> tokens_to_map(const Var<T>& tokens, std::int64_t h, std::int64_t w);

}  // namespace dscomp
