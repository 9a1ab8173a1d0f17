#include "dscomp/unet.hpp"

#include <stdexcept>

#include "dscomp/embedding.hpp"

namespace dscomp {

void check_timestep(int t, int max_timestep) {
  if (t < 0 || t > max_timestep) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(max_timestep) + "]");
  }
}

template <Real T>
Tensor<T> background_channels(const BackboneInput<T>& in) {
  const auto& s = in.noisy.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("noisy input must be [3 x H x W], got " + shape_str(s));
  const Shape mask_shape{1, s[1], s[2]};
  if (in.mask.shape() != mask_shape) {
    throw ShapeError("mask must be " + shape_str(mask_shape) + ", got " + shape_str(in.mask.shape()));
  }
  if (in.masked_bg.shape() != s) {
    throw ShapeError("masked image must match noisy input " + shape_str(s) + ", got " + shape_str(in.masked_bg.shape()));
  }
  if (in.reference && in.reference->shape() != s) {
    throw ShapeError("reference must match noisy input " + shape_str(s) + ", got " + shape_str(in.reference->shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(s[1] * s[2]);
  Tensor<T> out({7, s[1], s[2]});
  std::copy_n(in.noisy.ptr(), 3 * plane, out.ptr());
  std::copy_n(in.mask.ptr(), plane, out.ptr() + 3 * plane);
  std::copy_n(in.masked_bg.ptr(), 3 * plane, out.ptr() + 4 * plane);
  return out;
}

template <Real T>
Tensor<T> reference_channels(const Tensor<T>& reference) {
  const auto& s = reference.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("reference must be [3 x H x W], got " + shape_str(s));
  const std::size_t plane = static_cast<std::size_t>(s[1] * s[2]);
  Tensor<T> out({7, s[1], s[2]}, T(1));
  std::copy_n(reference.ptr(), 3 * plane, out.ptr());
  std::copy_n(reference.ptr(), 3 * plane, out.ptr() + 4 * plane);
  return out;
}

void UNetConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("unet config: " + m); };
  if (image_size % 4 != 0 || image_size < 4) fail("image_size must be a positive multiple of 4");
  if (depth < 1) fail("depth must be at least 1");
  if (width0 % groups != 0 || width1 % groups != 0) fail("widths must be divisible by groups");
  if (width0 % heads != 0 || width1 % heads != 0) fail("widths must be divisible by heads");
  if (time_dim % 2 != 0) fail("time_dim must be even");
  if (max_timestep < 1) fail("max_timestep must be positive");
}

std::vector<UNetSite> unet_plan(const UNetConfig& cfg) {
  const int n_enc = (cfg.depth + 1) / 2;
  const int n_dec = cfg.depth / 2;
  const int enc_level0 = (n_enc + 1) / 2;
  std::vector<UNetSite> sites;
  for (int i = 0; i < n_enc; ++i) sites.push_back({"d" + std::to_string(i), i < enc_level0 ? 0 : 1, true, -1});
  for (int j = 0; j < n_dec; ++j) {
    const int partner = n_enc - 1 - j;
    sites.push_back({"u" + std::to_string(j), sites[static_cast<std::size_t>(partner)].level, false, partner});
  }
  return sites;
}

template <Real T>
UNetBlockParams<T> UNetBlockParams<T>::create(const std::string& prefix, std::int64_t width, std::int64_t time_dim,
                                              int groups, int heads, std::mt19937_64& rng) {
  UNetBlockParams p;
  auto& r = p.res;
  r.groups = groups;
  r.gn1_gain = Parameter<T>(prefix + ".res.gn1.gain", Tensor<T>::ones({width}));
  r.gn1_bias = Parameter<T>(prefix + ".res.gn1.bias", Tensor<T>::zeros({width}));
  r.conv1 = Parameter<T>(prefix + ".res.conv1", init::fan_in<T>({width, width, 3, 3}, width * 9, rng));
  r.time_proj = Parameter<T>(prefix + ".res.time_proj", init::fan_in<T>({time_dim, width}, time_dim, rng));
  r.time_bias = Parameter<T>(prefix + ".res.time_bias", Tensor<T>::zeros({width}));
  r.gn2_gain = Parameter<T>(prefix + ".res.gn2.gain", Tensor<T>::ones({width}));
  r.gn2_bias = Parameter<T>(prefix + ".res.gn2.bias", Tensor<T>::zeros({width}));
  r.conv2 = Parameter<T>(prefix + ".res.conv2", init::fan_in<T>({width, width, 3, 3}, width * 9, rng, 0.5));
  p.ln1_gain = Parameter<T>(prefix + ".ln1.gain", Tensor<T>::ones({width}));
  p.ln1_bias = Parameter<T>(prefix + ".ln1.bias", Tensor<T>::zeros({width}));
  p.attn = AttentionParams<T>::create(prefix + ".attn", width, heads, rng);
  p.ln2_gain = Parameter<T>(prefix + ".ln2.gain", Tensor<T>::ones({width}));
  p.ln2_bias = Parameter<T>(prefix + ".ln2.bias", Tensor<T>::zeros({width}));
  p.w1 = Parameter<T>(prefix + ".ff.w1", init::fan_in<T>({width, 4 * width}, width, rng, 1.41421356));
  p.w2 = Parameter<T>(prefix + ".ff.w2", Tensor<T>::zeros({4 * width, width}));
  return p;
}

template <Real T>
Var<T> map_to_tokens(const Var<T>& x) {
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

template <Real T>
Var<T> tokens_to_map(const Var<T>& tokens, std::int64_t h, std::int64_t w) {
  return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

namespace {

template <Real T>
Var<T> conv_bias(const Var<T>& x, const Parameter<T>& k, const Parameter<T>& b) {
  auto y = conv2d(x, k.var);
  const auto c = y.dim(0), h = y.dim(1), w = y.dim(2);
  return reshape(add_col(reshape(y, {c, h * w}), b.var), {c, h, w});
}

template <Real T>
Var<T> res_block(const Var<T>& x, const Var<T>& t_act, const ResBlockParams<T>& r) {
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto y = conv2d(silu(group_norm(x, r.groups, r.gn1_gain.var, r.gn1_bias.var)), r.conv1.var);
  auto shift = add_row(matmul(t_act, r.time_proj.var), r.time_bias.var);  // [1 x C]
  y = reshape(add_col(reshape(y, {c, h * w}), reshape(shift, {c})), {c, h, w});
  y = conv2d(silu(group_norm(y, r.groups, r.gn2_gain.var, r.gn2_bias.var)), r.conv2.var);
  return add(x, y);
}

template <Real T>
Var<T> feed_forward(const Var<T>& x_hat, const UNetBlockParams<T>& p) {
  auto hidden = relu(matmul(layer_norm(x_hat, p.ln2_gain.var, p.ln2_bias.var), p.w1.var));
  return add(matmul(hidden, p.w2.var), x_hat);
}

template <Real T>
void check_stream(const Var<T>& x, std::int64_t width, const char* what) {
  if (x.shape().size() != 3 || x.dim(0) != width) {
    throw ShapeError(std::string("unet block: ") + what + " stream must be [" + std::to_string(width) +
                     " x H x W], got " + shape_str(x.shape()));
  }
}

}  // namespace

template <Real T>
UNetBlockOutput<T> unet_block_forward(const Var<T>& x_bg, const Var<T>& x_ref, const Var<T>& t_bg,
                                      const Var<T>& t_ref, const UNetBlockParams<T>& p_bg,
                                      const UNetBlockParams<T>& p_ref) {
  const auto width = p_bg.width();
  check_stream(x_bg, width, "background");
  const bool has_ref = x_ref.defined();
  if (has_ref) {
    check_stream(x_ref, width, "reference");
    if (x_ref.shape() != x_bg.shape()) {
      throw ShapeError("unet block: stream shapes differ, " + shape_str(x_bg.shape()) + " vs " +
                       shape_str(x_ref.shape()));
    }
  }
  const auto h = x_bg.dim(1), w = x_bg.dim(2);

  UNetBlockOutput<T> out;
  out.trace.grid_h = h;
  out.trace.grid_w = w;

  Var<T> normed_ref;
  if (has_ref) {
    normed_ref = layer_norm(map_to_tokens(res_block(x_ref, t_ref, p_ref.res)), p_ref.ln1_gain.var, p_ref.ln1_bias.var);
    auto attn_ref = self_attention(normed_ref, p_ref.attn);
    auto y_ref = feed_forward(add(map_to_tokens(x_ref), attn_ref), p_ref);
    out.y_ref = tokens_to_map(y_ref, h, w);
    out.trace.ref = StreamFeatures<T>{StreamTag::Reference, normed_ref, attn_ref, y_ref};
  }

  auto normed_bg = layer_norm(map_to_tokens(res_block(x_bg, t_bg, p_bg.res)), p_bg.ln1_gain.var, p_bg.ln1_bias.var);
  auto attn_bg = mixture_attention(normed_bg, normed_ref, p_bg.attn);
  auto y_bg = feed_forward(add(map_to_tokens(x_bg), attn_bg), p_bg);
  out.y_bg = tokens_to_map(y_bg, h, w);
  out.trace.bg = StreamFeatures<T>{StreamTag::Background, normed_bg, attn_bg, y_bg};
  return out;
}

template <Real T>
UNetWeights<T> UNetWeights<T>::create(const UNetConfig& cfg, std::uint64_t seed, const std::string& prefix) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  UNetWeights w;
  w.config = cfg;
  const auto td = cfg.time_dim;
  w.time_w1 = Parameter<T>(prefix + "time.w1", init::fan_in<T>({td, td}, td, rng));
  w.time_b1 = Parameter<T>(prefix + "time.b1", Tensor<T>::zeros({td}));
  w.time_w2 = Parameter<T>(prefix + "time.w2", init::fan_in<T>({td, td}, td, rng));
  w.time_b2 = Parameter<T>(prefix + "time.b2", Tensor<T>::zeros({td}));
  w.stem = Parameter<T>(prefix + "stem.conv", init::fan_in<T>({cfg.width0, cfg.in_channels, 3, 3}, cfg.in_channels * 9, rng));
  w.stem_bias = Parameter<T>(prefix + "stem.bias", Tensor<T>::zeros({cfg.width0}));
  w.down_conv = Parameter<T>(prefix + "down.conv", init::fan_in<T>({cfg.width1, cfg.width0, 3, 3}, cfg.width0 * 9, rng));
  w.up_conv = Parameter<T>(prefix + "up.conv", init::fan_in<T>({cfg.width0, cfg.width1, 3, 3}, cfg.width1 * 9, rng));
  for (const auto& site : unet_plan(cfg)) {
    const auto width = site.level == 0 ? cfg.width0 : cfg.width1;
    w.blocks.push_back(UNetBlockParams<T>::create(prefix + "blocks." + site.id, width, td, cfg.groups, cfg.heads, rng));
  }
  w.out_gn_gain = Parameter<T>(prefix + "out.gn.gain", Tensor<T>::ones({cfg.width0}));
  w.out_gn_bias = Parameter<T>(prefix + "out.gn.bias", Tensor<T>::zeros({cfg.width0}));
  w.out_conv = Parameter<T>(prefix + "out.conv", Tensor<T>::zeros({cfg.out_channels, cfg.width0, 3, 3}));
  w.out_bias = Parameter<T>(prefix + "out.bias", Tensor<T>::zeros({cfg.out_channels}));
  return w;
}

template <Real T>
UNetWeights<T> UNetWeights<T>::clone(const std::string& from_prefix, const std::string& to_prefix) const {
  UNetWeights copy = *this;
  copy.visit([&](Parameter<T>& p) {
    p = p.clone();
    if (!from_prefix.empty() || !to_prefix.empty()) {
      if (p.name.rfind(from_prefix, 0) == 0) p.name = to_prefix + p.name.substr(from_prefix.size());
    }
  });
  return copy;
}

template <Real T>
Var<T> unet_time_features(int t, const UNetWeights<T>& w) {
  const auto td = w.config.time_dim;
  auto freq = constant(timestep_embedding<T>(double(t), td).reshaped({1, td}));
  auto h = silu(add_row(matmul(freq, w.time_w1.var), w.time_b1.var));
  return silu(add_row(matmul(h, w.time_w2.var), w.time_b2.var));
}

template <Real T>
BackboneOutput<T> unet_forward(const BackboneInput<T>& in, const UNetWeights<T>& bg, const UNetWeights<T>& ref) {
  const auto& cfg = bg.config;
  check_timestep(in.t, cfg.max_timestep);
  if (in.noisy.shape().size() != 3 || in.noisy.dim(1) != cfg.image_size || in.noisy.dim(2) != cfg.image_size) {
    throw ShapeError("unet: expected " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                     " input, got " + shape_str(in.noisy.shape()));
  }
  const bool has_ref = in.reference.has_value();
  const bool shared = &bg == &ref;

  struct Streams {
    Var<T> bg, ref;
  } s;
  s.bg = constant(background_channels(in));
  if (has_ref) s.ref = constant(reference_channels(*in.reference));

  const auto t_bg = unet_time_features(in.t, bg);
  const auto t_ref = has_ref ? (shared ? t_bg : unet_time_features(in.t, ref)) : Var<T>();

  // Applies the same stage to both streams with their own weights.
  auto both = [&](auto&& stage) {
    s.bg = stage(s.bg, bg);
    if (has_ref) s.ref = stage(s.ref, ref);
  };

  both([](const Var<T>& x, const UNetWeights<T>& w) { return conv_bias(x, w.stem, w.stem_bias); });
  const Streams full_skip = s;
  both([](const Var<T>& x, const UNetWeights<T>&) { return avg_pool2(x); });

  auto down = [](const Var<T>& x, const UNetWeights<T>& w) { return avg_pool2(conv2d(x, w.down_conv.var)); };
  auto up = [](const Var<T>& x, const UNetWeights<T>& w) { return conv2d(upsample2(x), w.up_conv.var); };

  BackboneOutput<T> out;
  const auto sites = unet_plan(cfg);
  std::vector<Streams> skips(sites.size());
  int level = 0;
  bool descended = false;
  auto move_to = [&](int target, bool bg_only) {
    auto step = [&](auto&& stage) {
      if (bg_only) {
        s.bg = stage(s.bg, bg);
      } else {
        both(stage);
      }
    };
    if (target == 1 && level == 0) {
      step(down);
      level = 1;
      descended = true;
    } else if (target == 0 && level == 1) {
      step(up);
      level = 0;
    }
  };
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto& site = sites[i];
    if (!site.encoder) {
      // The decoder always starts from the lowest resolution.
      if (!descended) move_to(1, false);
      move_to(site.level, false);
      const auto& skip = skips[static_cast<std::size_t>(site.skip_from)];
      s.bg = add(s.bg, skip.bg);
      if (has_ref) s.ref = add(s.ref, skip.ref);
    } else {
      move_to(site.level, false);
    }
    auto block = unet_block_forward(s.bg, s.ref, t_bg, t_ref, bg.blocks[i], ref.blocks[i]);
    block.trace.layer_id = site.id;
    s.bg = block.y_bg;
    if (has_ref) s.ref = block.y_ref;
    out.traces.push_back(std::move(block.trace));
    if (site.encoder) skips[i] = s;
  }
  if (!descended) move_to(1, true);
  move_to(0, true);

  auto h = add(upsample2(s.bg), full_skip.bg);
  h = silu(group_norm(h, cfg.groups, bg.out_gn_gain.var, bg.out_gn_bias.var));
  out.eps = conv_bias(h, bg.out_conv, bg.out_bias);
  return out;
}

template Tensor<float> background_channels(const BackboneInput<float>&);
template Tensor<double> background_channels(const BackboneInput<double>&);
template Tensor<float> reference_channels(const Tensor<float>&);
template Tensor<double> reference_channels(const Tensor<double>&);

#define DSCOMP_INSTANTIATE_UNET(T)                                                                          \
  template struct UNetBlockParams<T>;                                                                       \
  template struct UNetWeights<T>;                                                                           \
  template Var<T> map_to_tokens(const Var<T>&);                                                             \
  template Var<T> tokens_to_map(const Var<T>&, std::int64_t, std::int64_t);                                 \
  template UNetBlockOutput<T> unet_block_forward(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                                 const UNetBlockParams<T>&, const UNetBlockParams<T>&);     \
  template Var<T> unet_time_features(int, const UNetWeights<T>&);                                           \
  template BackboneOutput<T> unet_forward(const BackboneInput<T>&, const UNetWeights<T>&, const UNetWeights<T>&);

DSCOMP_INSTANTIATE_UNET(float)
DSCOMP_INSTANTIATE_UNET(double)

}  // namespace dscomp
