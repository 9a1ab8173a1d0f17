#include "dscomp/dit.hpp"

#include <stdexcept>

#include "dscomp/embedding.hpp"

namespace dscomp {

void DiTConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("dit config: " + m); };
  if (patch < 1 || image_size < patch || image_size % patch != 0) fail("image_size must be a multiple of patch");
  if (depth < 1) fail("depth must be at least 1");
  if (width % heads != 0) fail("width must be divisible by heads");
  if (width % 4 != 0) fail("width must be divisible by 4 for the position table");
  if (time_dim % 2 != 0) fail("time_dim must be even");
  if (max_timestep < 1) fail("max_timestep must be positive");
}

namespace {

struct PatchGeometry {
  std::int64_t c, h, w, p, gh, gw;
  std::int64_t features() const { return c * p * p; }
  std::int64_t tokens() const { return gh * gw; }
  // Offset into the [C x H x W] image of feature f of token r.
  std::int64_t pixel(std::int64_t r, std::int64_t f) const {
    const auto gy = r / gw, gx = r % gw;
    const auto ch = f / (p * p), py = (f / p) % p, px = f % p;
    return (ch * h + gy * p + py) * w + gx * p + px;
  }
};

PatchGeometry geometry(std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t p) {
  if (p < 1) throw ShapeError("patch size must be positive, got " + std::to_string(p));
  if (h % p != 0 || w % p != 0) {
    throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                     std::to_string(p));
  }
  return {c, h, w, p, h / p, w / p};
}

PatchGeometry image_geometry(const Shape& s, std::int64_t p) {
  if (s.size() != 3) throw ShapeError("patchify: expected [C x H x W], got " + shape_str(s));
  return geometry(s[0], s[1], s[2], p);
}

PatchGeometry token_geometry(const Shape& s, std::int64_t p, std::int64_t c, std::int64_t h, std::int64_t w) {
  auto g = geometry(c, h, w, p);
  if (s.size() != 2 || s[0] != g.tokens() || s[1] != g.features()) {
    throw ShapeError("unpatchify: expected [" + std::to_string(g.tokens()) + " x " + std::to_string(g.features()) +
                     "] tokens, got " + shape_str(s));
  }
  return g;
}

template <Real T>
Tensor<T> gather(const Tensor<T>& img, const PatchGeometry& g) {
  Tensor<T> out({g.tokens(), g.features()});
  for (std::int64_t r = 0; r < g.tokens(); ++r)
    for (std::int64_t f = 0; f < g.features(); ++f) out.at(r, f) = img[g.pixel(r, f)];
  return out;
}

template <Real T>
void scatter(const Tensor<T>& tokens, const PatchGeometry& g, Tensor<T>& img, bool accumulate) {
  for (std::int64_t r = 0; r < g.tokens(); ++r)
    for (std::int64_t f = 0; f < g.features(); ++f) {
      auto& dst = img[g.pixel(r, f)];
      dst = accumulate ? dst + tokens.at(r, f) : tokens.at(r, f);
    }
}

}  // namespace

template <Real T>
Tensor<T> patchify(const Tensor<T>& img, std::int64_t patch) {
  return gather(img, image_geometry(img.shape(), patch));
}

template <Real T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::int64_t patch, std::int64_t channels, std::int64_t height,
                     std::int64_t width) {
  const auto g = token_geometry(tokens.shape(), patch, channels, height, width);
  Tensor<T> img({channels, height, width});
  scatter(tokens, g, img, false);
  return img;
}

template <Real T>
Var<T> patchify(const Var<T>& img, std::int64_t patch) {
  const auto g = image_geometry(img.shape(), patch);
  return Var<T>::make(gather(img.value(), g), {img}, [g](Node<T>& node) {
    auto& in = *node.inputs[0];
    if (in.requires_grad) scatter(node.grad, g, in.grad_buffer(), true);
  });
}

template <Real T>
Var<T> unpatchify(const Var<T>& tokens, std::int64_t patch, std::int64_t channels, std::int64_t height,
                  std::int64_t width) {
  const auto g = token_geometry(tokens.shape(), patch, channels, height, width);
  Tensor<T> img({channels, height, width});
  scatter(tokens.value(), g, img, false);
  return Var<T>::make(std::move(img), {tokens}, [g](Node<T>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    auto& dst = in.grad_buffer();
    const auto back = gather(node.grad, g);
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += back[i];
  });
}

template <Real T>
DiTBlockParams<T> DiTBlockParams<T>::create(const std::string& prefix, std::int64_t width, std::int64_t cond_dim,
                                            int heads, std::mt19937_64& rng) {
  DiTBlockParams p;
  p.mod_w = Parameter<T>(prefix + ".mod.w", Tensor<T>::zeros({cond_dim, 3 * width}));
  p.mod_b = Parameter<T>(prefix + ".mod.b", Tensor<T>::zeros({3 * width}));
  p.attn = AttentionParams<T>::create(prefix + ".attn", width, heads, rng);
  p.w_m = Parameter<T>(prefix + ".mlp.w", init::fan_in<T>({width, 4 * width}, width, rng));
  p.w_o = Parameter<T>(prefix + ".out.w", init::fan_in<T>({5 * width, width}, 5 * width, rng));
  return p;
}

template <Real T>
AdaLNOutput<T> adaln_zero(const Var<T>& h, const Var<T>& tau, const DiTBlockParams<T>& p) {
  const auto d = p.width();
  if (h.shape().size() != 2 || h.dim(1) != d) {
    throw ShapeError("adaln_zero: expected [T x " + std::to_string(d) + "] tokens, got " + shape_str(h.shape()));
  }
  auto mod = add_row(matmul(silu(tau), p.mod_w.var), p.mod_b.var);  // [1 x 3d]
  auto shift = slice(mod, 1, 0, d);
  auto scl = slice(mod, 1, d, 2 * d);
  auto gate = slice(mod, 1, 2 * d, 3 * d);
  auto h_tilde = add_row(mul_row(layer_norm(h), add_scalar(scl, T(1))), shift);
  return {h_tilde, gate};
}

template <Real T>
DiTBlockOutput<T> dit_block_forward(const Var<T>& h_bg, const Var<T>& h_ref, const Var<T>& tau_bg,
                                    const Var<T>& tau_ref, const DiTBlockParams<T>& p_bg,
                                    const DiTBlockParams<T>& p_ref) {
  const bool has_ref = h_ref.defined();
  if (has_ref && h_ref.shape() != h_bg.shape()) {
    throw ShapeError("dit block: stream shapes differ, " + shape_str(h_bg.shape()) + " vs " +
                     shape_str(h_ref.shape()));
  }
  auto fuse = [](const Var<T>& h, const AdaLNOutput<T>& mod, const Var<T>& attn, const DiTBlockParams<T>& p) {
    auto m = gelu(matmul(mod.h_tilde, p.w_m.var));
    auto u = matmul(concat<T>({attn, m}, 1), p.w_o.var);
    return add(h, mul_row(u, mod.gate));
  };

  DiTBlockOutput<T> out;
  Var<T> normed_ref;
  if (has_ref) {
    auto mod_ref = adaln_zero(h_ref, tau_ref, p_ref);
    normed_ref = mod_ref.h_tilde;
    auto attn_ref = self_attention(normed_ref, p_ref.attn);
    out.h_ref = fuse(h_ref, mod_ref, attn_ref, p_ref);
    out.trace.ref = StreamFeatures<T>{StreamTag::Reference, normed_ref, attn_ref, out.h_ref};
  }
  auto mod_bg = adaln_zero(h_bg, tau_bg, p_bg);
  auto attn_bg = mixture_attention(mod_bg.h_tilde, normed_ref, p_bg.attn);
  out.h_bg = fuse(h_bg, mod_bg, attn_bg, p_bg);
  out.trace.bg = StreamFeatures<T>{StreamTag::Background, mod_bg.h_tilde, attn_bg, out.h_bg};
  return out;
}

template <Real T>
DiTWeights<T> DiTWeights<T>::create(const DiTConfig& cfg, std::uint64_t seed, const std::string& prefix) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DiTWeights w;
  w.config = cfg;
  const auto d = cfg.width, td = cfg.time_dim;
  const auto in_feat = cfg.in_channels * cfg.patch * cfg.patch;
  const auto out_feat = cfg.out_channels * cfg.patch * cfg.patch;
  w.patch_w = Parameter<T>(prefix + "patch.w", init::fan_in<T>({in_feat, d}, in_feat, rng));
  w.patch_b = Parameter<T>(prefix + "patch.b", Tensor<T>::zeros({d}));
  w.time_w1 = Parameter<T>(prefix + "time.w1", init::fan_in<T>({td, d}, td, rng));
  w.time_b1 = Parameter<T>(prefix + "time.b1", Tensor<T>::zeros({d}));
  w.time_w2 = Parameter<T>(prefix + "time.w2", init::fan_in<T>({d, d}, d, rng));
  w.time_b2 = Parameter<T>(prefix + "time.b2", Tensor<T>::zeros({d}));
  for (int i = 0; i < cfg.depth; ++i) {
    w.blocks.push_back(DiTBlockParams<T>::create(prefix + "blocks.b" + std::to_string(i), d, d, cfg.heads, rng));
  }
  w.final_w = Parameter<T>(prefix + "final.w", Tensor<T>::zeros({d, out_feat}));
  w.final_b = Parameter<T>(prefix + "final.b", Tensor<T>::zeros({out_feat}));
  w.positions = sincos_2d_table<T>(cfg.grid(), cfg.grid(), d);
  return w;
}

template <Real T>
DiTWeights<T> DiTWeights<T>::clone(const std::string& from_prefix, const std::string& to_prefix) const {
  DiTWeights copy = *this;
  copy.visit([&](Parameter<T>& p) {
    p = p.clone();
    if (!from_prefix.empty() || !to_prefix.empty()) {
      if (p.name.rfind(from_prefix, 0) == 0) p.name = to_prefix + p.name.substr(from_prefix.size());
    }
  });
  return copy;
}

template <Real T>
Var<T> dit_time_features(int t, const DiTWeights<T>& w) {
  const auto td = w.config.time_dim;
  auto freq = constant(timestep_embedding<T>(double(t), td).reshaped({1, td}));
  auto h = silu(add_row(matmul(freq, w.time_w1.var), w.time_b1.var));
  return add_row(matmul(h, w.time_w2.var), w.time_b2.var);
}

template <Real T>
Var<T> dit_embed(const Tensor<T>& channels, const DiTWeights<T>& w) {
  auto tokens = constant(patchify(channels, w.config.patch));
  return add(add_row(matmul(tokens, w.patch_w.var), w.patch_b.var), constant(w.positions));
}

template <Real T>
Var<T> dit_head(const Var<T>& tokens, const DiTWeights<T>& w) {
  const auto& cfg = w.config;
  auto y = add_row(matmul(layer_norm(tokens), w.final_w.var), w.final_b.var);
  return unpatchify(y, cfg.patch, cfg.out_channels, cfg.image_size, cfg.image_size);
}

template <Real T>
BackboneOutput<T> dit_forward(const BackboneInput<T>& in, const DiTWeights<T>& bg, const DiTWeights<T>& ref) {
  const auto& cfg = bg.config;
  check_timestep(in.t, cfg.max_timestep);
  if (in.noisy.shape().size() != 3 || in.noisy.dim(1) != cfg.image_size || in.noisy.dim(2) != cfg.image_size) {
    throw ShapeError("dit: expected " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                     " input, got " + shape_str(in.noisy.shape()));
  }
  const bool has_ref = in.reference.has_value();
  const bool shared = &bg == &ref;

  auto h_bg = dit_embed(background_channels(in), bg);
  Var<T> h_ref;
  if (has_ref) h_ref = dit_embed(reference_channels(*in.reference), ref);
  const auto tau_bg = dit_time_features(in.t, bg);
  const auto tau_ref = has_ref ? (shared ? tau_bg : dit_time_features(in.t, ref)) : Var<T>();

  BackboneOutput<T> out;
  for (std::size_t i = 0; i < bg.blocks.size(); ++i) {
    auto block = dit_block_forward(h_bg, h_ref, tau_bg, tau_ref, bg.blocks[i], ref.blocks[i]);
    block.trace.layer_id = "b" + std::to_string(i);
    block.trace.grid_h = block.trace.grid_w = cfg.grid();
    h_bg = block.h_bg;
    if (has_ref) h_ref = block.h_ref;
    out.traces.push_back(std::move(block.trace));
  }
  out.eps = dit_head(h_bg, bg);
  return out;
}

#define DSCOMP_INSTANTIATE_DIT(T)                                                                            \
  template struct DiTBlockParams<T>;                                                                         \
  template struct DiTWeights<T>;                                                                             \
  template Tensor<T> patchify(const Tensor<T>&, std::int64_t);                                               \
  template Tensor<T> unpatchify(const Tensor<T>&, std::int64_t, std::int64_t, std::int64_t, std::int64_t);   \
  template Var<T> patchify(const Var<T>&, std::int64_t);                                                     \
  template Var<T> unpatchify(const Var<T>&, std::int64_t, std::int64_t, std::int64_t, std::int64_t);         \
  template AdaLNOutput<T> adaln_zero(const Var<T>&, const Var<T>&, const DiTBlockParams<T>&);                \
  template DiTBlockOutput<T> dit_block_forward(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,   \
                                               const DiTBlockParams<T>&, const DiTBlockParams<T>&);          \
  template Var<T> dit_time_features(int, const DiTWeights<T>&);                                              \
  template Var<T> dit_embed(const Tensor<T>&, const DiTWeights<T>&);                                         \
  template Var<T> dit_head(const Var<T>&, const DiTWeights<T>&);                                             \
  template BackboneOutput<T> dit_forward(const BackboneInput<T>&, const DiTWeights<T>&, const DiTWeights<T>&);

DSCOMP_INSTANTIATE_DIT(float)
DSCOMP_INSTANTIATE_DIT(double)

}  // namespace dscomp
