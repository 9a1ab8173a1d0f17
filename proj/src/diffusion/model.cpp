#include <type_traits>

#include "dscomp/diffusion.hpp"

namespace dscomp {

namespace {

template <typename Weights>
StreamPair<Weights> make_pair(Weights bg, Variant variant) {
  StreamPair<Weights> pair{std::move(bg), nullptr};
  if (variant != Variant::Shared) {
    pair.ref = std::make_unique<Weights>(pair.bg.clone("", "ref."));
    if (variant == Variant::DualFrozen) pair.ref->visit([](Parameter<float>& p) { p.set_trainable(false); });
  }
  return pair;
}

}  // namespace

CompositionModel CompositionModel::build(const ModelSpec& spec) {
  CompositionModel m;
  m.spec_ = spec;
  if (spec.kind == BackboneKind::UNet) {
    m.weights_ = make_pair(UNetWeights<float>::create(spec.unet, spec.seed), spec.variant);
  } else {
    m.weights_ = make_pair(DiTWeights<float>::create(spec.dit, spec.seed), spec.variant);
  }
  return m;
}

BackboneOutput<float> CompositionModel::predict(const BackboneInput<float>& in) const {
  return std::visit(
      [&](const auto& pair) -> BackboneOutput<float> {
        using W = std::decay_t<decltype(pair.bg)>;
        if constexpr (std::is_same_v<W, UNetWeights<float>>) {
          return unet_forward(in, pair.bg, pair.reference());
        } else {
          return dit_forward(in, pair.bg, pair.reference());
        }
      },
      weights_);
}

ParameterRefs<float> CompositionModel::background_parameters() {
  return std::visit([](auto& pair) { return pair.bg.parameters(); }, weights_);
}

ParameterRefs<float> CompositionModel::reference_parameters() {
  return std::visit([](auto& pair) { return pair.ref ? pair.ref->parameters() : ParameterRefs<float>{}; }, weights_);
}

ParameterRefs<float> CompositionModel::parameters() {
  auto all = background_parameters();
  for (auto* p : reference_parameters()) all.push_back(p);
  return all;
}

ParameterRefs<float> CompositionModel::trainable_parameters() {
  ParameterRefs<float> out;
  for (auto* p : parameters())
    if (p->trainable()) out.push_back(p);
  return out;
}

Parameter<float>* CompositionModel::find(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

int CompositionModel::depth() const {
  return spec_.kind == BackboneKind::UNet ? spec_.unet.depth : spec_.dit.depth;
}

int CompositionModel::max_timestep() const {
  return spec_.kind == BackboneKind::UNet ? spec_.unet.max_timestep : spec_.dit.max_timestep;
}

std::int64_t CompositionModel::image_size() const {
  return spec_.kind == BackboneKind::UNet ? spec_.unet.image_size : spec_.dit.image_size;
}

BackboneInput<float> make_input(const CompositionSample& sample, const Tensor32& noisy, int t, bool with_reference) {
  BackboneInput<float> in;
  in.noisy = noisy;
  in.mask = sample.mask_bg;
  in.masked_bg = apply_mask(to_model(sample.gt), sample.mask_bg);
  if (with_reference) in.reference = apply_mask(to_model(sample.ref), sample.mask_ref);
  in.t = t;
  return in;
}

}  // namespace dscomp
