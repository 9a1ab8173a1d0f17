#include <cmath>
#include <stdexcept>

#include "dscomp/diffusion.hpp"

namespace dscomp {

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule: steps must be positive");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.betas.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha_bars.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : double(t - 1) / double(steps - 1);
    s.betas[t] = beta_start + frac * (beta_end - beta_start);
    s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - s.betas[t]);
  }
  return s;
}

NoiseSchedule make_desk_schedule(int steps) {
  if (steps < 1 || steps > 1000) throw std::invalid_argument("desk schedule: steps must lie in [1, 1000]");
  const double stretch = 1000.0 / steps;
  return make_schedule(steps, 1e-4 * stretch, std::min(0.02 * stretch, 0.999));
}

Tensor32 standard_normal(Shape shape, std::mt19937_64& rng) {
  Tensor32 t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor32 add_noise(const Tensor32& x0, double alpha_bar, const Tensor32& eps) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("add_noise: noise " + shape_str(eps.shape()) + " does not match image " + shape_str(x0.shape()));
  }
  const float a = static_cast<float>(std::sqrt(alpha_bar));
  const float b = static_cast<float>(std::sqrt(1.0 - alpha_bar));
  Tensor32 out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor32 add_noise(const Tensor32& x0, int t, const Tensor32& eps, const NoiseSchedule& s) {
  if (t < 0 || t > s.steps) {
    throw std::out_of_range("add_noise: timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.steps) +
                            "]");
  }
  if (t == 0) {
    if (x0.shape() != eps.shape()) throw ShapeError("add_noise: noise shape does not match image");
    return x0;
  }
  return add_noise(x0, s.alpha_bar(t), eps);
}

std::string to_string(BackboneKind k) { return k == BackboneKind::UNet ? "unet" : "dit"; }

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Shared: return "shared";
    case Variant::DualFrozen: return "dual_frozen";
    case Variant::DualTrainable: return "dual_trainable";
  }
  return "?";
}

BackboneKind parse_backbone(const std::string& s) {
  if (s == "unet") return BackboneKind::UNet;
  if (s == "dit") return BackboneKind::DiT;
  throw std::invalid_argument("unknown backbone '" + s + "' (expected unet or dit)");
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::Shared, Variant::DualFrozen, Variant::DualTrainable})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + s + "' (expected shared, dual_frozen or dual_trainable)");
}

}  // namespace dscomp
