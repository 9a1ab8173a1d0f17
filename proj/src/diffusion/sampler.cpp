#include <algorithm>
#include <cmath>

#include "dscomp/diffusion.hpp"

namespace dscomp {

InpaintRequest InpaintRequest::from(const CompositionSample& sample) {
  return {sample.masked_bg(), sample.mask_bg, sample.masked_ref(), sample.mask_ref};
}

std::vector<int> sampling_timesteps(int schedule_steps, int steps) {
  if (steps < 1 || steps > schedule_steps) {
    throw std::invalid_argument("sampler: steps must lie in [1, " + std::to_string(schedule_steps) + "], got " +
                                std::to_string(steps));
  }
  std::vector<int> ts;
  for (int k = steps; k >= 0; --k) {
    ts.push_back(static_cast<int>(std::lround(double(k) * schedule_steps / steps)));
  }
  return ts;
}

namespace {

// mask * known + (1 - mask) * x, per channel.
void composite(Tensor32& x, const Tensor32& known, const Tensor32& mask) {
  const auto plane = static_cast<std::size_t>(mask.numel());
  for (std::size_t c = 0; c < x.numel() / plane; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      auto& v = x[c * plane + i];
      v = mask[i] * known[c * plane + i] + (1.0f - mask[i]) * v;
    }
}

}  // namespace

Tensor32 inpaint_sample(const InpaintRequest& req, const Denoiser& model, const NoiseSchedule& s, int steps,
                        std::mt19937_64& rng) {
  NoGradGuard no_grad;
  const auto ts = sampling_timesteps(s.steps, steps);
  const auto known = apply_mask(to_model(req.masked_bg), req.mask_bg);
  const auto ref = apply_mask(to_model(req.masked_ref), req.mask_ref);

  auto x = standard_normal(known.shape(), rng);
  composite(x, add_noise(known, ts.front(), standard_normal(known.shape(), rng), s), req.mask_bg);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const int t = ts[i], t_prev = ts[i + 1];
    BackboneInput<float> in{x, req.mask_bg, known, std::nullopt, t};
    if (model.uses_reference()) in.reference = ref;
    const auto eps = model.predict(in).eps.value();
    if (!eps.all_finite()) throw NumericalError("sampler: non-finite prediction at t=" + std::to_string(t));

    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t_prev);
    const float sa = float(std::sqrt(ab)), sb = float(std::sqrt(1 - ab));
    const float pa = float(std::sqrt(ab_prev)), pb = float(std::sqrt(1 - ab_prev));
    for (std::size_t j = 0; j < x.numel(); ++j) {
      const float x0 = std::clamp((x[j] - sb * eps[j]) / sa, -1.0f, 1.0f);
      x[j] = pa * x0 + pb * eps[j];
    }
    composite(x, add_noise(known, t_prev, standard_normal(known.shape(), rng), s), req.mask_bg);
  }
  return x;
}

}  // namespace dscomp
