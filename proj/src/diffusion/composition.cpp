#include "dscomp/composition.hpp"

#include <algorithm>
#include <cmath>

namespace dscomp {

Tensor32 apply_mask(const Tensor32& img, const Tensor32& mask) {
  const auto& s = img.shape();
  if (s.size() != 3 || mask.shape() != Shape{1, s[1], s[2]}) {
    throw ShapeError("apply_mask: mask " + shape_str(mask.shape()) + " does not fit image " + shape_str(s));
  }
  Tensor32 out = img;
  const auto plane = static_cast<std::size_t>(s[1] * s[2]);
  for (std::size_t c = 0; c < static_cast<std::size_t>(s[0]); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= mask[i];
  return out;
}

Tensor32 complement(const Tensor32& mask) {
  Tensor32 out = mask;
  for (auto& v : out.data()) v = 1.0f - v;
  return out;
}

Tensor32 CompositionSample::hole() const { return complement(mask_bg); }
Tensor32 CompositionSample::masked_bg() const { return apply_mask(gt, mask_bg); }
Tensor32 CompositionSample::masked_ref() const { return apply_mask(ref, mask_ref); }

void CompositionSample::validate() const {
  const auto& s = gt.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != s[2]) throw ShapeError("sample " + id + ": gt must be [3 x S x S]");
  if (bg.shape() != s || ref.shape() != s) throw ShapeError("sample " + id + ": image shapes differ");
  const Shape ms{1, s[1], s[2]};
  if (mask_bg.shape() != ms || mask_ref.shape() != ms) throw ShapeError("sample " + id + ": mask shapes differ");
  for (const auto* m : {&mask_bg, &mask_ref})
    for (float v : m->data())
      if (v != 0.0f && v != 1.0f) throw ShapeError("sample " + id + ": masks must be binary");
}

Tensor32 to_model(const Tensor32& pixels) {
  Tensor32 out = pixels;
  for (auto& v : out.data()) v = v / 127.5f - 1.0f;
  return out;
}

Tensor32 to_pixels(const Tensor32& model) {
  Tensor32 out = model;
  for (auto& v : out.data()) v = std::clamp(std::round((v + 1.0f) * 127.5f), 0.0f, 255.0f);
  return out;
}

}  // namespace dscomp
