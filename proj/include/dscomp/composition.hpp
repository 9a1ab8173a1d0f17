#pragma once

#include <cstdint>

#include "dscomp/tensor.hpp"

namespace dscomp {

/// Placement of the reference object in the target frame: rotate by angle
/// (degrees) and scale about the reference object's centre, then move that
/// centre to (cx, cy).
struct Pose {
  double angle_deg = 0;
  double scale = 1;
  double cx = 0, cy = 0;   // destination centre, pixels
  double src_cx = 0, src_cy = 0;  // object centre in the reference frame

  bool operator==(const Pose&) const = default;
};

/// One training/evaluation example. Images are [3 x S x S] holding integer
/// pixel values 0..255; masks are [1 x S x S] with entries 0 or 1.
/// mask_bg is 1 where the background is kept and 0 in the placement hole.
struct CompositionSample {
  std::string id;
  Tensor32 gt, bg, ref;
  Tensor32 mask_bg, mask_ref;
  Pose pose;
  std::uint64_t seed = 0;

  std::int64_t size() const { return gt.dim(1); }
  Tensor32 hole() const;             // 1 - mask_bg
  Tensor32 masked_bg() const;        // mask_bg * gt
  Tensor32 masked_ref() const;       // mask_ref * ref
  /// Throws ShapeError unless all fields are consistently shaped and masks binary.
  void validate() const;
};

/// Pixel values 0..255 to the model's [-1, 1] range and back. to_pixels rounds
/// and clamps to integers.
Tensor32 to_model(const Tensor32& pixels);
Tensor32 to_pixels(const Tensor32& model);

/// Elementwise product of a [C x H x W] image with a [1 x H x W] mask.
Tensor32 apply_mask(const Tensor32& img, const Tensor32& mask);
Tensor32 complement(const Tensor32& mask);

}  // namespace dscomp
