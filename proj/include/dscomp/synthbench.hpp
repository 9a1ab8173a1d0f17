#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dscomp/composition.hpp"

namespace dscomp {

enum class BackgroundFamily { Gradient, Stripes, Blobs };
enum class ObjectFamily { Polygon, Ring, Cross };

struct SceneConfig {
  std::int64_t size = 32;
  double max_rotation_deg = 45;
  double min_scale = 0.6, max_scale = 1.4;
  double min_area = 0.04, max_area = 0.40;  // warped object area as a fraction of the frame
  int max_retries = 200;
};

/// Renders one sample. The object is drawn centred in the reference frame
/// and placed into the background by a nearest-neighbour pose warp, so
/// gt = mask_bg * bg + warp(mask_ref * ref) holds exactly. Throws
/// std::runtime_error if no valid pose is found within max_retries.
CompositionSample generate_scene(const SceneConfig& cfg, std::uint64_t seed);

/// Samples with consecutive seeds seed, seed + 1, ...
std::vector<CompositionSample> generate_dataset(const SceneConfig& cfg, std::uint64_t seed, int count);

struct WarpedObject {
  Tensor32 image;  // zero outside the support
  Tensor32 mask;
};

/// Nearest-neighbour placement of a masked reference object under `pose`.
WarpedObject warp_object(const Tensor32& masked_ref, const Tensor32& mask_ref, const Pose& pose);

struct AugmentationConfig {
  double p_flip = 0.5;
  double p_rotate = 0.5, max_angle_deg = 30;
  double p_scale = 0.3, scale_range = 0.2;
  double p_crop = 1.0, min_crop_ratio = 0.75;
  // Mask branches in order: perturb (dilate/erode), blur, bounding box, keep.
  std::array<double, 4> mask_branch_p{0.25, 0.25, 0.25, 0.25};
  int min_radius = 1, max_radius = 3;
  double blur_sigma = 1.5, blur_threshold = 0.5;
};

struct ImageAugmentation {
  bool flipped = false;
  bool rotated = false;
  double angle_deg = 0;
  bool scaled = false;
  double scale = 1;
  bool cropped = false;
  double crop_ratio = 1;  // retained area fraction
};

struct AugmentedImage {
  Tensor32 image, mask;
  ImageAugmentation record;
};

/// Independent Bernoulli draws applied in order: flip, rotation, scaling,
/// cropping. Images resample bilinearly, masks by nearest neighbour.
AugmentedImage augment_image(const Tensor32& img, const Tensor32& mask, const AugmentationConfig& cfg,
                             std::uint64_t seed);

enum class MaskBranch { Perturb, Blur, BoundingBox, Keep };
std::string to_string(MaskBranch b);

struct AugmentedMask {
  Tensor32 mask;
  MaskBranch branch = MaskBranch::Keep;
};

/// One of four perturbations chosen by cfg.mask_branch_p. An empty mask is
/// returned unchanged with the Keep branch.
AugmentedMask augment_mask(const Tensor32& mask, std::uint64_t seed, const AugmentationConfig& cfg = {});

// Building blocks, exposed for tests.
Tensor32 flip_horizontal(const Tensor32& img);
Tensor32 dilate(const Tensor32& mask, int radius);
Tensor32 erode(const Tensor32& mask, int radius);
Tensor32 bounding_box(const Tensor32& mask);
Tensor32 blur_mask(const Tensor32& mask, double sigma, double threshold);

/// Writes images as PPM, masks as PGM (0/255), and manifest.jsonl with one
/// record per sample. Returns the manifest path.
std::filesystem::path write_dataset(const std::vector<CompositionSample>& samples, const std::filesystem::path& dir);
std::vector<CompositionSample> read_dataset(const std::filesystem::path& dir);

}  // namespace dscomp
