#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include <gtest/gtest.h>

#include "dscomp/image_io.hpp"
#include "dscomp/synthbench.hpp"

using namespace dscomp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dscomp_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

Tensor32 l_mask() {
  Tensor32 m({1, 10, 10});
  for (int y = 2; y < 8; ++y) m.at(0, y, 2) = m.at(0, y, 3) = 1;
  for (int x = 2; x < 7; ++x) m.at(0, 7, x) = 1;
  return m;
}

double mask_sum(const Tensor32& m) {
  double s = 0;
  for (float v : m.data()) s += v;
  return s;
}

}  // namespace

TEST(Scene, SameSeedIsBitwiseIdentical) {
  SceneConfig cfg;
  auto a = generate_scene(cfg, 42), b = generate_scene(cfg, 42);
  EXPECT_EQ(a.gt, b.gt);
  EXPECT_EQ(a.bg, b.bg);
  EXPECT_EQ(a.ref, b.ref);
  EXPECT_EQ(a.mask_bg, b.mask_bg);
  EXPECT_EQ(a.mask_ref, b.mask_ref);
  EXPECT_EQ(a.pose, b.pose);
  EXPECT_NE(generate_scene(cfg, 43).gt, a.gt);
}

TEST(Scene, CopyPasteIdentityHoldsExactly) {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = generate_scene(cfg, seed);
    ASSERT_NO_THROW(s.validate());
    auto warped = warp_object(s.masked_ref(), s.mask_ref, s.pose);
    auto recon = apply_mask(s.bg, s.mask_bg);
    for (std::size_t i = 0; i < recon.numel(); ++i) recon[i] += warped.image[i];
    ASSERT_EQ(recon, s.gt) << "seed " << seed;
    // The hole is exactly the pasted object's support.
    ASSERT_EQ(s.hole(), warped.mask) << "seed " << seed;
    const double area = mask_sum(warped.mask) / double(cfg.size * cfg.size);
    EXPECT_GE(area, cfg.min_area);
    EXPECT_LE(area, cfg.max_area);
    EXPECT_LE(std::abs(s.pose.angle_deg), 45.0);
    EXPECT_GE(s.pose.scale, 0.6);
    EXPECT_LE(s.pose.scale, 1.4);
  }
}

TEST(Scene, ObjectColoursDifferFromBackground) {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto s = generate_scene(cfg, seed);
    const auto plane = static_cast<std::size_t>(cfg.size * cfg.size);
    for (std::size_t i = 0; i < plane; ++i) {
      if (s.mask_bg[i] != 0) continue;
      const std::array<float, 3> obj{s.gt[i], s.gt[plane + i], s.gt[2 * plane + i]};
      const std::array<float, 3> under{s.bg[i], s.bg[plane + i], s.bg[2 * plane + i]};
      EXPECT_NE(obj, under);
    }
  }
}

TEST(Scene, ImpossibleConstraintsFailAfterRetries) {
  SceneConfig cfg;
  cfg.min_area = 0.95;
  cfg.max_retries = 5;
  EXPECT_THROW(generate_scene(cfg, 1), std::runtime_error);
}

TEST(Augment, ZeroProbabilitiesAreIdentity) {
  auto s = generate_scene(SceneConfig{}, 3);
  AugmentationConfig cfg;
  cfg.p_flip = cfg.p_rotate = cfg.p_scale = cfg.p_crop = 0;
  auto out = augment_image(s.gt, s.mask_bg, cfg, 99);
  EXPECT_EQ(out.image, s.gt);
  EXPECT_EQ(out.mask, s.mask_bg);
}

TEST(Augment, FlipIsInvolution) {
  auto s = generate_scene(SceneConfig{}, 4);
  EXPECT_EQ(flip_horizontal(flip_horizontal(s.gt)), s.gt);
  AugmentationConfig cfg;
  cfg.p_flip = 1;
  cfg.p_rotate = cfg.p_scale = cfg.p_crop = 0;
  auto once = augment_image(s.gt, s.mask_bg, cfg, 1);
  auto twice = augment_image(once.image, once.mask, cfg, 2);
  EXPECT_EQ(twice.image, s.gt);
  EXPECT_EQ(twice.mask, s.mask_bg);
  EXPECT_EQ(once.image.at(0, 5, 0), s.gt.at(0, 5, 31));
}

TEST(Augment, CropKeepsAtLeastMinimumArea) {
  AugmentationConfig cfg;
  auto s = generate_scene(SceneConfig{}, 5);
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    auto out = augment_image(s.gt, s.mask_bg, cfg, seed);
    ASSERT_TRUE(out.record.cropped);
    EXPECT_GE(out.record.crop_ratio, 0.75);
    EXPECT_LE(out.record.crop_ratio, 1.0);
    if (out.record.rotated) EXPECT_LE(std::abs(out.record.angle_deg), 30.0);
    if (out.record.scaled) EXPECT_LE(std::abs(out.record.scale - 1), 0.2 + 1e-12);
  }
}

TEST(Augment, BranchRatesMatchTable) {
  AugmentationConfig cfg;
  Tensor32 img({3, 8, 8}), mask({1, 8, 8});
  int flip = 0, rot = 0, scale = 0;
  const int n = 10000;
  for (int seed = 0; seed < n; ++seed) {
    auto out = augment_image(img, mask, cfg, static_cast<std::uint64_t>(seed));
    flip += out.record.flipped;
    rot += out.record.rotated;
    scale += out.record.scaled;
  }
  EXPECT_NEAR(flip / double(n), 0.50, 0.02);
  EXPECT_NEAR(rot / double(n), 0.50, 0.02);
  EXPECT_NEAR(scale / double(n), 0.30, 0.02);
}

TEST(Augment, MaskStaysAlignedWithObject) {
  // A constant-colour square on black: away from the mask boundary, the image
  // is object colour exactly where the mask is set and black elsewhere.
  Tensor32 img({3, 32, 32}), mask({1, 32, 32});
  for (int y = 8; y < 24; ++y)
    for (int x = 10; x < 22; ++x) {
      mask.at(0, y, x) = 1;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = 200;
    }
  AugmentationConfig cfg;
  cfg.p_flip = cfg.p_rotate = cfg.p_scale = 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto out = augment_image(img, mask, cfg, seed);
    for (int y = 1; y < 31; ++y)
      for (int x = 1; x < 31; ++x) {
        const float m = out.mask.at(0, y, x);
        bool interior = true;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) interior &= out.mask.at(0, y + dy, x + dx) == m;
        if (!interior) continue;
        EXPECT_NEAR(out.image.at(0, y, x), m * 200.0f, 1e-3) << "seed " << seed << " at " << y << "," << x;
      }
  }
}

TEST(MaskAugment, BoundingBoxOfLShape) {
  auto box = bounding_box(l_mask());
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) EXPECT_EQ(box.at(0, y, x), (y >= 2 && y <= 7 && x >= 2 && x <= 6) ? 1.0f : 0.0f);
}

TEST(MaskAugment, KeepBranchIsIdentityAndEmptyForcesKeep) {
  AugmentationConfig cfg;
  cfg.mask_branch_p = {0, 0, 0, 1};
  auto m = l_mask();
  auto out = augment_mask(m, 7, cfg);
  EXPECT_EQ(out.branch, MaskBranch::Keep);
  EXPECT_EQ(out.mask, m);
  cfg.mask_branch_p = {0, 0, 1, 0};
  auto e = augment_mask(Tensor32({1, 10, 10}), 7, cfg);
  EXPECT_EQ(e.branch, MaskBranch::Keep);
  EXPECT_EQ(mask_sum(e.mask), 0.0);
}

TEST(MaskAugment, BranchFrequencies) {
  auto m = l_mask();
  std::array<int, 4> counts{};
  const int n = 10000;
  for (int seed = 0; seed < n; ++seed) ++counts[static_cast<std::size_t>(augment_mask(m, static_cast<std::uint64_t>(seed)).branch)];
  for (int c : counts) EXPECT_NEAR(c / double(n), 0.25, 0.02);
}

TEST(MaskAugment, MorphologyAndBlur) {
  Tensor32 dot({1, 9, 9});
  dot.at(0, 4, 4) = 1;
  EXPECT_EQ(mask_sum(dilate(dot, 1)), 9.0);
  EXPECT_EQ(mask_sum(dilate(dot, 3)), 49.0);
  EXPECT_EQ(mask_sum(erode(dilate(dot, 2), 2)), 1.0);
  auto blurred = blur_mask(dilate(dot, 3), 1.5, 0.5);
  EXPECT_EQ(blurred.at(0, 4, 4), 1.0f);
  EXPECT_EQ(blurred.at(0, 0, 0), 0.0f);
  for (float v : blurred.data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(Dataset, RoundTripIsBitwise) {
  const auto dir = scratch("roundtrip");
  auto samples = generate_dataset(SceneConfig{}, 100, 6);
  const auto manifest = write_dataset(samples, dir);
  std::ifstream in(manifest);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 6);
  auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].id, samples[i].id);
    EXPECT_EQ(back[i].gt, samples[i].gt);
    EXPECT_EQ(back[i].bg, samples[i].bg);
    EXPECT_EQ(back[i].ref, samples[i].ref);
    EXPECT_EQ(back[i].mask_bg, samples[i].mask_bg);
    EXPECT_EQ(back[i].mask_ref, samples[i].mask_ref);
    EXPECT_EQ(back[i].seed, samples[i].seed);
    EXPECT_EQ(back[i].pose, samples[i].pose);
  }
  auto raw = read_pgm(dir / (samples[0].id + "_mask_bg.pgm"));
  for (float v : raw.data()) EXPECT_TRUE(v == 0.0f || v == 255.0f);
  fs::remove_all(dir);
}

TEST(Dataset, MissingDirectoryIsAnIoError) {
  EXPECT_THROW(read_dataset("/nonexistent/dscomp"), IoError);
}

TEST(ImageIo, PpmHeaderCommentsAndErrors) {
  const auto dir = scratch("ppm");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "a.ppm", std::ios::binary);
    out << "P6\n# comment\n2 1\n255\n";
    const unsigned char px[6] = {1, 2, 3, 250, 251, 252};
    out.write(reinterpret_cast<const char*>(px), 6);
  }
  auto img = read_ppm(dir / "a.ppm");
  EXPECT_EQ(img.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(img.at(0, 0, 1), 250.0f);
  EXPECT_EQ(img.at(2, 0, 0), 3.0f);
  EXPECT_THROW(read_pgm(dir / "a.ppm"), IoError);
  {
    std::ofstream out(dir / "b.ppm", std::ios::binary);
    out << "P6\n4 4\n255\n" << "abc";
  }
  EXPECT_THROW(read_ppm(dir / "b.ppm"), IoError);
  fs::remove_all(dir);
}
