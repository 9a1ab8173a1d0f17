#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "dscomp/synthbench.hpp"

namespace dscomp {

namespace {

using InverseMap = std::function<std::array<double, 2>(double x, double y)>;

// Resamples every channel through an inverse coordinate map; outside samples read 0.
Tensor32 resample(const Tensor32& img, const InverseMap& inv, bool bilinear) {
  const auto ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor32 out(img.shape());
  auto tap = [&](std::int64_t c, std::int64_t y, std::int64_t x) {
    return (x < 0 || y < 0 || x >= w || y >= h) ? 0.0f : img.at(c, y, x);
  };
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto [sx, sy] = inv(double(x), double(y));
      if (!bilinear) {
        const auto ix = static_cast<std::int64_t>(std::lround(sx)), iy = static_cast<std::int64_t>(std::lround(sy));
        for (std::int64_t c = 0; c < ch; ++c) out.at(c, y, x) = tap(c, iy, ix);
        continue;
      }
      const double fx = std::floor(sx), fy = std::floor(sy);
      const float ax = float(sx - fx), ay = float(sy - fy);
      const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
      for (std::int64_t c = 0; c < ch; ++c) {
        const float top = (1 - ax) * tap(c, y0, x0) + ax * tap(c, y0, x0 + 1);
        const float bot = (1 - ax) * tap(c, y0 + 1, x0) + ax * tap(c, y0 + 1, x0 + 1);
        out.at(c, y, x) = (1 - ay) * top + ay * bot;
      }
    }
  return out;
}

void check_pair(const Tensor32& img, const Tensor32& mask) {
  const auto& s = img.shape();
  if (s.size() != 3 || mask.shape() != Shape{1, s[1], s[2]}) {
    throw ShapeError("augment: mask " + shape_str(mask.shape()) + " not aligned with image " + shape_str(s));
  }
}

bool empty(const Tensor32& mask) {
  return std::all_of(mask.data().begin(), mask.data().end(), [](float v) { return v == 0.0f; });
}

Tensor32 morph(const Tensor32& mask, int radius, bool grow) {
  const auto h = mask.dim(1), w = mask.dim(2);
  Tensor32 out(mask.shape());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      bool any = false, all = true;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const auto yy = y + dy, xx = x + dx;
          const bool on = yy >= 0 && xx >= 0 && yy < h && xx < w && mask.at(0, yy, xx) != 0.0f;
          any |= on;
          all &= on;
        }
      out.at(0, y, x) = (grow ? any : all) ? 1.0f : 0.0f;
    }
  return out;
}

}  // namespace

Tensor32 flip_horizontal(const Tensor32& img) {
  const auto w = img.dim(2);
  return resample(img, [w](double x, double y) { return std::array<double, 2>{double(w - 1) - x, y}; }, false);
}

Tensor32 dilate(const Tensor32& mask, int radius) { return morph(mask, radius, true); }
Tensor32 erode(const Tensor32& mask, int radius) { return morph(mask, radius, false); }

Tensor32 bounding_box(const Tensor32& mask) {
  const auto h = mask.dim(1), w = mask.dim(2);
  std::int64_t x0 = w, x1 = -1, y0 = h, y1 = -1;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      if (mask.at(0, y, x) != 0.0f) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  Tensor32 out(mask.shape());
  for (std::int64_t y = y0; y <= y1; ++y)
    for (std::int64_t x = x0; x <= x1; ++x) out.at(0, y, x) = 1.0f;
  return out;
}

Tensor32 blur_mask(const Tensor32& mask, double sigma, double threshold) {
  const auto h = mask.dim(1), w = mask.dim(2);
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double z = 0;
  for (int i = -r; i <= r; ++i) z += k[static_cast<std::size_t>(i + r)] = std::exp(-i * i / (2 * sigma * sigma));
  for (auto& v : k) v /= z;
  std::vector<double> tmp(static_cast<std::size_t>(h * w)), acc(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) {
        const auto xx = x + i;
        if (xx >= 0 && xx < w) s += k[static_cast<std::size_t>(i + r)] * mask.at(0, y, xx);
      }
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  Tensor32 out(mask.shape());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) {
        const auto yy = y + i;
        if (yy >= 0 && yy < h) s += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yy * w + x)];
      }
      out.at(0, y, x) = s >= threshold ? 1.0f : 0.0f;
    }
  return out;
}

std::string to_string(MaskBranch b) {
  switch (b) {
    case MaskBranch::Perturb: return "perturb";
    case MaskBranch::Blur: return "blur";
    case MaskBranch::BoundingBox: return "bbox";
    case MaskBranch::Keep: return "keep";
  }
  return "?";
}

AugmentedImage augment_image(const Tensor32& img, const Tensor32& mask, const AugmentationConfig& cfg,
                             std::uint64_t seed) {
  check_pair(img, mask);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentedImage out{img, mask, {}};
  const double cx = (img.dim(2) - 1) / 2.0, cy = (img.dim(1) - 1) / 2.0;
  // Geometric steps compose into one inverse map so the image is interpolated once.
  std::vector<InverseMap> steps;
  auto apply = [&](InverseMap inv) { steps.push_back(std::move(inv)); };

  // Every draw is taken regardless of outcome so records stay aligned across configs.
  const double u_flip = unit(rng), u_rot = unit(rng), angle = (2 * unit(rng) - 1) * cfg.max_angle_deg;
  const double u_scale = unit(rng), factor = 1 + (2 * unit(rng) - 1) * cfg.scale_range;
  const double u_crop = unit(rng), ratio = cfg.min_crop_ratio + unit(rng) * (1 - cfg.min_crop_ratio);
  const double off_x = unit(rng), off_y = unit(rng);

  if (u_flip < cfg.p_flip) {
    out.record.flipped = true;
    out.image = flip_horizontal(out.image);
    out.mask = flip_horizontal(out.mask);
  }
  if (u_rot < cfg.p_rotate) {
    out.record.rotated = true;
    out.record.angle_deg = angle;
    const double th = angle * std::numbers::pi / 180.0, c = std::cos(th), s = std::sin(th);
    apply([=](double x, double y) {
      const double dx = x - cx, dy = y - cy;
      return std::array<double, 2>{cx + c * dx + s * dy, cy - s * dx + c * dy};
    });
  }
  if (u_scale < cfg.p_scale) {
    out.record.scaled = true;
    out.record.scale = factor;
    apply([=](double x, double y) { return std::array<double, 2>{cx + (x - cx) / factor, cy + (y - cy) / factor}; });
  }
  if (u_crop < cfg.p_crop) {
    out.record.cropped = true;
    out.record.crop_ratio = ratio;
    const double side = std::sqrt(ratio);
    const double w = double(img.dim(2)), h = double(img.dim(1));
    const double cw = side * w, ch = side * h;
    const double x0 = off_x * (w - cw), y0 = off_y * (h - ch);
    // Window [x0, x0 + cw) stretched back over the full frame.
    apply([=](double x, double y) {
      return std::array<double, 2>{x0 + (x + 0.5) * side - 0.5, y0 + (y + 0.5) * side - 0.5};
    });
  }
  if (!steps.empty()) {
    const InverseMap composed = [&steps](double x, double y) {
      std::array<double, 2> p{x, y};
      for (auto it = steps.rbegin(); it != steps.rend(); ++it) p = (*it)(p[0], p[1]);
      return p;
    };
    out.image = resample(out.image, composed, true);
    out.mask = resample(out.mask, composed, false);
  }
  return out;
}

AugmentedMask augment_mask(const Tensor32& mask, std::uint64_t seed, const AugmentationConfig& cfg) {
  if (mask.shape().size() != 3 || mask.dim(0) != 1) throw ShapeError("augment_mask: expected [1 x H x W]");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(cfg.mask_branch_p.begin(), cfg.mask_branch_p.end());
  const auto branch = static_cast<MaskBranch>(pick(rng));
  if (empty(mask)) return {mask, MaskBranch::Keep};
  std::uniform_int_distribution<int> radius(cfg.min_radius, cfg.max_radius);
  std::bernoulli_distribution grow(0.5);
  switch (branch) {
    case MaskBranch::Perturb: {
      const int r = radius(rng);
      return {grow(rng) ? dilate(mask, r) : erode(mask, r), branch};
    }
    case MaskBranch::Blur:
      return {blur_mask(mask, cfg.blur_sigma, cfg.blur_threshold), branch};
    case MaskBranch::BoundingBox:
      return {bounding_box(mask), branch};
    case MaskBranch::Keep:
      break;
  }
  return {mask, MaskBranch::Keep};
}

}  // namespace dscomp
