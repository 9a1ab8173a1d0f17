#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "dscomp/synthbench.hpp"

namespace dscomp {

namespace {

using Rgb = std::array<float, 3>;

// Object colours are saturated; background colours stay in a muted band, so the
// two families never coincide.
constexpr std::array<Rgb, 7> kObjectPalette{{{220, 40, 40},
                                            {40, 200, 60},
                                            {50, 70, 220},
                                            {230, 210, 40},
                                            {210, 50, 200},
                                            {40, 200, 210},
                                            {240, 130, 20}}};

Rgb muted_colour(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> base(70, 170), jitter(-20, 20);
  const int b = base(rng);
  return {float(b + jitter(rng)), float(b + jitter(rng)), float(b + jitter(rng))};
}

void put(Tensor32& img, std::int64_t y, std::int64_t x, const Rgb& c) {
  for (std::int64_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
}

Tensor32 render_background(std::int64_t s, std::mt19937_64& rng) {
  Tensor32 img({3, s, s});
  std::uniform_int_distribution<int> family(0, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Rgb a = muted_colour(rng), b = muted_colour(rng);
  switch (static_cast<BackgroundFamily>(family(rng))) {
    case BackgroundFamily::Gradient: {
      const double theta = unit(rng) * 2 * std::numbers::pi;
      const double dx = std::cos(theta), dy = std::sin(theta);
      const double half = (s - 1) / 2.0, span = std::abs(dx) * half + std::abs(dy) * half;
      for (std::int64_t y = 0; y < s; ++y)
        for (std::int64_t x = 0; x < s; ++x) {
          const double w = span > 0 ? ((x - half) * dx + (y - half) * dy + span) / (2 * span) : 0.5;
          Rgb c;
          for (std::size_t k = 0; k < 3; ++k) c[k] = float(std::round(a[k] + w * (b[k] - a[k])));
          put(img, y, x, c);
        }
      break;
    }
    case BackgroundFamily::Stripes: {
      std::uniform_int_distribution<int> period(4, 8), orient(0, 2);
      const int p = period(rng), o = orient(rng);
      for (std::int64_t y = 0; y < s; ++y)
        for (std::int64_t x = 0; x < s; ++x) {
          const std::int64_t u = o == 0 ? x : o == 1 ? y : x + y;
          put(img, y, x, (u / (p / 2)) % 2 == 0 ? a : b);
        }
      break;
    }
    case BackgroundFamily::Blobs: {
      std::uniform_int_distribution<int> count(3, 6);
      struct Blob {
        double x, y, r;
      };
      std::vector<Blob> blobs(static_cast<std::size_t>(count(rng)));
      for (auto& bl : blobs) bl = {unit(rng) * s, unit(rng) * s, 2 + unit(rng) * s / 5.0};
      for (std::int64_t y = 0; y < s; ++y)
        for (std::int64_t x = 0; x < s; ++x) {
          double w = 0;
          for (const auto& bl : blobs) {
            const double d2 = (x - bl.x) * (x - bl.x) + (y - bl.y) * (y - bl.y);
            w = std::max(w, std::exp(-d2 / (2 * bl.r * bl.r)));
          }
          Rgb c;
          for (std::size_t k = 0; k < 3; ++k) c[k] = float(std::round(a[k] + w * (b[k] - a[k])));
          put(img, y, x, c);
        }
      break;
    }
  }
  return img;
}

struct ObjectShape {
  ObjectFamily family = ObjectFamily::Polygon;
  double radius = 0;
  std::vector<double> angles;  // polygon vertices on the circle, counter-clockwise
  double inner = 0;            // ring hole radius
  double arm = 0;              // cross half-width

  bool contains(double u, double v) const {
    switch (family) {
      case ObjectFamily::Polygon: {
        for (std::size_t i = 0; i < angles.size(); ++i) {
          const double a0 = angles[i], a1 = angles[(i + 1) % angles.size()];
          const double x0 = radius * std::cos(a0), y0 = radius * std::sin(a0);
          const double x1 = radius * std::cos(a1), y1 = radius * std::sin(a1);
          if ((x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) < 0) return false;
        }
        return true;
      }
      case ObjectFamily::Ring: {
        const double d = std::hypot(u, v);
        return d <= radius && d >= inner;
      }
      case ObjectFamily::Cross:
        return std::abs(u) <= radius && std::abs(v) <= radius && (std::abs(u) <= arm || std::abs(v) <= arm);
    }
    return false;
  }
};

ObjectShape random_shape(std::int64_t s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> family(0, 2), vertices(3, 7);
  ObjectShape shape;
  shape.family = static_cast<ObjectFamily>(family(rng));
  shape.radius = s * (0.2 + 0.1 * unit(rng));
  switch (shape.family) {
    case ObjectFamily::Polygon: {
      const int k = vertices(rng);
      // Evenly spaced vertices with jitter keep the polygon convex and non-degenerate.
      const double step = 2 * std::numbers::pi / k, phase = unit(rng) * step;
      for (int i = 0; i < k; ++i) shape.angles.push_back(phase + step * (i + 0.35 * (unit(rng) - 0.5)));
      break;
    }
    case ObjectFamily::Ring:
      shape.inner = shape.radius * (0.35 + 0.2 * unit(rng));
      break;
    case ObjectFamily::Cross:
      shape.arm = shape.radius * (0.25 + 0.15 * unit(rng));
      break;
  }
  return shape;
}

}  // namespace

WarpedObject warp_object(const Tensor32& masked_ref, const Tensor32& mask_ref, const Pose& pose) {
  const auto s = mask_ref.dim(1), w = mask_ref.dim(2);
  WarpedObject out{Tensor32({3, s, w}), Tensor32({1, s, w})};
  const double th = pose.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);
  for (std::int64_t y = 0; y < s; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double dx = (x - pose.cx) / pose.scale, dy = (y - pose.cy) / pose.scale;
      // Inverse rotation back into the reference frame.
      const auto sx = static_cast<std::int64_t>(std::lround(pose.src_cx + c * dx + sn * dy));
      const auto sy = static_cast<std::int64_t>(std::lround(pose.src_cy - sn * dx + c * dy));
      if (sx < 0 || sy < 0 || sx >= w || sy >= s || mask_ref.at(0, sy, sx) == 0.0f) continue;
      out.mask.at(0, y, x) = 1.0f;
      for (std::int64_t ch = 0; ch < 3; ++ch) out.image.at(ch, y, x) = masked_ref.at(ch, sy, sx);
    }
  return out;
}

CompositionSample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  const auto s = cfg.size;
  if (s < 8) throw std::invalid_argument("scene: size must be at least 8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  CompositionSample sample;
  sample.id = "scene_" + std::to_string(seed);
  sample.seed = seed;
  sample.bg = render_background(s, rng);
  sample.ref = render_background(s, rng);
  sample.mask_ref = Tensor32({1, s, s});

  const auto shape = random_shape(s, rng);
  const std::size_t n_colours = kObjectPalette.size();
  std::uniform_int_distribution<std::size_t> colour(0, n_colours - 1), offset(1, n_colours - 1);
  std::uniform_int_distribution<int> texture(0, 2), period(2, 4);
  const std::size_t i1 = colour(rng);
  const Rgb c1 = kObjectPalette[i1], c2 = kObjectPalette[(i1 + offset(rng)) % n_colours];
  const int tex = texture(rng), p = period(rng);
  const double centre = (s - 1) / 2.0;
  for (std::int64_t y = 0; y < s; ++y)
    for (std::int64_t x = 0; x < s; ++x) {
      if (!shape.contains(x - centre, y - centre)) continue;
      sample.mask_ref.at(0, y, x) = 1.0f;
      const bool alt = tex == 1 ? (y / p) % 2 == 1 : tex == 2 ? ((x / p) + (y / p)) % 2 == 1 : false;
      put(sample.ref, y, x, alt ? c2 : c1);
    }
  const auto masked_ref = sample.masked_ref();

  std::vector<std::array<double, 2>> support;
  for (std::int64_t y = 0; y < s; ++y)
    for (std::int64_t x = 0; x < s; ++x)
      if (sample.mask_ref.at(0, y, x) != 0.0f) support.push_back({x - centre, y - centre});

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Pose pose;
    pose.angle_deg = (2 * unit(rng) - 1) * cfg.max_rotation_deg;
    pose.scale = cfg.min_scale + unit(rng) * (cfg.max_scale - cfg.min_scale);
    pose.cx = unit(rng) * (s - 1);
    pose.cy = unit(rng) * (s - 1);
    pose.src_cx = pose.src_cy = centre;
    const double th = pose.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    const bool inside = std::all_of(support.begin(), support.end(), [&](const auto& q) {
      const double x = pose.cx + pose.scale * (c * q[0] - sn * q[1]);
      const double y = pose.cy + pose.scale * (sn * q[0] + c * q[1]);
      return x >= 0 && y >= 0 && x <= s - 1 && y <= s - 1;
    });
    if (!inside) continue;
    auto warped = warp_object(masked_ref, sample.mask_ref, pose);
    double area = 0;
    for (float v : warped.mask.data()) area += v;
    area /= double(s * s);
    if (area < cfg.min_area || area > cfg.max_area) continue;

    sample.pose = pose;
    sample.mask_bg = complement(warped.mask);
    sample.gt = apply_mask(sample.bg, sample.mask_bg);
    for (std::size_t i = 0; i < sample.gt.numel(); ++i) sample.gt[i] += warped.image[i];
    return sample;
  }
  throw std::runtime_error("scene " + std::to_string(seed) + ": no valid pose after " +
                           std::to_string(cfg.max_retries) + " attempts");
}

std::vector<CompositionSample> generate_dataset(const SceneConfig& cfg, std::uint64_t seed, int count) {
  std::vector<CompositionSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(cfg, seed + static_cast<std::uint64_t>(i)));
  return out;
}

}  // namespace dscomp
