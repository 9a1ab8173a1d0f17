#include "dscomp/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace dscomp {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255) * (0.01 * 255);
constexpr double kC2 = (0.03 * 255) * (0.03 * 255);

void check_same(const Tensor32& a, const Tensor32& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::array<double, kWindow> gaussian_1d() {
  std::array<double, kWindow> g{};
  double z = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    z += g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
  }
  for (auto& v : g) v /= z;
  return g;
}

double ssim_formula(double mx, double my, double vx, double vy, double cxy) {
  return ((2 * mx * my + kC1) * (2 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
}

}  // namespace

double psnr(const Tensor32& a, const Tensor32& b, double peak) {
  check_same(a, b, "psnr");
  if (peak <= 0) throw std::invalid_argument("psnr: peak must be positive");
  double mse = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= double(a.numel());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10 * std::log10(peak * peak / mse);
}

std::string format_db(double db) {
  if (std::isinf(db)) return db > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", db);
  return buf;
}

SsimResult ssim(const Tensor32& a, const Tensor32& b) {
  check_same(a, b, "ssim");
  if (a.shape().size() != 3) throw ShapeError("ssim: expected [C x H x W], got " + shape_str(a.shape()));
  const auto ch = a.dim(0), h = a.dim(1), w = a.dim(2);
  SsimResult result;
  if (h < kWindow || w < kWindow) {
    result.global_fallback = true;
    const double n = double(h * w);
    for (std::int64_t c = 0; c < ch; ++c) {
      double mx = 0, my = 0;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          mx += a.at(c, y, x);
          my += b.at(c, y, x);
        }
      mx /= n;
      my /= n;
      double vx = 0, vy = 0, cxy = 0;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const double dx = a.at(c, y, x) - mx, dy = b.at(c, y, x) - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      result.value += ssim_formula(mx, my, vx / n, vy / n, cxy / n);
    }
    result.value /= double(ch);
    return result;
  }

  // Separable weighted moments: horizontal pass, then vertical at valid positions.
  const auto g = gaussian_1d();
  const auto oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<std::array<double, 5>> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t c = 0; c < ch; ++c) {
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        std::array<double, 5> m{};
        for (int k = 0; k < kWindow; ++k) {
          const double wk = g[static_cast<std::size_t>(k)];
          const double va = a.at(c, y, x + k), vb = b.at(c, y, x + k);
          m[0] += wk * va;
          m[1] += wk * vb;
          m[2] += wk * va * va;
          m[3] += wk * vb * vb;
          m[4] += wk * va * vb;
        }
        rows[static_cast<std::size_t>(y * ow + x)] = m;
      }
    double sum = 0;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        std::array<double, 5> m{};
        for (int k = 0; k < kWindow; ++k) {
          const auto& r = rows[static_cast<std::size_t>((y + k) * ow + x)];
          for (std::size_t q = 0; q < 5; ++q) m[q] += g[static_cast<std::size_t>(k)] * r[q];
        }
        sum += ssim_formula(m[0], m[1], m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
      }
    result.value += sum / double(oh * ow);
  }
  result.value /= double(ch);
  return result;
}

}  // namespace dscomp
