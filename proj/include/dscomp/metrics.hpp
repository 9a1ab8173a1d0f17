#pragma once

#include <string>

#include "dscomp/tensor.hpp"

namespace dscomp {

/// 10 log10(peak^2 / MSE); identical inputs give +infinity.
double psnr(const Tensor32& a, const Tensor32& b, double peak = 255.0);

/// "inf" for the identical-input sentinel, fixed decimals otherwise.
std::string format_db(double db);

struct SsimResult {
  double value = 0;
  bool global_fallback = false;  // image smaller than the window: one global window was used
};

/// Gaussian-window SSIM (11x11, sigma 1.5, 0..255 constants) averaged over
/// valid window positions and then over channels. Inputs are [C x H x W].
SsimResult ssim(const Tensor32& a, const Tensor32& b);

}  // namespace dscomp
