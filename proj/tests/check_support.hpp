#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dscomp/attention.hpp"
#include "dscomp/dit.hpp"
#include "dscomp/gradcheck.hpp"
#include "dscomp/ops.hpp"
#include "dscomp/unet.hpp"

namespace dscomp::testing {

template <Real T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = T(dist(rng));
  return t;
}

/// Fixed random projection to a scalar; a plain sum hides errors in outputs
/// that sum to a constant.
inline Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, constant(random_tensor<double>(y.shape(), rng))));
}

/// Runs the gradient check, redrawing the instance when the base point sits
/// on a relu kink. `draw` fills the inputs from the engine.
inline GradCheckReport check_with_redraw(const ScalarFn& fn,
                                         const std::function<std::vector<Tensor64>(std::mt19937_64&)>& draw,
                                         std::mt19937_64& rng, const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  for (int attempt = 0; attempt < 20; ++attempt) {
    report = check_gradients(fn, draw(rng), opts);
    if (!report.non_smooth) return report;
  }
  return report;
}

/// Overwrites every parameter of a weight record with N(0, stddev^2) draws.
template <typename Weights>
void randomize(Weights& w, std::mt19937_64& rng, double stddev = 0.3) {
  w.visit([&](auto& p) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : p.mutable_value().data()) v = static_cast<std::remove_reference_t<decltype(v)>>(dist(rng));
  });
}

inline Tensor64 project(const Tensor64& x, const Tensor64& w) {
  Tensor64 y({x.dim(0), w.dim(1)});
  for (std::int64_t i = 0; i < x.dim(0); ++i)
    for (std::int64_t j = 0; j < w.dim(1); ++j) {
      double s = 0;
      for (std::int64_t k = 0; k < x.dim(1); ++k) s += x.at(i, k) * w.at(k, j);
      y.at(i, j) = s;
    }
  return y;
}

// Per-query double loop. Keys/values come from kv_source (rows), queries from q_source.
inline Tensor64 attention_oracle(const Tensor64& q_source, const Tensor64& kv_source, const AttentionParams<double>& p,
                          double logit_scale) {
  const auto q = project(q_source, p.w_q.value());
  const auto k = project(kv_source, p.w_k.value());
  const auto v = project(kv_source, p.w_v.value());
  const auto d = p.d_model(), dk = p.d_k();
  Tensor64 out({q_source.dim(0), d});
  for (int h = 0; h < p.heads; ++h)
    for (std::int64_t i = 0; i < q.dim(0); ++i) {
      std::vector<double> logits(static_cast<std::size_t>(k.dim(0)));
      for (std::int64_t j = 0; j < k.dim(0); ++j) {
        double s = 0;
        for (std::int64_t c = h * dk; c < (h + 1) * dk; ++c) s += q.at(i, c) * k.at(j, c);
        logits[static_cast<std::size_t>(j)] = s * logit_scale;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::int64_t c = h * dk; c < (h + 1) * dk; ++c) {
        double s = 0;
        for (std::int64_t j = 0; j < k.dim(0); ++j) s += logits[static_cast<std::size_t>(j)] / z * v.at(j, c);
        out.at(i, c) = s;
      }
    }
  return out;
}

// Direct sliding-window SSIM with a freshly built 2-D window.
inline double ssim_oracle(const Tensor32& a, const Tensor32& b) {
  const int n = 11;
  double win[11][11], z = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) z += win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
  for (auto& row : win)
    for (double& v : row) v /= z;
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0;
  for (std::int64_t c = 0; c < a.dim(0); ++c) {
    double sum = 0;
    int count = 0;
    for (std::int64_t y = 0; y + n <= a.dim(1); ++y)
      for (std::int64_t x = 0; x + n <= a.dim(2); ++x) {
        double mx = 0, my = 0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            mx += win[i][j] * a.at(c, y + i, x + j);
            my += win[i][j] * b.at(c, y + i, x + j);
          }
        double vx = 0, vy = 0, cxy = 0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double dx = a.at(c, y + i, x + j) - mx, dy = b.at(c, y + i, x + j) - my;
            vx += win[i][j] * dx * dx;
            vy += win[i][j] * dy * dy;
            cxy += win[i][j] * dx * dy;
          }
        sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    total += sum / count;
  }
  return total / double(a.dim(0));
}

// Central-difference sweep cases: one scalar function and input generator per op.
struct OpCase {
  const char* name;
  ScalarFn fn;
  std::function<std::vector<Tensor64>(std::mt19937_64&)> draw;
};

std::vector<OpCase> op_cases() {
  using VV = std::vector<Var<double>>;
  using TT = std::vector<Tensor64>;
  auto ws = [](const Var<double>& y) { return weighted_sum(y); };
  return {
      {"matmul", [=](const VV& v) { return ws(matmul(v[0], v[1])); },
       [](std::mt19937_64& r) { return TT{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; }},
      {"matmul_nt", [=](const VV& v) { return ws(matmul_nt(v[0], v[1])); },
       [](std::mt19937_64& r) { return TT{random_tensor({3, 4}, r), random_tensor({2, 4}, r)}; }},
      {"transpose", [=](const VV& v) { return ws(transpose(v[0])); },
       [](std::mt19937_64& r) { return TT{random_tensor({3, 4}, r)}; }},
      {"add_sub_mul", [=](const VV& v) { return ws(mul(add(v[0], v[1]), sub(v[0], v[1]))); },
       [](std::mt19937_64& r) { return TT{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; }},
      {"scale_square", [=](const VV& v) { return ws(square(add_scalar(scale(v[0], 0.7), 0.3))); },
       [](std::mt19937_64& r) { return TT{random_tensor({5}, r)}; }},
      {"row_col", [=](const VV& v) { return ws(add_col(mul_row(add_row(v[0], v[1]), v[2]), v[3])); },
       [](std::mt19937_64& r) {
         return TT{random_tensor({3, 4}, r), random_tensor({4}, r), random_tensor({4}, r), random_tensor({3}, r)};
       }},
      {"softmax", [=](const VV& v) { return ws(add(softmax(v[0], 1), softmax(v[0], 0))); },
       [](std::mt19937_64& r) { return TT{random_tensor({3, 5}, r, 2.0)}; }},
      {"layer_norm", [=](const VV& v) { return ws(layer_norm(v[0], v[1], v[2])); },
       [](std::mt19937_64& r) { return TT{random_tensor({3, 6}, r), random_tensor({6}, r), random_tensor({6}, r)}; }},
      {"group_norm", [=](const VV& v) { return ws(group_norm(v[0], 2, v[1], v[2])); },
       [](std::mt19937_64& r) {
         return TT{random_tensor({4, 3, 3}, r), random_tensor({4}, r), random_tensor({4}, r)};
       }},
      {"gelu", [=](const VV& v) { return ws(gelu(v[0])); },
       [](std::mt19937_64& r) { return TT{random_tensor({8}, r, 2.0)}; }},
      {"relu", [=](const VV& v) { return ws(relu(v[0])); },
       [](std::mt19937_64& r) { return TT{random_tensor({8}, r, 2.0)}; }},
      {"silu", [=](const VV& v) { return ws(silu(v[0])); },
       [](std::mt19937_64& r) { return TT{random_tensor({8}, r, 2.0)}; }},
      {"conv2d", [=](const VV& v) { return ws(conv2d(v[0], v[1])); },
       [](std::mt19937_64& r) { return TT{random_tensor({2, 4, 4}, r), random_tensor({2, 2, 3, 3}, r)}; }},
      {"pool_upsample", [=](const VV& v) { return ws(upsample2(avg_pool2(v[0]))); },
       [](std::mt19937_64& r) { return TT{random_tensor({2, 4, 4}, r)}; }},
      {"concat_slice", [=](const VV& v) { return ws(slice(concat<double>({v[0], v[1]}, 1), 1, 1, 5)); },
       [](std::mt19937_64& r) { return TT{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; }},
      {"reshape_mean", [=](const VV& v) { return mean(square(reshape(v[0], {3, 2}))); },
       [](std::mt19937_64& r) { return TT{random_tensor({2, 3}, r)}; }},
  };
}


/// One gradient check of a full U-Net block (both streams, all parameters
/// and inputs), redrawn while the base point sits on a relu kink.
inline GradCheckReport unet_block_check(std::mt19937_64& rng) {
  GradCheckReport r;
  for (int attempt = 0; attempt < 20; ++attempt) {
    auto p = UNetBlockParams<double>::create("b", 8, 8, 4, 2, rng);
    randomize(p, rng, 0.5);
    Parameter<double> xb("x_bg", random_tensor({8, 3, 3}, rng)), xr("x_ref", random_tensor({8, 3, 3}, rng));
    Parameter<double> t_act("t", random_tensor({1, 8}, rng));
    ParameterRefs<double> params{&xb, &xr, &t_act};
    p.visit([&](Parameter<double>& q) { params.push_back(&q); });
    auto loss = [&] {
      auto out = unet_block_forward(xb.var, xr.var, t_act.var, p);
      return weighted_sum(concat<double>({reshape(out.y_bg, {72}), reshape(out.y_ref, {72})}, 0));
    };
    r = check_parameter_gradients(loss, params);
    if (!r.non_smooth) return r;
  }
  return r;
}

/// Same for a full DiT block.
inline GradCheckReport dit_block_check(std::mt19937_64& rng) {
  auto p = DiTBlockParams<double>::create("b", 8, 8, 2, rng);
  randomize(p, rng, 0.5);
  Parameter<double> hb("h_bg", random_tensor({4, 8}, rng)), hr("h_ref", random_tensor({4, 8}, rng));
  Parameter<double> tau("tau", random_tensor({1, 8}, rng));
  ParameterRefs<double> params{&hb, &hr, &tau};
  p.visit([&](Parameter<double>& q) { params.push_back(&q); });
  auto loss = [&] {
    auto out = dit_block_forward(hb.var, hr.var, tau.var, p);
    return weighted_sum(concat<double>({out.h_bg, out.h_ref}, 0));
  };
  return check_parameter_gradients(loss, params);
}

}  // namespace dscomp::testing
