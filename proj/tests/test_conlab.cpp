#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dscomp/conlab.hpp"
#include "dscomp/metrics.hpp"
#include "dscomp/synthbench.hpp"
#include "check_support.hpp"

using namespace dscomp;
using dscomp::testing::ssim_oracle;

namespace {

Tensor32 random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 255);
  Tensor32 t({c, h, w});
  for (auto& v : t.data()) v = float(u(rng));
  return t;
}

class FixedOutput : public Denoiser {
 public:
  explicit FixedOutput(Tensor32 out) : out_(std::move(out)) {}
  BackboneOutput<float> predict(const BackboneInput<float>& in) const override {
    BackboneOutput<float> o{constant(out_), {}};
    LayerTrace<float> tr;
    tr.layer_id = "x0";
    tr.grid_h = tr.grid_w = 4;
    Tensor32 tokens({16, 3});
    for (std::size_t i = 0; i < tokens.numel(); ++i) tokens[i] = float(i % 7) - 2.5f;
    tr.bg.output = constant(tokens);
    (void)in;
    o.traces.push_back(tr);
    return o;
  }

 private:
  Tensor32 out_;
};

ModelSpec tiny_unet() {
  ModelSpec spec;
  spec.seed = 3;
  spec.unet.image_size = 16;
  spec.unet.width0 = 8;
  spec.unet.width1 = 16;
  spec.unet.depth = 4;
  spec.unet.groups = 4;
  spec.unet.time_dim = 16;
  return spec;
}

void perturb(CompositionModel& m, float amount) {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> n(0, amount);
  for (auto* p : m.parameters())
    for (auto& v : p->mutable_value().data()) v += n(rng);
}

}  // namespace

TEST(Psnr, ClosedFormsAndOracle) {
  std::mt19937_64 rng(1);
  auto a = random_image(3, 16, 16, rng);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_EQ(format_db(psnr(a, a)), "inf");
  auto b = a;
  for (auto& v : b.data()) v += 1;
  EXPECT_NEAR(psnr(a, b), 48.1308, 5e-5);
  EXPECT_DOUBLE_EQ(psnr(a, b), 20 * std::log10(255.0));
  EXPECT_EQ(format_db(psnr(a, b)), "48.1308");
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_image(3, 9, 13, rng), y = random_image(3, 9, 13, rng);
    double mse = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) mse += std::pow(double(x[i]) - y[i], 2);
    mse /= double(x.numel());
    EXPECT_NEAR(psnr(x, y), 10 * std::log10(255.0 * 255.0 / mse), 1e-9);
  }
  EXPECT_THROW(psnr(a, Tensor32({3, 16, 15})), ShapeError);
}

TEST(Ssim, SelfSimilarityIsExactlyOne) {
  std::mt19937_64 rng(2);
  auto a = random_image(3, 32, 32, rng);
  auto r = ssim(a, a);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_FALSE(r.global_fallback);
}

TEST(Ssim, DistinctConstantsClosedForm) {
  Tensor32 a({1, 20, 20}), b({1, 20, 20});
  a.fill(40);
  b.fill(200);
  const double c1 = 6.5025;
  EXPECT_NEAR(ssim(a, b).value, (2 * 40.0 * 200 + c1) / (40.0 * 40 + 200.0 * 200 + c1), 1e-12);
  EXPECT_LT(ssim(a, b).value, 1.0);
}

TEST(Ssim, MatchesSlidingWindowOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_image(3, 24, 19, rng);
    auto b = a;
    std::normal_distribution<float> n(0, 30);
    for (auto& v : b.data()) v = std::clamp(v + n(rng), 0.0f, 255.0f);
    const double got = ssim(a, b).value;
    EXPECT_NEAR(got, ssim_oracle(a, b), 1e-6);
    EXPECT_GE(got, -1.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(Ssim, SmallImagesFallBackToGlobalStatistics) {
  std::mt19937_64 rng(4);
  auto a = random_image(1, 8, 8, rng);
  auto r = ssim(a, a);
  EXPECT_TRUE(r.global_fallback);
  EXPECT_NEAR(r.value, 1.0, 1e-12);
}

TEST(Conlab, DownsampleByAreaVote) {
  Tensor32 m({1, 4, 4});
  // Cell (0,0): 2 of 4 set -> kept; cell (0,1): 1 of 4 -> dropped; cell (1,1): all.
  m.at(0, 0, 0) = m.at(0, 1, 1) = 1;
  m.at(0, 0, 3) = 1;
  for (int y = 2; y < 4; ++y)
    for (int x = 2; x < 4; ++x) m.at(0, y, x) = 1;
  auto d = downsample_mask(m, 2, 2);
  EXPECT_EQ(d, (Tensor32({4}, {1, 0, 0, 1})));
  EXPECT_EQ(downsample_mask(m, 4, 4), (Tensor32({16}, std::vector<float>(m.data().begin(), m.data().end()))));
  EXPECT_THROW(downsample_mask(m, 3, 3), std::logic_error);
}

TEST(Conlab, CompositionCosineIdentities) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n;
  Tensor32 f({6, 4});
  for (auto& v : f.data()) v = n(rng);
  Tensor32 cells({6}, {1, 0, 1, 1, 0, 0});
  // Composition of identical full features reproduces them.
  EXPECT_NEAR(composition_cosine(f, f, f, cells), 1.0, 1e-12);
  // Orthogonal pair: composed features live on other columns.
  Tensor32 g({6, 4}), h({6, 4});
  for (int i = 0; i < 6; ++i) {
    g.at(i, 0) = 1;
    h.at(i, 2) = float(i + 1);
  }
  EXPECT_EQ(composition_cosine(g, h, h, cells), 0.0);
  EXPECT_THROW(composition_cosine(f, f, f, Tensor32({5})), std::logic_error);
}

TEST(Conlab, MaskIndependentModelHasZeroMergingLoss) {
  auto s = make_desk_schedule(200);
  auto sample = generate_scene(SceneConfig{}, 12);
  std::mt19937_64 rng(6);
  FixedOutput stub(standard_normal({3, 32, 32}, rng));
  const auto eps = standard_normal({3, 32, 32}, rng);
  EXPECT_EQ(region_merging_loss(stub, sample, 77, eps, s), 0.0);
  auto cos = feature_composition_cosine(stub, sample, 77, eps, s);
  ASSERT_EQ(cos.size(), 1u);
  EXPECT_NEAR(cos[0].value, 1.0, 1e-12);
  EXPECT_THROW(region_merging_loss(stub, sample, 0, eps, s), std::out_of_range);
  EXPECT_THROW(region_merging_loss(stub, sample, 201, eps, s), std::out_of_range);
}

TEST(Conlab, SeparatedInputsSplitTheNoisyImage) {
  auto s = make_desk_schedule(200);
  auto sample = generate_scene(SceneConfig{}, 13);
  std::mt19937_64 rng(7);
  const auto eps = standard_normal({3, 32, 32}, rng);
  auto in = separated_inputs(sample, 40, eps, s, true);
  const auto plane = sample.mask_bg.numel();
  const float noise_scale = float(std::sqrt(1 - s.alpha_bar(40)));
  for (std::size_t i = 0; i < in.full.noisy.numel(); ++i) {
    const bool keep = sample.mask_bg[i % plane] != 0;
    EXPECT_EQ(keep ? in.background_only.noisy[i] : in.object_only.noisy[i], in.full.noisy[i]);
    EXPECT_FLOAT_EQ(keep ? in.object_only.noisy[i] : in.background_only.noisy[i], noise_scale * eps[i]);
  }
  EXPECT_EQ(in.background_only.masked_bg, in.full.masked_bg);
  EXPECT_EQ(*in.object_only.reference, *in.full.reference);
}

TEST(Conlab, RealModelValuesAreBoundedAndCurvesHaveDepthEntries) {
  auto s = make_desk_schedule(200);
  SceneConfig sc;
  sc.size = 16;
  auto data = generate_dataset(sc, 0, 4);
  auto model = CompositionModel::build(tiny_unet());
  perturb(model, 0.05f);
  auto draws = make_draws(data, s, 3, 11);
  auto cos = mean_cosine(model, data, draws, s);
  ASSERT_EQ(static_cast<int>(cos.size()), model.depth());
  for (const auto& c : cos) {
    EXPECT_GE(c.value, -1.0);
    EXPECT_LE(c.value, 1.0 + 1e-12);
  }
  auto l2 = mean_layer_l2(model, data, draws, s);
  ASSERT_EQ(l2.size(), cos.size());
  for (std::size_t i = 0; i < l2.size(); ++i) {
    EXPECT_EQ(l2[i].layer, cos[i].layer);
    EXPECT_GE(l2[i].value, 0.0);
  }
  EXPECT_GE(region_merging_loss(model, data[0], 10, draws[0].eps, s), 0.0);
}

TEST(Conlab, SelfComparisonIsZeroAndOtherModelsDiffer) {
  auto s = make_desk_schedule(200);
  SceneConfig sc;
  sc.size = 16;
  auto sample = generate_scene(sc, 2);
  auto a = CompositionModel::build(tiny_unet());
  auto b = CompositionModel::build(tiny_unet());
  perturb(b, 0.05f);
  std::mt19937_64 rng(1);
  const auto in = make_input(sample, standard_normal({3, 16, 16}, rng), 30, true);
  for (const auto& v : feature_l2(a, a, in)) EXPECT_EQ(v.value, 0.0);
  double diff = 0;
  auto ab = feature_l2(a, b, in), ba = feature_l2(b, a, in);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    diff += ab[i].value;
    EXPECT_DOUBLE_EQ(ab[i].value, ba[i].value);
  }
  EXPECT_GT(diff, 0.0);
}

TEST(Conlab, ReportSerialization) {
  ConsistencyReport r;
  r.metadata["seed"] = "7";
  r.cosine = {{"d0", 0.9}, {"u0", 0.95}};
  r.l2["shared"] = {{"d0", 0.1}, {"u0", 0.2}};
  r.merging_samples = {0.01, 0.03};
  r.mean_training_loss = 0.1;
  EXPECT_DOUBLE_EQ(r.mean_merging_loss(), 0.02);
  std::ostringstream csv, json;
  write_report_csv(csv, r);
  EXPECT_EQ(csv.str(),
            "layer,variant,metric,value\nd0,,cosine,0.9\nu0,,cosine,0.95\nd0,shared,l2,0.1\nu0,shared,l2,0.2\n"
            ",,region_merging_loss,0.02\n,,mean_training_loss,0.1\n");
  write_report_json(json, r);
  EXPECT_NE(json.str().find("\"layers\""), std::string::npos);
  EXPECT_NO_THROW(r.validate());
  r.cosine[0].value = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(r.validate(), std::runtime_error);
}
