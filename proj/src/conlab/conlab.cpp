#include "dscomp/conlab.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace dscomp {

namespace {

void check_t(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.steps) {
    throw std::out_of_range("conlab: t must lie in [1, " + std::to_string(s.steps) + "], got " + std::to_string(t));
  }
}

Tensor32 predict_eps(const Denoiser& model, const BackboneInput<float>& in) {
  NoGradGuard guard;
  return model.predict(in).eps.value();
}

std::vector<LayerTrace<float>> predict_traces(const Denoiser& model, const BackboneInput<float>& in) {
  NoGradGuard guard;
  return model.predict(in).traces;
}

double rms(const Tensor32& a, const Tensor32& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc / double(a.numel()));
}

void accumulate(std::vector<LayerValue>& sum, const std::vector<LayerValue>& add) {
  if (sum.empty()) {
    sum = add;
    return;
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i].value += add[i].value;
}

std::vector<LayerValue> average(std::vector<LayerValue> sum, std::size_t n) {
  for (auto& v : sum) v.value /= double(n);
  return sum;
}

}  // namespace

SeparatedInputs separated_inputs(const CompositionSample& sample, int t, const Tensor32& eps, const NoiseSchedule& s,
                                 bool with_reference) {
  check_t(t, s);
  const auto x0 = to_model(sample.gt);
  const auto hole = sample.hole();
  SeparatedInputs out;
  out.full = make_input(sample, add_noise(x0, t, eps, s), t, with_reference);
  out.background_only = out.full;
  out.background_only.noisy = add_noise(apply_mask(x0, sample.mask_bg), t, eps, s);
  out.object_only = out.full;
  out.object_only.noisy = add_noise(apply_mask(x0, hole), t, eps, s);
  return out;
}

double region_merging_loss(const Denoiser& model, const CompositionSample& sample, int t, const Tensor32& eps,
                           const NoiseSchedule& s) {
  const auto in = separated_inputs(sample, t, eps, s, model.uses_reference());
  const auto full = predict_eps(model, in.full);
  const auto bg = predict_eps(model, in.background_only);
  const auto obj = predict_eps(model, in.object_only);
  const auto plane = static_cast<std::size_t>(sample.mask_bg.numel());
  double acc = 0;
  for (std::size_t i = 0; i < full.numel(); ++i) {
    const float m = sample.mask_bg[i % plane];
    const double merged = double(m) * bg[i] + double(1 - m) * obj[i];
    acc += (full[i] - merged) * (full[i] - merged);
  }
  return acc / double(full.numel());
}

Tensor32 downsample_mask(const Tensor32& mask, std::int64_t grid_h, std::int64_t grid_w) {
  if (mask.shape().size() != 3 || mask.dim(0) != 1) throw ShapeError("downsample_mask: expected [1 x H x W]");
  const auto h = mask.dim(1), w = mask.dim(2);
  if (grid_h <= 0 || grid_w <= 0 || h % grid_h != 0 || w % grid_w != 0) {
    throw std::logic_error("downsample_mask: " + shape_str(mask.shape()) + " does not tile a " +
                           std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  const auto ch = h / grid_h, cw = w / grid_w;
  Tensor32 out({grid_h * grid_w});
  for (std::int64_t gy = 0; gy < grid_h; ++gy)
    for (std::int64_t gx = 0; gx < grid_w; ++gx) {
      double on = 0;
      for (std::int64_t y = 0; y < ch; ++y)
        for (std::int64_t x = 0; x < cw; ++x) on += mask.at(0, gy * ch + y, gx * cw + x);
      out[static_cast<std::size_t>(gy * grid_w + gx)] = on / double(ch * cw) >= 0.5 ? 1.0f : 0.0f;
    }
  return out;
}

double composition_cosine(const Tensor32& full, const Tensor32& background_only, const Tensor32& object_only,
                          const Tensor32& cell_mask) {
  if (full.shape() != background_only.shape() || full.shape() != object_only.shape() || full.shape().size() != 2) {
    throw ShapeError("composition_cosine: token matrices must share one [N x C] shape");
  }
  const auto n = full.dim(0), c = full.dim(1);
  if (static_cast<std::int64_t>(cell_mask.numel()) != n) {
    throw std::logic_error("composition_cosine: mask has " + std::to_string(cell_mask.numel()) + " cells for " +
                           std::to_string(n) + " tokens");
  }
  double dot = 0, nf = 0, nc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double m = cell_mask[static_cast<std::size_t>(i)];
    for (std::int64_t k = 0; k < c; ++k) {
      const double f = full.at(i, k);
      const double composed = m * background_only.at(i, k) + (1 - m) * object_only.at(i, k);
      dot += f * composed;
      nf += f * f;
      nc += composed * composed;
    }
  }
  if (nf == 0 && nc == 0) return 1.0;
  if (nf == 0 || nc == 0) return 0.0;
  return dot / std::sqrt(nf * nc);
}

std::vector<LayerValue> feature_composition_cosine(const Denoiser& model, const CompositionSample& sample, int t,
                                                   const Tensor32& eps, const NoiseSchedule& s) {
  const auto in = separated_inputs(sample, t, eps, s, model.uses_reference());
  const auto full = predict_traces(model, in.full);
  const auto bg = predict_traces(model, in.background_only);
  const auto obj = predict_traces(model, in.object_only);
  std::vector<LayerValue> out;
  for (std::size_t l = 0; l < full.size(); ++l) {
    const auto cells = downsample_mask(sample.mask_bg, full[l].grid_h, full[l].grid_w);
    out.push_back({full[l].layer_id, composition_cosine(full[l].bg.output.value(), bg[l].bg.output.value(),
                                                        obj[l].bg.output.value(), cells)});
  }
  return out;
}

std::vector<LayerValue> layer_l2(const Denoiser& model, const CompositionSample& sample, int t, const Tensor32& eps,
                                 const NoiseSchedule& s) {
  check_t(t, s);
  const auto x0 = to_model(sample.gt);
  const auto noisy = add_noise(x0, t, eps, s);
  const auto separated = make_input(sample, noisy, t, model.uses_reference());
  BackboneInput<float> truth{noisy, Tensor32(sample.mask_bg.shape()), x0, std::nullopt, t};
  truth.mask.fill(1.0f);
  const auto a = predict_traces(model, separated);
  const auto b = predict_traces(model, truth);
  std::vector<LayerValue> out;
  for (std::size_t l = 0; l < a.size(); ++l) {
    out.push_back({a[l].layer_id, rms(a[l].bg.output.value(), b[l].bg.output.value())});
  }
  return out;
}

std::vector<LayerValue> feature_l2(const Denoiser& a, const Denoiser& b, const BackboneInput<float>& in) {
  const auto ta = predict_traces(a, in);
  const auto tb = predict_traces(b, in);
  if (ta.size() != tb.size()) throw std::invalid_argument("feature_l2: models differ in depth");
  std::vector<LayerValue> out;
  for (std::size_t l = 0; l < ta.size(); ++l) {
    out.push_back({ta[l].layer_id, rms(ta[l].bg.output.value(), tb[l].bg.output.value())});
  }
  return out;
}

std::vector<EvalDraw> make_draws(const std::vector<CompositionSample>& data, const NoiseSchedule& s, int count,
                                 std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("make_draws: empty dataset");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, s.steps);
  std::vector<EvalDraw> draws;
  for (int i = 0; i < count; ++i) {
    EvalDraw d;
    d.sample = pick(rng);
    d.t = pick_t(rng);
    d.eps = standard_normal(data[d.sample].gt.shape(), rng);
    draws.push_back(std::move(d));
  }
  return draws;
}

std::vector<LayerValue> mean_cosine(const Denoiser& model, const std::vector<CompositionSample>& data,
                                    const std::vector<EvalDraw>& draws, const NoiseSchedule& s) {
  std::vector<LayerValue> sum;
  for (const auto& d : draws) accumulate(sum, feature_composition_cosine(model, data.at(d.sample), d.t, d.eps, s));
  return average(std::move(sum), draws.size());
}

std::vector<LayerValue> mean_layer_l2(const Denoiser& model, const std::vector<CompositionSample>& data,
                                      const std::vector<EvalDraw>& draws, const NoiseSchedule& s) {
  std::vector<LayerValue> sum;
  for (const auto& d : draws) accumulate(sum, layer_l2(model, data.at(d.sample), d.t, d.eps, s));
  return average(std::move(sum), draws.size());
}

double mean_denoising_loss(const Denoiser& model, const std::vector<CompositionSample>& data,
                           const std::vector<EvalDraw>& draws, const NoiseSchedule& s) {
  double total = 0;
  for (const auto& d : draws) {
    const auto& sample = data.at(d.sample);
    const auto in = make_input(sample, add_noise(to_model(sample.gt), d.t, d.eps, s), d.t, model.uses_reference());
    const auto pred = predict_eps(model, in);
    double acc = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) acc += (pred[i] - d.eps[i]) * (pred[i] - d.eps[i]);
    total += acc / double(pred.numel());
  }
  return total / double(draws.size());
}

double ConsistencyReport::mean_merging_loss() const {
  if (merging_samples.empty()) return 0;
  double s = 0;
  for (double v : merging_samples) s += v;
  return s / double(merging_samples.size());
}

void ConsistencyReport::validate() const {
  auto check = [](double v, const std::string& what) {
    if (!std::isfinite(v)) throw std::runtime_error("consistency report: non-finite " + what);
  };
  for (const auto& c : cosine) check(c.value, "cosine at " + c.layer);
  for (const auto& [variant, curve] : l2)
    for (const auto& c : curve) check(c.value, "l2 of " + variant + " at " + c.layer);
  for (double v : merging_samples) check(v, "merging loss sample");
  check(mean_training_loss, "training loss");
}

void write_report_csv(std::ostream& out, const ConsistencyReport& r) {
  out << "layer,variant,metric,value\n" << std::setprecision(10);
  for (const auto& c : r.cosine) out << c.layer << ",," << "cosine," << c.value << '\n';
  for (const auto& [variant, curve] : r.l2)
    for (const auto& c : curve) out << c.layer << ',' << variant << ",l2," << c.value << '\n';
  if (!r.merging_samples.empty()) out << ",,region_merging_loss," << r.mean_merging_loss() << '\n';
  out << ",,mean_training_loss," << r.mean_training_loss << '\n';
}

void write_report_json(std::ostream& out, const ConsistencyReport& r) {
  nlohmann::json j;
  j["metadata"] = r.metadata;
  j["cosine"] = nlohmann::json::object();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& c : r.cosine) {
    layers.push_back(c.layer);
    j["cosine"][c.layer] = c.value;
  }
  j["layers"] = layers;
  j["l2"] = nlohmann::json::object();
  for (const auto& [variant, curve] : r.l2) {
    nlohmann::json values = nlohmann::json::array();
    for (const auto& c : curve) values.push_back({{"layer", c.layer}, {"value", c.value}});
    j["l2"][variant] = values;
  }
  j["region_merging"] = {{"samples", r.merging_samples.size()}, {"mean", r.mean_merging_loss()}};
  j["mean_training_loss"] = r.mean_training_loss;
  out << j.dump(2) << '\n';
}

}  // namespace dscomp
