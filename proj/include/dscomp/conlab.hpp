#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dscomp/diffusion.hpp"

namespace dscomp {

/// The three forwards compared by the consistency measurements, all at the
/// same t and noise and with the same conditioning channels: the full ground
/// truth, the background-only image (hole zeroed) and the object-only image
/// (background zeroed).
struct SeparatedInputs {
  BackboneInput<float> full, background_only, object_only;
};

SeparatedInputs separated_inputs(const CompositionSample& sample, int t, const Tensor32& eps, const NoiseSchedule& s,
                                 bool with_reference);

/// Mean squared gap, per element, between the prediction on the full input
/// and mask_bg * pred(background-only) + (1 - mask_bg) * pred(object-only).
/// Throws std::out_of_range unless 1 <= t <= s.steps.
double region_merging_loss(const Denoiser& model, const CompositionSample& sample, int t, const Tensor32& eps,
                           const NoiseSchedule& s);

/// Mask [1 x H x W] to a grid_h x grid_w cell mask: a cell is set when at
/// least half of its pixels are.
Tensor32 downsample_mask(const Tensor32& mask, std::int64_t grid_h, std::int64_t grid_w);

/// Cosine between full [N x C] tokens and the cell-mask composition of
/// background-only and object-only tokens. cell_mask has N entries.
double composition_cosine(const Tensor32& full, const Tensor32& background_only, const Tensor32& object_only,
                          const Tensor32& cell_mask);

struct LayerValue {
  std::string layer;
  double value = 0;
};

/// Per interaction layer, the composition cosine of the background stream's
/// block outputs.
std::vector<LayerValue> feature_composition_cosine(const Denoiser& model, const CompositionSample& sample, int t,
                                                   const Tensor32& eps, const NoiseSchedule& s);

/// Per layer, the RMS difference between the background-stream block output
/// under the usual separated inputs (masked background plus reference) and
/// under a reference-free forward whose conditioning is the full ground
/// truth with an all-keep mask.
std::vector<LayerValue> layer_l2(const Denoiser& model, const CompositionSample& sample, int t, const Tensor32& eps,
                                 const NoiseSchedule& s);

/// Per layer RMS difference of background-stream block outputs of two
/// models on one input. Zero when a and b are the same model.
std::vector<LayerValue> feature_l2(const Denoiser& a, const Denoiser& b, const BackboneInput<float>& in);

/// Seeded evaluation draws: sample index, t uniform in [1, T], standard-normal noise.
struct EvalDraw {
  std::size_t sample = 0;
  int t = 1;
  Tensor32 eps;
};
std::vector<EvalDraw> make_draws(const std::vector<CompositionSample>& data, const NoiseSchedule& s, int count,
                                 std::uint64_t seed);

/// Mean of the per-layer values over the draws, in layer order.
std::vector<LayerValue> mean_cosine(const Denoiser& model, const std::vector<CompositionSample>& data,
                                    const std::vector<EvalDraw>& draws, const NoiseSchedule& s);
std::vector<LayerValue> mean_layer_l2(const Denoiser& model, const std::vector<CompositionSample>& data,
                                      const std::vector<EvalDraw>& draws, const NoiseSchedule& s);

/// Mean training objective of the model on the draws (same t and noise).
double mean_denoising_loss(const Denoiser& model, const std::vector<CompositionSample>& data,
                           const std::vector<EvalDraw>& draws, const NoiseSchedule& s);

struct ConsistencyReport {
  std::map<std::string, std::string> metadata;  // checkpoint id, sample count, seed, ...
  std::vector<LayerValue> cosine;
  std::map<std::string, std::vector<LayerValue>> l2;  // keyed by variant name
  std::vector<double> merging_samples;
  double mean_training_loss = 0;

  double mean_merging_loss() const;
  /// Throws std::runtime_error when any reported value is non-finite.
  void validate() const;
};

/// Rows "layer,variant,metric,value".
void write_report_csv(std::ostream& out, const ConsistencyReport& r);
void write_report_json(std::ostream& out, const ConsistencyReport& r);

}  // namespace dscomp
