#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dscomp/composition.hpp"
#include "dscomp/dit.hpp"
#include "dscomp/unet.hpp"

namespace dscomp {

/// Linear-beta noise schedule. Index 0 is the clean-image convention
/// (alpha_bar = 1); steps run 1..steps.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> betas;       // [steps + 1], betas[0] = 0
  std::vector<double> alpha_bars;  // [steps + 1], alpha_bars[0] = 1

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }
};

NoiseSchedule make_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

/// Schedule used for desk-scale training: `steps` steps whose betas are the
/// default range stretched by 1000 / steps, so the final alpha_bar matches the
/// 1000-step schedule.
NoiseSchedule make_desk_schedule(int steps = 200);

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps.
Tensor32 add_noise(const Tensor32& x0, double alpha_bar, const Tensor32& eps);
/// Same at step t of the schedule; t = 0 returns x0. Throws std::out_of_range
/// unless 0 <= t <= steps.
Tensor32 add_noise(const Tensor32& x0, int t, const Tensor32& eps, const NoiseSchedule& s);

Tensor32 standard_normal(Shape shape, std::mt19937_64& rng);

/// Raised when the loss or the prediction stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BackboneKind { UNet, DiT };
enum class Variant { Shared, DualFrozen, DualTrainable };

std::string to_string(BackboneKind k);
std::string to_string(Variant v);
BackboneKind parse_backbone(const std::string& s);
Variant parse_variant(const std::string& s);

/// Anything that predicts noise for a model-domain backbone input.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual BackboneOutput<float> predict(const BackboneInput<float>& in) const = 0;
  virtual ParameterRefs<float> trainable_parameters() { return {}; }
  /// Whether the reference stream is consumed; stubs may ignore it.
  virtual bool uses_reference() const { return true; }
};

struct ModelSpec {
  BackboneKind kind = BackboneKind::UNet;
  Variant variant = Variant::Shared;
  UNetConfig unet;
  DiTConfig dit;
  std::uint64_t seed = 0;
};

/// A backbone record for the background stream plus, for dual variants, an
/// independent record for the reference stream.
template <typename Weights>
struct StreamPair {
  Weights bg;
  std::unique_ptr<Weights> ref;  // null for the shared variant

  const Weights& reference() const { return ref ? *ref : bg; }
};

class CompositionModel : public Denoiser {
 public:
  /// Shared: one record serves both streams. DualFrozen: the reference record
  /// is an initialization-time copy with gradients disabled. DualTrainable:
  /// the copy stays trainable.
  static CompositionModel build(const ModelSpec& spec);

  BackboneOutput<float> predict(const BackboneInput<float>& in) const override;
  ParameterRefs<float> trainable_parameters() override;

  /// Every distinct parameter record, background stream first.
  ParameterRefs<float> parameters();
  ParameterRefs<float> background_parameters();
  /// Empty for the shared variant.
  ParameterRefs<float> reference_parameters();

  const ModelSpec& spec() const { return spec_; }
  int depth() const;
  int max_timestep() const;
  std::int64_t image_size() const;

  /// Parameter record by name, or nullptr.
  Parameter<float>* find(const std::string& name);

 private:
  ModelSpec spec_;
  std::variant<StreamPair<UNetWeights<float>>, StreamPair<DiTWeights<float>>> weights_;
};

/// Model-domain input for one sample: background stream built from the noisy
/// image, the keep-mask and the masked ground truth; reference stream from
/// the masked reference.
BackboneInput<float> make_input(const CompositionSample& sample, const Tensor32& noisy, int t, bool with_reference);

struct StepResult {
  double loss = 0;
  std::vector<int> timesteps;
};

/// One denoising-loss step over a batch: draws t uniformly in [1, T] and standard
/// normal noise per item, averages the per-element squared error over the
/// batch and accumulates gradients into trainable parameters. Does not update
/// the weights. Throws NumericalError on a non-finite loss.
StepResult training_step(const std::vector<const CompositionSample*>& batch, Denoiser& model,
                         const NoiseSchedule& s, std::mt19937_64& rng);

/// Adam without weight decay.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  /// Updates trainable parameters from their gradients, then zeroes the gradients.
  void step(const ParameterRefs<float>& params);
  long steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int average_window = 200;
};

struct TrainLog {
  std::vector<double> losses;
  std::vector<double> wall_seconds;

  /// Mean of the last min(window, step) losses up to `step` (1-based).
  double moving_average(int step, int window = 200) const;
};

/// Runs `cfg.steps` optimizer steps, drawing batch items uniformly from the
/// data. Appends "step,loss,variant,wall_time" rows to csv when given.
/// on_step(step) runs after each update.
TrainLog train(Denoiser& model, const std::vector<CompositionSample>& data, const NoiseSchedule& s,
               const TrainConfig& cfg, const std::string& variant_label = "", std::ostream* csv = nullptr,
               const std::function<void(int)>& on_step = {});

struct InpaintRequest {
  Tensor32 masked_bg;   // pixels, mask_bg * I_gt
  Tensor32 mask_bg;     // [1 x S x S]
  Tensor32 masked_ref;  // pixels, mask_ref * I_ref
  Tensor32 mask_ref;    // [1 x S x S]

  static InpaintRequest from(const CompositionSample& sample);
};

/// Deterministic (eta = 0) sampling from pure noise over `steps` evenly
/// spaced timesteps, re-compositing the known region after every step. The
/// result is in the model domain; its known region equals the masked
/// background bitwise.
Tensor32 inpaint_sample(const InpaintRequest& req, const Denoiser& model, const NoiseSchedule& s, int steps,
                        std::mt19937_64& rng);

/// Descending timestep sequence used by the sampler, ending at 0.
std::vector<int> sampling_timesteps(int schedule_steps, int steps);

}  // namespace dscomp
