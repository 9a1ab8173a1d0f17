#include <cmath>
#include <ostream>
#include <sstream>

#include "dscomp/diffusion.hpp"

namespace dscomp {

namespace {

std::string snapshot(const std::vector<int>& ts, std::size_t item, const Tensor32& pred) {
  std::ostringstream os;
  os << "non-finite loss at batch item " << item << " (timesteps";
  for (int t : ts) os << ' ' << t;
  std::size_t bad = 0;
  for (float v : pred.data()) bad += !std::isfinite(v);
  os << "); prediction has " << bad << " non-finite of " << pred.numel() << " entries";
  return os.str();
}

}  // namespace

StepResult training_step(const std::vector<const CompositionSample*>& batch, Denoiser& model,
                         const NoiseSchedule& s, std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
  StepResult result;
  std::uniform_int_distribution<int> pick_t(1, s.steps);
  const float weight = 1.0f / static_cast<float>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& sample = *batch[i];
    const int t = pick_t(rng);
    result.timesteps.push_back(t);
    const auto eps = standard_normal(sample.gt.shape(), rng);
    const auto noisy = add_noise(to_model(sample.gt), t, eps, s);
    auto out = model.predict(make_input(sample, noisy, t, model.uses_reference()));
    auto loss = mean(square(sub(out.eps, constant(eps))));
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw NumericalError(snapshot(result.timesteps, i, out.eps.value()));
    result.loss += value * weight;
    if (loss.requires_grad()) scale(loss, weight).backward();
  }
  return result;
}

void Adam::step(const ParameterRefs<float>& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->numel(), 0.0f);
      v_[i].assign(params[i]->numel(), 0.0f);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, double(t_));
  const double c2 = 1.0 - std::pow(b2_, double(t_));
  const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
  const float b1 = float(b1_), b2 = float(b2_), eps = static_cast<float>(eps_ * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (!p->trainable()) continue;
    auto& node = *p->var.node();
    if (node.grad.numel() != node.value.numel()) continue;  // never reached by the loss
    auto& m = m_[i];
    auto& v = v_[i];
    auto& w = p->mutable_value();
    auto& g = node.grad;
    for (std::size_t j = 0; j < w.numel(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      w[j] -= step * m[j] / (std::sqrt(v[j]) + eps);
    }
    g.fill(0.0f);
  }
}

double TrainLog::moving_average(int step, int window) const {
  if (step < 1 || step > static_cast<int>(losses.size())) throw std::out_of_range("moving_average: step out of range");
  const int n = std::min(window, step);
  double s = 0;
  for (int i = step - n; i < step; ++i) s += losses[static_cast<std::size_t>(i)];
  return s / n;
}

TrainLog train(Denoiser& model, const std::vector<CompositionSample>& data, const NoiseSchedule& s,
               const TrainConfig& cfg, const std::string& variant_label, std::ostream* csv,
               const std::function<void(int)>& on_step) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch < 1 || cfg.steps < 0) throw std::invalid_argument("train: batch must be positive, steps non-negative");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  Adam opt(cfg.lr);
  const auto params = model.trainable_parameters();
  zero_grad(params);
  TrainLog log;
  const auto start = std::chrono::steady_clock::now();
  if (csv) *csv << "step,loss,variant,wall_time\n";
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<const CompositionSample*> batch;
    for (int b = 0; b < cfg.batch; ++b) batch.push_back(&data[pick(rng)]);
    const auto r = training_step(batch, model, s, rng);
    opt.step(params);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.losses.push_back(r.loss);
    log.wall_seconds.push_back(wall);
    if (csv) *csv << step << ',' << r.loss << ',' << variant_label << ',' << wall << '\n';
    if (on_step) on_step(step);
  }
  return log;
}

}  // namespace dscomp
