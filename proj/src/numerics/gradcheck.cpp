#include "dscomp/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "dscomp/ops.hpp"

namespace dscomp {

namespace {

double scalar_of(const Var<double>& out) {
  if (out.numel() != 1) throw ShapeError("check_gradients: function must return a scalar");
  return out.value()[0];
}

/// Shared core. `base` builds the recorded graph and returns the loss;
/// `probe(i, e, delta)` evaluates the loss with element e of input i shifted by
/// delta; `analytic(i)` reads the reverse-mode gradient after backward.
template <typename Base, typename Probe, typename Analytic>
GradCheckReport compare(Base&& base, Probe&& probe, Analytic&& analytic, const std::vector<std::size_t>& sizes,
                        const GradCheckOptions& opts) {
  GradCheckReport report;
  Var<double> out;
  double kink_distance = 0;
  {
    KinkMonitor monitor;
    out = base();
    kink_distance = monitor.min_distance();
  }
  if (!std::isfinite(scalar_of(out))) {
    report.finite = false;
    report.message = "non-finite function value at base point";
    return report;
  }
  if (kink_distance < opts.kink_margin) {
    report.non_smooth = true;
    std::ostringstream os;
    os << "relu input within " << kink_distance << " of the kink";
    report.message = os.str();
    return report;
  }
  out.backward();

  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const Tensor64 grad = analytic(i);
    for (std::size_t e = 0; e < sizes[i]; ++e) {
      const double fp = probe(i, e, opts.step);
      const double fm = probe(i, e, -opts.step);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.finite = false;
        report.message = "non-finite function value near input " + std::to_string(i) + " element " +
                         std::to_string(e);
        return report;
      }
      const double numeric = (fp - fm) / (2 * opts.step);
      const double a = grad[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.rel_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.elements_checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_element = e;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  std::ostringstream os;
  os << "max rel err " << report.max_rel_error << " at input " << report.worst_input << "[" << report.worst_element
     << "] analytic " << report.worst_analytic << " numeric " << report.worst_numeric;
  report.message = os.str();
  return report;
}

}  // namespace

GradCheckReport check_gradients(const ScalarFn& fn, const std::vector<Tensor64>& inputs,
                                const GradCheckOptions& opts) {
  std::vector<Var<double>> vars;
  std::vector<std::size_t> sizes;
  for (const auto& t : inputs) {
    vars.emplace_back(t, true);
    sizes.push_back(t.numel());
  }
  std::vector<Tensor64> shifted = inputs;
  auto probe = [&](std::size_t i, std::size_t e, double delta) {
    NoGradGuard guard;
    shifted[i][e] = inputs[i][e] + delta;
    std::vector<Var<double>> args;
    for (const auto& t : shifted) args.emplace_back(t, false);
    const double v = scalar_of(fn(args));
    shifted[i][e] = inputs[i][e];
    return v;
  };
  return compare([&] { return fn(vars); }, probe, [&](std::size_t i) { return vars[i].grad(); }, sizes, opts);
}

GradCheckReport check_parameter_gradients(const std::function<Var<double>()>& loss,
                                          const ParameterRefs<double>& params, const GradCheckOptions& opts) {
  std::vector<std::size_t> sizes;
  for (auto* p : params) {
    p->zero_grad();
    sizes.push_back(p->numel());
  }
  auto probe = [&](std::size_t i, std::size_t e, double delta) {
    NoGradGuard guard;
    auto& v = params[i]->mutable_value()[e];
    const double x0 = v;
    v = x0 + delta;
    const double f = scalar_of(loss());
    v = x0;
    return f;
  };
  return compare(loss, probe, [&](std::size_t i) { return params[i]->grad(); }, sizes, opts);
}

}  // namespace dscomp
