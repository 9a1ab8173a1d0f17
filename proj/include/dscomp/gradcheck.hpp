#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dscomp/parameter.hpp"

namespace dscomp {

struct GradCheckReport {
  bool passed = false;
  bool finite = true;
  /// Base point lies within the smoothness margin of a relu kink.
  bool non_smooth = false;
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
  std::string message;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so vanishing gradients are
  /// compared in absolute terms.
  double rel_floor = 1e-3;
  /// Minimum distance of any relu input from 0 at the base point.
  double kink_margin = 1e-4;
};

using ScalarFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of `fn` at `inputs` against central
/// differences, element by element.
GradCheckReport check_gradients(const ScalarFn& fn, const std::vector<Tensor64>& inputs,
                                const GradCheckOptions& opts = {});

/// Same comparison over the values of named parameters; `loss` rebuilds the
/// graph from the current parameter values on every call. Gradients of the
/// parameters are overwritten.
GradCheckReport check_parameter_gradients(const std::function<Var<double>()>& loss,
                                          const ParameterRefs<double>& params, const GradCheckOptions& opts = {});

}  // namespace dscomp
