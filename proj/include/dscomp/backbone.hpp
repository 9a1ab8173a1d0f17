#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dscomp/attention.hpp"

namespace dscomp {

/// Model-domain inputs shared by both backbone kinds. Images are [3 x S x S]
/// in [-1, 1]; the mask is [1 x S x S] with 1 on the preserved background.
template <Real T>
struct BackboneInput {
  Tensor<T> noisy;
  Tensor<T> mask;
  Tensor<T> masked_bg;
  /// Masked reference image; absent means no reference stream.
  std::optional<Tensor<T>> reference;
  int t = 0;
};

/// Per-stream features recorded at one interaction layer. All token matrices
/// are [tokens x width] in raster order over a height x width grid.
template <Real T>
struct StreamFeatures {
  StreamTag tag = StreamTag::Background;
  Var<T> normed;     // input to the attention operator
  Var<T> attention;  // attention operator output
  Var<T> output;     // block output (the layer feature)
};

template <Real T>
struct LayerTrace {
  std::string layer_id;
  std::int64_t grid_h = 0, grid_w = 0;
  StreamFeatures<T> bg;
  std::optional<StreamFeatures<T>> ref;
};

template <Real T>
struct BackboneOutput {
  Var<T> eps;  // [3 x S x S]
  std::vector<LayerTrace<T>> traces;
};

/// Stacks noisy, mask and masked image into the 7-channel background input.
template <Real T>
Tensor<T> background_channels(const BackboneInput<T>& in);
/// Reference stream input: [reference, ones, reference].
template <Real T>
Tensor<T> reference_channels(const Tensor<T>& reference);

void check_timestep(int t, int max_timestep);

}  // namespace dscomp
