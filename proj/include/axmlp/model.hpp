#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "axmlp/ops.hpp"
#include "axmlp/tensor.hpp"

namespace axmlp::nn {

using ops::Extent3;

/// Architecture hyperparameters. The grid is derived: grid[i] = crop[i] / patch[i] (floor).
struct ModelConfig {
  Extent3 crop_shape{102, 94, 76};
  Extent3 patch{8, 8, 8};
  std::size_t in_channels = 1;
  std::size_t hidden = 8;
  std::size_t depth = 6;
  double leaky_slope = 0.01;
  double dropout_rate = 0.02;

  Extent3 grid() const;
  /// Spatial extent the input is resampled to before patchify.
  Extent3 working_shape() const;
  /// Lengths of the six axial FC axes: grid then patch.
  std::array<std::size_t, 6> axis_lengths() const;
  /// Throws ParameterError when an invariant is violated.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct AxialLinear {
  Tensor weight;  // [a*f, a*f]
  Tensor bias;    // [a*f]
};

struct AxialBlock {
  std::array<AxialLinear, 6> axial;  // ordered as ops::kPatchAxes
  Tensor norm_weight;                // [1]
  Tensor norm_bias;                  // [1]
};

class AxialMLPModel {
 public:
  AxialMLPModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  /// Input [B, D, H, W, C] at crop_shape; output [B, D, H, W, 1] in (0, 1).
  Tensor forward(Tape* tape, const Tensor& input, ops::Mode mode, std::mt19937_64& rng) const;

  /// Parameters in a fixed order; the handles alias model storage.
  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const;

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(const std::vector<double>& values);
  void zero_grad();

  AxialMLPModel clone() const;

  Tensor embed_weight, embed_bias;  // [f, c], [f]
  std::vector<AxialBlock> blocks;
  Tensor head_weight, head_bias;  // [1, f], [1]

 private:
  AxialMLPModel() = default;
  ModelConfig config_;
};

/// Closed-form parameter count: L*(f^2*sum(a^2) + f*sum(a) + 2) + (c+1)f + f + 1.
/// With one input channel the embedding term is 2f.
std::uint64_t parameter_count(const ModelConfig& config);

/// Converts [D, H, W] volumes (same shape) into a [B, D, H, W, 1] tensor.
Tensor stack_volumes(const std::vector<const std::vector<double>*>& volumes, Extent3 shape);

}  // namespace axmlp::nn
