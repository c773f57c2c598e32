#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>

#include "axmlp/tensor.hpp"

// Differentiable operations used by the Axial-MLP forward pass and its loss.
//
// Every op takes a nullable Tape*. With a tape, the op records a backward rule
// whenever some input requires a gradient; with nullptr it is a plain forward.

namespace axmlp::ops {

enum class Mode { Train, Eval };

/// Axes of the patch layout [B, Nd, Nh, Nw, sd, sh, sw, C].
enum class PatchAxis : std::size_t { GridD = 1, GridH = 2, GridW = 3, PatchD = 4, PatchH = 5, PatchW = 6 };

inline constexpr std::array<PatchAxis, 6> kPatchAxes = {PatchAxis::GridD,  PatchAxis::GridH,  PatchAxis::GridW,
                                                        PatchAxis::PatchD, PatchAxis::PatchH, PatchAxis::PatchW};

using Extent3 = std::array<std::size_t, 3>;

/// Fully connected layer over the joint (axis, channel) pair of `x`, shared
/// across every other axis. `axis` must not be the batch (0) or channel (last)
/// axis. weight is [a*f, a*f] acting on index i*f + c, bias is [a*f].
Tensor linear_along_axis(Tape* tape, const Tensor& x, std::size_t axis, const Tensor& weight, const Tensor& bias);
inline Tensor linear_along_axis(Tape* tape, const Tensor& x, PatchAxis axis, const Tensor& weight,
                                const Tensor& bias) {
  return linear_along_axis(tape, x, static_cast<std::size_t>(axis), weight, bias);
}

/// Pointwise dense layer on the last axis: weight [out, in], bias [out].
Tensor linear_channels(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor leaky_relu(Tape* tape, const Tensor& x, double slope);

/// Standardizes each batch element over all its non-batch entries, then applies
/// a scalar affine map. weight and bias are single-element tensors.
Tensor normalize_global(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias, double eps = 1e-5);

/// Inverted dropout with one keep decision per (batch, axis index, channel),
/// shared across the remaining axes. Identity in eval mode or at rate 0.
Tensor dropout_axial(Tape* tape, const Tensor& x, std::size_t axis, double rate, Mode mode, std::mt19937_64& rng);
inline Tensor dropout_axial(Tape* tape, const Tensor& x, PatchAxis axis, double rate, Mode mode,
                            std::mt19937_64& rng) {
  return dropout_axial(tape, x, static_cast<std::size_t>(axis), rate, mode, rng);
}

/// leaky_relu(linear_along_axis(dropout_axial(x))) on one axis as a single tape
/// node. Draws the same dropout mask from `rng` as dropout_axial would, and
/// avoids the intermediate tensors of the composition.
Tensor axial_branch(Tape* tape, const Tensor& x, std::size_t axis, const Tensor& weight, const Tensor& bias,
                    double slope, double rate, Mode mode, std::mt19937_64& rng);
inline Tensor axial_branch(Tape* tape, const Tensor& x, PatchAxis axis, const Tensor& weight, const Tensor& bias,
                           double slope, double rate, Mode mode, std::mt19937_64& rng) {
  return axial_branch(tape, x, static_cast<std::size_t>(axis), weight, bias, slope, rate, mode, rng);
}

/// Corner-aligned trilinear resampling of [B, D, H, W, C] to [B, D', H', W', C].
Tensor trilinear_resize(Tape* tape, const Tensor& x, Extent3 target);

/// [B, Nd*sd, Nh*sh, Nw*sw, C] -> [B, Nd, Nh, Nw, sd, sh, sw, C].
Tensor patchify(Tape* tape, const Tensor& x, Extent3 patch);
/// Inverse of patchify.
Tensor unpatchify(Tape* tape, const Tensor& x);

Tensor add(Tape* tape, std::span<const Tensor> terms);
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor scale(Tape* tape, const Tensor& x, double factor);
Tensor square(Tape* tape, const Tensor& x);
/// Sum of all entries, as a one-element tensor.
Tensor sum(Tape* tape, const Tensor& x);

/// Batch mean of 1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth),
/// each sum taken per batch element. Differentiable in `pred` only.
Tensor soft_dice_loss(Tape* tape, const Tensor& pred, const Tensor& target, double smooth = 1.0);

}  // namespace axmlp::ops
