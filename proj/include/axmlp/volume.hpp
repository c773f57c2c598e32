#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace axmlp::data {

using Extent3 = std::array<std::size_t, 3>;
using Spacing3 = std::array<double, 3>;

/// Scalar 3D image, row-major with the last axis fastest: index (d*H + h)*W + w.
struct Volume {
  Extent3 shape{0, 0, 0};
  Spacing3 voxel_size{1.0, 1.0, 1.0};  // mm
  std::vector<double> data;
  std::string description;  // free text, persisted in the NIfTI descrip field

  Volume() = default;
  Volume(Extent3 shape, double fill = 0.0, Spacing3 voxel_size = {1.0, 1.0, 1.0});

  std::size_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const { return (d * shape[1] + h) * shape[2] + w; }
  double& at(std::size_t d, std::size_t h, std::size_t w) { return data[index(d, h, w)]; }
  double at(std::size_t d, std::size_t h, std::size_t w) const { return data[index(d, h, w)]; }

  /// Throws DimensionError / ParameterError on broken invariants.
  void validate() const;
};

/// Masks are volumes whose values lie in [0, 1].
using MaskVolume = Volume;

void validate_mask(const MaskVolume& mask);
bool is_binary(const MaskVolume& mask);

}  // namespace axmlp::data
