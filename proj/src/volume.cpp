#include "axmlp/volume.hpp"

#include "axmlp/errors.hpp"

namespace axmlp::data {

Volume::Volume(Extent3 s, double fill, Spacing3 spacing)
    : shape(s), voxel_size(spacing), data(s[0] * s[1] * s[2], fill) {
  validate();
}

void Volume::validate() const {
  for (auto e : shape)
    if (e == 0) throw DimensionError("volume extents must be positive");
  for (auto v : voxel_size)
    if (!(v > 0.0)) throw ParameterError("voxel sizes must be positive");
  if (data.size() != voxel_count()) throw DimensionError("volume data size does not match its shape");
}

void validate_mask(const MaskVolume& mask) {
  mask.validate();
  for (double v : mask.data)
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("mask values must lie in [0, 1]");
}

bool is_binary(const MaskVolume& mask) {
  for (double v : mask.data)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

}  // namespace axmlp::data
