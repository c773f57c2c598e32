#pragma once

#include <vector>

#include <json.hpp>

#include "axmlp/volume.hpp"

namespace axmlp::data {

/// Zero mean, unit (population) standard deviation over all voxels.
/// Throws UndefinedValueError for a constant image and NumericalError for
/// non-finite voxels.
Volume z_normalize(const Volume& v);

/// Inclusive voxel box [first, last] on each axis.
struct CropBox {
  Extent3 first{0, 0, 0};
  Extent3 last{0, 0, 0};

  Extent3 size() const { return {last[0] - first[0] + 1, last[1] - first[1] + 1, last[2] - first[2] + 1}; }
  bool operator==(const CropBox&) const = default;
};

void to_json(nlohmann::json& j, const CropBox& b);
void from_json(const nlohmann::json& j, CropBox& b);

/// Union bounding box of the nonzero voxels of all masks, grown by `margin`
/// and clamped to the grid.
CropBox crop_bbox(const std::vector<const MaskVolume*>& masks, std::size_t margin = 10);
CropBox crop_bbox(const std::vector<MaskVolume>& masks, std::size_t margin = 10);

Volume apply_crop(const Volume& v, const CropBox& box);

}  // namespace axmlp::data
