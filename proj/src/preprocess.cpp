#include "axmlp/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "axmlp/errors.hpp"

namespace axmlp::data {

Volume z_normalize(const Volume& v) {
  v.validate();
  const double n = static_cast<double>(v.data.size());
  double mean = 0.0;
  for (double x : v.data) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v.data) var += (x - mean) * (x - mean);
  var /= n;
  if (!std::isfinite(var)) throw NumericalError("z_normalize: image contains non-finite voxels");
  if (!(var > 0.0)) throw UndefinedValueError("z_normalize: constant image has zero variance");
  const double inv = 1.0 / std::sqrt(var);
  Volume out = v;
  for (auto& x : out.data) x = (x - mean) * inv;
  return out;
}

void to_json(nlohmann::json& j, const CropBox& b) { j = {{"first", b.first}, {"last", b.last}}; }
void from_json(const nlohmann::json& j, CropBox& b) {
  b.first = j.at("first").get<Extent3>();
  b.last = j.at("last").get<Extent3>();
}

CropBox crop_bbox(const std::vector<const MaskVolume*>& masks, std::size_t margin) {
  if (masks.empty()) throw ParameterError("crop_bbox: no masks");
  const Extent3 shape = masks.front()->shape;
  Extent3 lo{std::numeric_limits<std::size_t>::max(), std::numeric_limits<std::size_t>::max(),
             std::numeric_limits<std::size_t>::max()};
  Extent3 hi{0, 0, 0};
  bool any = false;
  for (const auto* m : masks) {
    if (m->shape != shape) throw DimensionError("crop_bbox: masks must share a grid");
    for (std::size_t d = 0; d < shape[0]; ++d)
      for (std::size_t h = 0; h < shape[1]; ++h)
        for (std::size_t w = 0; w < shape[2]; ++w) {
          if (m->at(d, h, w) == 0.0) continue;
          any = true;
          const Extent3 p{d, h, w};
          for (int k = 0; k < 3; ++k) {
            lo[k] = std::min(lo[k], p[k]);
            hi[k] = std::max(hi[k], p[k]);
          }
        }
  }
  if (!any) throw ParameterError("crop_bbox: all masks are empty");
  CropBox box;
  for (int k = 0; k < 3; ++k) {
    box.first[k] = lo[k] >= margin ? lo[k] - margin : 0;
    box.last[k] = std::min(hi[k] + margin, shape[k] - 1);
  }
  return box;
}

CropBox crop_bbox(const std::vector<MaskVolume>& masks, std::size_t margin) {
  std::vector<const MaskVolume*> ptrs;
  for (const auto& m : masks) ptrs.push_back(&m);
  return crop_bbox(ptrs, margin);
}

Volume apply_crop(const Volume& v, const CropBox& box) {
  for (int k = 0; k < 3; ++k)
    if (box.first[k] > box.last[k] || box.last[k] >= v.shape[k])
      throw DimensionError("apply_crop: box outside volume");
  Volume out(box.size(), 0.0, v.voxel_size);
  out.description = v.description;
  const auto s = box.size();
  for (std::size_t d = 0; d < s[0]; ++d)
    for (std::size_t h = 0; h < s[1]; ++h)
      for (std::size_t w = 0; w < s[2]; ++w)
        out.at(d, h, w) = v.at(d + box.first[0], h + box.first[1], w + box.first[2]);
  return out;
}

}  // namespace axmlp::data
