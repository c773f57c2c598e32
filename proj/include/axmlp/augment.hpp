#pragma once

#include <random>
#include <utility>

#include <json.hpp>

#include "axmlp/volume.hpp"

namespace axmlp::data {

struct AffineParams {
  double scale = 1.0;
  std::array<double, 3> rotation_deg{0.0, 0.0, 0.0};  // about axes 0, 1, 2, applied in that order
  std::array<double, 3> translation{0.0, 0.0, 0.0};   // voxels
};

struct AugmentConfig {
  bool enabled = true;
  std::array<double, 2> scale{0.9, 1.2};
  std::array<double, 2> rotation_deg{-10.0, 10.0};
  std::array<double, 2> translation{-5.0, 5.0};
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

AffineParams sample_affine(const AugmentConfig& config, std::mt19937_64& rng);

/// Applies scale and rotations about the volume centre, then translation.
/// The image is resampled trilinearly (edge-clamped), the mask by nearest
/// neighbour (zero outside). Shapes are preserved.
std::pair<Volume, MaskVolume> augment_affine(const Volume& image, const MaskVolume& mask, const AffineParams& params);

}  // namespace axmlp::data
