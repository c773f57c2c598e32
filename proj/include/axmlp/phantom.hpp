#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include <json.hpp>

#include "axmlp/volume.hpp"

namespace axmlp::data {

/// Procedural stand-in for a registered T1 scan: two dark ellipsoidal cavities,
/// each holding a bright curved tube (the segmentation target), a smooth
/// multiplicative bias field and Gaussian noise. Lengths are in voxels.
struct PhantomSpec {
  Extent3 shape{64, 64, 52};
  Spacing3 voxel_size{1.0, 1.0, 1.0};

  std::array<double, 3> cavity_radius_min{9.0, 7.0, 7.0};
  std::array<double, 3> cavity_radius_max{11.0, 9.0, 8.0};
  double cavity_separation = 0.22;  // centre offset along the last axis, fraction of its extent
  double center_jitter = 2.0;

  double arc_radius_min = 3.5;
  double arc_radius_max = 4.5;
  double ribbon_length_min = 9.0;
  double ribbon_length_max = 14.0;
  double thickness_min = 1.5;
  double thickness_max = 2.5;

  double tissue_intensity = 1.0;
  double cavity_intensity = 0.3;
  double ribbon_intensity = 1.8;
  double noise_sd = 0.05;
  double bias_amplitude = 0.1;

  std::string stratum = "medium";

  /// Copy with the ribbon length range scaled for a size class
  /// ("small" 0.75, "medium" 1.0, "large" 1.25).
  PhantomSpec for_stratum(const std::string& label) const;

  /// Throws ParameterError when the ribbon cannot fit strictly inside its
  /// cavity or the cavities cannot fit inside the volume.
  void validate() const;

  /// Guaranteed [lower, upper] voxel count of the generated mask.
  std::pair<double, double> mask_volume_bounds() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct Phantom {
  Volume image;
  MaskVolume mask;    // exact ribbon voxels, binary
  MaskVolume cavity;  // cavity voxels including the ribbon
};

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

}  // namespace axmlp::data
