#pragma once

#include <cstdint>
#include <filesystem>

#include "axmlp/volume.hpp"

namespace axmlp::data {

/// Subset of NIfTI-1 datatype codes supported for single-file 3D volumes.
enum class NiftiType : std::int16_t { UInt8 = 2, Int16 = 4, Float32 = 16, Float64 = 64 };

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiDataOffset = 352;

/// Reads an uncompressed single-file NIfTI-1 (.nii) volume. Header byte order
/// is detected from sizeof_hdr. scl_slope/scl_inter are applied when the slope
/// is nonzero. Throws ParseError with the offending byte offset.
Volume read_volume(const std::filesystem::path& path);

/// Writes `v` with the given on-disk type. Integer types require integral
/// values inside the type's range.
void write_volume(const std::filesystem::path& path, const Volume& v, NiftiType type = NiftiType::Float32);

}  // namespace axmlp::data
