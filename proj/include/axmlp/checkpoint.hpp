#pragma once

#include <filesystem>
#include <json.hpp>

#include "axmlp/model.hpp"

namespace axmlp::nn {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Binary checkpoint layout (all integers in writer byte order):
///   "AXMLPCKP" | u32 version | u32 0x01020304 | u64 n | n bytes JSON header
///   | u64 count | count x f64 parameters
/// The JSON header holds {"config": ..., "meta": ...}.
struct Checkpoint {
  ModelConfig config;
  std::vector<double> parameters;
  nlohmann::json meta = nlohmann::json::object();

  AxialMLPModel instantiate() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint make_checkpoint(const AxialMLPModel& model, nlohmann::json meta = nlohmann::json::object());
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Validates magic, version, byte order and that the stored parameter count
/// equals parameter_count(config).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace axmlp::nn
