#pragma once

#include <string>
#include <vector>

#include "axmlp/volume.hpp"

namespace axmlp::baselines {

enum class Provenance { Mean, Optimized };

/// Image-independent prediction shared by every subject.
struct ConstantMask {
  data::MaskVolume values;
  Provenance provenance = Provenance::Mean;
  std::string training_set;  // identifier of the masks it was fitted on
};

std::string to_string(Provenance p);

ConstantMask mean_mask(const std::vector<data::MaskVolume>& train_masks, std::string training_set = {});

/// Adam ascent on sum_y Dice(y, m) starting from the mean mask; m is clamped to
/// [0, 1] after every step. `history`, when given, receives the objective
/// before the first step and after each step.
ConstantMask optimized_mask(const std::vector<data::MaskVolume>& train_masks, std::size_t steps = 100, double lr = 1.0,
                            std::string training_set = {}, std::vector<double>* history = nullptr);

/// sum over masks of Dice(y, candidate).
double dice_objective(const std::vector<data::MaskVolume>& train_masks, const std::vector<double>& candidate);

}  // namespace axmlp::baselines
