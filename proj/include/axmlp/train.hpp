#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "axmlp/augment.hpp"
#include "axmlp/checkpoint.hpp"
#include "axmlp/model.hpp"
#include "axmlp/optim.hpp"
#include "axmlp/volume.hpp"

namespace axmlp::optim {

/// A preprocessed (z-normalized, cropped) image with its mask.
struct Sample {
  std::string id;
  data::Volume image;
  data::MaskVolume mask;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dice = 0.0;
};

struct TrainResult {
  nn::Checkpoint best;  // meta holds "epoch" and "val_dice"
  std::size_t best_epoch = 0;
  double best_val_dice = 0.0;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;  // one line per epoch when set
  double dice_smooth = 1.0;
  /// Called after each epoch with the record just appended.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mini-batch training with per-epoch validation. The returned checkpoint is
/// the parameter state with the highest mean validation soft Dice (earliest
/// epoch on ties). The batch loss is the mean of per-sample soft-Dice losses;
/// samples of a batch are processed one at a time with gradient accumulation.
TrainResult train(nn::AxialMLPModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainSchedule& schedule, const data::AugmentConfig& augment, const TrainOptions& options);

/// Eval-mode prediction for one image at the model's crop shape.
data::MaskVolume predict(const nn::AxialMLPModel& model, const data::Volume& image);

/// Soft-Dice loss of one sample in eval mode.
double sample_loss(const nn::AxialMLPModel& model, const Sample& sample, double smooth = 1.0);

/// Mean soft Dice of eval-mode predictions.
double mean_dice(const nn::AxialMLPModel& model, const std::vector<Sample>& samples);

}  // namespace axmlp::optim
