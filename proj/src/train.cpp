#include "axmlp/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>

#include "axmlp/errors.hpp"
#include "axmlp/metrics.hpp"
#include "axmlp/rng.hpp"

namespace axmlp::optim {

namespace {

Tensor as_input(const data::Volume& v) {
  return Tensor::from({1, v.shape[0], v.shape[1], v.shape[2], 1}, v.data);
}

}  // namespace

data::MaskVolume predict(const nn::AxialMLPModel& model, const data::Volume& image) {
  std::mt19937_64 unused(0);
  const Tensor out = model.forward(nullptr, as_input(image), ops::Mode::Eval, unused);
  data::MaskVolume mask(image.shape, 0.0, image.voxel_size);
  std::copy(out.data().begin(), out.data().end(), mask.data.begin());
  return mask;
}

double sample_loss(const nn::AxialMLPModel& model, const Sample& sample, double smooth) {
  const auto pred = predict(model, sample.image);
  const Tensor p = Tensor::from({1, pred.data.size()}, pred.data);
  const Tensor t = Tensor::from({1, sample.mask.data.size()}, sample.mask.data);
  return ops::soft_dice_loss(nullptr, p, t, smooth).item();
}

double mean_dice(const nn::AxialMLPModel& model, const std::vector<Sample>& samples) {
  double acc = 0.0;
  for (const auto& s : samples) {
    const auto pred = predict(model, s.image);
    acc += metrics::dice(pred.data, s.mask.data).value_or(0.0);
  }
  return acc / static_cast<double>(samples.size());
}

TrainResult train(nn::AxialMLPModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainSchedule& schedule, const data::AugmentConfig& augment, const TrainOptions& options) {
  if (train_set.empty() || val_set.empty()) throw ParameterError("train: training and validation sets must be nonempty");
  schedule.validate();
  const auto& crop = model.config().crop_shape;
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set)
      if (s.image.shape != crop || s.mask.shape != crop)
        throw DimensionError("train: sample '" + s.id + "' is not at the model crop shape");

  const auto params = model.parameters();
  AdamState adam;
  TrainResult result;
  result.best_val_dice = -1.0;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = lr_at(schedule, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(options.seed, {0x5u, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t stop = std::min(start + schedule.batch_size, order.size());
      const double weight = 1.0 / static_cast<double>(stop - start);
      model.zero_grad();
      for (std::size_t b = start; b < stop; ++b) {
        const auto& sample = train_set[order[b]];
        std::mt19937_64 rng(derive_seed(options.seed, {epoch, order[b]}));
        const data::Volume* image = &sample.image;
        const data::MaskVolume* mask = &sample.mask;
        std::pair<data::Volume, data::MaskVolume> augmented;
        if (augment.enabled) {
          augmented = data::augment_affine(sample.image, sample.mask, data::sample_affine(augment, rng));
          image = &augmented.first;
          mask = &augmented.second;
        }
        Tape tape;
        const Tensor pred = model.forward(&tape, as_input(*image), ops::Mode::Train, rng);
        const Tensor target = Tensor::from(pred.shape(), mask->data);
        const Tensor loss = ops::soft_dice_loss(&tape, pred, target, options.dice_smooth);
        if (!std::isfinite(loss.item()))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " on sample '" + sample.id + "'");
        loss_sum += loss.item();
        tape.backward(ops::scale(&tape, loss, weight), {.retain_intermediate = false});
      }
      adam_step(params, adam, lr);
    }

    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(train_set.size()), mean_dice(model, val_set)};
    result.history.push_back(rec);
    if (rec.val_dice > result.best_val_dice) {
      result.best_val_dice = rec.val_dice;
      result.best_epoch = epoch;
      result.best = nn::make_checkpoint(model, {{"epoch", epoch}, {"val_dice", rec.val_dice}});
    }
    if (options.log)
      *options.log << "epoch=" << epoch << " lr=" << lr << " train_loss=" << std::setprecision(6) << std::fixed
                   << rec.train_loss << " val_dice=" << rec.val_dice << std::defaultfloat << '\n'
                   << std::flush;
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

}  // namespace axmlp::optim
