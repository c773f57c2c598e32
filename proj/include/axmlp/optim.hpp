#pragma once

#include <cstddef>
#include <vector>

#include "axmlp/model.hpp"

namespace axmlp::optim {

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;  // one array per parameter block
  std::vector<std::vector<double>> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over named parameter blocks, using each
/// block's accumulated gradient. Gradients are left untouched.
/// Throws NumericalError naming the block if a gradient is not finite.
void adam_step(const std::vector<nn::NamedParameter>& params, AdamState& state, double lr);

struct TrainSchedule {
  std::size_t epochs = 200;
  double lr_initial = 1e-2;
  double lr_after = 1e-3;
  std::size_t decay_epoch = 150;
  std::size_t batch_size = 4;

  void validate() const;
};

double lr_at(const TrainSchedule& schedule, std::size_t epoch);

}  // namespace axmlp::optim
