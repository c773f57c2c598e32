#include "axmlp/optim.hpp"

#include <cmath>

#include "axmlp/errors.hpp"

namespace axmlp::optim {

void adam_step(const std::vector<nn::NamedParameter>& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].tensor.size())
      throw DimensionError("adam_step: moment shape mismatch for " + params[k].name);
    if (!params[k].tensor.has_grad()) continue;
    for (double g : params[k].tensor.grad())
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter block " + params[k].name);
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].tensor;
    auto w = p.data();
    auto g = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void TrainSchedule::validate() const {
  if (epochs == 0 || batch_size == 0) throw ParameterError("epochs and batch_size must be positive");
  if (decay_epoch >= epochs) throw ParameterError("decay_epoch must be smaller than epochs");
  if (!(lr_initial > 0.0 && lr_after > 0.0)) throw ParameterError("learning rates must be positive");
}

double lr_at(const TrainSchedule& schedule, std::size_t epoch) {
  if (epoch >= schedule.epochs)
    throw ParameterError("epoch " + std::to_string(epoch) + " outside schedule of " +
                         std::to_string(schedule.epochs) + " epochs");
  return epoch < schedule.decay_epoch ? schedule.lr_initial : schedule.lr_after;
}

}  // namespace axmlp::optim
