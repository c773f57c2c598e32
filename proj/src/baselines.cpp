#include "axmlp/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "axmlp/errors.hpp"

namespace axmlp::baselines {

std::string to_string(Provenance p) { return p == Provenance::Mean ? "mean" : "optimized"; }

namespace {

void check_set(const std::vector<data::MaskVolume>& masks) {
  if (masks.empty()) throw ParameterError("baseline needs at least one training mask");
  for (const auto& m : masks)
    if (m.shape != masks.front().shape) throw DimensionError("training masks must share a shape");
}

}  // namespace

ConstantMask mean_mask(const std::vector<data::MaskVolume>& train_masks, std::string training_set) {
  check_set(train_masks);
  ConstantMask out{data::Volume(train_masks.front().shape, 0.0, train_masks.front().voxel_size), Provenance::Mean,
                   std::move(training_set)};
  for (const auto& m : train_masks)
    for (std::size_t i = 0; i < m.data.size(); ++i) out.values.data[i] += m.data[i];
  const double inv = 1.0 / static_cast<double>(train_masks.size());
  for (auto& v : out.values.data) v = std::clamp(v * inv, 0.0, 1.0);
  out.values.description = "baseline=mean";
  return out;
}

double dice_objective(const std::vector<data::MaskVolume>& train_masks, const std::vector<double>& candidate) {
  double sum_c = 0.0;
  for (double v : candidate) sum_c += v;
  double total = 0.0;
  for (const auto& y : train_masks) {
    double inter = 0.0, sum_y = 0.0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      inter += y.data[i] * candidate[i];
      sum_y += y.data[i];
    }
    const double den = sum_y + sum_c;
    total += den > 0.0 ? 2.0 * inter / den : 0.0;
  }
  return total;
}

ConstantMask optimized_mask(const std::vector<data::MaskVolume>& train_masks, std::size_t steps, double lr,
                            std::string training_set, std::vector<double>* history) {
  ConstantMask out = mean_mask(train_masks, std::move(training_set));
  out.provenance = Provenance::Optimized;
  out.values.description = "baseline=optimized";
  auto& m = out.values.data;
  const std::size_t n = m.size();

  std::vector<double> sum_y(train_masks.size(), 0.0);
  for (std::size_t k = 0; k < train_masks.size(); ++k)
    for (double v : train_masks[k].data) sum_y[k] += v;

  if (history) history->assign(1, dice_objective(train_masks, m));
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> first(n, 0.0), second(n, 0.0), grad(n);
  for (std::size_t t = 1; t <= steps; ++t) {
    // d/dm_i of sum_k 2*I_k/(S_k + S_m), negated for descent.
    double sum_m = 0.0;
    for (double v : m) sum_m += v;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t k = 0; k < train_masks.size(); ++k) {
      const auto& y = train_masks[k].data;
      double inter = 0.0;
      for (std::size_t i = 0; i < n; ++i) inter += y[i] * m[i];
      const double den = sum_y[k] + sum_m;
      if (den <= 0.0) continue;
      const double a = 2.0 / den, b = 2.0 * inter / (den * den);
      for (std::size_t i = 0; i < n; ++i) grad[i] -= a * y[i] - b;
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
      first[i] = beta1 * first[i] + (1.0 - beta1) * grad[i];
      second[i] = beta2 * second[i] + (1.0 - beta2) * grad[i] * grad[i];
      m[i] -= lr * (first[i] / c1) / (std::sqrt(second[i] / c2) + eps);
      m[i] = std::clamp(m[i], 0.0, 1.0);
    }
    if (history) history->push_back(dice_objective(train_masks, m));
  }
  return out;
}

}  // namespace axmlp::baselines
