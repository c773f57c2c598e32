#include "axmlp/model.hpp"

#include <cmath>

#include "axmlp/errors.hpp"

namespace axmlp::nn {

Extent3 ModelConfig::grid() const {
  return {crop_shape[0] / patch[0], crop_shape[1] / patch[1], crop_shape[2] / patch[2]};
}

Extent3 ModelConfig::working_shape() const {
  const auto g = grid();
  return {g[0] * patch[0], g[1] * patch[1], g[2] * patch[2]};
}

std::array<std::size_t, 6> ModelConfig::axis_lengths() const {
  const auto g = grid();
  return {g[0], g[1], g[2], patch[0], patch[1], patch[2]};
}

void ModelConfig::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (patch[i] == 0) throw ParameterError("patch sizes must be >= 1");
    if (crop_shape[i] < patch[i])
      throw ParameterError("crop extent " + std::to_string(crop_shape[i]) + " smaller than patch " +
                           std::to_string(patch[i]));
  }
  if (in_channels < 1 || hidden < 1 || depth < 1) throw ParameterError("in_channels, hidden and depth must be >= 1");
  if (!(leaky_slope >= 0.0)) throw ParameterError("leaky_slope must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout_rate must lie in [0, 1)");
}

std::uint64_t parameter_count(const ModelConfig& config) {
  config.validate();
  std::uint64_t sum_a = 0, sum_a2 = 0;
  for (auto a : config.axis_lengths()) {
    sum_a += a;
    sum_a2 += a * a;
  }
  const std::uint64_t f = config.hidden, c = config.in_channels, L = config.depth;
  return L * (f * f * sum_a2 + f * sum_a + 2) + c * f + f + f + 1;
}

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

AxialMLPModel::AxialMLPModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t f = config_.hidden, c = config_.in_channels;
  embed_weight = uniform({f, c}, 1.0 / std::sqrt(static_cast<double>(c)), rng);
  embed_bias = Tensor::zeros({f}, true);
  const auto lengths = config_.axis_lengths();
  blocks.resize(config_.depth);
  for (auto& block : blocks) {
    for (std::size_t k = 0; k < 6; ++k) {
      const std::size_t n = lengths[k] * f;
      block.axial[k].weight = uniform({n, n}, 1.0 / std::sqrt(static_cast<double>(n)), rng);
      block.axial[k].bias = Tensor::zeros({n}, true);
    }
    block.norm_weight = Tensor::scalar(1.0, true);
    block.norm_bias = Tensor::scalar(0.0, true);
  }
  head_weight = uniform({1, f}, 1.0 / std::sqrt(static_cast<double>(f)), rng);
  head_bias = Tensor::zeros({1}, true);
}

Tensor AxialMLPModel::forward(Tape* tape, const Tensor& input, ops::Mode mode, std::mt19937_64& rng) const {
  const auto& crop = config_.crop_shape;
  if (input.rank() != 5 || input.dim(1) != crop[0] || input.dim(2) != crop[1] || input.dim(3) != crop[2] ||
      input.dim(4) != config_.in_channels)
    throw DimensionError("model input " + shape_string(input.shape()) + " does not match [B," +
                         std::to_string(crop[0]) + "," + std::to_string(crop[1]) + "," + std::to_string(crop[2]) +
                         "," + std::to_string(config_.in_channels) + "]");

  Tensor x = ops::trilinear_resize(tape, input, config_.working_shape());
  x = ops::patchify(tape, x, config_.patch);
  x = ops::linear_channels(tape, x, embed_weight, embed_bias);
  for (const auto& block : blocks) {
    std::vector<Tensor> branches;
    branches.reserve(6);
    for (std::size_t k = 0; k < 6; ++k) {
      const auto axis = ops::kPatchAxes[k];
      branches.push_back(ops::axial_branch(tape, x, axis, block.axial[k].weight, block.axial[k].bias,
                                           config_.leaky_slope, config_.dropout_rate, mode, rng));
    }
    Tensor summed = ops::add(tape, branches);
    branches.clear();
    x = ops::normalize_global(tape, summed, block.norm_weight, block.norm_bias);
  }
  x = ops::linear_channels(tape, x, head_weight, head_bias);
  x = ops::sigmoid(tape, x);
  x = ops::unpatchify(tape, x);
  return ops::trilinear_resize(tape, x, crop);
}

std::vector<NamedParameter> AxialMLPModel::parameters() const {
  static constexpr const char* kAxisNames[6] = {"grid_d", "grid_h", "grid_w", "patch_d", "patch_h", "patch_w"};
  std::vector<NamedParameter> out{{"embed.weight", embed_weight}, {"embed.bias", embed_bias}};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string prefix = "block" + std::to_string(l) + ".";
    for (std::size_t k = 0; k < 6; ++k) {
      out.push_back({prefix + kAxisNames[k] + ".weight", blocks[l].axial[k].weight});
      out.push_back({prefix + kAxisNames[k] + ".bias", blocks[l].axial[k].bias});
    }
    out.push_back({prefix + "norm.weight", blocks[l].norm_weight});
    out.push_back({prefix + "norm.bias", blocks[l].norm_bias});
  }
  out.push_back({"head.weight", head_weight});
  out.push_back({"head.bias", head_bias});
  return out;
}

std::size_t AxialMLPModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

std::vector<double> AxialMLPModel::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& p : parameters()) flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
  return flat;
}

void AxialMLPModel::set_flat_parameters(const std::vector<double>& values) {
  if (values.size() != parameter_count())
    throw DimensionError("parameter vector has " + std::to_string(values.size()) + " entries, model expects " +
                         std::to_string(parameter_count()));
  std::size_t offset = 0;
  for (auto& p : parameters()) {
    auto d = p.tensor.data();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), d.size(), d.begin());
    offset += d.size();
  }
}

void AxialMLPModel::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

AxialMLPModel AxialMLPModel::clone() const {
  AxialMLPModel copy;
  copy.config_ = config_;
  copy.embed_weight = embed_weight.clone();
  copy.embed_bias = embed_bias.clone();
  copy.blocks.resize(blocks.size());
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    for (std::size_t k = 0; k < 6; ++k) {
      copy.blocks[l].axial[k].weight = blocks[l].axial[k].weight.clone();
      copy.blocks[l].axial[k].bias = blocks[l].axial[k].bias.clone();
    }
    copy.blocks[l].norm_weight = blocks[l].norm_weight.clone();
    copy.blocks[l].norm_bias = blocks[l].norm_bias.clone();
  }
  copy.head_weight = head_weight.clone();
  copy.head_bias = head_bias.clone();
  return copy;
}

Tensor stack_volumes(const std::vector<const std::vector<double>*>& volumes, Extent3 shape) {
  const std::size_t n = shape[0] * shape[1] * shape[2];
  std::vector<double> data;
  data.reserve(n * volumes.size());
  for (const auto* v : volumes) {
    if (v->size() != n) throw DimensionError("stack_volumes: volume size mismatch");
    data.insert(data.end(), v->begin(), v->end());
  }
  return Tensor::from({volumes.size(), shape[0], shape[1], shape[2], 1}, std::move(data));
}

}  // namespace axmlp::nn
