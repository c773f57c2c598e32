#include "axmlp/augment.hpp"

#include <cmath>
#include <numbers>

#include "axmlp/errors.hpp"

namespace axmlp::data {

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"enabled", c.enabled}, {"scale", c.scale}, {"rotation_deg", c.rotation_deg}, {"translation", c.translation}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  const AugmentConfig d;
  c.enabled = j.value("enabled", d.enabled);
  c.scale = j.value("scale", d.scale);
  c.rotation_deg = j.value("rotation_deg", d.rotation_deg);
  c.translation = j.value("translation", d.translation);
}

AffineParams sample_affine(const AugmentConfig& config, std::mt19937_64& rng) {
  auto draw = [&](const std::array<double, 2>& r) {
    return r[0] == r[1] ? r[0] : std::uniform_real_distribution<double>(r[0], r[1])(rng);
  };
  AffineParams p;
  p.scale = draw(config.scale);
  for (auto& a : p.rotation_deg) a = draw(config.rotation_deg);
  for (auto& t : p.translation) t = draw(config.translation);
  return p;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat3 rotation(int axis, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  Mat3 r{};
  r[axis][axis] = 1.0;
  r[i][i] = c;
  r[i][j] = -s;
  r[j][i] = s;
  r[j][j] = c;
  return r;
}

}  // namespace

std::pair<Volume, MaskVolume> augment_affine(const Volume& image, const MaskVolume& mask, const AffineParams& params) {
  if (image.shape != mask.shape) throw DimensionError("augment_affine: image and mask shapes differ");
  if (!(params.scale > 0.0)) throw ParameterError("augment_affine: scale must be positive");

  // Forward map p -> s*R*(p - c) + c + t with R = R2*R1*R0. Sampling uses the inverse.
  const Mat3 R = multiply(rotation(2, params.rotation_deg[2]),
                          multiply(rotation(1, params.rotation_deg[1]), rotation(0, params.rotation_deg[0])));
  const auto& shape = image.shape;
  const double center[3] = {static_cast<double>(shape[0] - 1) / 2.0, static_cast<double>(shape[1] - 1) / 2.0,
                            static_cast<double>(shape[2] - 1) / 2.0};
  const double inv_scale = 1.0 / params.scale;

  Volume out_image = image;
  MaskVolume out_mask = mask;
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };

  for (std::size_t d = 0; d < shape[0]; ++d)
    for (std::size_t h = 0; h < shape[1]; ++h)
      for (std::size_t w = 0; w < shape[2]; ++w) {
        const double q[3] = {static_cast<double>(d) - center[0] - params.translation[0],
                             static_cast<double>(h) - center[1] - params.translation[1],
                             static_cast<double>(w) - center[2] - params.translation[2]};
        double p[3];
        for (int i = 0; i < 3; ++i) {
          // R^T q / s + c
          double acc = 0.0;
          for (int k = 0; k < 3; ++k) acc += R[k][i] * q[k];
          p[i] = acc * inv_scale + center[i];
        }

        long base[3];
        double frac[3];
        for (int i = 0; i < 3; ++i) {
          const double fl = std::floor(p[i]);
          base[i] = static_cast<long>(fl);
          frac[i] = p[i] - fl;
        }
        double value = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
          double weight = 1.0;
          std::size_t idx[3];
          for (int i = 0; i < 3; ++i) {
            const int bit = (corner >> (2 - i)) & 1;
            weight *= bit ? frac[i] : 1.0 - frac[i];
            idx[i] = clampi(base[i] + bit, shape[i]);
          }
          if (weight != 0.0) value += weight * image.at(idx[0], idx[1], idx[2]);
        }
        out_image.at(d, h, w) = value;

        bool inside = true;
        long nn[3];
        for (int i = 0; i < 3; ++i) {
          nn[i] = std::lround(p[i]);
          inside = inside && nn[i] >= 0 && nn[i] < static_cast<long>(shape[i]);
        }
        out_mask.at(d, h, w) = inside ? mask.at(static_cast<std::size_t>(nn[0]), static_cast<std::size_t>(nn[1]),
                                               static_cast<std::size_t>(nn[2]))
                                      : 0.0;
      }
  return {std::move(out_image), std::move(out_mask)};
}

}  // namespace axmlp::data
