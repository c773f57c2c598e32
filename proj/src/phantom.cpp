#include "axmlp/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "axmlp/errors.hpp"

namespace axmlp::data {

namespace {

constexpr double kHalfDiagonal = 0.8660254037844386;  // sqrt(3)/2
constexpr double kArcStep = 0.05;

struct Vec3 {
  double x, y, z;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double tube_upper(double radius, double length) {
  const double R = radius + kHalfDiagonal;
  return std::numbers::pi * R * R * length + 4.0 / 3.0 * std::numbers::pi * R * R * R;
}

double tube_lower(double radius, double length) {
  const double r = std::max(0.0, radius - kHalfDiagonal - kArcStep / 2);
  return std::max(1.0, std::numbers::pi * r * r * length);
}

}  // namespace

PhantomSpec PhantomSpec::for_stratum(const std::string& label) const {
  double factor;
  if (label == "small")
    factor = 0.75;
  else if (label == "medium")
    factor = 1.0;
  else if (label == "large")
    factor = 1.25;
  else
    throw ParameterError("unknown phantom stratum '" + label + "'");
  PhantomSpec s = *this;
  s.stratum = label;
  s.ribbon_length_min *= factor;
  s.ribbon_length_max *= factor;
  return s;
}

void PhantomSpec::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (shape[i] < 4) throw ParameterError("phantom extents must be >= 4");
    if (!(cavity_radius_min[i] > 0.0 && cavity_radius_min[i] <= cavity_radius_max[i]))
      throw ParameterError("cavity radius range invalid");
  }
  if (!(arc_radius_min > 0.0 && arc_radius_min <= arc_radius_max)) throw ParameterError("arc radius range invalid");
  if (!(ribbon_length_min > 0.0 && ribbon_length_min <= ribbon_length_max))
    throw ParameterError("ribbon length range invalid");
  if (!(thickness_min >= 1.0 && thickness_min <= thickness_max && thickness_max <= 3.0))
    throw ParameterError("ribbon thickness range must lie within [1, 3] voxels");
  if (!(noise_sd >= 0.0 && bias_amplitude >= 0.0 && bias_amplitude < 1.0 && center_jitter >= 0.0))
    throw ParameterError("noise, bias and jitter must be non-negative (bias < 1)");
  if (thickness_max / 2.0 >= arc_radius_min) throw ParameterError("ribbon thicker than its curvature radius");
  if (ribbon_length_max > 0.9 * 2.0 * std::numbers::pi * arc_radius_min)
    throw ParameterError("ribbon longer than its arc can hold");

  const double min_cavity = *std::min_element(cavity_radius_min.begin(), cavity_radius_min.end());
  if (arc_radius_max + thickness_max / 2.0 + 1.0 > min_cavity)
    throw ParameterError("ribbon does not fit inside the smallest cavity");

  const double center_w = static_cast<double>(shape[2] - 1) / 2.0;
  const double offset = cavity_separation * static_cast<double>(shape[2]);
  for (std::size_t i = 0; i < 3; ++i) {
    const double c = static_cast<double>(shape[i] - 1) / 2.0;
    const double reach = cavity_radius_max[i] + center_jitter;
    const double lo = (i == 2 ? center_w - offset : c) - reach;
    const double hi = (i == 2 ? center_w + offset : c) + reach;
    if (lo < 0.0 || hi > static_cast<double>(shape[i] - 1))
      throw ParameterError("cavities do not fit inside the volume");
  }
  if (2.0 * offset <= 2.0 * (cavity_radius_max[2] + center_jitter)) throw ParameterError("cavities may overlap");
}

std::pair<double, double> PhantomSpec::mask_volume_bounds() const {
  return {2.0 * tube_lower(thickness_min / 2.0, ribbon_length_min),
          2.0 * tube_upper(thickness_max / 2.0, ribbon_length_max)};
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"shape", s.shape},
       {"voxel_size", s.voxel_size},
       {"cavity_radius_min", s.cavity_radius_min},
       {"cavity_radius_max", s.cavity_radius_max},
       {"cavity_separation", s.cavity_separation},
       {"center_jitter", s.center_jitter},
       {"arc_radius_min", s.arc_radius_min},
       {"arc_radius_max", s.arc_radius_max},
       {"ribbon_length_min", s.ribbon_length_min},
       {"ribbon_length_max", s.ribbon_length_max},
       {"thickness_min", s.thickness_min},
       {"thickness_max", s.thickness_max},
       {"tissue_intensity", s.tissue_intensity},
       {"cavity_intensity", s.cavity_intensity},
       {"ribbon_intensity", s.ribbon_intensity},
       {"noise_sd", s.noise_sd},
       {"bias_amplitude", s.bias_amplitude},
       {"stratum", s.stratum}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  const PhantomSpec d;
#define AXMLP_FIELD(name) s.name = j.value(#name, d.name)
  AXMLP_FIELD(shape);
  AXMLP_FIELD(voxel_size);
  AXMLP_FIELD(cavity_radius_min);
  AXMLP_FIELD(cavity_radius_max);
  AXMLP_FIELD(cavity_separation);
  AXMLP_FIELD(center_jitter);
  AXMLP_FIELD(arc_radius_min);
  AXMLP_FIELD(arc_radius_max);
  AXMLP_FIELD(ribbon_length_min);
  AXMLP_FIELD(ribbon_length_max);
  AXMLP_FIELD(thickness_min);
  AXMLP_FIELD(thickness_max);
  AXMLP_FIELD(tissue_intensity);
  AXMLP_FIELD(cavity_intensity);
  AXMLP_FIELD(ribbon_intensity);
  AXMLP_FIELD(noise_sd);
  AXMLP_FIELD(bias_amplitude);
  AXMLP_FIELD(stratum);
#undef AXMLP_FIELD
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const auto [D, H, W] = spec.shape;
  Phantom out{Volume(spec.shape, 0.0, spec.voxel_size), Volume(spec.shape, 0.0, spec.voxel_size),
              Volume(spec.shape, 0.0, spec.voxel_size)};

  const double offset = spec.cavity_separation * static_cast<double>(W);
  for (int side = 0; side < 2; ++side) {
    Vec3 center{static_cast<double>(D - 1) / 2.0, static_cast<double>(H - 1) / 2.0,
                static_cast<double>(W - 1) / 2.0 + (side == 0 ? -offset : offset)};
    center = center + Vec3{uniform(-spec.center_jitter, spec.center_jitter),
                           uniform(-spec.center_jitter, spec.center_jitter),
                           uniform(-spec.center_jitter, spec.center_jitter)};
    const Vec3 radii{uniform(spec.cavity_radius_min[0], spec.cavity_radius_max[0]),
                     uniform(spec.cavity_radius_min[1], spec.cavity_radius_max[1]),
                     uniform(spec.cavity_radius_min[2], spec.cavity_radius_max[2])};
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const double a = (static_cast<double>(d) - center.x) / radii.x;
          const double b = (static_cast<double>(h) - center.y) / radii.y;
          const double c = (static_cast<double>(w) - center.z) / radii.z;
          if (a * a + b * b + c * c <= 1.0) out.cavity.at(d, h, w) = 1.0;
        }

    // Centreline: circular arc around the cavity centre in a random plane.
    const double rho = uniform(spec.arc_radius_min, spec.arc_radius_max);
    const double length = uniform(spec.ribbon_length_min, spec.ribbon_length_max);
    const double radius = uniform(spec.thickness_min, spec.thickness_max) / 2.0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 normal{gauss(rng), gauss(rng), gauss(rng)};
    while (normal.norm() < 1e-6) normal = {gauss(rng), gauss(rng), gauss(rng)};
    normal = normal * (1.0 / normal.norm());
    Vec3 helper = std::fabs(normal.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 u = cross(normal, helper);
    u = u * (1.0 / u.norm());
    const Vec3 v = cross(normal, u);
    const double theta0 = uniform(0.0, 2.0 * std::numbers::pi);
    const double span = length / rho;
    const auto steps = static_cast<std::size_t>(std::ceil(length / kArcStep));
    const int reach = static_cast<int>(std::ceil(radius)) + 1;
    for (std::size_t s = 0; s <= steps; ++s) {
      const double theta = theta0 + span * static_cast<double>(s) / static_cast<double>(steps);
      const Vec3 p = center + u * (rho * std::cos(theta)) + v * (rho * std::sin(theta));
      const auto nd = static_cast<long>(std::lround(p.x)), nh = static_cast<long>(std::lround(p.y)),
                 nw = static_cast<long>(std::lround(p.z));
      for (long d = nd - reach; d <= nd + reach; ++d)
        for (long h = nh - reach; h <= nh + reach; ++h)
          for (long w = nw - reach; w <= nw + reach; ++w) {
            const Vec3 q{static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)};
            const bool nearest = d == nd && h == nh && w == nw;
            if (nearest || (q - p).norm() <= radius)
              out.mask.at(static_cast<std::size_t>(d), static_cast<std::size_t>(h), static_cast<std::size_t>(w)) = 1.0;
          }
    }
  }

  const double phase[3] = {uniform(0.0, 2.0 * std::numbers::pi), uniform(0.0, 2.0 * std::numbers::pi),
                           uniform(0.0, 2.0 * std::numbers::pi)};
  std::normal_distribution<double> noise(0.0, spec.noise_sd > 0.0 ? spec.noise_sd : 1.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        double value = spec.tissue_intensity;
        if (out.mask.at(d, h, w) > 0.0)
          value = spec.ribbon_intensity;
        else if (out.cavity.at(d, h, w) > 0.0)
          value = spec.cavity_intensity;
        if (spec.bias_amplitude > 0.0) {
          const double field = std::cos(std::numbers::pi * static_cast<double>(d) / static_cast<double>(D) + phase[0]) +
                               std::cos(std::numbers::pi * static_cast<double>(h) / static_cast<double>(H) + phase[1]) +
                               std::cos(std::numbers::pi * static_cast<double>(w) / static_cast<double>(W) + phase[2]);
          value *= 1.0 + spec.bias_amplitude * field / 3.0;
        }
        if (spec.noise_sd > 0.0) value += noise(rng);
        out.image.at(d, h, w) = value;
      }
  out.image.description = "phantom stratum=" + spec.stratum;
  return out;
}

}  // namespace axmlp::data
