#include "axmlp/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "axmlp/errors.hpp"

namespace axmlp::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

bool tracking(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

GradSlot slot_of(const Tensor& t) { return t.requires_grad() ? t.grad_slot() : nullptr; }

std::vector<double>& sized(const GradSlot& slot, std::size_t n) {
  if (slot->empty()) slot->assign(n, 0.0);
  return *slot;
}

// Adds src into the slot, copying when the slot is still empty.
void accumulate(const GradSlot& slot, const std::vector<double>& src) {
  if (slot->empty()) {
    *slot = src;
    return;
  }
  auto& dst = *slot;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Per-thread scratch matrix; keeps its allocation while the element count repeats.
RowMat& scratch(int which, std::size_t rows, std::size_t cols) {
  thread_local std::array<RowMat, 2> pool;
  pool[which].resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return pool[which];
}

std::size_t product(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

void check_inner_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (x.rank() < 3 || axis == 0 || axis + 1 >= x.rank())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " is not an inner axis of " +
                         shape_string(x.shape()));
}

// Calls fn(x_offset, row_offset, o, i) for every channel run, where x is laid
// out as [outer, a, inner, f] and rows as [outer, inner, a, f].
template <typename Fn>
void for_each_run(std::size_t outer, std::size_t a, std::size_t inner, std::size_t f, Fn&& fn) {
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t in = 0; in < inner; ++in) fn(((o * a + i) * inner + in) * f, ((o * inner + in) * a + i) * f, o, i);
}

void to_rows(const double* src, double* dst, std::size_t outer, std::size_t a, std::size_t inner, std::size_t f) {
  for_each_run(outer, a, inner, f, [&](std::size_t xo, std::size_t ro, std::size_t, std::size_t) {
    std::copy(src + xo, src + xo + f, dst + ro);
  });
}

template <bool Accumulate>
void from_rows(const double* src, double* dst, std::size_t outer, std::size_t a, std::size_t inner, std::size_t f) {
  for_each_run(outer, a, inner, f, [&](std::size_t xo, std::size_t ro, std::size_t, std::size_t) {
    for (std::size_t c = 0; c < f; ++c) {
      if constexpr (Accumulate)
        dst[xo + c] += src[ro + c];
      else
        dst[xo + c] = src[ro + c];
    }
  });
}

// Inverted-dropout multipliers indexed (batch, axis index, channel).
std::vector<double> draw_axial_mask(std::size_t n, double rate, std::mt19937_64& rng) {
  const double keep = 1.0 - rate, gain = 1.0 / keep;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> mask(n);
  for (auto& m : mask) m = uniform(rng) < keep ? gain : 0.0;
  return mask;
}

inline double leaky(double v, double slope) { return std::max(v, 0.0) + slope * std::min(v, 0.0); }
// Derivative selected by the output sign, written without a branch: the sign
// is data dependent and mispredicts half the time.
inline double leaky_gate(double y, double slope) {
  const double positive = y > 0.0 ? 1.0 : 0.0;
  return slope + (1.0 - slope) * positive;
}

struct Lerp {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Lerp> lerp_table(std::size_t source, std::size_t target) {
  std::vector<Lerp> table(target);
  for (std::size_t j = 0; j < target; ++j) {
    const double pos =
        target == 1 ? 0.0 : static_cast<double>(j) * static_cast<double>(source - 1) / static_cast<double>(target - 1);
    auto i0 = std::min(static_cast<std::size_t>(std::floor(pos)), source - 1);
    const double w1 = pos - static_cast<double>(i0);
    table[j] = {i0, std::min(i0 + 1, source - 1), 1.0 - w1, w1};
  }
  return table;
}

std::vector<double> resample_axis(std::span<const double> in, const Shape& shape, std::size_t axis,
                                  const std::vector<Lerp>& table) {
  const std::size_t pre = product(shape, 0, axis);
  const std::size_t src = shape[axis];
  const std::size_t post = product(shape, axis + 1, shape.size());
  const std::size_t dst = table.size();
  std::vector<double> out(pre * dst * post);
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t j = 0; j < dst; ++j) {
      const auto& l = table[j];
      const double* a = in.data() + (p * src + l.i0) * post;
      const double* b = in.data() + (p * src + l.i1) * post;
      double* o = out.data() + (p * dst + j) * post;
      for (std::size_t q = 0; q < post; ++q) o[q] = l.w0 * a[q] + l.w1 * b[q];
    }
  return out;
}

// Adjoint of resample_axis: `shape` is the (smaller-rank-index) source shape.
std::vector<double> resample_axis_adjoint(std::span<const double> gout, const Shape& shape, std::size_t axis,
                                          const std::vector<Lerp>& table) {
  const std::size_t pre = product(shape, 0, axis);
  const std::size_t src = shape[axis];
  const std::size_t post = product(shape, axis + 1, shape.size());
  const std::size_t dst = table.size();
  std::vector<double> gin(pre * src * post, 0.0);
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t j = 0; j < dst; ++j) {
      const auto& l = table[j];
      const double* g = gout.data() + (p * dst + j) * post;
      double* a = gin.data() + (p * src + l.i0) * post;
      double* b = gin.data() + (p * src + l.i1) * post;
      for (std::size_t q = 0; q < post; ++q) {
        a[q] += l.w0 * g[q];
        b[q] += l.w1 * g[q];
      }
    }
  return gin;
}

// Visits (patch-layout offset, volume-layout offset) of every channel run.
template <typename Fn>
void for_each_patch_run(std::size_t batch, const Extent3& grid, const Extent3& patch, std::size_t channels, Fn&& fn) {
  const std::size_t D = grid[0] * patch[0], H = grid[1] * patch[1], W = grid[2] * patch[2];
  std::size_t p = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t nd = 0; nd < grid[0]; ++nd)
      for (std::size_t nh = 0; nh < grid[1]; ++nh)
        for (std::size_t nw = 0; nw < grid[2]; ++nw)
          for (std::size_t sd = 0; sd < patch[0]; ++sd)
            for (std::size_t sh = 0; sh < patch[1]; ++sh) {
              const std::size_t d = nd * patch[0] + sd, h = nh * patch[1] + sh;
              std::size_t v = (((b * D + d) * H + h) * W + nw * patch[2]) * channels;
              for (std::size_t sw = 0; sw < patch[2]; ++sw, p += channels, v += channels) fn(p, v);
            }
}

}  // namespace

Tensor linear_along_axis(Tape* tape, const Tensor& x, std::size_t axis, const Tensor& weight, const Tensor& bias) {
  check_inner_axis(x, axis, "linear_along_axis");
  const auto& s = x.shape();
  const std::size_t a = s[axis], f = s.back(), k = a * f;
  if (weight.shape() != Shape{k, k} || bias.shape() != Shape{k})
    throw DimensionError("linear_along_axis: expected weight [" + std::to_string(k) + "," + std::to_string(k) +
                         "] and bias [" + std::to_string(k) + "] for axis length " + std::to_string(a) +
                         " and " + std::to_string(f) + " channels, got " + shape_string(weight.shape()) + " and " +
                         shape_string(bias.shape()));
  const std::size_t outer = product(s, 0, axis);
  const std::size_t inner = product(s, axis + 1, s.size() - 1);
  const std::size_t rows = outer * inner;
  const bool track = tracking(tape, {&x, &weight, &bias});

  // With inner == 1 the (axis, channel) pairs are already contiguous rows.
  Tensor rows_in = x;
  if (inner != 1) {
    rows_in = Tensor::empty({rows, k});
    to_rows(x.data().data(), rows_in.data().data(), outer, a, inner, f);
  }
  Eigen::Map<const RowMat> X(rows_in.data().data(), rows, k);
  Eigen::Map<const RowMat> Wm(weight.data().data(), k, k);
  Eigen::Map<const RowVec> bv(bias.data().data(), k);

  Tensor out = Tensor::empty(s, track);
  if (inner == 1) {
    Eigen::Map<RowMat> Y(out.data().data(), rows, k);
    Y.noalias() = X * Wm.transpose();
    Y.rowwise() += bv;
  } else {
    RowMat Y(rows, k);
    Y.noalias() = X * Wm.transpose();
    Y.rowwise() += bv;
    from_rows<false>(Y.data(), out.data().data(), outer, a, inner, f);
  }
  if (!track) return out;

  tape->record({OpKind::LinearAlongAxis,
                {slot_of(x), slot_of(weight), slot_of(bias)},
                out.grad_slot(),
                [=, xs = slot_of(x), ws = slot_of(weight), bs = slot_of(bias), os = out.grad_slot()] {
                  const std::size_t n = outer * a * inner * f;
                  RowMat gbuf;
                  const double* gptr = os->data();
                  if (inner != 1) {
                    gbuf.resize(rows, k);
                    to_rows(os->data(), gbuf.data(), outer, a, inner, f);
                    gptr = gbuf.data();
                  }
                  Eigen::Map<const RowMat> G(gptr, rows, k);
                  Eigen::Map<const RowMat> Xr(rows_in.data().data(), rows, k);
                  Eigen::Map<const RowMat> Wb(weight.data().data(), k, k);
                  if (xs) {
                    auto& gx = sized(xs, n);
                    if (inner == 1) {
                      Eigen::Map<RowMat> GX(gx.data(), rows, k);
                      GX.noalias() += G * Wb;
                    } else {
                      RowMat GX(rows, k);
                      GX.noalias() = G * Wb;
                      from_rows<true>(GX.data(), gx.data(), outer, a, inner, f);
                    }
                  }
                  if (ws) {
                    Eigen::Map<RowMat> GW(sized(ws, k * k).data(), k, k);
                    GW.noalias() += G.transpose() * Xr;
                  }
                  if (bs) {
                    Eigen::Map<RowVec> GB(sized(bs, k).data(), k);
                    GB += G.colwise().sum();
                  }
                }});
  return out;
}

Tensor linear_channels(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || weight.dim(1) != x.shape().back() || bias.shape() != Shape{weight.dim(0)})
    throw DimensionError("linear_channels: weight " + shape_string(weight.shape()) + ", bias " +
                         shape_string(bias.shape()) + " incompatible with input " + shape_string(x.shape()));
  const std::size_t in = weight.dim(1), outc = weight.dim(0), rows = x.size() / in;
  Shape oshape = x.shape();
  oshape.back() = outc;
  const bool track = tracking(tape, {&x, &weight, &bias});
  Tensor out = Tensor::empty(oshape, track);
  Eigen::Map<const RowMat> X(x.data().data(), rows, in);
  Eigen::Map<const RowMat> Wm(weight.data().data(), outc, in);
  Eigen::Map<RowMat> Y(out.data().data(), rows, outc);
  Y.noalias() = X * Wm.transpose();
  Y.rowwise() += Eigen::Map<const RowVec>(bias.data().data(), outc);
  if (!track) return out;

  tape->record({OpKind::LinearChannels,
                {slot_of(x), slot_of(weight), slot_of(bias)},
                out.grad_slot(),
                [=, xs = slot_of(x), ws = slot_of(weight), bs = slot_of(bias), os = out.grad_slot()] {
                  Eigen::Map<const RowMat> G(os->data(), rows, outc);
                  Eigen::Map<const RowMat> Xr(x.data().data(), rows, in);
                  Eigen::Map<const RowMat> Wb(weight.data().data(), outc, in);
                  if (xs) {
                    Eigen::Map<RowMat> GX(sized(xs, rows * in).data(), rows, in);
                    GX.noalias() += G * Wb;
                  }
                  if (ws) {
                    Eigen::Map<RowMat> GW(sized(ws, outc * in).data(), outc, in);
                    GW.noalias() += G.transpose() * Xr;
                  }
                  if (bs) {
                    Eigen::Map<RowVec> GB(sized(bs, outc).data(), outc);
                    GB += G.colwise().sum();
                  }
                }});
  return out;
}

Tensor leaky_relu(Tape* tape, const Tensor& x, double slope) {
  if (!(slope >= 0.0)) throw ParameterError("leaky_relu: slope must be >= 0");
  const bool track = tracking(tape, {&x});
  Tensor out = Tensor::empty(x.shape(), track);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = leaky(in[i], slope);
  if (!track) return out;
  // Sign of the output equals sign of the input for slope > 0; at slope 0 the
  // negative branch contributes nothing either way.
  tape->record({OpKind::LeakyRelu, {slot_of(x)}, out.grad_slot(), [=, xs = slot_of(x), os = out.grad_slot()] {
                  auto y = out.data();
                  auto& gx = sized(xs, y.size());
                  const auto& g = *os;
                  for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * leaky_gate(y[i], slope);
                }});
  return out;
}

Tensor normalize_global(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias, double eps) {
  if (x.rank() < 2) throw DimensionError("normalize_global: need a batch axis, got " + shape_string(x.shape()));
  if (weight.size() != 1 || bias.size() != 1)
    throw DimensionError("normalize_global: weight and bias must be scalars");
  const std::size_t B = x.dim(0), n = x.size() / B;
  const bool track = tracking(tape, {&x, &weight, &bias});
  const double w = weight.data()[0], b0 = bias.data()[0];
  Tensor xhat = Tensor::empty(x.shape());
  Tensor out = Tensor::empty(x.shape(), track);
  std::vector<double> inv_std(B);
  auto in = x.data();
  auto xh = xhat.data();
  auto o = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    const double* s = in.data() + b * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += s[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (s[i] - mean) * (s[i] - mean);
    var /= static_cast<double>(n);
    inv_std[b] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xh[b * n + i] = (s[i] - mean) * inv_std[b];
      o[b * n + i] = w * xh[b * n + i] + b0;
    }
  }
  if (!track) return out;

  tape->record({OpKind::NormalizeGlobal,
                {slot_of(x), slot_of(weight), slot_of(bias)},
                out.grad_slot(),
                [=, xs = slot_of(x), ws = slot_of(weight), bs = slot_of(bias), os = out.grad_slot()] {
                  const auto& g = *os;
                  auto xh = xhat.data();
                  const double wv = weight.data()[0];
                  double gw = 0.0, gb = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gw += g[i] * xh[i];
                    gb += g[i];
                  }
                  if (ws) sized(ws, 1)[0] += gw;
                  if (bs) sized(bs, 1)[0] += gb;
                  if (!xs) return;
                  auto& gx = sized(xs, g.size());
                  for (std::size_t b = 0; b < B; ++b) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::size_t i = b * n; i < (b + 1) * n; ++i) {
                      mean_g += g[i] * wv;
                      mean_gx += g[i] * wv * xh[i];
                    }
                    mean_g /= static_cast<double>(n);
                    mean_gx /= static_cast<double>(n);
                    for (std::size_t i = b * n; i < (b + 1) * n; ++i)
                      gx[i] += inv_std[b] * (g[i] * wv - mean_g - xh[i] * mean_gx);
                  }
                }});
  return out;
}

Tensor dropout_axial(Tape* tape, const Tensor& x, std::size_t axis, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout_axial: rate must lie in [0, 1)");
  check_inner_axis(x, axis, "dropout_axial");
  if (mode == Mode::Eval || rate == 0.0) return x;

  const auto& s = x.shape();
  const std::size_t B = s[0], pre = product(s, 1, axis), a = s[axis], inner = product(s, axis + 1, s.size() - 1),
                    f = s.back();
  std::vector<double> mask = draw_axial_mask(B * a * f, rate, rng);

  auto apply = [=](const double* src, double* dst, const std::vector<double>& mk, bool accumulate) {
    std::size_t idx = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < pre; ++p)
        for (std::size_t i = 0; i < a; ++i) {
          const double* m = mk.data() + (b * a + i) * f;
          for (std::size_t in = 0; in < inner; ++in)
            for (std::size_t c = 0; c < f; ++c, ++idx) {
              if (accumulate)
                dst[idx] += src[idx] * m[c];
              else
                dst[idx] = src[idx] * m[c];
            }
        }
  };

  const bool track = tracking(tape, {&x});
  Tensor out = Tensor::empty(s, track);
  apply(x.data().data(), out.data().data(), mask, false);
  if (!track) return out;
  tape->record({OpKind::DropoutAxial, {slot_of(x)}, out.grad_slot(),
                [=, mask = std::move(mask), xs = slot_of(x), os = out.grad_slot()] {
                  apply(os->data(), sized(xs, os->size()).data(), mask, true);
                }});
  return out;
}

Tensor axial_branch(Tape* tape, const Tensor& x, std::size_t axis, const Tensor& weight, const Tensor& bias,
                    double slope, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("axial_branch: rate must lie in [0, 1)");
  if (!(slope >= 0.0)) throw ParameterError("axial_branch: slope must be >= 0");
  check_inner_axis(x, axis, "axial_branch");
  const auto& s = x.shape();
  const std::size_t a = s[axis], f = s.back(), k = a * f;
  if (weight.shape() != Shape{k, k} || bias.shape() != Shape{k})
    throw DimensionError("axial_branch: expected weight [" + std::to_string(k) + "," + std::to_string(k) +
                         "] and bias [" + std::to_string(k) + "], got " + shape_string(weight.shape()) + " and " +
                         shape_string(bias.shape()));
  const std::size_t outer = product(s, 0, axis), pre = outer / s[0];
  const std::size_t inner = product(s, axis + 1, s.size() - 1);
  const std::size_t rows = outer * inner, n = rows * k;
  const bool track = tracking(tape, {&x, &weight, &bias});

  std::vector<double> mask;
  if (mode == Mode::Train && rate > 0.0) mask = draw_axial_mask(s[0] * k, rate, rng);
  const bool masked = !mask.empty();

  // Row-major [(outer, inner), (a, f)] copy of the masked input.
  Tensor rows_in = x;
  if (inner != 1 || masked) {
    rows_in = Tensor::empty({rows, k});
    double* dst = rows_in.data().data();
    const double* src = x.data().data();
    for_each_run(outer, a, inner, f, [&](std::size_t xo, std::size_t ro, std::size_t o, std::size_t i) {
      if (masked) {
        const double* m = mask.data() + ((o / pre) * a + i) * f;
        for (std::size_t c = 0; c < f; ++c) dst[ro + c] = src[xo + c] * m[c];
      } else {
        std::copy(src + xo, src + xo + f, dst + ro);
      }
    });
  }
  Eigen::Map<const RowMat> X(rows_in.data().data(), rows, k);
  Eigen::Map<const RowMat> Wm(weight.data().data(), k, k);
  Eigen::Map<const RowVec> bv(bias.data().data(), k);

  Tensor out = Tensor::empty(s, track);
  if (inner == 1) {
    Eigen::Map<RowMat> Y(out.data().data(), rows, k);
    Y.noalias() = X * Wm.transpose();
    Y.rowwise() += bv;
    for (auto& v : out.data()) v = leaky(v, slope);
  } else {
    RowMat& Y = scratch(0, rows, k);
    Y.noalias() = X * Wm.transpose();
    Y.rowwise() += bv;
    const double* y = Y.data();
    double* o = out.data().data();
    for_each_run(outer, a, inner, f, [&](std::size_t xo, std::size_t ro, std::size_t, std::size_t) {
      for (std::size_t c = 0; c < f; ++c) o[xo + c] = leaky(y[ro + c], slope);
    });
  }
  if (!track) return out;

  tape->record({OpKind::AxialBranch,
                {slot_of(x), slot_of(weight), slot_of(bias)},
                out.grad_slot(),
                [=, mask = std::move(mask), xs = slot_of(x), ws = slot_of(weight), bs = slot_of(bias),
                 os = out.grad_slot()] {
                  // Pre-activation gradient in row layout; the output sign gates the slope.
                  RowMat& G = scratch(0, rows, k);
                  const double* g = os->data();
                  const double* y = out.data().data();
                  double* gr = G.data();
                  std::vector<double> gb(k, 0.0);
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < a; ++i) {
                      double* gbi = gb.data() + i * f;
                      const std::size_t x0 = (o * a + i) * inner * f;
                      for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t xo = x0 + in * f, ro = ((o * inner + in) * a + i) * f;
                        for (std::size_t c = 0; c < f; ++c) {
                          const double v = g[xo + c] * leaky_gate(y[xo + c], slope);
                          gr[ro + c] = v;
                          gbi[c] += v;
                        }
                      }
                    }
                  Eigen::Map<const RowMat> Xr(rows_in.data().data(), rows, k);
                  Eigen::Map<const RowMat> Wb(weight.data().data(), k, k);
                  if (ws) {
                    Eigen::Map<RowMat> GW(sized(ws, k * k).data(), k, k);
                    GW.noalias() += G.transpose() * Xr;
                  }
                  if (bs) {
                    auto& gbias = sized(bs, k);
                    for (std::size_t j = 0; j < k; ++j) gbias[j] += gb[j];
                  }
                  if (!xs) return;
                  RowMat& GX = scratch(1, rows, k);
                  GX.noalias() = G * Wb;
                  auto& gx = sized(xs, n);
                  const double* gxr = GX.data();
                  for_each_run(outer, a, inner, f, [&](std::size_t xo, std::size_t ro, std::size_t o, std::size_t i) {
                    if (mask.empty()) {
                      for (std::size_t c = 0; c < f; ++c) gx[xo + c] += gxr[ro + c];
                    } else {
                      const double* m = mask.data() + ((o / pre) * a + i) * f;
                      for (std::size_t c = 0; c < f; ++c) gx[xo + c] += gxr[ro + c] * m[c];
                    }
                  });
                }});
  return out;
}

Tensor trilinear_resize(Tape* tape, const Tensor& x, Extent3 target) {
  if (x.rank() != 5) throw DimensionError("trilinear_resize: expected [B,D,H,W,C], got " + shape_string(x.shape()));
  for (auto t : target)
    if (t < 1) throw DimensionError("trilinear_resize: target extents must be >= 1");
  if (x.dim(1) == target[0] && x.dim(2) == target[1] && x.dim(3) == target[2]) return x;

  const bool track = tracking(tape, {&x});
  std::array<Shape, 4> shapes;
  std::array<std::vector<Lerp>, 3> tables;
  shapes[0] = x.shape();
  std::vector<double> cur(x.data().begin(), x.data().end());
  for (std::size_t k = 0; k < 3; ++k) {
    tables[k] = lerp_table(shapes[k][k + 1], target[k]);
    cur = resample_axis(cur, shapes[k], k + 1, tables[k]);
    shapes[k + 1] = shapes[k];
    shapes[k + 1][k + 1] = target[k];
  }
  Tensor out = Tensor::from(shapes[3], std::move(cur), track);
  if (!track) return out;
  tape->record({OpKind::TrilinearResize, {slot_of(x)}, out.grad_slot(),
                [=, xs = slot_of(x), os = out.grad_slot()] {
                  std::vector<double> g = *os;
                  for (std::size_t k = 3; k-- > 0;) g = resample_axis_adjoint(g, shapes[k], k + 1, tables[k]);
                  auto& gx = sized(xs, g.size());
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                }});
  return out;
}

Tensor patchify(Tape* tape, const Tensor& x, Extent3 patch) {
  if (x.rank() != 5) throw DimensionError("patchify: expected [B,D,H,W,C], got " + shape_string(x.shape()));
  Extent3 grid{};
  for (std::size_t k = 0; k < 3; ++k) {
    if (patch[k] == 0 || x.dim(k + 1) % patch[k] != 0)
      throw DimensionError("patchify: extent " + std::to_string(x.dim(k + 1)) + " on axis " + std::to_string(k) +
                           " is not divisible by patch size " + std::to_string(patch[k]));
    grid[k] = x.dim(k + 1) / patch[k];
  }
  const std::size_t B = x.dim(0), C = x.dim(4);
  const bool track = tracking(tape, {&x});
  Tensor out = Tensor::empty({B, grid[0], grid[1], grid[2], patch[0], patch[1], patch[2], C}, track);
  auto in = x.data();
  auto o = out.data();
  for_each_patch_run(B, grid, patch, C, [&](std::size_t p, std::size_t v) {
    std::copy_n(in.data() + v, C, o.data() + p);
  });
  if (!track) return out;
  tape->record({OpKind::Patchify, {slot_of(x)}, out.grad_slot(), [=, xs = slot_of(x), os = out.grad_slot()] {
                  auto& gx = sized(xs, os->size());
                  const auto& g = *os;
                  for_each_patch_run(B, grid, patch, C, [&](std::size_t p, std::size_t v) {
                    for (std::size_t c = 0; c < C; ++c) gx[v + c] += g[p + c];
                  });
                }});
  return out;
}

Tensor unpatchify(Tape* tape, const Tensor& x) {
  if (x.rank() != 8) throw DimensionError("unpatchify: expected 8-axis patch layout, got " + shape_string(x.shape()));
  const auto& s = x.shape();
  const Extent3 grid{s[1], s[2], s[3]}, patch{s[4], s[5], s[6]};
  const std::size_t B = s[0], C = s[7];
  const bool track = tracking(tape, {&x});
  Tensor out = Tensor::empty({B, grid[0] * patch[0], grid[1] * patch[1], grid[2] * patch[2], C}, track);
  auto in = x.data();
  auto o = out.data();
  for_each_patch_run(B, grid, patch, C, [&](std::size_t p, std::size_t v) {
    std::copy_n(in.data() + p, C, o.data() + v);
  });
  if (!track) return out;
  tape->record({OpKind::Unpatchify, {slot_of(x)}, out.grad_slot(), [=, xs = slot_of(x), os = out.grad_slot()] {
                  auto& gx = sized(xs, os->size());
                  const auto& g = *os;
                  for_each_patch_run(B, grid, patch, C, [&](std::size_t p, std::size_t v) {
                    for (std::size_t c = 0; c < C; ++c) gx[p + c] += g[v + c];
                  });
                }});
  return out;
}

Tensor add(Tape* tape, std::span<const Tensor> terms) {
  if (terms.empty()) throw DimensionError("add: no terms");
  for (const auto& t : terms)
    if (t.shape() != terms[0].shape())
      throw DimensionError("add: shape mismatch " + shape_string(t.shape()) + " vs " +
                           shape_string(terms[0].shape()));
  bool track = false;
  if (tape)
    for (const auto& t : terms) track = track || t.requires_grad();
  Tensor out = Tensor::zeros(terms[0].shape(), track);
  auto o = out.data();
  for (const auto& t : terms) {
    auto d = t.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += d[i];
  }
  if (!track) return out;
  std::vector<GradSlot> slots;
  for (const auto& t : terms) slots.push_back(slot_of(t));
  tape->record({OpKind::Add, slots, out.grad_slot(), [slots, os = out.grad_slot()] {
                  for (const auto& s : slots)
                    if (s) accumulate(s, *os);
                }});
  return out;
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  const bool track = tracking(tape, {&x});
  Tensor out = Tensor::empty(x.shape(), track);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i)
    o[i] = in[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-in[i])) : std::exp(in[i]) / (1.0 + std::exp(in[i]));
  if (!track) return out;
  tape->record({OpKind::Sigmoid, {slot_of(x)}, out.grad_slot(), [=, xs = slot_of(x), os = out.grad_slot()] {
                  auto y = out.data();
                  auto& gx = sized(xs, y.size());
                  for (std::size_t i = 0; i < y.size(); ++i) gx[i] += (*os)[i] * y[i] * (1.0 - y[i]);
                }});
  return out;
}

Tensor scale(Tape* tape, const Tensor& x, double factor) {
  const bool track = tracking(tape, {&x});
  Tensor out = Tensor::empty(x.shape(), track);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = factor * in[i];
  if (!track) return out;
  tape->record({OpKind::Scale, {slot_of(x)}, out.grad_slot(), [=, xs = slot_of(x), os = out.grad_slot()] {
                  auto& gx = sized(xs, os->size());
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * (*os)[i];
                }});
  return out;
}

Tensor square(Tape* tape, const Tensor& x) {
  const bool track = tracking(tape, {&x});
  Tensor out = Tensor::empty(x.shape(), track);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * in[i];
  if (!track) return out;
  tape->record({OpKind::Square, {slot_of(x)}, out.grad_slot(), [=, xs = slot_of(x), os = out.grad_slot()] {
                  auto in = x.data();
                  auto& gx = sized(xs, in.size());
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * in[i] * (*os)[i];
                }});
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  const bool track = tracking(tape, {&x});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc, track);
  if (!track) return out;
  const std::size_t n = x.size();
  tape->record({OpKind::Sum, {slot_of(x)}, out.grad_slot(), [=, xs = slot_of(x), os = out.grad_slot()] {
                  auto& gx = sized(xs, n);
                  const double g = (*os)[0];
                  for (auto& v : gx) v += g;
                }});
  return out;
}

Tensor soft_dice_loss(Tape* tape, const Tensor& pred, const Tensor& target, double smooth) {
  if (pred.shape() != target.shape())
    throw DimensionError("soft_dice_loss: pred " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  const std::size_t B = pred.rank() >= 2 ? pred.dim(0) : 1, n = pred.size() / B;
  auto p = pred.data();
  auto t = target.data();
  std::vector<double> numer(B), denom(B);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = b * n; i < (b + 1) * n; ++i) {
      inter += p[i] * t[i];
      sp += p[i];
      st += t[i];
    }
    numer[b] = 2.0 * inter + smooth;
    denom[b] = sp + st + smooth;
    loss += 1.0 - numer[b] / denom[b];
  }
  loss /= static_cast<double>(B);
  const bool track = tracking(tape, {&pred});
  Tensor out = Tensor::scalar(loss, track);
  if (!track) return out;
  tape->record({OpKind::SoftDiceLoss, {slot_of(pred)}, out.grad_slot(),
                [=, ps = slot_of(pred), os = out.grad_slot()] {
                  auto tv = target.data();
                  auto& gp = sized(ps, tv.size());
                  const double g = (*os)[0] / static_cast<double>(B);
                  for (std::size_t b = 0; b < B; ++b) {
                    const double d2 = denom[b] * denom[b];
                    for (std::size_t i = b * n; i < (b + 1) * n; ++i)
                      gp[i] -= g * (2.0 * tv[i] * denom[b] - numer[b]) / d2;
                  }
                }});
  return out;
}

}  // namespace axmlp::ops
