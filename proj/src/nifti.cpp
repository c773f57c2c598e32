#include "axmlp/nifti.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "axmlp/errors.hpp"

namespace axmlp::data {

namespace {

// Byte offsets of the NIfTI-1 header fields used here.
constexpr std::size_t kSizeofHdr = 0;
constexpr std::size_t kRegular = 38;
constexpr std::size_t kDim = 40;
constexpr std::size_t kDatatype = 70;
constexpr std::size_t kBitpix = 72;
constexpr std::size_t kPixdim = 76;
constexpr std::size_t kVoxOffset = 108;
constexpr std::size_t kSclSlope = 112;
constexpr std::size_t kSclInter = 116;
constexpr std::size_t kXyztUnits = 123;
constexpr std::size_t kDescrip = 148;
constexpr std::size_t kSformCode = 254;
constexpr std::size_t kSrowX = 280;
constexpr std::size_t kMagic = 344;

int bytes_per_voxel(std::int16_t code) {
  switch (static_cast<NiftiType>(code)) {
    case NiftiType::UInt8: return 1;
    case NiftiType::Int16: return 2;
    case NiftiType::Float32: return 4;
    case NiftiType::Float64: return 8;
  }
  return 0;
}

class HeaderView {
 public:
  HeaderView(const unsigned char* bytes, bool swap) : bytes_(bytes), swap_(swap) {}
  template <typename T>
  T get(std::size_t offset) const {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_ + offset, sizeof(T));
    if (swap_) std::reverse(raw, raw + sizeof(T));
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

 private:
  const unsigned char* bytes_;
  bool swap_;
};

template <typename T>
void put(unsigned char* bytes, std::size_t offset, T v) {
  std::memcpy(bytes + offset, &v, sizeof(T));
}

template <typename T>
T load_swapped(const unsigned char* p, bool swap) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  if (swap) std::reverse(raw, raw + sizeof(T));
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

}  // namespace

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < kNiftiHeaderSize)
    throw ParseError("truncated NIfTI header: file has " + std::to_string(file.size()) + " bytes", file.size());

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, file.data() + kSizeofHdr, 4);
  bool swap = false;
  if (sizeof_hdr != static_cast<std::int32_t>(kNiftiHeaderSize)) {
    if (load_swapped<std::int32_t>(file.data(), true) == static_cast<std::int32_t>(kNiftiHeaderSize))
      swap = true;
    else
      throw ParseError("sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348", kSizeofHdr);
  }
  if (std::memcmp(file.data() + kMagic, "n+1\0", 4) != 0)
    throw ParseError("bad magic (expected single-file \"n+1\")", kMagic);

  HeaderView h(file.data(), swap);
  const auto ndim = h.get<std::int16_t>(kDim);
  if (ndim < 3 || ndim > 7) throw ParseError("dim[0] = " + std::to_string(ndim) + " is not a 3D volume", kDim);
  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = h.get<std::int16_t>(kDim + 2 * i);
  for (int i = 1; i <= 3; ++i)
    if (dim[i] < 1) throw ParseError("non-positive dim[" + std::to_string(i) + "]", kDim + 2 * i);
  for (int i = 4; i <= ndim; ++i)
    if (dim[i] != 1) throw ParseError("only 3D volumes are supported (dim[" + std::to_string(i) + "] > 1)", kDim + 2 * i);

  const auto datatype = h.get<std::int16_t>(kDatatype);
  const int bpv = bytes_per_voxel(datatype);
  if (bpv == 0) throw ParseError("unsupported datatype code " + std::to_string(datatype), kDatatype);
  const auto bitpix = h.get<std::int16_t>(kBitpix);
  if (bitpix != 8 * bpv) throw ParseError("bitpix " + std::to_string(bitpix) + " disagrees with datatype", kBitpix);

  const float vox_offset_f = h.get<float>(kVoxOffset);
  if (!(vox_offset_f >= static_cast<float>(kNiftiHeaderSize)))
    throw ParseError("vox_offset must be >= 348 for single-file NIfTI", kVoxOffset);
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);

  Volume v;
  // NIfTI i (dim[1]) varies fastest, which is our last axis.
  v.shape = {static_cast<std::size_t>(dim[3]), static_cast<std::size_t>(dim[2]), static_cast<std::size_t>(dim[1])};
  for (int i = 1; i <= 3; ++i) {
    const float p = std::fabs(h.get<float>(kPixdim + 4 * i));
    v.voxel_size[3 - i] = p > 0.0f ? static_cast<double>(p) : 1.0;
  }
  const std::size_t n = v.voxel_count();
  const std::size_t need = vox_offset + n * static_cast<std::size_t>(bpv);
  if (file.size() < need)
    throw ParseError("truncated voxel data: need " + std::to_string(need) + " bytes, file has " +
                         std::to_string(file.size()),
                     file.size());

  char descrip[81] = {};
  std::memcpy(descrip, file.data() + kDescrip, 80);
  v.description = descrip;

  v.data.resize(n);
  const unsigned char* src = file.data() + vox_offset;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = src + i * static_cast<std::size_t>(bpv);
    switch (static_cast<NiftiType>(datatype)) {
      case NiftiType::UInt8: v.data[i] = *p; break;
      case NiftiType::Int16: v.data[i] = load_swapped<std::int16_t>(p, swap); break;
      case NiftiType::Float32: v.data[i] = load_swapped<float>(p, swap); break;
      case NiftiType::Float64: v.data[i] = load_swapped<double>(p, swap); break;
    }
  }
  const float slope = h.get<float>(kSclSlope);
  const float inter = h.get<float>(kSclInter);
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f))
    for (auto& x : v.data) x = static_cast<double>(slope) * x + static_cast<double>(inter);
  return v;
}

void write_volume(const std::filesystem::path& path, const Volume& v, NiftiType type) {
  v.validate();
  for (auto e : v.shape)
    if (e > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      throw DimensionError("volume extent exceeds NIfTI-1 limit of 32767");
  auto check_integral = [&](double lo, double hi) {
    for (double x : v.data)
      if (!(x >= lo && x <= hi) || std::trunc(x) != x)
        throw ParameterError("value " + std::to_string(x) + " not representable in the requested integer type");
  };
  if (type == NiftiType::UInt8) check_integral(0, 255);
  if (type == NiftiType::Int16) check_integral(-32768, 32767);

  std::vector<unsigned char> header(kNiftiDataOffset, 0);
  const int bpv = bytes_per_voxel(static_cast<std::int16_t>(type));
  put<std::int32_t>(header.data(), kSizeofHdr, 348);
  header[kRegular] = 'r';
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(v.shape[2]), static_cast<std::int16_t>(v.shape[1]),
                                static_cast<std::int16_t>(v.shape[0]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(header.data(), kDim + 2 * i, dims[i]);
  put<std::int16_t>(header.data(), kDatatype, static_cast<std::int16_t>(type));
  put<std::int16_t>(header.data(), kBitpix, static_cast<std::int16_t>(8 * bpv));
  const float pix[8] = {1.0f, static_cast<float>(v.voxel_size[2]), static_cast<float>(v.voxel_size[1]),
                        static_cast<float>(v.voxel_size[0]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put<float>(header.data(), kPixdim + 4 * i, pix[i]);
  put<float>(header.data(), kVoxOffset, static_cast<float>(kNiftiDataOffset));
  put<float>(header.data(), kSclSlope, 0.0f);
  put<float>(header.data(), kSclInter, 0.0f);
  header[kXyztUnits] = 2;  // millimetres
  std::strncpy(reinterpret_cast<char*>(header.data() + kDescrip), v.description.c_str(), 79);
  put<std::int16_t>(header.data(), kSformCode, 1);
  for (int r = 0; r < 3; ++r)
    put<float>(header.data(), kSrowX + 16 * r + 4 * r, pix[r + 1]);
  std::memcpy(header.data() + kMagic, "n+1\0", 4);

  std::vector<unsigned char> body(v.voxel_count() * static_cast<std::size_t>(bpv));
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    unsigned char* p = body.data() + i * static_cast<std::size_t>(bpv);
    switch (type) {
      case NiftiType::UInt8: *p = static_cast<unsigned char>(v.data[i]); break;
      case NiftiType::Int16: put<std::int16_t>(p, 0, static_cast<std::int16_t>(v.data[i])); break;
      case NiftiType::Float32: put<float>(p, 0, static_cast<float>(v.data[i])); break;
      case NiftiType::Float64: put<double>(p, 0, v.data[i]); break;
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace axmlp::data
