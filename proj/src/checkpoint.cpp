#include "axmlp/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "axmlp/errors.hpp"

namespace axmlp::nn {

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"crop_shape", c.crop_shape}, {"patch", c.patch},           {"in_channels", c.in_channels},
       {"hidden", c.hidden},         {"depth", c.depth},           {"leaky_slope", c.leaky_slope},
       {"dropout_rate", c.dropout_rate}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.crop_shape = j.value("crop_shape", d.crop_shape);
  c.patch = j.value("patch", d.patch);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.hidden = j.value("hidden", d.hidden);
  c.depth = j.value("depth", d.depth);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
}

AxialMLPModel Checkpoint::instantiate() const {
  AxialMLPModel model(config, 0);
  model.set_flat_parameters(parameters);
  return model;
}

Checkpoint make_checkpoint(const AxialMLPModel& model, nlohmann::json meta) {
  return {model.config(), model.flat_parameters(), std::move(meta)};
}

namespace {

constexpr char kMagic[8] = {'A', 'X', 'M', 'L', 'P', 'C', 'K', 'P'};
constexpr std::uint32_t kByteOrderMark = 0x01020304u;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw ParseError("cannot open checkpoint " + path.string(), 0);
  }
  void bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw ParseError(std::string("truncated checkpoint: ") + what, offset_);
    offset_ += n;
  }
  template <typename T>
  T get(const char* what, bool swap) {
    T v;
    bytes(&v, sizeof v, what);
    if (swap) {
      auto* p = reinterpret_cast<unsigned char*>(&v);
      std::reverse(p, p + sizeof v);
    }
    return v;
  }
  std::uint64_t offset() const { return offset_; }

 private:
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (checkpoint.parameters.size() != parameter_count(checkpoint.config))
    throw DimensionError("checkpoint parameter vector does not match its config");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string header = nlohmann::json{{"config", checkpoint.config}, {"meta", checkpoint.meta}}.dump();
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, kByteOrderMark);
  put<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint64_t>(os, checkpoint.parameters.size());
  os.write(reinterpret_cast<const char*>(checkpoint.parameters.data()),
           static_cast<std::streamsize>(checkpoint.parameters.size() * sizeof(double)));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError("not a checkpoint file (bad magic)", 0);
  unsigned char version_bytes[4];
  r.bytes(version_bytes, 4, "version");
  const std::uint64_t bom_at = r.offset();
  const auto bom = r.get<std::uint32_t>("byte-order mark", false);
  bool swap = false;
  if (bom == 0x04030201u)
    swap = true;
  else if (bom != kByteOrderMark)
    throw ParseError("invalid byte-order mark", bom_at);
  if (swap) std::reverse(version_bytes, version_bytes + 4);
  std::uint32_t version_raw;
  std::memcpy(&version_raw, version_bytes, 4);
  if (version_raw != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version_raw), 8);

  const auto header_len = r.get<std::uint64_t>("header length", swap);
  if (header_len > (1u << 24)) throw ParseError("implausible header length", r.offset() - 8);
  std::string header(header_len, '\0');
  const auto header_at = r.offset();
  r.bytes(header.data(), header_len, "header");
  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(header);
    ck.config = j.at("config").get<ModelConfig>();
    ck.meta = j.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what(), header_at);
  }
  const auto count_at = r.offset();
  const auto count = r.get<std::uint64_t>("parameter count", swap);
  const auto expected = parameter_count(ck.config);
  if (count != expected)
    throw ParseError("checkpoint stores " + std::to_string(count) + " parameters but config implies " +
                         std::to_string(expected),
                     count_at);
  ck.parameters.resize(count);
  for (auto& p : ck.parameters) p = r.get<double>("parameters", swap);
  return ck;
}

}  // namespace axmlp::nn
