#include "demux/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace demux::model {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    std::memcpy(&v, take(4).data(), 4);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ModelConfig& config, const ModelParams& params, const nlohmann::json& meta) {
  std::string out = "DMXC";
  put_u32(out, kCheckpointVersion);
  const std::string header = nlohmann::json{{"config", config}, {"meta", meta}}.dump();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [path, var] : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(path.size()));
    out += path;
    out.push_back(params.trainable(path) ? 1 : 0);
    const auto& t = var->value;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != "DMXC") throw std::runtime_error("not a DMXC checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto header = nlohmann::json::parse(in.take(in.u32()));
  Checkpoint ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const auto count = in.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string path(in.take(in.u32()));
    const bool trainable = in.take(1)[0] != 0;
    nn::Shape shape(in.u32());
    for (auto& d : shape) d = in.u32();
    nn::Tensor t(shape);
    const auto raw = in.take(t.numel() * 4);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      float f = 0;
      std::memcpy(&f, raw.data() + i * 4, 4);
      t[i] = f;
    }
    ckpt.params.add(path, std::move(t), trainable);
  }
  if (!in.done()) throw std::runtime_error("trailing bytes after checkpoint entries");
  return ckpt;
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params,
                     const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const auto bytes = encode_checkpoint(config, params, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace demux::model
