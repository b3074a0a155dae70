#ifndef DEMUX_CHECKPOINT_HPP
#define DEMUX_CHECKPOINT_HPP

#include <string>

#include "demux/model.hpp"
#include "json.hpp"

namespace demux::model {

// Self-describing checkpoint container:
//   "DMXC", u32 version, u32 header length, header JSON {config, meta},
//   u32 entry count, then per entry: u32 path length, path bytes,
//   u8 trainable, u32 rank, u32 dims..., float32 values.
// All integers and reals are little-endian. Values are stored at 32-bit
// precision, so save(load(save(p))) reproduces save(p) byte for byte.
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  nlohmann::json meta = nlohmann::json::object();
};

std::string encode_checkpoint(const ModelConfig& config, const ModelParams& params,
                              const nlohmann::json& meta = nlohmann::json::object());
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

}  // namespace demux::model

#endif  // DEMUX_CHECKPOINT_HPP
