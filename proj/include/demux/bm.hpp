#ifndef DEMUX_BM_HPP
#define DEMUX_BM_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "demux/trace.hpp"

namespace demux::bm {

constexpr std::size_t kBurstChannels = 4;

struct WindowConfig {
  TimeNs window = 20 * kNsPerMs;  // W
  TimeNs stride = 10 * kNsPerMs;  // Delta
  std::size_t packet_channels = 4;  // C_p
  // Stride equal to the window gives non-overlapping windows; only test and
  // ablation code should enable it.
  bool allow_non_overlapping = false;

  std::size_t channels() const { return packet_channels + kBurstChannels; }
  // Number of windows covering each time point, ceil(W / Delta).
  std::size_t overlap_factor() const { return static_cast<std::size_t>((window + stride - 1) / stride); }
};

void validate(const WindowConfig& cfg);

// Row-major L x C window features.
struct FeatureTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  FeatureTensor() = default;
  FeatureTensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;
};

std::size_t window_count(TimeNs duration, const WindowConfig& cfg);

// Packets with k*stride <= t < k*stride + window, in trace order.
std::span<const Packet> window_packets(const Trace& trace, std::size_t k, const WindowConfig& cfg);

std::vector<float> packet_features(std::span<const Packet> window, std::size_t packet_channels);

// [burst count, mean size, population variance of sizes, mean inter-burst
// interval in seconds].
std::array<double, kBurstChannels> burst_features(std::span<const Packet> window);

FeatureTensor aggregate(const Trace& trace, const WindowConfig& cfg);

// DMX1 binary layout: "DMX1", u32 L, u32 C, L*C float32, all little-endian.
std::string encode_dmx1(const FeatureTensor& tensor);
FeatureTensor decode_dmx1(std::string_view bytes);
void write_dmx1(const std::string& path, const FeatureTensor& tensor);
FeatureTensor read_dmx1(const std::string& path);

}  // namespace demux::bm

#endif  // DEMUX_BM_HPP
