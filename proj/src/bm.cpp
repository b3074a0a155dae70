#include "demux/bm.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace demux::bm {

namespace {

static_assert(std::endian::native == std::endian::little, "DMX1 I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  std::memcpy(&v, bytes.data() + offset, 4);
  return v;
}

}  // namespace

void validate(const WindowConfig& cfg) {
  if (cfg.window <= 0 || cfg.stride <= 0) throw std::invalid_argument("window and stride must be positive");
  if (cfg.stride > cfg.window || (cfg.stride == cfg.window && !cfg.allow_non_overlapping))
    throw std::invalid_argument("stride must be smaller than the window (overlap required)");
}

std::size_t window_count(TimeNs duration, const WindowConfig& cfg) {
  validate(cfg);
  if (duration < cfg.window) return 1;
  return static_cast<std::size_t>((duration - cfg.window) / cfg.stride) + 1;
}

std::span<const Packet> window_packets(const Trace& trace, std::size_t k, const WindowConfig& cfg) {
  const std::size_t count = window_count(duration(trace), cfg);
  if (k >= count)
    throw std::out_of_range("window index " + std::to_string(k) + " out of range [0, " + std::to_string(count) + ")");
  const TimeNs lo = static_cast<TimeNs>(k) * cfg.stride;
  const TimeNs hi = lo + cfg.window;
  const auto& pk = trace.packets;
  auto first = std::lower_bound(pk.begin(), pk.end(), lo, [](const Packet& p, TimeNs t) { return p.timestamp < t; });
  auto last = std::lower_bound(first, pk.end(), hi, [](const Packet& p, TimeNs t) { return p.timestamp < t; });
  return {pk.data() + (first - pk.begin()), static_cast<std::size_t>(last - first)};
}

std::vector<float> packet_features(std::span<const Packet> window, std::size_t packet_channels) {
  std::vector<float> out(packet_channels, 0.0f);
  const std::size_t n = std::min(packet_channels, window.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(sign(window[i].direction));
  return out;
}

std::array<double, kBurstChannels> burst_features(std::span<const Packet> window) {
  const auto bursts = segment_bursts(window);
  if (bursts.empty()) return {0.0, 0.0, 0.0, 0.0};
  const double count = static_cast<double>(bursts.size());
  double mean = 0.0;
  for (const auto& b : bursts) mean += static_cast<double>(b.size);
  mean /= count;
  double var = 0.0;
  for (const auto& b : bursts) var += (static_cast<double>(b.size) - mean) * (static_cast<double>(b.size) - mean);
  var /= count;
  double interval = 0.0;
  if (bursts.size() > 1) {
    TimeNs total = 0;
    for (std::size_t i = 1; i < bursts.size(); ++i) total += bursts[i].start - bursts[i - 1].end;
    interval = ns_to_sec(total) / static_cast<double>(bursts.size() - 1);
  }
  return {count, mean, var, interval};
}

FeatureTensor aggregate(const Trace& trace, const WindowConfig& cfg) {
  require_sorted(trace.packets);
  const std::size_t rows = window_count(duration(trace), cfg);
  FeatureTensor x(rows, cfg.channels());
  for (std::size_t k = 0; k < rows; ++k) {
    const auto window = window_packets(trace, k, cfg);
    const std::size_t n = std::min(cfg.packet_channels, window.size());
    for (std::size_t i = 0; i < n; ++i) x.at(k, i) = static_cast<float>(sign(window[i].direction));
    const auto b = burst_features(window);
    for (std::size_t j = 0; j < kBurstChannels; ++j) x.at(k, cfg.packet_channels + j) = static_cast<float>(b[j]);
  }
  return x;
}

std::string encode_dmx1(const FeatureTensor& tensor) {
  if (tensor.data.size() != tensor.rows * tensor.cols) throw std::invalid_argument("tensor data size mismatch");
  std::string out;
  out.reserve(12 + tensor.data.size() * 4);
  out.append("DMX1", 4);
  put_u32(out, static_cast<std::uint32_t>(tensor.rows));
  put_u32(out, static_cast<std::uint32_t>(tensor.cols));
  const std::size_t offset = out.size();
  out.resize(offset + tensor.data.size() * 4);
  std::memcpy(out.data() + offset, tensor.data.data(), tensor.data.size() * 4);
  return out;
}

FeatureTensor decode_dmx1(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "DMX1") throw std::runtime_error("not a DMX1 tensor (bad magic)");
  const std::size_t rows = get_u32(bytes, 4);
  const std::size_t cols = get_u32(bytes, 8);
  if (bytes.size() != 12 + rows * cols * 4)
    throw std::runtime_error("DMX1 size mismatch: header declares " + std::to_string(rows) + "x" + std::to_string(cols));
  FeatureTensor x(rows, cols);
  std::memcpy(x.data.data(), bytes.data() + 12, rows * cols * 4);
  return x;
}

void write_dmx1(const std::string& path, const FeatureTensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const auto bytes = encode_dmx1(tensor);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

FeatureTensor read_dmx1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_dmx1(ss.str());
}

}  // namespace demux::bm
