#include "demux/trace.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace demux {

namespace {
constexpr std::string_view kTraceHeader = "# demux-trace v1";
}

Direction direction_from_int(int value) {
  if (value == 1) return Direction::Out;
  if (value == -1) return Direction::In;
  throw std::invalid_argument("direction must be 1 or -1, got " + std::to_string(value));
}

LabelVector LabelVector::from_indices(std::size_t num_classes, std::span<const std::size_t> indices) {
  LabelVector v(num_classes);
  for (auto i : indices) {
    if (i >= num_classes) throw std::out_of_range("label index " + std::to_string(i) + " >= " + std::to_string(num_classes));
    v.set(i);
  }
  return v;
}

std::size_t LabelVector::popcount() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<std::size_t> LabelVector::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) out.push_back(i);
  return out;
}

LabelVector& LabelVector::operator|=(const LabelVector& other) {
  if (other.size() != size()) throw std::invalid_argument("label vectors differ in class count");
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= other.bits_[i];
  return *this;
}

bool is_sorted(std::span<const Packet> packets) {
  return std::is_sorted(packets.begin(), packets.end(),
                        [](const Packet& a, const Packet& b) { return a.timestamp < b.timestamp; });
}

void require_sorted(std::span<const Packet> packets) {
  for (std::size_t i = 1; i < packets.size(); ++i) {
    if (packets[i].timestamp < packets[i - 1].timestamp) {
      throw SortingViolation("packet " + std::to_string(i) + " at t=" + std::to_string(packets[i].timestamp) +
                             "ns precedes previous packet at t=" + std::to_string(packets[i - 1].timestamp) + "ns");
    }
  }
}

Trace normalize(Trace trace) {
  require_sorted(trace.packets);
  if (trace.packets.empty()) return trace;
  const TimeNs origin = trace.packets.front().timestamp;
  if (origin != 0)
    for (auto& p : trace.packets) p.timestamp -= origin;
  return trace;
}

std::vector<Burst> segment_bursts(std::span<const Packet> packets) {
  std::vector<Burst> bursts;
  for (const auto& p : packets) {
    if (!bursts.empty() && bursts.back().direction == p.direction) {
      auto& b = bursts.back();
      ++b.size;
      b.end = p.timestamp;
    } else {
      bursts.push_back({p.direction, 1, p.timestamp, p.timestamp});
    }
  }
  return bursts;
}

std::vector<Direction> expand_directions(std::span<const Burst> bursts) {
  std::vector<Direction> out;
  for (const auto& b : bursts) out.insert(out.end(), b.size, b.direction);
  return out;
}

TimeNs duration(const Trace& trace) {
  if (trace.packets.size() < 2) return 0;
  return trace.packets.back().timestamp;
}

std::string serialize_trace_csv(std::span<const Packet> packets) {
  std::string out;
  out.reserve(24 + packets.size() * 14);
  out += kTraceHeader;
  out += '\n';
  for (const auto& p : packets) {
    out += std::to_string(p.timestamp);
    out += p.direction == Direction::Out ? ",1\n" : ",-1\n";
  }
  return out;
}

std::vector<Packet> parse_trace_csv(std::string_view text) {
  std::vector<Packet> packets;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!saw_header) {
      if (line != kTraceHeader) throw std::runtime_error("missing '# demux-trace v1' header");
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string_view::npos) throw std::runtime_error("line " + std::to_string(line_no) + ": expected 'timestamp_ns,direction'");
    TimeNs ts = 0;
    int dir = 0;
    auto ts_part = line.substr(0, comma);
    auto dir_part = line.substr(comma + 1);
    auto r1 = std::from_chars(ts_part.data(), ts_part.data() + ts_part.size(), ts);
    auto r2 = std::from_chars(dir_part.data(), dir_part.data() + dir_part.size(), dir);
    if (r1.ec != std::errc{} || r1.ptr != ts_part.data() + ts_part.size() || r2.ec != std::errc{} ||
        r2.ptr != dir_part.data() + dir_part.size() || ts < 0 || (dir != 1 && dir != -1)) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": malformed packet row '" + std::string(line) + "'");
    }
    packets.push_back({direction_from_int(dir), ts});
  }
  if (!saw_header) throw std::runtime_error("missing '# demux-trace v1' header");
  require_sorted(packets);
  return packets;
}

void write_trace_file(const std::string& path, std::span<const Packet> packets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << serialize_trace_csv(packets);
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Packet> read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_trace_csv(ss.str());
}

}  // namespace demux
