#ifndef DEMUX_TRACE_HPP
#define DEMUX_TRACE_HPP

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace demux {

// Nanoseconds relative to trace start.
using TimeNs = std::int64_t;

constexpr TimeNs kNsPerMs = 1'000'000;
constexpr TimeNs kNsPerSec = 1'000'000'000;

constexpr TimeNs ms_to_ns(double ms) { return static_cast<TimeNs>(ms * kNsPerMs + (ms >= 0 ? 0.5 : -0.5)); }
constexpr double ns_to_sec(TimeNs ns) { return static_cast<double>(ns) / kNsPerSec; }

enum class Direction : std::int8_t { Out = 1, In = -1 };

constexpr int sign(Direction d) { return static_cast<int>(d); }
Direction direction_from_int(int value);

struct Packet {
  Direction direction = Direction::Out;
  TimeNs timestamp = 0;

  friend bool operator==(const Packet&, const Packet&) = default;
};

class SortingViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Multi-hot ground truth over the monitored-class universe.
class LabelVector {
 public:
  LabelVector() = default;
  explicit LabelVector(std::size_t num_classes) : bits_(num_classes, 0) {}
  static LabelVector from_indices(std::size_t num_classes, std::span<const std::size_t> indices);

  std::size_t size() const { return bits_.size(); }
  bool test(std::size_t i) const { return bits_.at(i) != 0; }
  void set(std::size_t i, bool on = true) { bits_.at(i) = on ? 1 : 0; }
  std::size_t popcount() const;
  std::vector<std::size_t> indices() const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  LabelVector& operator|=(const LabelVector& other);
  friend bool operator==(const LabelVector&, const LabelVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

using Meta = std::map<std::string, std::string>;

struct Trace {
  std::vector<Packet> packets;
  LabelVector labels;
  Meta meta;

  std::size_t size() const { return packets.size(); }
  bool empty() const { return packets.empty(); }
  friend bool operator==(const Trace&, const Trace&) = default;
};

struct Burst {
  Direction direction = Direction::Out;
  std::size_t size = 0;
  TimeNs start = 0;
  TimeNs end = 0;

  friend bool operator==(const Burst&, const Burst&) = default;
};

bool is_sorted(std::span<const Packet> packets);

// Throws SortingViolation when timestamps decrease.
void require_sorted(std::span<const Packet> packets);

Trace normalize(Trace trace);

std::vector<Burst> segment_bursts(std::span<const Packet> packets);

// Burst list back to its per-packet direction sequence.
std::vector<Direction> expand_directions(std::span<const Burst> bursts);

// Last packet timestamp of a normalized trace; 0 for fewer than two packets.
TimeNs duration(const Trace& trace);

// `# demux-trace v1` CSV, one `timestamp_ns,direction` row per packet.
std::string serialize_trace_csv(std::span<const Packet> packets);
std::vector<Packet> parse_trace_csv(std::string_view text);

void write_trace_file(const std::string& path, std::span<const Packet> packets);
std::vector<Packet> read_trace_file(const std::string& path);

}  // namespace demux

#endif  // DEMUX_TRACE_HPP
