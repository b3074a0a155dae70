#ifndef DEMUX_SYNTHGEN_HPP
#define DEMUX_SYNTHGEN_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "demux/rng.hpp"
#include "demux/trace.hpp"

namespace demux::synth {

// Burst size = 1 + NegBinomial with the given mean excess; `mean` is the
// mean burst size including that leading packet.
struct BurstSizeDist {
  double mean = 8.0;
  double dispersion = 4.0;  // gamma shape of the gamma-Poisson mixture

  friend bool operator==(const BurstSizeDist&, const BurstSizeDist&) = default;
};

struct LogNormalGap {
  double median_ms = 20.0;
  double sigma = 0.5;

  friend bool operator==(const LogNormalGap&, const LogNormalGap&) = default;
};

struct SiteProfile {
  std::size_t class_id = 0;
  std::size_t num_classes = 1;  // label universe size M
  std::size_t object_count_min = 10;
  std::size_t object_count_max = 20;
  BurstSizeDist outgoing_burst_size_dist{2.0, 2.0};
  BurstSizeDist incoming_burst_size_dist{8.0, 4.0};
  LogNormalGap inter_burst_gap_dist;
  TimeNs rhythm_period = 200 * kNsPerMs;
  std::size_t objects_per_wave = 4;
  double intra_burst_spacing_ms = 0.25;  // mean spacing between packets of one burst
  double rtt_ms = 6.0;                   // request-to-response delay

  bool monitored() const { return class_id < num_classes; }
  friend bool operator==(const SiteProfile&, const SiteProfile&) = default;
};

struct MixSpec {
  std::size_t tab_count = 2;
  TimeNs offset_max = 500 * kNsPerMs;
  bool open_world = false;
};

// M monitored profiles, deterministic in master_seed. Parameters are drawn from
// per-dimension stratified grids so no two classes share a parameter tuple.
std::vector<SiteProfile> make_profiles(std::size_t num_classes, std::uint64_t master_seed);

// An unmonitored site: class_id >= num_classes, all-zero labels when sampled.
SiteProfile make_unmonitored_profile(std::size_t num_classes, std::size_t index, std::uint64_t master_seed);

Trace sample_trace(const SiteProfile& profile, std::uint64_t seed);

Trace mix_traces(std::span<const Trace> traces, const MixSpec& spec, std::uint64_t seed);

// Applied to each sampled single-tab trace before mixing (e.g. a defense).
using TabTransform = std::function<Trace(Trace tab, std::size_t tab_index)>;

// Picks tab_count distinct monitored sites (one replaced by an unmonitored site
// in open-world mode), samples each, and mixes them.
Trace sample_multitab(std::span<const SiteProfile> profiles, const MixSpec& spec, std::uint64_t master_seed,
                      std::uint64_t seed, const TabTransform& per_tab = {});

}  // namespace demux::synth

#endif  // DEMUX_SYNTHGEN_HPP
