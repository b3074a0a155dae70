#include "demux/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace demux::synth {

namespace {

enum Stream : std::uint64_t {
  kPermutations = 1,
  kProfileJitter = 2,
  kUnmonitored = 3,
  kSiteChoice = 4,
  kTabSample = 5,
  kOffsets = 6,
};

double lerp(double lo, double hi, double f) { return lo + (hi - lo) * f; }
double log_lerp(double lo, double hi, double f) { return std::exp(lerp(std::log(lo), std::log(hi), f)); }

// Cell position in [0,1] for class slot `slot` of `n`, jittered within the cell.
double grid_position(std::size_t slot, std::size_t n, Rng& rng) {
  if (n == 1) return 0.5;
  double center = static_cast<double>(slot) / static_cast<double>(n - 1);
  double half_cell = 0.5 / static_cast<double>(n - 1);
  return std::clamp(center + rng.uniform(-0.4, 0.4) * half_cell, 0.0, 1.0);
}

struct Ranges {
  double in_mean_lo = 4.0, in_mean_hi = 40.0;
  double out_mean_lo = 1.5, out_mean_hi = 5.0;
  double gap_lo_ms = 8.0, gap_hi_ms = 60.0;
  double rhythm_lo_ms = 120.0, rhythm_hi_ms = 400.0;
  double objects_lo = 12.0, objects_hi = 30.0;
};

SiteProfile profile_from_positions(std::size_t class_id, std::size_t num_classes, const double pos[5], Rng& rng) {
  const Ranges r;
  SiteProfile p;
  p.class_id = class_id;
  p.num_classes = num_classes;
  p.incoming_burst_size_dist = {log_lerp(r.in_mean_lo, r.in_mean_hi, pos[0]), rng.uniform(3.0, 6.0)};
  p.outgoing_burst_size_dist = {lerp(r.out_mean_lo, r.out_mean_hi, pos[1]), rng.uniform(2.0, 4.0)};
  p.inter_burst_gap_dist = {log_lerp(r.gap_lo_ms, r.gap_hi_ms, pos[2]), rng.uniform(0.3, 0.6)};
  p.rhythm_period = ms_to_ns(lerp(r.rhythm_lo_ms, r.rhythm_hi_ms, pos[3]));
  p.object_count_min = static_cast<std::size_t>(std::lround(lerp(r.objects_lo, r.objects_hi, pos[4])));
  p.object_count_max = p.object_count_min + 8;
  p.objects_per_wave = static_cast<std::size_t>(rng.uniform_int(2, 6));
  p.intra_burst_spacing_ms = rng.uniform(0.15, 0.4);
  p.rtt_ms = rng.uniform(4.0, 10.0);
  return p;
}

std::size_t draw_burst_size(const BurstSizeDist& d, Rng& rng) {
  const double excess = std::max(d.mean - 1.0, 1e-9);
  std::gamma_distribution<double> gamma(d.dispersion, excess / d.dispersion);
  std::poisson_distribution<std::int64_t> poisson(gamma(rng));
  return 1 + static_cast<std::size_t>(poisson(rng));
}

TimeNs draw_gap(const LogNormalGap& g, Rng& rng) {
  return ms_to_ns(g.median_ms * std::exp(rng.normal(0.0, g.sigma)));
}

void emit_burst(std::vector<Packet>& out, Direction dir, std::size_t size, TimeNs& t, double spacing_ms, Rng& rng) {
  std::exponential_distribution<double> spacing(1.0 / spacing_ms);
  for (std::size_t i = 0; i < size; ++i) {
    if (i > 0) t += std::max<TimeNs>(1, ms_to_ns(spacing(rng)));
    out.push_back({dir, t});
  }
}

}  // namespace

std::vector<SiteProfile> make_profiles(std::size_t num_classes, std::uint64_t master_seed) {
  if (num_classes == 0) throw std::invalid_argument("make_profiles: class count M must be >= 1");
  const Rng root(master_seed);
  Rng perm_rng = root.split(kPermutations);
  std::vector<std::vector<std::size_t>> slots(5, std::vector<std::size_t>(num_classes));
  for (auto& s : slots) {
    std::iota(s.begin(), s.end(), std::size_t{0});
    std::shuffle(s.begin(), s.end(), perm_rng);
  }
  std::vector<SiteProfile> profiles;
  profiles.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Rng rng = root.split(kProfileJitter).split(c);
    double pos[5];
    for (std::size_t dim = 0; dim < 5; ++dim) pos[dim] = grid_position(slots[dim][c], num_classes, rng);
    profiles.push_back(profile_from_positions(c, num_classes, pos, rng));
  }
  return profiles;
}

SiteProfile make_unmonitored_profile(std::size_t num_classes, std::size_t index, std::uint64_t master_seed) {
  Rng rng = Rng(master_seed).split(kUnmonitored).split(index);
  double pos[5];
  for (double& x : pos) x = rng.uniform();
  return profile_from_positions(num_classes + index, num_classes, pos, rng);
}

Trace sample_trace(const SiteProfile& profile, std::uint64_t seed) {
  Rng rng(seed);
  Trace trace;
  trace.labels = LabelVector(profile.num_classes);
  if (profile.monitored()) trace.labels.set(profile.class_id);

  const auto objects = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(profile.object_count_min), static_cast<std::int64_t>(profile.object_count_max)));
  const std::size_t per_wave = std::max<std::size_t>(1, profile.objects_per_wave);
  TimeNs t = 0;
  for (std::size_t i = 0; i < objects; ++i) {
    if (i > 0 && i % per_wave == 0) {
      // Wait for the next loading wave on the site's cadence.
      const TimeNs period = std::max<TimeNs>(1, profile.rhythm_period);
      t = (t / period + 1) * period + ms_to_ns(rng.uniform(0.0, 3.0));
    }
    emit_burst(trace.packets, Direction::Out, draw_burst_size(profile.outgoing_burst_size_dist, rng), t,
               profile.intra_burst_spacing_ms, rng);
    t += ms_to_ns(profile.rtt_ms * rng.uniform(0.8, 1.2));
    emit_burst(trace.packets, Direction::In, draw_burst_size(profile.incoming_burst_size_dist, rng), t,
               profile.intra_burst_spacing_ms, rng);
    t += draw_gap(profile.inter_burst_gap_dist, rng);
  }
  trace.meta["seed"] = std::to_string(seed);
  trace.meta["site"] = std::to_string(profile.class_id);
  trace.meta["tabs"] = "1";
  return normalize(std::move(trace));
}

Trace mix_traces(std::span<const Trace> traces, const MixSpec& spec, std::uint64_t seed) {
  if (traces.empty()) throw std::invalid_argument("mix_traces: empty input list");
  Rng rng = Rng(seed).split(kOffsets);
  Trace out;
  out.labels = LabelVector(traces.front().labels.size());
  std::size_t total = 0;
  for (const auto& t : traces) total += t.size();
  out.packets.reserve(total);
  for (const auto& t : traces) {
    const TimeNs offset = spec.offset_max > 0 ? rng.uniform_int(0, spec.offset_max) : 0;
    for (auto p : t.packets) {
      p.timestamp += offset;
      out.packets.push_back(p);
    }
    out.labels |= t.labels;
  }
  std::stable_sort(out.packets.begin(), out.packets.end(),
                   [](const Packet& a, const Packet& b) { return a.timestamp < b.timestamp; });
  out.meta["seed"] = std::to_string(seed);
  out.meta["tabs"] = std::to_string(traces.size());
  return normalize(std::move(out));
}

Trace sample_multitab(std::span<const SiteProfile> profiles, const MixSpec& spec, std::uint64_t master_seed,
                      std::uint64_t seed, const TabTransform& per_tab) {
  const std::size_t m = profiles.size();
  if (spec.tab_count == 0) throw std::invalid_argument("sample_multitab: tab_count must be >= 1");
  if (spec.tab_count > m) throw std::invalid_argument("sample_multitab: tab_count exceeds class count");
  const Rng root(seed);
  Rng choice = root.split(kSiteChoice);
  std::vector<std::size_t> classes(m);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  // Partial Fisher-Yates for sampling without replacement.
  for (std::size_t i = 0; i < spec.tab_count; ++i) {
    auto j = static_cast<std::size_t>(choice.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(m - 1)));
    std::swap(classes[i], classes[j]);
  }
  std::vector<Trace> tabs;
  tabs.reserve(spec.tab_count);
  for (std::size_t i = 0; i < spec.tab_count; ++i) {
    const std::uint64_t tab_seed = root.split(kTabSample).split(i).seed();
    if (spec.open_world && i + 1 == spec.tab_count) {
      const auto unmonitored = static_cast<std::size_t>(choice.uniform_int(0, 1'000'000));
      tabs.push_back(sample_trace(make_unmonitored_profile(m, unmonitored, master_seed), tab_seed));
    } else {
      tabs.push_back(sample_trace(profiles[classes[i]], tab_seed));
    }
    if (per_tab) tabs.back() = per_tab(std::move(tabs.back()), i);
  }
  Trace mixed = mix_traces(tabs, spec, seed);
  mixed.meta["tabs"] = std::to_string(spec.tab_count);
  if (spec.open_world) mixed.meta["open_world"] = "1";
  return mixed;
}

}  // namespace demux::synth
