#include "demux/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "demux/rng.hpp"

namespace demux::defense {

namespace {

Direction random_direction(Rng& rng) { return rng.bernoulli(0.5) ? Direction::Out : Direction::In; }

void sort_packets(std::vector<Packet>& packets) {
  std::stable_sort(packets.begin(), packets.end(),
                   [](const Packet& a, const Packet& b) { return a.timestamp < b.timestamp; });
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::WtfPad: return "wtfpad";
    case Kind::Front: return "front";
    case Kind::TrafficSliver: return "trafficsliver";
  }
  return "unknown";
}

Kind kind_from_string(const std::string& name) {
  if (name == "wtfpad") return Kind::WtfPad;
  if (name == "front") return Kind::Front;
  if (name == "trafficsliver") return Kind::TrafficSliver;
  throw std::invalid_argument("unknown defense '" + name + "' (expected wtfpad, front or trafficsliver)");
}

void validate(const DefenseConfig& cfg) {
  if (!(cfg.wtfpad_dummy_prob >= 0.0 && cfg.wtfpad_dummy_prob <= 1.0))
    throw std::invalid_argument("wtfpad_dummy_prob must lie in [0,1]");
  if (cfg.wtfpad_gap_threshold < 0) throw std::invalid_argument("wtfpad_gap_threshold must be nonnegative");
  if (!(cfg.front_sigma_range.first > 0.0 && cfg.front_sigma_range.first <= cfg.front_sigma_range.second))
    throw std::invalid_argument("front_sigma_range must satisfy 0 < min <= max");
  if (cfg.sliver_paths == 0) throw std::invalid_argument("sliver_paths must be >= 1");
  if (cfg.sliver_weights.size() != cfg.sliver_paths)
    throw std::invalid_argument("sliver_weights has " + std::to_string(cfg.sliver_weights.size()) +
                                " entries for " + std::to_string(cfg.sliver_paths) + " paths");
  double sum = 0.0;
  for (double w : cfg.sliver_weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("sliver_weights entries must lie in [0,1]");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("sliver_weights must sum to 1");
  if (cfg.sliver_observed_path >= cfg.sliver_paths) throw std::invalid_argument("sliver_observed_path out of range");
}

Trace apply_wtfpad(const Trace& trace, const DefenseConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  Trace out = trace;
  out.packets.clear();
  out.packets.reserve(trace.size() + trace.size() / 4);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out.packets.push_back(trace.packets[i]);
    if (i + 1 == trace.size()) break;
    const TimeNs lo = trace.packets[i].timestamp;
    const TimeNs gap = trace.packets[i + 1].timestamp - lo;
    if (gap > cfg.wtfpad_gap_threshold && gap >= 2 && rng.bernoulli(cfg.wtfpad_dummy_prob)) {
      out.packets.push_back({random_direction(rng), lo + rng.uniform_int(1, gap - 1)});
    }
  }
  out.meta["defense"] = to_string(Kind::WtfPad);
  return out;
}

Trace front_pad(const Trace& trace, std::size_t dummies, double sigma_sec, std::uint64_t seed) {
  Rng rng(seed);
  Trace out = trace;
  out.packets.reserve(trace.size() + dummies);
  for (std::size_t i = 0; i < dummies; ++i) {
    const double u = rng.uniform();
    const double t_sec = sigma_sec * std::sqrt(-2.0 * std::log1p(-u));
    out.packets.push_back({random_direction(rng), static_cast<TimeNs>(std::llround(t_sec * kNsPerSec))});
  }
  sort_packets(out.packets);
  out.meta["defense"] = to_string(Kind::Front);
  return out;
}

Trace apply_front(const Trace& trace, const DefenseConfig& cfg) {
  validate(cfg);
  Rng rng = Rng(cfg.seed).split(1);
  std::size_t dummies = 0;
  if (cfg.front_max_dummies > 0) dummies = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(cfg.front_max_dummies)));
  const double sigma = rng.uniform(cfg.front_sigma_range.first, cfg.front_sigma_range.second);
  Trace out = front_pad(trace, dummies, sigma, Rng(cfg.seed).split(2).seed());
  out.meta["front_dummies"] = std::to_string(dummies);
  return out;
}

std::vector<Trace> apply_trafficsliver(const Trace& trace, const DefenseConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  std::vector<double> cumulative(cfg.sliver_weights.size());
  std::partial_sum(cfg.sliver_weights.begin(), cfg.sliver_weights.end(), cumulative.begin());
  std::vector<Trace> splits(cfg.sliver_paths);
  for (std::size_t i = 0; i < splits.size(); ++i) {
    splits[i].labels = trace.labels;
    splits[i].meta = trace.meta;
    splits[i].meta["defense"] = to_string(Kind::TrafficSliver);
    splits[i].meta["sliver_path"] = std::to_string(i);
  }
  for (const auto& p : trace.packets) {
    const double u = rng.uniform() * cumulative.back();
    auto path = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    path = std::min(path, splits.size() - 1);
    splits[path].packets.push_back(p);
  }
  return splits;
}

Trace observe_trafficsliver(const Trace& trace, const DefenseConfig& cfg) {
  auto splits = apply_trafficsliver(trace, cfg);
  return normalize(std::move(splits[cfg.sliver_observed_path]));
}

Trace apply(const Trace& trace, const DefenseConfig& cfg) {
  switch (cfg.kind) {
    case Kind::WtfPad: return apply_wtfpad(trace, cfg);
    case Kind::Front: return apply_front(trace, cfg);
    case Kind::TrafficSliver: return observe_trafficsliver(trace, cfg);
  }
  throw std::logic_error("unhandled defense kind");
}

double rayleigh_cdf(double x, double sigma) {
  if (x <= 0.0) return 0.0;
  return 1.0 - std::exp(-(x * x) / (2.0 * sigma * sigma));
}

}  // namespace demux::defense
