#ifndef DEMUX_DEFENSES_HPP
#define DEMUX_DEFENSES_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "demux/trace.hpp"

namespace demux::defense {

enum class Kind { WtfPad, Front, TrafficSliver };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct DefenseConfig {
  Kind kind = Kind::WtfPad;
  TimeNs wtfpad_gap_threshold = 50 * kNsPerMs;
  double wtfpad_dummy_prob = 0.5;
  std::size_t front_max_dummies = 2500;
  std::pair<double, double> front_sigma_range{1.0, 14.0};  // seconds
  std::size_t sliver_paths = 3;
  std::vector<double> sliver_weights{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::size_t sliver_observed_path = 0;  // the split the attacker's entry node sees
  std::uint64_t seed = 0;
};

// Throws std::invalid_argument on out-of-range probabilities or a
// weight/path mismatch.
void validate(const DefenseConfig& cfg);

// Threshold-gap probabilistic padding: a simplified stand-in for adaptive
// padding. Each inter-packet gap longer than the threshold receives, with
// probability wtfpad_dummy_prob, one dummy packet at a uniform time strictly
// inside the gap.
Trace apply_wtfpad(const Trace& trace, const DefenseConfig& cfg);

// Front-loaded Rayleigh padding with N_d ~ U[1, front_max_dummies] and
// sigma ~ U[front_sigma_range]. front_max_dummies == 0 disables padding.
Trace apply_front(const Trace& trace, const DefenseConfig& cfg);

// Inserts exactly `dummies` packets at Rayleigh(sigma_sec) times.
Trace front_pad(const Trace& trace, std::size_t dummies, double sigma_sec, std::uint64_t seed);

// Per-packet multinomial routing over sliver_paths entry nodes. Each split
// keeps original timestamps so the union reconstructs the input.
std::vector<Trace> apply_trafficsliver(const Trace& trace, const DefenseConfig& cfg);

// The normalized split observed at cfg.sliver_observed_path.
Trace observe_trafficsliver(const Trace& trace, const DefenseConfig& cfg);

// Dispatches on cfg.kind; TrafficSliver yields the observed split.
Trace apply(const Trace& trace, const DefenseConfig& cfg);

double rayleigh_cdf(double x, double sigma);

}  // namespace demux::defense

#endif  // DEMUX_DEFENSES_HPP
