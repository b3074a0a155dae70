#include "demux/synthgen.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace demux::synth {
namespace {

double mean_burst_size(const Trace& t, Direction d) {
  double sum = 0.0, n = 0.0;
  for (const auto& b : segment_bursts(t.packets))
    if (b.direction == d) {
      sum += static_cast<double>(b.size);
      n += 1.0;
    }
  return n > 0 ? sum / n : 0.0;
}

TEST(MakeProfiles, Deterministic) { EXPECT_EQ(make_profiles(10, 7), make_profiles(10, 7)); }

TEST(MakeProfiles, SeedSensitive) {
  const auto a = make_profiles(2, 7), b = make_profiles(2, 8);
  EXPECT_NE(a, b);
}

TEST(MakeProfiles, RejectsZeroClasses) { EXPECT_THROW(make_profiles(0, 1), std::invalid_argument); }

TEST(MakeProfiles, DistinctParameterTuples) {
  const auto p = make_profiles(50, 3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(p[i].class_id, i);
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      auto a = p[i], b = p[j];
      b.class_id = a.class_id;
      EXPECT_NE(a, b) << i << " vs " << j;
    }
  }
}

TEST(SampleTrace, DeterministicSingleLabel) {
  const auto p = make_profiles(10, 7);
  const Trace a = sample_trace(p[3], 99), b = sample_trace(p[3], 99);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.labels.popcount(), 1u);
  EXPECT_TRUE(a.labels.test(3));
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a.packets.front().timestamp, 0);
  EXPECT_TRUE(is_sorted(a.packets));
  EXPECT_NE(sample_trace(p[3], 100), a);
}

TEST(SampleTrace, BurstsAlternateRequestResponse) {
  const auto p = make_profiles(4, 1);
  const auto bursts = segment_bursts(sample_trace(p[0], 5).packets);
  ASSERT_GE(bursts.size(), 2u);
  EXPECT_EQ(bursts.front().direction, Direction::Out);
  EXPECT_EQ(bursts.back().direction, Direction::In);
}

TEST(SampleTrace, IncomingBurstMeanMatchesConfig) {
  for (const auto& profile : make_profiles(3, 21)) {
    double sum = 0.0, n = 0.0;
    for (std::uint64_t s = 0; s < 1000; ++s)
      for (const auto& b : segment_bursts(sample_trace(profile, s).packets))
        if (b.direction == Direction::In) {
          sum += static_cast<double>(b.size);
          n += 1.0;
        }
    const double configured = profile.incoming_burst_size_dist.mean;
    EXPECT_LT(std::abs(sum / n - configured), 0.05 * configured) << "class " << profile.class_id;
  }
}

TEST(SampleTrace, NearestCentroidSeparatesTwoClasses) {
  const auto p = make_profiles(2, 13);
  // 100 traces per class: first half fits centroids, second half is scored.
  double centroid[2] = {0.0, 0.0};
  for (std::size_t c = 0; c < 2; ++c)
    for (std::uint64_t s = 0; s < 50; ++s) centroid[c] += mean_burst_size(sample_trace(p[c], s), Direction::In) / 50.0;
  std::size_t correct = 0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::uint64_t s = 50; s < 100; ++s) {
      const double x = mean_burst_size(sample_trace(p[c], s), Direction::In);
      const std::size_t guess = std::abs(x - centroid[0]) <= std::abs(x - centroid[1]) ? 0 : 1;
      correct += guess == c;
    }
  EXPECT_GT(static_cast<double>(correct) / 100.0, 0.8);
}

TEST(MixTraces, SingleInputZeroOffsetIsIdentity) {
  const auto p = make_profiles(5, 2);
  const Trace t = sample_trace(p[1], 4);
  const Trace mixed = mix_traces(std::vector<Trace>{t}, MixSpec{1, 0, false}, 9);
  EXPECT_EQ(mixed.packets, t.packets);
  EXPECT_EQ(mixed.labels, t.labels);
}

TEST(MixTraces, CountOrderAndLabels) {
  LabelVector la(10), lb(10);
  la.set(3);
  lb.set(7);
  Trace a{{}, la, {}}, b{{}, lb, {}};
  for (int i = 0; i < 50; ++i) a.packets.push_back({Direction::Out, i * 1000});
  for (int i = 0; i < 70; ++i) b.packets.push_back({Direction::In, i * 700});
  const Trace mixed = mix_traces(std::vector<Trace>{a, b}, MixSpec{2, 500 * kNsPerMs, false}, 1);
  EXPECT_EQ(mixed.size(), 120u);
  EXPECT_TRUE(is_sorted(mixed.packets));
  EXPECT_EQ(mixed.packets.front().timestamp, 0);
  EXPECT_EQ(mixed.labels.indices(), (std::vector<std::size_t>{3, 7}));
}

TEST(MixTraces, RejectsEmptyInput) { EXPECT_THROW(mix_traces({}, MixSpec{}, 1), std::invalid_argument); }

TEST(SampleMultitab, LabelExact) {
  const auto p = make_profiles(10, 4);
  for (std::size_t k = 1; k <= 5; ++k)
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Trace t = sample_multitab(p, MixSpec{k, 500 * kNsPerMs, false}, 4, s);
      EXPECT_EQ(t.labels.popcount(), k);
      EXPECT_TRUE(is_sorted(t.packets));
      EXPECT_EQ(t.packets.front().timestamp, 0);
    }
  EXPECT_THROW(sample_multitab(p, MixSpec{11, 0, false}, 4, 0), std::invalid_argument);
}

TEST(SampleMultitab, OpenWorldHasOneUnmonitoredTab) {
  const auto p = make_profiles(10, 4);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Trace t = sample_multitab(p, MixSpec{3, 500 * kNsPerMs, true}, 4, s);
    EXPECT_EQ(t.labels.popcount(), 2u);
  }
  const Trace u = sample_trace(make_unmonitored_profile(10, 0, 4), 1);
  EXPECT_EQ(u.labels.popcount(), 0u);
  EXPECT_EQ(u.labels.size(), 10u);
}

TEST(SampleMultitab, TabTransformSeesEveryTab) {
  const auto p = make_profiles(6, 4);
  std::size_t calls = 0;
  const Trace t = sample_multitab(p, MixSpec{3, 0, false}, 4, 2, [&](Trace tab, std::size_t) {
    ++calls;
    return tab;
  });
  EXPECT_EQ(calls, 3u);
  EXPECT_EQ(t, sample_multitab(p, MixSpec{3, 0, false}, 4, 2));
}

}  // namespace
}  // namespace demux::synth
