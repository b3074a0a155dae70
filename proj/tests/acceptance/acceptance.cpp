// Acceptance criteria: one PASS/FAIL line each. With no argument every
// criterion runs; otherwise only the named ones.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "demux/bm.hpp"
#include "demux/defenses.hpp"
#include "demux/harness.hpp"
#include "demux/metrics.hpp"
#include "demux/rope.hpp"
#include "demux/synthgen.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "synthetic_data.hpp"

namespace {

using namespace demux;
namespace fs = std::filesystem;

constexpr std::uint64_t kSeed = 2025;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path work_dir() {
  const char* env = std::getenv("DEMUX_ACCEPTANCE_WORK");
  return fs::absolute(env ? env : "acceptance_work");
}

// ---- property checks -----------------------------------------------------------

Outcome window_count_oracle() {
  Rng rng(kSeed);
  std::size_t mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    bm::WindowConfig c;
    c.window = rng.uniform_int(2, 5000);
    c.stride = rng.uniform_int(1, c.window - 1);
    const TimeNs t = rng.uniform_int(0, 200000);
    if (bm::window_count(t, c) != oracle::brute_window_count(t, c.window, c.stride)) ++mismatches;
  }
  return {mismatches == 0, fmt("10000 fuzzed triples, %zu mismatches", mismatches)};
}

Outcome boundary_preservation() {
  const bm::WindowConfig c;
  const auto profiles = synth::make_profiles(10, kSeed);
  Rng rng(kSeed);
  std::size_t uncovered = 0, intervals = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Trace t = synth::sample_multitab(profiles, synth::MixSpec{}, kSeed, s);
    const std::size_t l = bm::window_count(duration(t), c);
    const TimeNs end = static_cast<TimeNs>(l - 1) * c.stride + c.window;
    // Every burst span that fits, plus random intervals up to the bound.
    for (const auto& b : segment_bursts(t.packets)) {
      if (b.end - b.start > c.window - c.stride || b.end >= end) continue;
      ++intervals;
      uncovered += oracle::covering_window(b.start, b.end, l, c.window, c.stride) < 0;
    }
    for (int i = 0; i < 50; ++i) {
      const TimeNs len = rng.uniform_int(0, c.window - c.stride);
      const TimeNs a = rng.uniform_int(0, end - 1 - len);
      ++intervals;
      uncovered += oracle::covering_window(a, a + len, l, c.window, c.stride) < 0;
    }
  }
  return {uncovered == 0, fmt("1000 traces, %zu intervals, %zu uncovered", intervals, uncovered)};
}

template <typename T>
double rope_score(const std::vector<T>& q, const std::vector<T>& k, double m, double n, std::size_t d) {
  const double pm[] = {m}, pn[] = {n};
  const auto rq = nn::rope_rotate<T>(q, d, pm);
  const auto rk = nn::rope_rotate<T>(k, d, pn);
  T s = 0;
  for (std::size_t i = 0; i < d; ++i) s += rq[i] * rk[i];
  return static_cast<double>(s);
}

Outcome rope_relative_offset() {
  Rng rng(kSeed);
  double drift32 = 0.0, drift64 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = 2 * static_cast<std::size_t>(rng.uniform_int(1, 32));
    std::vector<double> q(d), k(d);
    for (auto& v : q) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (auto& v : k) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    const double m = static_cast<double>(rng.uniform_int(0, 1024)), n = static_cast<double>(rng.uniform_int(0, 1024));
    const double shift = static_cast<double>(rng.uniform_int(0, 1024));
    drift64 = std::max(drift64, std::abs(rope_score(q, k, m + shift, n + shift, d) - rope_score(q, k, m, n, d)));
    const std::vector<float> qf(q.begin(), q.end()), kf(k.begin(), k.end());
    drift32 = std::max(drift32, std::abs(rope_score(qf, kf, m + shift, n + shift, d) - rope_score(qf, kf, m, n, d)));
  }
  return {drift32 < 1e-5 && drift64 < 1e-10, fmt("1000 tuples, max drift %.2e (32-bit), %.2e (64-bit)", drift32, drift64)};
}

Outcome gradient_check() {
  const auto c = model::ModelConfig::toy(10);
  model::Model m(c, kSeed);
  const auto data = oracle::synthetic_dataset(2, 10, c.input_length, kSeed);
  m.fit_input_statistics(data.inputs);
  nn::Tensor x, y;
  const std::size_t idx[] = {0, 1};
  train::make_batch(data, idx, x, y);
  std::vector<std::pair<std::string, nn::Var>> leaves;
  for (const auto& p : m.params().trainable_paths()) leaves.emplace_back(p, m.params().get(p));
  const auto reports = oracle::gradcheck([&] { return nn::bce(m.forward(x, true), y); }, leaves, 1e-5, 48);
  double worst = 0.0;
  std::string worst_name;
  std::size_t failures = 0;
  for (const auto& r : reports) {
    // Exactly-zero gradients compare on absolute error.
    const double err = r.analytic_norm < 1e-12 ? r.absolute_error : r.relative_error;
    if (err >= 1e-3) ++failures;
    if (err > worst) worst = err, worst_name = r.name;
  }
  return {failures == 0, fmt("%zu parameter tensors, max relative error %.2e (%s)", reports.size(), worst, worst_name.c_str())};
}

Outcome metric_oracles() {
  Rng rng(kSeed);
  std::size_t mismatches = 0, rankings = 0;
  double worst = 0.0;
  for (int inst = 0; inst < 10000; ++inst) {
    const std::size_t m = static_cast<std::size_t>(rng.uniform_int(1, 20));
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 12));
    std::vector<double> scores(n * m);
    // Coarse scores so ties are common.
    for (auto& s : scores) s = static_cast<double>(rng.uniform_int(0, 8)) / 8.0;
    std::vector<LabelVector> labels(n, LabelVector(m));
    for (auto& l : labels)
      for (std::size_t c = 0; c < m; ++c) l.set(c, rng.bernoulli(0.3));

    std::vector<double> per_site;
    for (std::size_t c = 0; c < m; ++c) {
      std::vector<double> col(n);
      std::vector<std::uint8_t> lab(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = scores[i * m + c], lab[i] = labels[i].test(c);
      const auto pos = std::count(lab.begin(), lab.end(), 1);
      if (pos == 0 || pos == static_cast<long>(n)) continue;
      per_site.push_back(oracle::pair_count_auc(col, lab));
    }
    if (!per_site.empty()) {
      double expected = 0.0;
      for (double v : per_site) expected += v;
      expected /= static_cast<double>(per_site.size());
      const double got = metrics::macro_auc(scores, labels).auc;
      worst = std::max(worst, std::abs(got - expected));
      mismatches += std::abs(got - expected) > 1e-12;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::span<const double> row(scores.data() + i * m, m);
      const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(m)));
      const double dp = std::abs(metrics::p_at_k(labels[i], row, k) - oracle::enum_p_at_k(labels[i], row, k));
      const double dm = std::abs(metrics::map_at_k(labels[i], row, k) - oracle::enum_map_at_k(labels[i], row, k));
      worst = std::max({worst, dp, dm});
      mismatches += dp > 1e-12 || dm > 1e-12;
      ++rankings;
    }
  }
  return {mismatches == 0, fmt("10000 instances (%zu rankings), %zu mismatches, max deviation %.1e", rankings, mismatches, worst)};
}

Outcome defense_contracts() {
  // FRONT dummy times against the Rayleigh CDF.
  Trace seed_trace;
  seed_trace.packets = {{Direction::Out, 0}};
  const double sigma = 3.0;
  const Trace padded = defense::front_pad(seed_trace, 10000, sigma, kSeed);
  std::vector<double> times;
  bool dropped = false;
  for (const auto& p : padded.packets) {
    if (!dropped && p == seed_trace.packets[0]) {
      dropped = true;
      continue;
    }
    times.push_back(ns_to_sec(p.timestamp));
  }
  const double ks = oracle::ks_statistic(times, [&](double x) { return defense::rayleigh_cdf(x, sigma); });

  // TrafficSliver splits reassemble the input; WTF-PAD leaves short gaps alone.
  const auto profiles = synth::make_profiles(10, kSeed);
  std::size_t sliver_bad = 0, wtfpad_bad = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Trace t = synth::sample_multitab(profiles, synth::MixSpec{}, kSeed, s);
    defense::DefenseConfig sc;
    sc.kind = defense::Kind::TrafficSliver;
    sc.seed = s;
    std::vector<Packet> all;
    for (const auto& part : defense::apply_trafficsliver(t, sc)) all.insert(all.end(), part.packets.begin(), part.packets.end());
    std::stable_sort(all.begin(), all.end(), [](const Packet& a, const Packet& b) { return a.timestamp < b.timestamp; });
    sliver_bad += all != t.packets;

    defense::DefenseConfig wc;
    wc.wtfpad_gap_threshold = duration(t) + 1;
    wc.wtfpad_dummy_prob = 1.0;
    wc.seed = s;
    wtfpad_bad += defense::apply_wtfpad(t, wc).packets != t.packets;
  }
  return {ks < 0.02 && sliver_bad == 0 && wtfpad_bad == 0,
          fmt("FRONT KS %.4f (n=%zu), TrafficSliver %zu/200 unions differ, WTF-PAD %zu/200 not identity", ks, times.size(),
              sliver_bad, wtfpad_bad)};
}

// ---- synthetic benchmark ----------------------------------------------------------

harness::GenSpec benchmark_spec() {
  harness::GenSpec g;
  g.classes = 10;
  g.tab_counts = {2};
  g.traces_per_config = 2500;  // 2000 / 250 / 250 after the 8:1:1 split
  return g;
}

// Generates and windows the benchmark under `tag` unless already present.
fs::path ensure_benchmark(const std::string& tag) {
  const fs::path ds = work_dir() / ("dataset-" + tag), idx = work_dir() / ("index-" + tag);
  if (!fs::exists(idx / "index.json")) {
    harness::gen_dataset(benchmark_spec(), kSeed, ds);
    const auto report = harness::preprocess({ds, {}}, idx);
    if (!report.failures.empty()) throw std::runtime_error("benchmark preprocessing failed");
  }
  return idx;
}

harness::ExperimentSpec benchmark_experiment(const fs::path& index) {
  harness::ExperimentSpec e;
  e.index = index;
  return e;
}

double minutes_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
}

Outcome learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  fs::remove_all(work_dir() / "index-a");
  fs::remove_all(work_dir() / "dataset-a");
  const auto index = ensure_benchmark("a");
  const auto out = harness::run_train(benchmark_experiment(index), kSeed, work_dir() / "learn-a");
  const double p = out.test.p_at_k.value_or(0.0), auc = out.test.auc, mins = minutes_since(t0);
  return {p >= 0.90 && auc >= 0.97 && mins <= 20.0,
          fmt("test P@2 %.4f (>= 0.90), AUC %.4f (>= 0.97), best epoch %zu/50, %.1f min", p, auc, out.result.best_epoch, mins)};
}

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  if (!fs::exists(work_dir() / "learn-a" / "metrics.csv"))
    harness::run_train(benchmark_experiment(ensure_benchmark("a")), kSeed, work_dir() / "learn-a");
  fs::remove_all(work_dir() / "index-b");
  fs::remove_all(work_dir() / "dataset-b");
  harness::run_train(benchmark_experiment(ensure_benchmark("b")), kSeed, work_dir() / "learn-b");
  std::vector<std::string> differing;
  for (const char* f : {"metrics.csv", "test_summary.csv", "test_instances.csv"})
    if (harness::read_file(work_dir() / "learn-a" / f) != harness::read_file(work_dir() / "learn-b" / f)) differing.push_back(f);
  std::string detail = differing.empty() ? "metric CSVs byte-identical" : "differ:";
  for (const auto& f : differing) detail += " " + f;
  return {differing.empty() && minutes_since(t0) <= 25.0, detail + fmt(", %.1f min", minutes_since(t0))};
}

std::map<std::string, double> p_at_k_by_variant(const std::vector<harness::AblationRow>& rows, const std::string& metric) {
  std::map<std::string, double> out;
  for (const auto& r : rows)
    if (r.metric == metric) out[r.variant] = r.value.value_or(-1.0);
  return out;
}

Outcome ablation_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  harness::AblationSpec spec;
  spec.base = benchmark_experiment(ensure_benchmark("a"));
  spec.variants = {harness::Variant::Full,    harness::Variant::Kernel3, harness::Variant::Kernel5,
                   harness::Variant::Kernel7, harness::Variant::NoBm,    harness::Variant::NoTransformer};
  const auto p = p_at_k_by_variant(harness::run_ablate(spec, kSeed, work_dir() / "ablation"), "p_at_k");
  const double full = p.at("full"), nobm = p.at("no_bm"), notr = p.at("no_transformer");
  const double best_single = std::max({p.at("kernel3"), p.at("kernel5"), p.at("kernel7")});
  const double worst_single = std::min({p.at("kernel3"), p.at("kernel5"), p.at("kernel7")});
  const bool ok = full - best_single >= 0.02 && worst_single - nobm >= 0.02 && nobm - notr >= 0.02 && minutes_since(t0) <= 90.0;
  return {ok, fmt("P@2 full %.4f, kernel3 %.4f, kernel5 %.4f, kernel7 %.4f, no_bm %.4f, no_transformer %.4f, %.1f min", full,
                  p.at("kernel3"), p.at("kernel5"), p.at("kernel7"), nobm, notr, minutes_since(t0))};
}

Outcome plug_and_play() {
  const auto t0 = std::chrono::steady_clock::now();
  harness::AblationSpec spec;
  spec.base = benchmark_experiment(ensure_benchmark("a"));
  spec.variants = {harness::Variant::BaselineDf, harness::Variant::BaselineDfPlusBm};
  const auto auc = p_at_k_by_variant(harness::run_ablate(spec, kSeed, work_dir() / "plug_and_play"), "auc");
  const double without = auc.at("baseline_df"), with = auc.at("baseline_df_plus_bm");
  return {with - without >= 0.02 && minutes_since(t0) <= 30.0,
          fmt("AUC baseline_df %.4f, baseline_df_plus_bm %.4f (gain %.4f), %.1f min", without, with, with - without,
              minutes_since(t0))};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion> kCriteria = {
    {"window_count_oracle", window_count_oracle},
    {"boundary_preservation", boundary_preservation},
    {"rope_relative_offset", rope_relative_offset},
    {"gradient_check", gradient_check},
    {"metric_oracles", metric_oracles},
    {"defense_contracts", defense_contracts},
    {"synthetic_learnability", learnability},
    {"ablation_ordering", ablation_ordering},
    {"plug_and_play", plug_and_play},
    {"determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted)
    if (std::none_of(kCriteria.begin(), kCriteria.end(), [&](const Criterion& c) { return w == c.name; })) {
      std::fprintf(stderr, "unknown criterion %s\n", w.c_str());
      return 2;
    }
  fs::create_directories(work_dir());
  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
