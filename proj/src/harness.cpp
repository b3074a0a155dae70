#include "demux/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "demux/checkpoint.hpp"
#include "demux/hash.hpp"
#include "demux/parallel.hpp"
#include "demux/rng.hpp"
#include "demux/synthgen.hpp"

namespace demux::harness {

using nlohmann::json;

// ---- io helpers ----------------------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string padded(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

TimeNs time_field(const json& j, const std::string& stem, TimeNs fallback) {
  if (j.contains(stem + "_ns")) return j.at(stem + "_ns").get<TimeNs>();
  if (j.contains(stem + "_ms")) return static_cast<TimeNs>(std::llround(j.at(stem + "_ms").get<double>() * kNsPerMs));
  return fallback;
}

std::string config_name(std::size_t tabs) { return "tabs" + std::to_string(tabs); }

bool selected(const std::vector<std::string>& configs, const std::string& name) {
  return configs.empty() || std::find(configs.begin(), configs.end(), name) != configs.end();
}

std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

}  // namespace

// ---- json ------------------------------------------------------------------------

json defense_to_json(const defense::DefenseConfig& c) {
  return {{"kind", defense::to_string(c.kind)},
          {"wtfpad_gap_threshold_ns", c.wtfpad_gap_threshold},
          {"wtfpad_dummy_prob", c.wtfpad_dummy_prob},
          {"front_max_dummies", c.front_max_dummies},
          {"front_sigma_range", {c.front_sigma_range.first, c.front_sigma_range.second}},
          {"sliver_paths", c.sliver_paths},
          {"sliver_weights", c.sliver_weights},
          {"sliver_observed_path", c.sliver_observed_path},
          {"seed", c.seed}};
}

defense::DefenseConfig defense_from_json(const json& j) {
  defense::DefenseConfig c;
  c.kind = defense::kind_from_string(j.at("kind").get<std::string>());
  c.wtfpad_gap_threshold = time_field(j, "wtfpad_gap_threshold", c.wtfpad_gap_threshold);
  c.wtfpad_dummy_prob = j.value("wtfpad_dummy_prob", c.wtfpad_dummy_prob);
  c.front_max_dummies = j.value("front_max_dummies", c.front_max_dummies);
  if (j.contains("front_sigma_range")) {
    const auto& r = j.at("front_sigma_range");
    if (!r.is_array() || r.size() != 2) throw std::invalid_argument("front_sigma_range must be [min, max]");
    c.front_sigma_range = {r[0].get<double>(), r[1].get<double>()};
  }
  c.sliver_paths = j.value("sliver_paths", c.sliver_paths);
  if (j.contains("sliver_weights"))
    c.sliver_weights = j.at("sliver_weights").get<std::vector<double>>();
  else
    c.sliver_weights.assign(c.sliver_paths, 1.0 / static_cast<double>(c.sliver_paths));
  c.sliver_observed_path = j.value("sliver_observed_path", c.sliver_observed_path);
  c.seed = j.value("seed", c.seed);
  return c;
}

json window_to_json(const bm::WindowConfig& c) {
  return {{"window_ns", c.window}, {"stride_ns", c.stride}, {"packet_channels", c.packet_channels}};
}

bm::WindowConfig window_from_json(const json& j) {
  bm::WindowConfig c;
  c.window = time_field(j, "window", c.window);
  c.stride = time_field(j, "stride", c.stride);
  c.packet_channels = j.value("packet_channels", c.packet_channels);
  return c;
}

void GenSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("gen spec: " + m); };
  if (classes == 0) fail("classes must be >= 1");
  if (tab_counts.empty()) fail("tab_counts must not be empty");
  for (auto k : tab_counts) {
    if (k == 0) fail("tab counts must be >= 1");
    if (k > classes) fail("tab count " + std::to_string(k) + " exceeds class count " + std::to_string(classes));
  }
  if (offset_max < 0) fail("offset_max must be nonnegative");
  if (defense) defense::validate(*defense);
}

void to_json(json& j, const GenSpec& s) {
  j = {{"mode", s.mode == WorldMode::Open ? "open_world" : "closed_world"},
       {"classes", s.classes},
       {"tab_counts", s.tab_counts},
       {"traces_per_config", s.traces_per_config},
       {"mixed", s.mixed},
       {"offset_max_ns", s.offset_max},
       {"defense", s.defense ? defense_to_json(*s.defense) : json(nullptr)}};
  if (s.profile_seed) j["profile_seed"] = *s.profile_seed;
}

void from_json(const json& j, GenSpec& s) {
  s = GenSpec{};
  const std::string mode = j.value("mode", std::string("closed_world"));
  if (mode == "closed_world")
    s.mode = WorldMode::Closed;
  else if (mode == "open_world")
    s.mode = WorldMode::Open;
  else
    throw std::invalid_argument("unknown mode '" + mode + "'");
  s.classes = j.value("classes", s.classes);
  if (j.contains("tab_counts")) s.tab_counts = j.at("tab_counts").get<std::vector<std::size_t>>();
  s.traces_per_config = j.value("traces_per_config", s.traces_per_config);
  s.mixed = j.value("mixed", s.mixed);
  s.offset_max = time_field(j, "offset_max", s.offset_max);
  if (j.contains("defense") && !j.at("defense").is_null()) s.defense = defense_from_json(j.at("defense"));
  if (j.contains("profile_seed")) s.profile_seed = j.at("profile_seed").get<std::uint64_t>();
}

void to_json(json& j, const DatasetManifest& m) {
  json files = json::array();
  for (const auto& f : m.files)
    files.push_back({{"path", f.path}, {"config", f.config}, {"tab_count", f.tab_count}, {"labels", f.labels}, {"meta", f.meta}});
  j = {{"version", m.version},
       {"spec", m.spec},
       {"seeds", {{"master", m.seed}, {"profiles", m.profile_seed}}},
       {"files", std::move(files)}};
}

void from_json(const json& j, DatasetManifest& m) {
  m.version = j.at("version").get<int>();
  if (m.version != kManifestVersion) throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
  m.spec = j.at("spec").get<GenSpec>();
  m.seed = j.at("seeds").at("master").get<std::uint64_t>();
  m.profile_seed = j.at("seeds").at("profiles").get<std::uint64_t>();
  m.files.clear();
  for (const auto& f : j.at("files"))
    m.files.push_back({f.at("path").get<std::string>(), f.at("config").get<std::string>(), f.at("tab_count").get<std::size_t>(),
                       f.at("labels").get<std::vector<std::size_t>>(), f.value("meta", Meta{})});
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
  return read_json(dataset_dir / "manifest.json").get<DatasetManifest>();
}

void from_json(const json& j, PreprocessSpec& s) {
  s.dataset = j.at("dataset").get<std::string>();
  s.window = window_from_json(j.value("window", json::object()));
}

void to_json(json& j, const FeatureIndex& i) {
  json entries = json::array();
  for (const auto& e : i.entries)
    entries.push_back({{"trace", e.trace},
                       {"tensor", e.tensor},
                       {"hash", e.hash},
                       {"rows", e.rows},
                       {"config", e.config},
                       {"tab_count", e.tab_count},
                       {"labels", e.labels}});
  j = {{"version", i.version},
       {"dataset", i.dataset},
       {"classes", i.classes},
       {"window", window_to_json(i.window)},
       {"entries", std::move(entries)}};
}

void from_json(const json& j, FeatureIndex& i) {
  i.version = j.at("version").get<int>();
  if (i.version != kManifestVersion) throw std::runtime_error("unsupported index version " + std::to_string(i.version));
  i.dataset = j.at("dataset").get<std::string>();
  i.classes = j.at("classes").get<std::size_t>();
  i.window = window_from_json(j.at("window"));
  i.entries.clear();
  for (const auto& e : j.at("entries"))
    i.entries.push_back({e.at("trace").get<std::string>(), e.at("tensor").get<std::string>(), e.at("hash").get<std::string>(),
                         e.at("rows").get<std::size_t>(), e.at("config").get<std::string>(),
                         e.at("tab_count").get<std::size_t>(), e.at("labels").get<std::vector<std::size_t>>()});
}

FeatureIndex read_index(const fs::path& index_dir) { return read_json(index_dir / "index.json").get<FeatureIndex>(); }

// ---- gen -------------------------------------------------------------------------

DatasetManifest gen_dataset(const GenSpec& spec, std::uint64_t seed, const fs::path& out) {
  spec.validate();
  DatasetManifest manifest;
  manifest.spec = spec;
  manifest.seed = seed;
  manifest.profile_seed = spec.profile_seed.value_or(seed);
  const auto profiles = synth::make_profiles(spec.classes, manifest.profile_seed);

  struct Job {
    std::string config;
    std::size_t tabs;  // 0 draws per trace (mixed)
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (auto k : spec.tab_counts)
    for (std::size_t i = 0; i < spec.traces_per_config; ++i) jobs.push_back({config_name(k), k, i});
  if (spec.mixed)
    for (std::size_t i = 0; i < spec.traces_per_config; ++i) jobs.push_back({"mixed", 0, i});

  const Rng root(seed);
  std::vector<Trace> traces(jobs.size());
  std::vector<std::size_t> tab_counts(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t n) {
    const Rng trace_rng = root.split(fnv1a64(jobs[n].config)).split(jobs[n].index);
    std::size_t tabs = jobs[n].tabs;
    if (tabs == 0) {
      Rng pick = trace_rng.split(fnv1a64("tab_count"));
      tabs = spec.tab_counts[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(spec.tab_counts.size()) - 1))];
    }
    synth::MixSpec mix{tabs, spec.offset_max, spec.mode == WorldMode::Open};
    synth::TabTransform defend;
    if (spec.defense) {
      defend = [&](Trace tab, std::size_t tab_index) {
        defense::DefenseConfig dc = *spec.defense;
        dc.seed = Rng(spec.defense->seed).split(trace_rng.seed()).split(tab_index).seed();
        return defense::apply(tab, dc);
      };
    }
    Trace t = synth::sample_multitab(profiles, mix, manifest.profile_seed, trace_rng.seed(), defend);
    if (spec.defense) t.meta["defense"] = defense::to_string(spec.defense->kind);
    traces[n] = std::move(t);
    tab_counts[n] = tabs;
  });

  const fs::path target = fs::absolute(out).lexically_normal();
  fs::path tmp = target;
  tmp += ".tmp-" + hex64(seed);
  fs::remove_all(tmp);
  try {
    fs::create_directories(tmp);
    for (std::size_t n = 0; n < jobs.size(); ++n) {
      const std::string rel = "traces/" + jobs[n].config + "/" + padded(jobs[n].index) + ".csv";
      fs::create_directories((tmp / rel).parent_path());
      write_trace_file((tmp / rel).string(), traces[n].packets);
      manifest.files.push_back({rel, jobs[n].config, tab_counts[n], traces[n].labels.indices(), traces[n].meta});
    }
    write_file_atomic(tmp / "manifest.json", json(manifest).dump(2) + "\n");
    fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
  return manifest;
}

// ---- preprocess ------------------------------------------------------------------

PreprocessReport preprocess(const PreprocessSpec& spec, const fs::path& out) {
  bm::validate(spec.window);
  const DatasetManifest manifest = read_manifest(spec.dataset);
  const std::string window_key = std::to_string(spec.window.window) + "/" + std::to_string(spec.window.stride) + "/" +
                                 std::to_string(spec.window.packet_channels);

  std::map<std::string, IndexEntry> previous;
  if (fs::exists(out / "index.json")) {
    try {
      for (auto& e : read_index(out).entries) previous.emplace(e.trace, std::move(e));
    } catch (const std::exception&) {
      // An unreadable index only forfeits reuse.
    }
  }

  const std::size_t n = manifest.files.size();
  std::vector<std::optional<IndexEntry>> entries(n);
  std::vector<std::optional<PreprocessFailure>> failures(n);
  std::vector<char> rewritten(n, 0);
  parallel_for(n, [&](std::size_t i) {
    const auto& f = manifest.files[i];
    const fs::path trace_path = spec.dataset / f.path;
    try {
      const std::string bytes = read_file(trace_path);
      const std::string hash = hex64(fnv1a64(bytes, fnv1a64(window_key)));
      std::string tensor = "tensors/" + f.path.substr(f.path.find('/') + 1);
      tensor.replace(tensor.size() - 4, 4, ".dmx1");
      auto it = previous.find(f.path);
      if (it != previous.end() && it->second.hash == hash && it->second.tensor == tensor && fs::exists(out / tensor)) {
        entries[i] = it->second;
        entries[i]->config = f.config;
        entries[i]->tab_count = f.tab_count;
        entries[i]->labels = f.labels;
        return;
      }
      Trace trace;
      trace.packets = parse_trace_csv(bytes);
      const auto features = bm::aggregate(trace, spec.window);
      write_file_atomic(out / tensor, bm::encode_dmx1(features));
      entries[i] = IndexEntry{f.path, tensor, hash, features.rows, f.config, f.tab_count, f.labels};
      rewritten[i] = 1;
    } catch (const std::exception& e) {
      failures[i] = PreprocessFailure{trace_path.string(), e.what()};
    }
  });

  FeatureIndex index;
  index.dataset = spec.dataset.string();
  index.classes = manifest.spec.classes;
  index.window = spec.window;
  PreprocessReport report;
  for (std::size_t i = 0; i < n; ++i) {
    if (entries[i]) {
      index.entries.push_back(std::move(*entries[i]));
      ++report.processed;
      report.rewritten += rewritten[i];
    }
    if (failures[i]) report.failures.push_back(std::move(*failures[i]));
  }
  fs::create_directories(out);
  json j = index;
  json failed = json::array();
  for (const auto& f : report.failures) failed.push_back({{"path", f.path}, {"error", f.error}});
  j["failures"] = std::move(failed);
  write_file_atomic(out / "index.json", j.dump(2) + "\n");
  return report;
}

// ---- train -------------------------------------------------------------------------

namespace {

constexpr std::pair<Variant, const char*> kVariants[] = {
    {Variant::Full, "full"},
    {Variant::NoBm, "no_bm"},
    {Variant::Kernel3, "kernel3"},
    {Variant::Kernel5, "kernel5"},
    {Variant::Kernel7, "kernel7"},
    {Variant::NoTransformer, "no_transformer"},
    {Variant::BaselineDf, "baseline_df"},
    {Variant::BaselineDfPlusBm, "baseline_df_plus_bm"},
};

}  // namespace

std::string to_string(Variant v) {
  for (const auto& [value, name] : kVariants)
    if (value == v) return name;
  throw std::invalid_argument("unknown variant");
}

Variant variant_from_string(const std::string& s) {
  for (const auto& [value, name] : kVariants)
    if (s == name) return value;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

void to_json(json& j, const ExperimentSpec& s) {
  j = {{"index", s.index.string()},
       {"variant", to_string(s.variant)},
       {"positional", model::to_string(s.positional)},
       {"aggregation", model::to_string(s.aggregation)},
       {"scale", s.reference_scale ? "reference" : "toy"},
       {"configs", s.configs},
       {"split_seed", s.split_seed},
       {"train", s.train}};
  if (s.input_length) j["input_length"] = *s.input_length;
  if (s.raw_length) j["raw_length"] = *s.raw_length;
}

void from_json(const json& j, ExperimentSpec& s) {
  s = ExperimentSpec{};
  s.index = j.at("index").get<std::string>();
  s.variant = variant_from_string(j.value("variant", std::string("full")));
  s.positional = model::positional_from_string(j.value("positional", std::string("rope")));
  s.aggregation = model::aggregation_from_string(j.value("aggregation", std::string("upproj_mean")));
  const std::string scale = j.value("scale", std::string("toy"));
  if (scale != "toy" && scale != "reference") throw std::invalid_argument("scale must be toy or reference");
  s.reference_scale = scale == "reference";
  if (j.contains("input_length")) s.input_length = j.at("input_length").get<std::size_t>();
  if (j.contains("raw_length")) s.raw_length = j.at("raw_length").get<std::size_t>();
  if (j.contains("configs")) s.configs = j.at("configs").get<std::vector<std::string>>();
  s.split_seed = j.value("split_seed", s.split_seed);
  if (j.contains("train")) s.train = j.at("train").get<train::TrainConfig>();
  s.train.validate();
}

model::ModelConfig resolve_model(const ExperimentSpec& spec, std::size_t classes, std::size_t channels) {
  auto c = spec.reference_scale ? model::ModelConfig::reference(classes) : model::ModelConfig::toy(classes);
  if (spec.input_length) c.input_length = *spec.input_length;
  c.input_channels = channels;
  c.channel_progression.front() = channels;
  c.positional = spec.positional;
  c.aggregation = spec.aggregation;
  const std::size_t raw_length = spec.raw_length.value_or(4 * c.input_length);
  switch (spec.variant) {
    case Variant::Full:
      break;
    case Variant::NoBm:
      c.input = model::InputKind::RawDirections;
      c.input_length = raw_length;
      break;
    case Variant::Kernel3:
      c.branch_kernels = {3};
      break;
    case Variant::Kernel5:
      c.branch_kernels = {5};
      break;
    case Variant::Kernel7:
      c.branch_kernels = {7};
      break;
    case Variant::NoTransformer:
      c.stage1.layers = 0;
      c.stage2.layers = 0;
      break;
    case Variant::BaselineDf:
      c.architecture = model::Architecture::BaselineDf;
      c.input = model::InputKind::RawDirections;
      c.input_length = raw_length;
      c.channel_progression.front() = 1;
      break;
    case Variant::BaselineDfPlusBm:
      c.architecture = model::Architecture::BaselineDf;
      break;
  }
  c.validate();
  return c;
}

LoadedData load_data(const FeatureIndex& index, const fs::path& index_dir, const model::ModelConfig& config,
                     const std::vector<std::string>& configs) {
  std::vector<const IndexEntry*> chosen;
  for (const auto& e : index.entries)
    if (selected(configs, e.config)) chosen.push_back(&e);
  const bool raw = config.input == model::InputKind::RawDirections;
  const std::size_t channels = raw ? 1 : config.input_channels;
  if (!raw && index.window.channels() != config.input_channels)
    throw std::invalid_argument("index tensors have " + std::to_string(index.window.channels()) +
                                " channels, model expects " + std::to_string(config.input_channels));
  if (index.classes != config.classes)
    throw std::invalid_argument("index has " + std::to_string(index.classes) + " classes, model expects " +
                                std::to_string(config.classes));
  std::vector<std::vector<float>> inputs(chosen.size());
  parallel_for(chosen.size(), [&](std::size_t i) {
    if (raw) {
      const auto packets = read_trace_file((fs::path(index.dataset) / chosen[i]->trace).string());
      inputs[i] = model::direction_sequence(packets, config.input_length);
    } else {
      inputs[i] = train::fit_features(bm::read_dmx1((index_dir / chosen[i]->tensor).string()), config.input_length);
    }
  });
  LoadedData out{train::Dataset{config.input_length, channels, {}, {}}, {}};
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    out.data.add(std::move(inputs[i]), LabelVector::from_indices(index.classes, chosen[i]->labels));
    out.tab_counts.push_back(chosen[i]->tab_count);
  }
  return out;
}

namespace {

metrics::EvalResult score(model::Model& m, const train::Dataset& data, const metrics::KPolicy& policy) {
  const auto pred = train::predict(m, data, 64);
  auto result = metrics::evaluate(pred, data.labels, policy);
  result.loss = train::score_split(pred, data.labels, 0, "").loss;
  return result;
}

}  // namespace

TrainOutcome run_train(const ExperimentSpec& spec, std::uint64_t seed, const fs::path& out) {
  const FeatureIndex index = read_index(spec.index);
  const model::ModelConfig config = resolve_model(spec, index.classes, index.window.channels());
  const LoadedData loaded = load_data(index, spec.index, config, spec.configs);
  if (loaded.data.empty()) throw std::invalid_argument("no instances selected for training");
  const auto split = train::split_indices(loaded.data.size(), spec.split_seed);
  const auto train_set = loaded.data.subset(split.train);
  const auto val_set = loaded.data.subset(split.val);
  const auto test_set = loaded.data.subset(split.test);
  train::check_compatible(config, train_set);

  train::TrainConfig tc = spec.train;
  tc.seed = seed;
  model::Model m(config, seed);
  TrainOutcome outcome{config, train::train(m, train_set, &val_set, tc), {}};

  std::set<std::size_t> tabs;
  for (auto i : split.train) tabs.insert(loaded.tab_counts[i]);
  const json meta = {{"variant", to_string(spec.variant)},
                     {"seed", seed},
                     {"best_epoch", outcome.result.best_epoch},
                     {"tab_counts", tabs},
                     {"window", window_to_json(index.window)}};
  const std::string bytes = model::encode_checkpoint(config, outcome.result.best_params, meta);
  // Score the stored 32-bit weights so the eval command reproduces these numbers.
  auto stored = model::decode_checkpoint(bytes);
  model::Model best(stored.config, std::move(stored.params));
  if (!test_set.empty()) outcome.test = score(best, test_set, metrics::KPolicy::true_count());

  fs::create_directories(out);
  write_file_atomic(out / "model.dmxc", bytes);
  write_file_atomic(out / "metrics.csv", outcome.result.log.to_csv());
  write_file_atomic(out / "test_summary.csv", metrics::eval_summary_csv(outcome.test, "test"));
  write_file_atomic(out / "test_instances.csv", metrics::eval_instances_csv(outcome.test));
  json experiment = spec;
  experiment["seed"] = seed;
  experiment["model"] = config;
  write_file_atomic(out / "experiment.json", experiment.dump(2) + "\n");
  return outcome;
}

// ---- eval ------------------------------------------------------------------------

void from_json(const json& j, EvalSpec& s) {
  s = EvalSpec{};
  s.checkpoint = j.at("checkpoint").get<std::string>();
  s.index = j.at("index").get<std::string>();
  if (j.contains("configs")) s.configs = j.at("configs").get<std::vector<std::string>>();
  s.split = j.value("split", s.split);
  if (s.split != "all" && s.split != "test") throw std::invalid_argument("split must be all or test");
  s.split_seed = j.value("split_seed", s.split_seed);
  if (j.contains("k")) {
    const auto& k = j.at("k");
    if (k.is_number_unsigned())
      s.k = metrics::KPolicy::fixed(k.get<std::size_t>());
    else if (k == "true_count")
      s.k = metrics::KPolicy::true_count();
    else if (k == "auc_only")
      s.k = metrics::KPolicy::auc_only();
    else
      throw std::invalid_argument("k must be a positive integer, true_count or auc_only");
  }
}

metrics::EvalResult run_eval(const EvalSpec& spec, const fs::path& out) {
  auto ck = model::load_checkpoint(spec.checkpoint.string());
  const FeatureIndex index = read_index(spec.index);
  if (ck.meta.contains("window") && window_from_json(ck.meta.at("window")).window != index.window.window)
    throw std::invalid_argument("checkpoint was trained with a different window size than the index");
  if (ck.meta.contains("window") && window_from_json(ck.meta.at("window")).stride != index.window.stride)
    throw std::invalid_argument("checkpoint was trained with a different window stride than the index");
  LoadedData loaded = load_data(index, spec.index, ck.config, spec.configs);
  std::vector<std::size_t> tab_counts = loaded.tab_counts;
  train::Dataset data = std::move(loaded.data);
  if (spec.split == "test") {
    const auto split = train::split_indices(data.size(), spec.split_seed);
    data = data.subset(split.test);
    std::vector<std::size_t> tc;
    for (auto i : split.test) tc.push_back(tab_counts[i]);
    tab_counts = std::move(tc);
  }
  if (data.empty()) throw std::invalid_argument("no instances selected for evaluation");

  metrics::KPolicy policy = spec.k;
  if (ck.meta.contains("tab_counts")) {
    const auto trained = ck.meta.at("tab_counts").get<std::set<std::size_t>>();
    for (auto t : tab_counts)
      if (!trained.count(t)) policy = metrics::KPolicy::auc_only();
  }
  model::Model m(ck.config, std::move(ck.params));
  const auto result = score(m, data, policy);
  fs::create_directories(out);
  write_file_atomic(out / "summary.csv", metrics::eval_summary_csv(result, spec.split));
  write_file_atomic(out / "instances.csv", metrics::eval_instances_csv(result));
  return result;
}

// ---- ablate ----------------------------------------------------------------------

void from_json(const json& j, AblationSpec& s) {
  s = AblationSpec{};
  s.base = j.get<ExperimentSpec>();
  if (j.contains("variants")) {
    s.variants.clear();
    for (const auto& v : j.at("variants")) s.variants.push_back(variant_from_string(v.get<std::string>()));
  }
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
}

std::vector<AblationRow> run_ablate(const AblationSpec& spec, std::uint64_t seed, const fs::path& out) {
  const std::vector<std::uint64_t> seeds = spec.seeds.empty() ? std::vector<std::uint64_t>{seed} : spec.seeds;
  std::vector<AblationRow> rows;
  json cells = json::array();
  for (auto variant : spec.variants) {
    for (auto s : seeds) {
      ExperimentSpec e = spec.base;
      e.variant = variant;
      const std::string name = to_string(variant);
      const fs::path dir = out / "cells" / (name + "-" + std::to_string(s));
      try {
        const auto outcome = run_train(e, s, dir);
        rows.push_back({name, "auc", outcome.test.auc, s, "ok"});
        rows.push_back({name, "p_at_k", outcome.test.p_at_k, s, "ok"});
        rows.push_back({name, "map_at_k", outcome.test.map_at_k, s, "ok"});
        rows.push_back({name, "loss", outcome.test.loss, s, "ok"});
        cells.push_back({{"variant", name}, {"seed", s}, {"split_seed", e.split_seed}, {"status", "ok"}});
      } catch (const std::exception& ex) {
        const std::string status = "failed: " + csv_safe(ex.what());
        for (const char* metric : {"auc", "p_at_k", "map_at_k", "loss"}) rows.push_back({name, metric, std::nullopt, s, status});
        cells.push_back({{"variant", name}, {"seed", s}, {"split_seed", e.split_seed}, {"status", status}});
      }
    }
  }
  fs::create_directories(out);
  write_file_atomic(out / "ablation.csv", ablation_csv(rows));
  write_file_atomic(out / "plug_and_play.csv", plug_and_play_csv(rows));
  write_file_atomic(out / "ablation.json", json({{"seeds", seeds}, {"base", spec.base}, {"cells", cells}}).dump(2) + "\n");
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,metric,value,seed,status\n";
  for (const auto& r : rows)
    out += r.variant + "," + r.metric + "," + (r.value ? metrics::format_real(*r.value) : "") + "," +
           std::to_string(r.seed) + "," + r.status + "\n";
  return out;
}

std::string plug_and_play_csv(const std::vector<AblationRow>& rows) {
  // Each model family with and without the aggregation front end.
  constexpr std::array<std::array<const char*, 3>, 2> kPairs{{{"df", "baseline_df", "baseline_df_plus_bm"},
                                                             {"demux", "no_bm", "full"}}};
  auto find = [&](const std::string& variant, const std::string& metric, std::uint64_t seed) -> const AblationRow* {
    for (const auto& r : rows)
      if (r.variant == variant && r.metric == metric && r.seed == seed) return &r;
    return nullptr;
  };
  auto cell = [](const AblationRow* r) { return r->value ? metrics::format_real(*r->value) : std::string(); };
  std::string out = "model,metric,seed,without_bm,with_bm\n";
  for (const auto& [model_name, without, with] : kPairs)
    for (const auto& r : rows) {
      if (r.variant != without) continue;
      const AblationRow* other = find(with, r.metric, r.seed);
      if (!other) continue;
      out += std::string(model_name) + "," + r.metric + "," + std::to_string(r.seed) + "," + cell(&r) + "," + cell(other) + "\n";
    }
  return out;
}

}  // namespace demux::harness
