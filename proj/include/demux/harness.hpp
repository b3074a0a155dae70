#ifndef DEMUX_HARNESS_HPP
#define DEMUX_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "demux/bm.hpp"
#include "demux/defenses.hpp"
#include "demux/metrics.hpp"
#include "demux/model.hpp"
#include "demux/trainer.hpp"
#include "json.hpp"

namespace demux::harness {

namespace fs = std::filesystem;

constexpr int kManifestVersion = 1;

// ---- gen -------------------------------------------------------------------

enum class WorldMode { Closed, Open };

struct GenSpec {
  WorldMode mode = WorldMode::Closed;
  std::size_t classes = 10;
  std::vector<std::size_t> tab_counts{2};
  std::size_t traces_per_config = 100;
  // Adds a "mixed" configuration whose traces draw their tab count uniformly
  // from tab_counts.
  bool mixed = false;
  TimeNs offset_max = 500 * kNsPerMs;
  std::optional<defense::DefenseConfig> defense;
  std::optional<std::uint64_t> profile_seed;  // defaults to the run seed

  // Throws std::invalid_argument.
  void validate() const;
};

void to_json(nlohmann::json& j, const GenSpec& s);
void from_json(const nlohmann::json& j, GenSpec& s);
nlohmann::json defense_to_json(const defense::DefenseConfig& c);
defense::DefenseConfig defense_from_json(const nlohmann::json& j);
// Times are stored in ns; "_ms" keys are accepted on input.
nlohmann::json window_to_json(const bm::WindowConfig& c);
bm::WindowConfig window_from_json(const nlohmann::json& j);

struct ManifestEntry {
  std::string path;    // relative to the dataset root
  std::string config;  // "tabs<k>" or "mixed"
  std::size_t tab_count = 0;
  std::vector<std::size_t> labels;
  Meta meta;
};

struct DatasetManifest {
  int version = kManifestVersion;
  GenSpec spec;
  std::uint64_t seed = 0;
  std::uint64_t profile_seed = 0;
  std::vector<ManifestEntry> files;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

DatasetManifest read_manifest(const fs::path& dataset_dir);

// Writes <out>/manifest.json and <out>/traces/<config>/<index>.csv. The tree is
// built in a sibling temporary directory and renamed into place, so a failed
// run leaves no partial output.
DatasetManifest gen_dataset(const GenSpec& spec, std::uint64_t seed, const fs::path& out);

// ---- preprocess --------------------------------------------------------------

struct PreprocessSpec {
  fs::path dataset;
  bm::WindowConfig window;
};

void from_json(const nlohmann::json& j, PreprocessSpec& s);

struct IndexEntry {
  std::string trace;   // relative to the dataset root
  std::string tensor;  // relative to the index root
  std::string hash;    // hex FNV-1a of trace bytes and window config
  std::size_t rows = 0;
  std::string config;
  std::size_t tab_count = 0;
  std::vector<std::size_t> labels;
};

struct FeatureIndex {
  int version = kManifestVersion;
  std::string dataset;  // dataset root as given to preprocess
  std::size_t classes = 0;
  bm::WindowConfig window;
  std::vector<IndexEntry> entries;
};

void to_json(nlohmann::json& j, const FeatureIndex& i);
void from_json(const nlohmann::json& j, FeatureIndex& i);
FeatureIndex read_index(const fs::path& index_dir);

struct PreprocessFailure {
  std::string path;
  std::string error;
};

struct PreprocessReport {
  std::size_t processed = 0;
  std::size_t rewritten = 0;
  std::vector<PreprocessFailure> failures;
};

// One DMX1 tensor per trace plus <out>/index.json. Tensors whose content hash
// is unchanged since the previous run are not rewritten. Corrupt traces are
// reported and skipped.
PreprocessReport preprocess(const PreprocessSpec& spec, const fs::path& out);

// ---- train / eval ------------------------------------------------------------

enum class Variant { Full, NoBm, Kernel3, Kernel5, Kernel7, NoTransformer, BaselineDf, BaselineDfPlusBm };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ExperimentSpec {
  fs::path index;  // preprocess output directory
  Variant variant = Variant::Full;
  model::Positional positional = model::Positional::Rope;
  model::Aggregation aggregation = model::Aggregation::UpprojMean;
  bool reference_scale = false;
  std::optional<std::size_t> input_length;  // windows fed to the model
  std::optional<std::size_t> raw_length;    // packets fed to raw-direction variants
  std::vector<std::string> configs;         // dataset configurations to use; empty means all
  std::uint64_t split_seed = 2025;
  train::TrainConfig train = train::TrainConfig::toy();
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

// The model configuration a variant and its flags resolve to.
model::ModelConfig resolve_model(const ExperimentSpec& spec, std::size_t classes, std::size_t channels);

// Model inputs for the selected index entries under a model configuration.
struct LoadedData {
  train::Dataset data;
  std::vector<std::size_t> tab_counts;  // per instance
};
LoadedData load_data(const FeatureIndex& index, const fs::path& index_dir, const model::ModelConfig& config,
                     const std::vector<std::string>& configs);

struct TrainOutcome {
  model::ModelConfig config;
  train::TrainResult result;
  metrics::EvalResult test;
};

// Trains on the 8:1:1 split and writes <out>/model.dmxc, <out>/metrics.csv,
// <out>/test_summary.csv, <out>/test_instances.csv and <out>/experiment.json.
TrainOutcome run_train(const ExperimentSpec& spec, std::uint64_t seed, const fs::path& out);

struct EvalSpec {
  fs::path checkpoint;
  fs::path index;
  std::vector<std::string> configs;
  // "all" evaluates every selected instance; "test" only the held-out split.
  std::string split = "all";
  std::uint64_t split_seed = 2025;
  metrics::KPolicy k = metrics::KPolicy::true_count();
};

void from_json(const nlohmann::json& j, EvalSpec& s);

// Writes <out>/summary.csv and <out>/instances.csv. Tab counts unseen in
// training switch the K policy to AUC only.
metrics::EvalResult run_eval(const EvalSpec& spec, const fs::path& out);

// ---- ablate ------------------------------------------------------------------

struct AblationSpec {
  ExperimentSpec base;
  std::vector<Variant> variants{Variant::Full, Variant::NoBm, Variant::NoTransformer};
  std::vector<std::uint64_t> seeds;  // empty means the run seed only
};

void from_json(const nlohmann::json& j, AblationSpec& s);

struct AblationRow {
  std::string variant;
  std::string metric;
  std::optional<double> value;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or "failed: <reason>"
};

// Runs every (variant, seed) cell under <out>/cells/, then writes
// <out>/ablation.csv (variant,metric,value,seed,status) and
// <out>/plug_and_play.csv (model,metric,seed,without_bm,with_bm).
std::vector<AblationRow> run_ablate(const AblationSpec& spec, std::uint64_t seed, const fs::path& out);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string plug_and_play_csv(const std::vector<AblationRow>& rows);

// ---- io helpers ----------------------------------------------------------------

std::string read_file(const fs::path& path);
// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const fs::path& path, const std::string& bytes);
nlohmann::json read_json(const fs::path& path);

}  // namespace demux::harness

#endif  // DEMUX_HARNESS_HPP
