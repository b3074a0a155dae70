#ifndef DEMUX_TRAINER_HPP
#define DEMUX_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "demux/bm.hpp"
#include "demux/metrics.hpp"
#include "demux/model.hpp"

namespace demux::train {

struct TrainConfig {
  double lr_start = 2e-4;
  double lr_max = 2e-3;
  std::size_t warmup_epochs = 10;
  std::size_t total_epochs = 260;
  double weight_decay = 5e-3;
  std::size_t batch_size = 512;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 2025;
  // Stop after this many epochs without validation improvement; 0 disables.
  std::size_t patience = 0;

  static TrainConfig toy();
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Linear warm-up lr_start -> lr_max over [0, warmup_epochs], then cosine decay
// to 0 at total_epochs. Fractional epochs give the per-batch schedule.
double lr_at(double epoch, const TrainConfig& cfg);

struct BceResult {
  double loss = 0.0;
  nn::Tensor grad;  // d loss / d predictions
};
// Mean binary cross-entropy with probability clamping at eps.
BceResult bce_loss(const nn::Tensor& predictions, const nn::Tensor& targets, double eps = 1e-7);

// Adam moments with decoupled weight decay: every step first shrinks each
// weight by lr * weight_decay, then applies the bias-corrected Adam update.
// The decay never enters the moment estimates.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double epsilon, double weight_decay)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {}

  void step(model::ModelParams& params, double lr);
  std::size_t steps() const { return steps_; }
  const nn::Tensor& first_moment(const std::string& path) const { return moments_.at(path).m; }

 private:
  struct Moments {
    nn::Tensor m;
    nn::Tensor v;
  };
  double beta1_, beta2_, epsilon_, weight_decay_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

// Fixed-length model inputs with their ground truth.
struct Dataset {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<std::vector<float>> inputs;  // each length * channels, row-major
  std::vector<LabelVector> labels;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  std::size_t num_classes() const { return labels.empty() ? 0 : labels.front().size(); }
  void add(std::vector<float> input, LabelVector label);
  Dataset subset(std::span<const std::size_t> indices) const;
};

// Truncates/zero-pads feature rows to `length`.
std::vector<float> fit_features(const bm::FeatureTensor& features, std::size_t length);

void make_batch(const Dataset& data, std::span<const std::size_t> indices, nn::Tensor& inputs, nn::Tensor& targets);

// Throws when the dataset cannot feed the model.
void check_compatible(const model::ModelConfig& config, const Dataset& data);

// Row-major (instances x classes) probabilities in inference mode.
std::vector<double> predict(model::Model& model, const Dataset& data, std::size_t batch_size);

struct LogRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  std::optional<double> auc;
  std::optional<double> p_at_k;
  std::optional<double> map_at_k;

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

// Append-only per-epoch log; CSV columns epoch,split,loss,auc,p_at_k,map_at_k.
class MetricLog {
 public:
  void append(LogRow row) { rows_.push_back(std::move(row)); }
  const std::vector<LogRow>& rows() const { return rows_; }
  std::vector<LogRow> split_rows(const std::string& split) const;
  std::string to_csv() const;
  static MetricLog from_csv(const std::string& csv);

 private:
  std::vector<LogRow> rows_;
};

// Metrics of a prediction matrix against labels; loss is the mean BCE.
LogRow score_split(std::span<const double> predictions, std::span<const LabelVector> labels, std::size_t epoch,
                   const std::string& split);

struct TrainResult {
  model::ModelParams best_params;
  std::size_t best_epoch = 0;
  MetricLog log;
};

using EpochCallback = std::function<void(const LogRow& train_row, const std::optional<LogRow>& val_row)>;

// Mini-batch AdamW training. Fits the model's input statistics on the
// training set first. Deterministic for a fixed (config, data order, seed).
// With a validation set the returned parameters are those of the epoch with
// the best validation P@K (ties: AUC, then loss).
TrainResult train(model::Model& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Deterministic 8:1:1 split of [0, n) under `seed`.
struct Split {
  std::vector<std::size_t> train, val, test;
};
Split split_indices(std::size_t n, std::uint64_t seed = 2025);

}  // namespace demux::train

#endif  // DEMUX_TRAINER_HPP
