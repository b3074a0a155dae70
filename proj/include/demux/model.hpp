#ifndef DEMUX_MODEL_HPP
#define DEMUX_MODEL_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "demux/autodiff.hpp"
#include "demux/bm.hpp"
#include "demux/trace.hpp"
#include "json.hpp"

namespace demux::model {

enum class Architecture { Demux, BaselineDf };
enum class InputKind { Features, RawDirections };
enum class Positional { Rope, None, Sinusoidal, Learnable };
enum class Aggregation { UpprojMean, Mean, Flatten };
enum class Activation { Relu, Tanh };

struct EncoderStage {
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t dim = 256;
  std::size_t ffn = 1024;
};

struct ModelConfig {
  Architecture architecture = Architecture::Demux;
  InputKind input = InputKind::Features;
  std::size_t input_length = 1024;  // sequence length after truncate/zero-pad
  std::size_t input_channels = 8;   // C; raw-direction inputs have one channel
  std::vector<std::size_t> branch_kernels{3, 5, 7};
  std::vector<std::size_t> channel_progression{8, 32, 64, 128, 256};
  std::size_t pool_kernel = 8;
  std::size_t pool_stride = 4;
  std::size_t fuse_out = 256;
  EncoderStage stage1{2, 8, 256, 1024};
  Positional positional = Positional::Rope;
  double rope_base = 10000.0;
  std::size_t interstage_out = 384;
  EncoderStage stage2{2, 8, 384, 1536};
  Aggregation aggregation = Aggregation::UpprojMean;
  std::size_t upproj_out = 1024;
  std::size_t classes = 100;
  Activation activation = Activation::Relu;
  std::size_t df_kernel = 5;

  // Full-size reference configuration.
  static ModelConfig reference(std::size_t classes);
  // Desk-scale configuration used by tests and the synthetic benchmark.
  static ModelConfig toy(std::size_t classes);

  std::size_t pool_stages() const { return channel_progression.empty() ? 0 : channel_progression.size() - 1; }
  // Sequence length after every pooling stage for an input of `length`.
  std::size_t pooled_length(std::size_t length) const;
  std::size_t pooled_length() const { return pooled_length(input_length); }
  std::size_t branch_width() const { return channel_progression.back(); }

  // Throws std::invalid_argument on any inconsistency.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

std::string to_string(Positional p);
std::string to_string(Aggregation a);
Positional positional_from_string(const std::string& s);
Aggregation aggregation_from_string(const std::string& s);

// Named learnable tensors plus non-trainable buffers (batch-norm running
// statistics), keyed by a stable layer path.
class ModelParams {
 public:
  nn::Var& add(const std::string& path, nn::Tensor init, bool trainable = true);
  const nn::Var& get(const std::string& path) const;
  nn::Var& get(const std::string& path);
  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  bool trainable(const std::string& path) const;

  const std::map<std::string, nn::Var>& entries() const { return entries_; }
  std::vector<std::string> trainable_paths() const;
  std::size_t parameter_count() const;
  void zero_grad();
  // Deep copy: the clone shares no storage with this object.
  ModelParams clone() const;

 private:
  std::map<std::string, nn::Var> entries_;
  std::map<std::string, bool> trainable_;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // (B, input_length, input_channels) -> (B, classes) probabilities. Inputs
  // are first standardized per channel with the input.mean / input.std buffers.
  nn::Var forward(const nn::Tensor& input, bool training);
  // Sets the input buffers from per-channel statistics of (N, L, C) data;
  // channels with near-zero spread keep unit scale.
  void fit_input_statistics(std::span<const std::vector<float>> inputs);

  nn::Var rcb_forward(const nn::Var& z, const std::string& prefix, bool training);
  nn::Var mspcnn_forward(const nn::Var& x, bool training);
  nn::Var multi_head_attention(const nn::Var& x, const std::string& prefix, std::size_t heads, bool rope);
  nn::Var encoder_layer(const nn::Var& x, const std::string& prefix, std::size_t heads, bool rope);
  nn::Var encode(const nn::Var& h);
  nn::Var pool_classify(const nn::Var& z3);
  nn::Var baseline_forward(const nn::Var& x, bool training);

 private:
  void init_params(std::uint64_t seed);
  nn::Var activation(const nn::Var& x) const;
  nn::Var p(const std::string& path) { return params_.get(path); }

  ModelConfig config_;
  ModelParams params_;
};

// Stacks feature tensors into (B, length, C), truncating or zero-padding rows.
nn::Tensor batch_features(std::span<const bm::FeatureTensor* const> items, std::size_t length, std::size_t channels);

// Stacks raw direction sequences (+1/-1) into (B, length, 1).
nn::Tensor batch_directions(std::span<const std::vector<float>* const> items, std::size_t length);

std::vector<float> direction_sequence(std::span<const Packet> packets, std::size_t length);

nn::Tensor sinusoidal_table(std::size_t length, std::size_t dim);

}  // namespace demux::model

#endif  // DEMUX_MODEL_HPP
