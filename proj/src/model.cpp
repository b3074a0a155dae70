#include "demux/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "demux/hash.hpp"
#include "demux/rng.hpp"

namespace demux::model {

using nn::Tensor;
using nn::Var;

ModelConfig ModelConfig::reference(std::size_t classes) {
  ModelConfig c;
  c.classes = classes;
  return c;
}

ModelConfig ModelConfig::toy(std::size_t classes) {
  ModelConfig c;
  c.classes = classes;
  c.input_length = 256;
  c.channel_progression = {8, 16, 32};
  c.fuse_out = 32;
  c.stage1 = {1, 4, 32, 64};
  c.interstage_out = 48;
  c.stage2 = {1, 4, 48, 96};
  c.upproj_out = 64;
  return c;
}

std::size_t ModelConfig::pooled_length(std::size_t length) const {
  for (std::size_t s = 0; s < pool_stages(); ++s) length = (length + pool_stride - 1) / pool_stride;
  return length;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (classes == 0) fail("classes must be >= 1");
  if (input_length == 0) fail("input_length must be >= 1");
  if (channel_progression.size() < 2) fail("channel_progression needs at least two entries");
  if (pool_kernel == 0 || pool_stride == 0) fail("pool kernel/stride must be positive");
  const std::size_t expected_in = input == InputKind::RawDirections ? 1 : input_channels;
  if (architecture == Architecture::BaselineDf) {
    if (df_kernel % 2 == 0) fail("baseline kernel must be odd");
    if (channel_progression.front() != expected_in)
      fail("baseline channel_progression must start at the input width " + std::to_string(expected_in));
    return;
  }
  if (input == InputKind::Features && channel_progression.front() != input_channels)
    fail("channel_progression must start at input_channels");
  if (branch_kernels.empty()) fail("branch_kernels must not be empty");
  for (auto k : branch_kernels)
    if (k % 2 == 0) fail("branch kernel sizes must be odd, got " + std::to_string(k));
  if (stage1.layers > 0 && stage1.dim != fuse_out) fail("stage1 dim must equal fuse_out");
  if (stage2.layers > 0 && stage2.dim != interstage_out) fail("stage2 dim must equal interstage_out");
  for (const auto* st : {&stage1, &stage2}) {
    if (st->layers == 0) continue;
    if (st->heads == 0 || st->dim % st->heads != 0) fail("stage dim must be divisible by heads");
    if ((st->dim / st->heads) % 2 != 0 && st == &stage1 && positional == Positional::Rope)
      fail("per-head dimension must be even for RoPE");
  }
}

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<Positional> kPositional[] = {
    {Positional::Rope, "rope"}, {Positional::None, "none"}, {Positional::Sinusoidal, "sinusoidal"}, {Positional::Learnable, "learnable"}};
constexpr EnumName<Aggregation> kAggregation[] = {
    {Aggregation::UpprojMean, "upproj_mean"}, {Aggregation::Mean, "mean"}, {Aggregation::Flatten, "flatten"}};
constexpr EnumName<Architecture> kArchitecture[] = {{Architecture::Demux, "demux"}, {Architecture::BaselineDf, "baseline_df"}};
constexpr EnumName<InputKind> kInput[] = {{InputKind::Features, "features"}, {InputKind::RawDirections, "raw_directions"}};
constexpr EnumName<Activation> kActivation[] = {{Activation::Relu, "relu"}, {Activation::Tanh, "tanh"}};

template <typename E, std::size_t N>
std::string name_of(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  throw std::logic_error("unnamed enum value");
}

template <typename E, std::size_t N>
E value_of(const EnumName<E> (&table)[N], const std::string& s) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string options;
  for (const auto& e : table) options += std::string(options.empty() ? "" : ", ") + e.name;
  throw std::invalid_argument("unknown value '" + s + "' (expected one of " + options + ")");
}

void stage_to_json(nlohmann::json& j, const EncoderStage& s) {
  j = {{"layers", s.layers}, {"heads", s.heads}, {"dim", s.dim}, {"ffn", s.ffn}};
}

EncoderStage stage_from_json(const nlohmann::json& j) {
  return {j.at("layers").get<std::size_t>(), j.at("heads").get<std::size_t>(), j.at("dim").get<std::size_t>(),
          j.at("ffn").get<std::size_t>()};
}

}  // namespace

std::string to_string(Positional p) { return name_of(kPositional, p); }
std::string to_string(Aggregation a) { return name_of(kAggregation, a); }
Positional positional_from_string(const std::string& s) { return value_of(kPositional, s); }
Aggregation aggregation_from_string(const std::string& s) { return value_of(kAggregation, s); }

void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json s1, s2;
  stage_to_json(s1, c.stage1);
  stage_to_json(s2, c.stage2);
  j = {{"architecture", name_of(kArchitecture, c.architecture)},
       {"input", name_of(kInput, c.input)},
       {"input_length", c.input_length},
       {"input_channels", c.input_channels},
       {"branch_kernels", c.branch_kernels},
       {"channel_progression", c.channel_progression},
       {"pool_kernel", c.pool_kernel},
       {"pool_stride", c.pool_stride},
       {"fuse_out", c.fuse_out},
       {"stage1", s1},
       {"positional", to_string(c.positional)},
       {"rope_base", c.rope_base},
       {"interstage_out", c.interstage_out},
       {"stage2", s2},
       {"aggregation", to_string(c.aggregation)},
       {"upproj_out", c.upproj_out},
       {"classes", c.classes},
       {"activation", name_of(kActivation, c.activation)},
       {"df_kernel", c.df_kernel}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.architecture = value_of(kArchitecture, j.at("architecture").get<std::string>());
  c.input = value_of(kInput, j.at("input").get<std::string>());
  c.input_length = j.at("input_length").get<std::size_t>();
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.branch_kernels = j.at("branch_kernels").get<std::vector<std::size_t>>();
  c.channel_progression = j.at("channel_progression").get<std::vector<std::size_t>>();
  c.pool_kernel = j.at("pool_kernel").get<std::size_t>();
  c.pool_stride = j.at("pool_stride").get<std::size_t>();
  c.fuse_out = j.at("fuse_out").get<std::size_t>();
  c.stage1 = stage_from_json(j.at("stage1"));
  c.positional = positional_from_string(j.at("positional").get<std::string>());
  c.rope_base = j.at("rope_base").get<double>();
  c.interstage_out = j.at("interstage_out").get<std::size_t>();
  c.stage2 = stage_from_json(j.at("stage2"));
  c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  c.upproj_out = j.at("upproj_out").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.activation = value_of(kActivation, j.at("activation").get<std::string>());
  c.df_kernel = j.at("df_kernel").get<std::size_t>();
}

// ---------------------------------------------------------------------------

Var& ModelParams::add(const std::string& path, Tensor init, bool trainable) {
  if (entries_.count(path)) throw std::logic_error("duplicate parameter path " + path);
  trainable_[path] = trainable;
  return entries_[path] = trainable ? nn::parameter(std::move(init)) : nn::constant(std::move(init));
}

const Var& ModelParams::get(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("no parameter named " + path);
  return it->second;
}

Var& ModelParams::get(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("no parameter named " + path);
  return it->second;
}

bool ModelParams::trainable(const std::string& path) const {
  auto it = trainable_.find(path);
  return it != trainable_.end() && it->second;
}

std::vector<std::string> ModelParams::trainable_paths() const {
  std::vector<std::string> out;
  for (const auto& [path, _] : entries_)
    if (trainable(path)) out.push_back(path);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [path, v] : entries_)
    if (trainable(path)) n += v->value.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [_, v] : entries_) v->zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [path, v] : entries_) out.add(path, v->value, trainable(path));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t path_hash(const std::string& s) { return fnv1a64(s); }

Tensor xavier(const std::string& path, nn::Shape shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  Rng rng = Rng(seed).split(path_hash(path));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  init_params(seed);
}

Model::Model(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  // Check the loaded tensors against a freshly shaped parameter set.
  Model shaped(config_, 0);
  for (const auto& [path, v] : shaped.params_.entries()) {
    if (!params_.contains(path)) throw std::invalid_argument("checkpoint is missing parameter " + path);
    if (params_.get(path)->value.shape != v->value.shape)
      throw std::invalid_argument("parameter " + path + " has shape " + nn::shape_string(params_.get(path)->value.shape) +
                                  ", config expects " + nn::shape_string(v->value.shape));
  }
  if (params_.entries().size() != shaped.params_.entries().size())
    throw std::invalid_argument("checkpoint has parameters the config does not define");
}

void Model::init_params(std::uint64_t seed) {
  const auto& c = config_;
  auto linear = [&](const std::string& prefix, std::size_t in, std::size_t out, bool bias) {
    params_.add(prefix + ".w", xavier(prefix + ".w", {in, out}, in, out, seed));
    if (bias) params_.add(prefix + ".b", Tensor({out}));
  };
  auto conv = [&](const std::string& prefix, std::size_t k, std::size_t in, std::size_t out) {
    params_.add(prefix + ".w", xavier(prefix + ".w", {k, in, out}, k * in, k * out, seed));
    params_.add(prefix + ".b", Tensor({out}));
  };
  auto norm = [&](const std::string& prefix, std::size_t ch, bool running) {
    params_.add(prefix + ".gamma", Tensor({ch}, 1.0));
    params_.add(prefix + ".beta", Tensor({ch}));
    if (running) {
      params_.add(prefix + ".running_mean", Tensor({ch}), false);
      params_.add(prefix + ".running_var", Tensor({ch}, 1.0), false);
    }
  };

  const std::size_t in_ch = c.input == InputKind::RawDirections ? 1 : c.input_channels;
  params_.add("input.mean", Tensor({in_ch}), false);
  params_.add("input.std", Tensor({in_ch}, 1.0), false);

  const auto& prog = c.channel_progression;
  if (c.architecture == Architecture::BaselineDf) {
    for (std::size_t s = 0; s + 1 < prog.size(); ++s) {
      const std::string prefix = "df.stage" + std::to_string(s);
      conv(prefix + ".conv", c.df_kernel, prog[s], prog[s + 1]);
      norm(prefix + ".bn", prog[s + 1], true);
    }
    linear("head.out", prog.back(), c.classes, true);
    return;
  }

  if (c.input == InputKind::RawDirections) linear("stem", 1, prog.front(), true);
  for (std::size_t bi = 0; bi < c.branch_kernels.size(); ++bi) {
    const std::size_t k = c.branch_kernels[bi];
    for (std::size_t s = 0; s + 1 < prog.size(); ++s) {
      const std::string prefix = "branch" + std::to_string(bi) + "_k" + std::to_string(k) + ".stage" + std::to_string(s);
      conv(prefix + ".conv", k, prog[s], prog[s + 1]);
      norm(prefix + ".bn", prog[s + 1], true);
      if (prog[s] != prog[s + 1]) params_.add(prefix + ".proj.w", xavier(prefix + ".proj.w", {prog[s], prog[s + 1]}, prog[s], prog[s + 1], seed));
    }
  }
  linear("fuse", c.branch_kernels.size() * prog.back(), c.fuse_out, true);

  const std::size_t tokens = c.pooled_length();
  if (c.positional == Positional::Learnable) {
    Rng rng = Rng(seed).split(path_hash("pos.table"));
    Tensor table({tokens, c.fuse_out});
    for (double& v : table.data) v = rng.normal(0.0, 0.02);
    params_.add("pos.table", std::move(table));
  }

  auto encoder = [&](const std::string& stage, const EncoderStage& st) {
    for (std::size_t l = 0; l < st.layers; ++l) {
      const std::string prefix = stage + ".layer" + std::to_string(l);
      norm(prefix + ".ln1", st.dim, false);
      for (const char* name : {".wq", ".wk", ".wv", ".wo"})
        params_.add(prefix + ".attn" + name, xavier(prefix + ".attn" + name, {st.dim, st.dim}, st.dim, st.dim, seed));
      norm(prefix + ".ln2", st.dim, false);
      linear(prefix + ".ffn1", st.dim, st.ffn, true);
      linear(prefix + ".ffn2", st.ffn, st.dim, true);
    }
  };
  encoder("stage1", c.stage1);
  linear("interstage", c.fuse_out, c.interstage_out, true);
  encoder("stage2", c.stage2);

  switch (c.aggregation) {
    case Aggregation::UpprojMean:
      params_.add("head.up.w", xavier("head.up.w", {c.interstage_out, c.upproj_out}, c.interstage_out, c.upproj_out, seed));
      linear("head.out", c.upproj_out, c.classes, true);
      break;
    case Aggregation::Mean: linear("head.out", c.interstage_out, c.classes, true); break;
    case Aggregation::Flatten: linear("head.out", tokens * c.interstage_out, c.classes, true); break;
  }
}

Var Model::activation(const Var& x) const {
  return config_.activation == Activation::Tanh ? nn::tanh(x) : nn::relu(x);
}

Var Model::rcb_forward(const Var& z, const std::string& prefix, bool training) {
  const auto& conv_w = p(prefix + ".conv.w");
  auto y = nn::conv1d(z, conv_w, p(prefix + ".conv.b"));
  y = activation(y);
  y = nn::batch_norm(y, p(prefix + ".bn.gamma"), p(prefix + ".bn.beta"),
                     {&params_.get(prefix + ".bn.running_mean")->value, &params_.get(prefix + ".bn.running_var")->value},
                     training);
  const Var shortcut = params_.contains(prefix + ".proj.w") ? nn::linear(z, p(prefix + ".proj.w"), nullptr) : z;
  return nn::add(y, shortcut);
}

Var Model::mspcnn_forward(const Var& x, bool training) {
  const auto& c = config_;
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw std::invalid_argument("mspcnn: input must be (B, L, C)");
  if (xv.shape[1] < 1)
    throw std::invalid_argument("mspcnn: input length " + std::to_string(xv.shape[1]) + " is below the minimum length 1 for " +
                                std::to_string(c.pool_stages()) + " pooling stages");
  Var input = x;
  if (c.input == InputKind::RawDirections) {
    if (xv.shape[2] != 1) throw std::invalid_argument("mspcnn: raw-direction input must have one channel");
    input = nn::linear(x, p("stem.w"), p("stem.b"));
  } else if (xv.shape[2] != c.input_channels) {
    throw std::invalid_argument("mspcnn: input has " + std::to_string(xv.shape[2]) + " channels, config expects " +
                                std::to_string(c.input_channels));
  }
  std::vector<Var> branches;
  for (std::size_t bi = 0; bi < c.branch_kernels.size(); ++bi) {
    Var z = input;
    const std::string branch = "branch" + std::to_string(bi) + "_k" + std::to_string(c.branch_kernels[bi]);
    for (std::size_t s = 0; s < c.pool_stages(); ++s) {
      z = rcb_forward(z, branch + ".stage" + std::to_string(s), training);
      z = nn::max_pool(z, c.pool_kernel, c.pool_stride);
    }
    branches.push_back(z);
  }
  Var cat = branches.size() == 1 ? branches.front() : nn::concat_channels(branches);
  return nn::linear(cat, p("fuse.w"), p("fuse.b"));
}

Var Model::multi_head_attention(const Var& x, const std::string& prefix, std::size_t heads, bool rope) {
  auto q = nn::linear(x, p(prefix + ".attn.wq"), nullptr);
  auto k = nn::linear(x, p(prefix + ".attn.wk"), nullptr);
  auto v = nn::linear(x, p(prefix + ".attn.wv"), nullptr);
  auto ctx = nn::attention(q, k, v, heads, rope, config_.rope_base);
  return nn::linear(ctx, p(prefix + ".attn.wo"), nullptr);
}

Var Model::encoder_layer(const Var& x, const std::string& prefix, std::size_t heads, bool rope) {
  auto a = nn::layer_norm(x, p(prefix + ".ln1.gamma"), p(prefix + ".ln1.beta"));
  auto h = nn::add(x, multi_head_attention(a, prefix, heads, rope));
  auto f = nn::layer_norm(h, p(prefix + ".ln2.gamma"), p(prefix + ".ln2.beta"));
  f = nn::linear(f, p(prefix + ".ffn1.w"), p(prefix + ".ffn1.b"));
  f = nn::relu(f);
  f = nn::linear(f, p(prefix + ".ffn2.w"), p(prefix + ".ffn2.b"));
  return nn::add(h, f);
}

Var Model::encode(const Var& h) {
  const auto& c = config_;
  if (h->value.rank() != 3 || h->value.shape[2] != c.fuse_out)
    throw std::invalid_argument("encode: expected (B, L', " + std::to_string(c.fuse_out) + "), got " +
                                nn::shape_string(h->value.shape));
  Var z = h;
  const std::size_t len = h->value.shape[1];
  if (c.positional == Positional::Sinusoidal) z = nn::add_positional(z, nn::constant(sinusoidal_table(len, c.fuse_out)));
  if (c.positional == Positional::Learnable) z = nn::add_positional(z, p("pos.table"));
  const bool rope = c.positional == Positional::Rope;
  for (std::size_t l = 0; l < c.stage1.layers; ++l) z = encoder_layer(z, "stage1.layer" + std::to_string(l), c.stage1.heads, rope);
  z = nn::linear(z, p("interstage.w"), p("interstage.b"));
  for (std::size_t l = 0; l < c.stage2.layers; ++l) z = encoder_layer(z, "stage2.layer" + std::to_string(l), c.stage2.heads, false);
  return z;
}

Var Model::pool_classify(const Var& z3) {
  const auto& c = config_;
  if (z3->value.rank() != 3 || z3->value.shape[1] < 1) throw std::invalid_argument("pool_classify: expected (B, L' >= 1, d')");
  Var pooled;
  switch (c.aggregation) {
    case Aggregation::UpprojMean: pooled = nn::mean_sequence(nn::linear(z3, p("head.up.w"), nullptr)); break;
    case Aggregation::Mean: pooled = nn::mean_sequence(z3); break;
    case Aggregation::Flatten:
      pooled = nn::reshape(z3, {z3->value.shape[0], z3->value.shape[1] * z3->value.shape[2]});
      break;
  }
  return nn::sigmoid(nn::linear(pooled, p("head.out.w"), p("head.out.b")));
}

Var Model::baseline_forward(const Var& x, bool training) {
  const auto& c = config_;
  const auto& prog = c.channel_progression;
  if (x->value.rank() != 3 || x->value.shape[2] != prog.front())
    throw std::invalid_argument("baseline: expected (B, L, " + std::to_string(prog.front()) + ") input, got " +
                                nn::shape_string(x->value.shape));
  Var z = x;
  for (std::size_t s = 0; s + 1 < prog.size(); ++s) {
    const std::string prefix = "df.stage" + std::to_string(s);
    z = nn::conv1d(z, p(prefix + ".conv.w"), p(prefix + ".conv.b"));
    z = nn::batch_norm(z, p(prefix + ".bn.gamma"), p(prefix + ".bn.beta"),
                       {&params_.get(prefix + ".bn.running_mean")->value, &params_.get(prefix + ".bn.running_var")->value},
                       training);
    z = activation(z);
    z = nn::max_pool(z, c.pool_kernel, c.pool_stride);
  }
  z = nn::mean_sequence(z);
  return nn::sigmoid(nn::linear(z, p("head.out.w"), p("head.out.b")));
}

void Model::fit_input_statistics(std::span<const std::vector<float>> inputs) {
  Tensor& mean = params_.get("input.mean")->value;
  Tensor& std = params_.get("input.std")->value;
  const std::size_t ch = mean.numel();
  std::vector<double> sum(ch, 0.0), sq(ch, 0.0);
  std::size_t count = 0;
  for (const auto& in : inputs) {
    if (in.size() % ch != 0) throw std::invalid_argument("input statistics: row width does not match the model channels");
    for (std::size_t i = 0; i < in.size(); ++i) sum[i % ch] += in[i];
    count += in.size() / ch;
  }
  if (count == 0) return;
  for (std::size_t c = 0; c < ch; ++c) mean[c] = sum[c] / static_cast<double>(count);
  for (const auto& in : inputs)
    for (std::size_t i = 0; i < in.size(); ++i) sq[i % ch] += (in[i] - mean[i % ch]) * (in[i] - mean[i % ch]);
  for (std::size_t c = 0; c < ch; ++c) {
    const double sd = std::sqrt(sq[c] / static_cast<double>(count));
    std[c] = sd > 1e-6 ? sd : 1.0;
  }
}

Var Model::forward(const Tensor& input, bool training) {
  const auto& c = config_;
  const std::size_t channels = c.input == InputKind::RawDirections ? 1 : c.input_channels;
  if (input.rank() != 3 || input.shape[1] != c.input_length || input.shape[2] != channels)
    throw std::invalid_argument("model input must be (B, " + std::to_string(c.input_length) + ", " +
                                std::to_string(channels) + "), got " + nn::shape_string(input.shape));
  Tensor scaled = input;
  const Tensor& mean = params_.get("input.mean")->value;
  const Tensor& std = params_.get("input.std")->value;
  for (std::size_t i = 0; i < scaled.numel(); ++i) scaled[i] = (scaled[i] - mean[i % channels]) / std[i % channels];
  auto x = nn::constant(std::move(scaled));
  if (c.architecture == Architecture::BaselineDf) return baseline_forward(x, training);
  return pool_classify(encode(mspcnn_forward(x, training)));
}

// ---------------------------------------------------------------------------

Tensor batch_features(std::span<const bm::FeatureTensor* const> items, std::size_t length, std::size_t channels) {
  Tensor out({items.size(), length, channels});
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto& f = *items[b];
    if (f.cols != channels)
      throw std::invalid_argument("feature tensor has " + std::to_string(f.cols) + " channels, model expects " +
                                  std::to_string(channels));
    const std::size_t rows = std::min(length, f.rows);
    for (std::size_t i = 0; i < rows * channels; ++i) out[b * length * channels + i] = f.data[i];
  }
  return out;
}

Tensor batch_directions(std::span<const std::vector<float>* const> items, std::size_t length) {
  Tensor out({items.size(), length, 1});
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto& seq = *items[b];
    const std::size_t n = std::min(length, seq.size());
    for (std::size_t i = 0; i < n; ++i) out[b * length + i] = seq[i];
  }
  return out;
}

std::vector<float> direction_sequence(std::span<const Packet> packets, std::size_t length) {
  std::vector<float> out(length, 0.0f);
  const std::size_t n = std::min(length, packets.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(sign(packets[i].direction));
  return out;
}

Tensor sinusoidal_table(std::size_t length, std::size_t dim) {
  Tensor t({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      t[pos * dim + i] = i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return t;
}

}  // namespace demux::model
