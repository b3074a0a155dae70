#include "demux/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "demux/checkpoint.hpp"
#include "gradcheck.hpp"
#include "toy_model.hpp"

namespace demux::model {
namespace {

using oracle::random_input;
using oracle::random_labels;
using oracle::tiny_config;

nn::Var random_var(nn::Shape shape, Rng& rng) {
  nn::Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return nn::constant(std::move(t));
}

void expect_near_all(const nn::Tensor& a, const nn::Tensor& b, double tol) {
  ASSERT_EQ(a.shape, b.shape);
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

nn::Tensor identity(std::size_t n) {
  nn::Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

TEST(ModelConfig, ReferenceShapes) {
  const auto c = ModelConfig::reference(100);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.pooled_length(1024), 4u);
  Model m(c, 1);
  EXPECT_EQ(m.params().get("fuse.w")->value.shape, (nn::Shape{768, 256}));
  EXPECT_EQ(m.params().get("interstage.w")->value.shape, (nn::Shape{256, 384}));
  EXPECT_EQ(m.params().get("head.up.w")->value.shape, (nn::Shape{384, 1024}));
  EXPECT_EQ(m.params().get("head.out.w")->value.shape, (nn::Shape{1024, 100}));
  EXPECT_EQ(m.params().get("branch2_k7.stage3.conv.w")->value.shape, (nn::Shape{7, 128, 256}));
  EXPECT_TRUE(m.params().contains("stage2.layer1.attn.wo"));
  EXPECT_FALSE(m.params().contains("stage2.layer2.attn.wo"));
}

TEST(ModelConfig, PooledLengthIsCeilPerStage) {
  auto c = ModelConfig::toy(5);
  EXPECT_EQ(c.pooled_length(256), 16u);
  EXPECT_EQ(c.pooled_length(17), 2u);
  EXPECT_EQ(c.pooled_length(1), 1u);
}

TEST(ModelConfig, RejectsInconsistentShapes) {
  auto even = ModelConfig::toy(5);
  even.branch_kernels = {3, 4};
  EXPECT_THROW(even.validate(), std::invalid_argument);

  auto odd_head = ModelConfig::toy(5);
  odd_head.stage1 = {1, 8, 32, 64};  // d_h = 4
  EXPECT_NO_THROW(odd_head.validate());
  odd_head.fuse_out = 24;
  odd_head.stage1 = {1, 8, 24, 64};  // d_h = 3
  EXPECT_THROW(odd_head.validate(), std::invalid_argument);
  odd_head.positional = Positional::Sinusoidal;
  EXPECT_NO_THROW(odd_head.validate());

  auto dims = ModelConfig::toy(5);
  dims.stage2.dim = 40;
  EXPECT_THROW(dims.validate(), std::invalid_argument);

  auto channels = ModelConfig::toy(5);
  channels.input_channels = 6;
  EXPECT_THROW(channels.validate(), std::invalid_argument);

  auto none = ModelConfig::toy(5);
  none.classes = 0;
  EXPECT_THROW(none.validate(), std::invalid_argument);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = ModelConfig::toy(7);
  c.positional = Positional::Learnable;
  c.aggregation = Aggregation::Flatten;
  c.branch_kernels = {5};
  c.activation = Activation::Tanh;
  const nlohmann::json j = c;
  const auto back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(positional_from_string(to_string(Positional::Rope)), Positional::Rope);
  EXPECT_EQ(aggregation_from_string("upproj_mean"), Aggregation::UpprojMean);
  EXPECT_THROW(positional_from_string("absolute"), std::invalid_argument);
}

TEST(Model, ToyForwardShapeAndRange) {
  const auto c = ModelConfig::toy(10);
  Model m(c, 3);
  Rng rng(1);
  const auto x = random_input(3, c, rng);
  const auto y = m.forward(x, false)->value;
  ASSERT_EQ(y.shape, (nn::Shape{3, 10}));
  for (double v : y.data) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(m.forward(x, false)->value, y);
  Model same(c, 3);
  EXPECT_EQ(same.forward(x, false)->value, y);
  Model other(c, 4);
  EXPECT_NE(other.forward(x, false)->value, y);
}

TEST(Model, RejectsWrongInputShape) {
  const auto c = tiny_config();
  Model m(c, 1);
  EXPECT_THROW(m.forward(nn::Tensor({2, 31, 8}), false), std::invalid_argument);
  EXPECT_THROW(m.forward(nn::Tensor({2, 32, 7}), false), std::invalid_argument);
  EXPECT_THROW(m.forward(nn::Tensor({32, 8}), false), std::invalid_argument);
}

TEST(Model, ResidualBlockIsIdentityWithZeroConvAndShift) {
  auto c = tiny_config();
  c.channel_progression = {8, 8};
  Model m(c, 1);
  const std::string prefix = "branch0_k3.stage0";
  EXPECT_FALSE(m.params().contains(prefix + ".proj.w"));
  m.params().get(prefix + ".conv.w")->value.fill(0.0);
  m.params().get(prefix + ".conv.b")->value.fill(0.0);
  m.params().get(prefix + ".bn.beta")->value.fill(0.0);
  Rng rng(2);
  const auto z = random_var({2, 16, 8}, rng);
  expect_near_all(m.rcb_forward(z, prefix, false)->value, z->value, 1e-12);
}

TEST(Model, ResidualBlockProjectsShortcutWhenWidthChanges) {
  const auto c = tiny_config();
  Model m(c, 1);
  const std::string prefix = "branch1_k5.stage0";
  m.params().get(prefix + ".conv.w")->value.fill(0.0);
  m.params().get(prefix + ".conv.b")->value.fill(0.0);
  Rng rng(3);
  const auto z = random_var({2, 16, 8}, rng);
  const auto expected = nn::linear(z, m.params().get(prefix + ".proj.w"), nullptr);
  expect_near_all(m.rcb_forward(z, prefix, false)->value, expected->value, 1e-12);
}

TEST(Model, SingleKernelPathMatchesManualChain) {
  auto c = tiny_config();
  c.branch_kernels = {5};
  Model m(c, 9);
  Rng rng(4);
  const auto x = random_var({2, 32, 8}, rng);
  nn::Var z = x;
  for (std::size_t s = 0; s < 2; ++s) {
    const std::string prefix = "branch0_k5.stage" + std::to_string(s);
    auto& P = m.params();
    auto y = nn::relu(nn::conv1d(z, P.get(prefix + ".conv.w"), P.get(prefix + ".conv.b")));
    y = nn::batch_norm(y, P.get(prefix + ".bn.gamma"), P.get(prefix + ".bn.beta"),
                       {&P.get(prefix + ".bn.running_mean")->value, &P.get(prefix + ".bn.running_var")->value}, false);
    z = nn::max_pool(nn::add(y, nn::linear(z, P.get(prefix + ".proj.w"), nullptr)), 8, 4);
  }
  const auto expected = nn::linear(z, m.params().get("fuse.w"), m.params().get("fuse.b"));
  const auto got = m.mspcnn_forward(x, false);
  ASSERT_EQ(got->value.shape, (nn::Shape{2, 2, 8}));
  expect_near_all(got->value, expected->value, 1e-12);
}

TEST(Model, MultiScaleConcatenatesBranchesBeforeFusion) {
  const auto c = tiny_config();
  Model m(c, 5);
  // Zeroing the fusion rows of branches 1 and 2 leaves branch 0 alone.
  auto single = c;
  single.branch_kernels = {3};
  Model s(single, 5);
  for (const auto& [path, v] : s.params().entries())
    if (path != "fuse.w") v->value = m.params().get(path)->value;
  auto& fw = m.params().get("fuse.w")->value;
  for (std::size_t r = 8; r < 24; ++r)
    for (std::size_t o = 0; o < 8; ++o) fw[r * 8 + o] = 0.0;
  auto& sw = s.params().get("fuse.w")->value;
  for (std::size_t i = 0; i < sw.numel(); ++i) sw[i] = fw[i];
  Rng rng(6);
  const auto x = random_var({2, 32, 8}, rng);
  expect_near_all(m.mspcnn_forward(x, false)->value, s.mspcnn_forward(x, false)->value, 1e-12);
}

TEST(Model, EncodeWithoutLayersIsInterstageProjection) {
  auto c = tiny_config();
  c.stage1.layers = 0;
  c.stage2.layers = 0;
  c.interstage_out = 8;
  c.stage2.dim = 8;
  for (auto pos : {Positional::Rope, Positional::None}) {
    c.positional = pos;
    Model m(c, 1);
    m.params().get("interstage.w")->value = identity(8);
    Rng rng(7);
    const auto h = random_var({2, 2, 8}, rng);
    expect_near_all(m.encode(h)->value, h->value, 1e-15);
  }
}

nn::Tensor permute_tokens(const nn::Tensor& t, const std::vector<std::size_t>& perm) {
  nn::Tensor out(t.shape);
  const std::size_t L = t.shape[1], d = t.shape[2];
  for (std::size_t b = 0; b < t.shape[0]; ++b)
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) out[(b * L + i) * d + j] = t[(b * L + perm[i]) * d + j];
  return out;
}

TEST(Model, RopeMakesEncoderOrderSensitive) {
  auto c = tiny_config();
  c.input_length = 128;  // L' = 8
  const std::vector<std::size_t> perm{3, 0, 7, 1, 6, 2, 5, 4};
  Rng rng(8);
  const auto h = random_var({1, 8, 8}, rng);
  const auto hp = nn::constant(permute_tokens(h->value, perm));

  c.positional = Positional::None;
  Model plain(c, 2);
  // Without position information the encoder is permutation-equivariant.
  expect_near_all(plain.encode(hp)->value, permute_tokens(plain.encode(h)->value, perm), 1e-10);

  c.positional = Positional::Rope;
  Model rope(c, 2);
  const auto a = rope.encode(hp)->value;
  const auto b = permute_tokens(rope.encode(h)->value, perm);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-4);

  // A model with no encoder layers cannot see order at all after pooling.
  c.stage1.layers = 0;
  c.stage2.layers = 0;
  Model none(c, 2);
  expect_near_all(none.pool_classify(none.encode(hp))->value, none.pool_classify(none.encode(h))->value, 1e-12);
}

TEST(Model, PoolingAggregatesAsDefined) {
  const auto c = tiny_config(3);
  Model m(c, 4);
  auto& P = m.params();
  Rng rng(9);
  const auto z = random_var({2, 5, 12}, rng);
  // Up-projection then mean equals the up-projection of the mean.
  const auto mean = nn::mean_sequence(z);
  const auto expected = nn::sigmoid(nn::linear(nn::linear(mean, P.get("head.up.w"), nullptr), P.get("head.out.w"), P.get("head.out.b")));
  expect_near_all(m.pool_classify(z)->value, expected->value, 1e-12);

  // One token: the mean is that token.
  const auto one = random_var({1, 1, 12}, rng);
  const auto flat = nn::reshape(one, {1, 12});
  const auto direct = nn::sigmoid(nn::linear(nn::linear(flat, P.get("head.up.w"), nullptr), P.get("head.out.w"), P.get("head.out.b")));
  expect_near_all(m.pool_classify(one)->value, direct->value, 1e-12);
}

TEST(Model, ZeroHeadGivesOneHalf) {
  for (auto agg : {Aggregation::UpprojMean, Aggregation::Mean, Aggregation::Flatten}) {
    auto c = tiny_config();
    c.aggregation = agg;
    Model m(c, 1);
    m.params().get("head.out.w")->value.fill(0.0);
    m.params().get("head.out.b")->value.fill(0.0);
    Rng rng(10);
    const auto y = m.forward(random_input(2, c, rng), false)->value;
    for (double v : y.data) EXPECT_DOUBLE_EQ(v, 0.5);
  }
}

TEST(Model, RawDirectionStem) {
  auto c = tiny_config();
  c.input = InputKind::RawDirections;
  c.input_length = 64;
  Model m(c, 1);
  EXPECT_EQ(m.params().get("stem.w")->value.shape, (nn::Shape{1, 8}));
  Rng rng(11);
  EXPECT_EQ(m.forward(random_input(2, c, rng), false)->value.shape, (nn::Shape{2, 4}));
  EXPECT_THROW(m.forward(nn::Tensor({2, 64, 8}), false), std::invalid_argument);
}

TEST(Model, BaselineAcceptsBothInputKinds) {
  for (auto kind : {InputKind::Features, InputKind::RawDirections}) {
    auto c = tiny_config(5);
    c.architecture = Architecture::BaselineDf;
    c.input = kind;
    c.channel_progression = {kind == InputKind::Features ? std::size_t{8} : std::size_t{1}, 8, 16};
    Model m(c, 1);
    EXPECT_FALSE(m.params().contains("fuse.w"));
    Rng rng(12);
    const auto y = m.forward(random_input(3, c, rng), false)->value;
    EXPECT_EQ(y.shape, (nn::Shape{3, 5}));
  }
  auto bad = tiny_config();
  bad.architecture = Architecture::BaselineDf;
  bad.input = InputKind::RawDirections;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Model, StandardizesInputsPerChannel) {
  const auto c = tiny_config();
  Model m(c, 1);
  Rng rng(14);
  const auto x = random_input(2, c, rng);
  const auto base = m.forward(x, false)->value;
  auto shifted = x;
  for (std::size_t i = 0; i < shifted.numel(); ++i) shifted[i] = 3.0 * shifted[i] + (i % 8);
  for (std::size_t ch = 0; ch < 8; ++ch) {
    m.params().get("input.mean")->value[ch] = static_cast<double>(ch);
    m.params().get("input.std")->value[ch] = 3.0;
  }
  expect_near_all(m.forward(shifted, false)->value, base, 1e-12);
}

TEST(Model, ParametersAndBuffers) {
  Model m(tiny_config(), 1);
  const auto trainable = m.params().trainable_paths();
  for (const auto& p : trainable) EXPECT_EQ(p.find("running_"), std::string::npos) << p;
  EXPECT_TRUE(m.params().contains("branch0_k3.stage0.bn.running_mean"));
  EXPECT_FALSE(m.params().trainable("branch0_k3.stage0.bn.running_var"));
  std::size_t count = 0;
  for (const auto& p : trainable) count += m.params().get(p)->value.numel();
  EXPECT_EQ(m.params().parameter_count(), count);
}

TEST(Model, CloneSharesNoStorage) {
  Model m(tiny_config(), 1);
  auto copy = m.params().clone();
  copy.get("fuse.w")->value[0] += 1.0;
  EXPECT_NE(copy.get("fuse.w")->value, m.params().get("fuse.w")->value);
  EXPECT_NE(copy.get("fuse.w").get(), m.params().get("fuse.w").get());
}

TEST(Model, TrainingModeUpdatesRunningStatistics) {
  const auto c = tiny_config();
  Model m(c, 1);
  const auto before = m.params().get("branch0_k3.stage0.bn.running_mean")->value;
  Rng rng(13);
  const auto x = random_input(2, c, rng);
  m.forward(x, false);
  EXPECT_EQ(m.params().get("branch0_k3.stage0.bn.running_mean")->value, before);
  m.forward(x, true);
  EXPECT_NE(m.params().get("branch0_k3.stage0.bn.running_mean")->value, before);
}

struct GradCase {
  const char* name;
  Positional positional;
  Aggregation aggregation;
  bool baseline;
};

void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

class ModelGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(ModelGradient, MatchesFiniteDifferences) {
  const auto gc = GetParam();
  auto c = tiny_config();
  c.positional = gc.positional;
  c.aggregation = gc.aggregation;
  if (gc.baseline) {
    c.architecture = Architecture::BaselineDf;
    c.channel_progression = {8, 6, 8};
  }
  Model m(c, 21);
  Rng rng(22);
  const auto x = random_input(2, c, rng);
  const auto y = random_labels(2, c.classes, rng);
  std::vector<std::pair<std::string, nn::Var>> leaves;
  for (const auto& p : m.params().trainable_paths()) leaves.emplace_back(p, m.params().get(p));
  const auto reports = oracle::gradcheck([&] { return nn::bce(m.forward(x, true), y); }, leaves, 1e-5, 24);
  for (const auto& r : reports) {
    // A convolution bias feeding batch norm directly has an exactly zero gradient.
    if (r.analytic_norm < 1e-12) {
      EXPECT_LT(r.absolute_error, 1e-8) << r.name;
      continue;
    }
    EXPECT_LT(r.relative_error, 1e-5) << r.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, ModelGradient,
                         ::testing::Values(GradCase{"rope", Positional::Rope, Aggregation::UpprojMean, false},
                                           GradCase{"sinusoidal", Positional::Sinusoidal, Aggregation::Mean, false},
                                           GradCase{"learnable", Positional::Learnable, Aggregation::Flatten, false},
                                           GradCase{"none", Positional::None, Aggregation::UpprojMean, false},
                                           GradCase{"baseline", Positional::Rope, Aggregation::UpprojMean, true}),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto c = tiny_config();
  Model m(c, 5);
  const nlohmann::json meta = {{"variant", "full"}, {"seed", 5}};
  const auto bytes = encode_checkpoint(c, m.params(), meta);
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(nlohmann::json(ck.config), nlohmann::json(c));
  EXPECT_EQ(ck.meta, meta);
  EXPECT_EQ(encode_checkpoint(ck.config, ck.params, ck.meta), bytes);
  EXPECT_FALSE(ck.params.trainable("branch0_k3.stage0.bn.running_mean"));

  // Values survive at 32-bit precision, so predictions agree closely.
  Model loaded(ck.config, ck.params);
  Rng rng(6);
  const auto x = random_input(2, c, rng);
  expect_near_all(loaded.forward(x, false)->value, m.forward(x, false)->value, 1e-5);
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  const auto c = tiny_config();
  Model m(c, 5);
  auto wrong = c;
  wrong.classes = 5;
  EXPECT_THROW(Model(wrong, m.params().clone()), std::invalid_argument);
  auto fewer = c;
  fewer.branch_kernels = {3, 5};
  EXPECT_THROW(Model(fewer, m.params().clone()), std::invalid_argument);

  const auto bytes = encode_checkpoint(c, m.params());
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), std::runtime_error);
  EXPECT_THROW(decode_checkpoint(""), std::runtime_error);
}

TEST(Batching, TruncatesAndPads) {
  bm::FeatureTensor f;
  f.rows = 3;
  f.cols = 2;
  f.data = {1, 2, 3, 4, 5, 6};
  const bm::FeatureTensor* items[] = {&f};
  const auto padded = batch_features(items, 4, 2);
  EXPECT_EQ(padded.data, (std::vector<double>{1, 2, 3, 4, 5, 6, 0, 0}));
  const auto cut = batch_features(items, 2, 2);
  EXPECT_EQ(cut.data, (std::vector<double>{1, 2, 3, 4}));
  EXPECT_THROW(batch_features(items, 2, 3), std::invalid_argument);

  const std::vector<Packet> packets{{Direction::Out, 0}, {Direction::In, 5}, {Direction::In, 9}};
  EXPECT_EQ(direction_sequence(packets, 5), (std::vector<float>{1, -1, -1, 0, 0}));
  EXPECT_EQ(direction_sequence(packets, 2), (std::vector<float>{1, -1}));
}

TEST(Positional, SinusoidalTable) {
  const auto t = sinusoidal_table(4, 6);
  ASSERT_EQ(t.shape, (nn::Shape{4, 6}));
  for (std::size_t pos = 0; pos < 4; ++pos)
    for (std::size_t i = 0; i < 3; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / 6.0);
      EXPECT_NEAR(t[pos * 6 + 2 * i], std::sin(angle), 1e-12);
      EXPECT_NEAR(t[pos * 6 + 2 * i + 1], std::cos(angle), 1e-12);
    }
}

}  // namespace
}  // namespace demux::model
