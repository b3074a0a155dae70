#include "demux/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "demux/rng.hpp"

namespace demux::train {

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.total_epochs = 50;
  c.batch_size = 64;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (total_epochs == 0) fail("total_epochs must be >= 1");
  if (warmup_epochs >= total_epochs) fail("warmup_epochs must be smaller than total_epochs");
  if (!(lr_start >= 0.0) || !(lr_max >= 0.0)) fail("learning rates must be nonnegative");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr_start", c.lr_start},       {"lr_max", c.lr_max},         {"warmup_epochs", c.warmup_epochs},
       {"total_epochs", c.total_epochs}, {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
       {"beta1", c.beta1},             {"beta2", c.beta2},           {"epsilon", c.epsilon},
       {"seed", c.seed},               {"patience", c.patience}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d = TrainConfig::toy();
  c.lr_start = j.value("lr_start", d.lr_start);
  c.lr_max = j.value("lr_max", d.lr_max);
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.total_epochs = j.value("total_epochs", d.total_epochs);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.seed = j.value("seed", d.seed);
  c.patience = j.value("patience", d.patience);
}

double lr_at(double epoch, const TrainConfig& cfg) {
  const double warm = static_cast<double>(cfg.warmup_epochs);
  const double total = static_cast<double>(cfg.total_epochs);
  epoch = std::clamp(epoch, 0.0, total);
  if (cfg.warmup_epochs > 0 && epoch <= warm) return cfg.lr_start + (cfg.lr_max - cfg.lr_start) * epoch / warm;
  const double progress = (epoch - warm) / (total - warm);
  return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

BceResult bce_loss(const nn::Tensor& predictions, const nn::Tensor& targets, double eps) {
  auto pred = nn::parameter(predictions);
  auto loss = nn::bce(pred, targets, eps);
  nn::backward(loss);
  return {loss->value[0], pred->ensure_grad()};
}

void AdamW::step(model::ModelParams& params, double lr) {
  ++steps_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& path : params.trainable_paths()) {
    auto& var = params.get(path);
    nn::Tensor& w = var->value;
    const nn::Tensor& g = var->ensure_grad();
    auto [it, fresh] = moments_.try_emplace(path);
    if (fresh) {
      it->second.m = nn::Tensor(w.shape);
      it->second.v = nn::Tensor(w.shape);
    }
    auto& mo = it->second;
    const double shrink = 1.0 - lr * weight_decay_;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * g[i];
      mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = mo.m[i] / bias1;
      const double v_hat = mo.v[i] / bias2;
      w[i] = w[i] * shrink - lr * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

void Dataset::add(std::vector<float> input, LabelVector label) {
  if (input.size() != length * channels)
    throw std::invalid_argument("dataset input has " + std::to_string(input.size()) + " values, expected " +
                                std::to_string(length * channels));
  if (!labels.empty() && label.size() != labels.front().size())
    throw std::invalid_argument("dataset labels differ in class count");
  inputs.push_back(std::move(input));
  labels.push_back(std::move(label));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{length, channels, {}, {}};
  for (auto i : indices) {
    out.inputs.push_back(inputs.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

std::vector<float> fit_features(const bm::FeatureTensor& features, std::size_t length) {
  std::vector<float> out(length * features.cols, 0.0f);
  const std::size_t rows = std::min(length, features.rows);
  std::copy(features.data.begin(), features.data.begin() + static_cast<std::ptrdiff_t>(rows * features.cols), out.begin());
  return out;
}

void make_batch(const Dataset& data, std::span<const std::size_t> indices, nn::Tensor& inputs, nn::Tensor& targets) {
  const std::size_t per = data.length * data.channels;
  const std::size_t m = data.num_classes();
  inputs = nn::Tensor({indices.size(), data.length, data.channels});
  targets = nn::Tensor({indices.size(), m});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& src = data.inputs.at(indices[b]);
    std::copy(src.begin(), src.end(), inputs.data.begin() + static_cast<std::ptrdiff_t>(b * per));
    const auto bits = data.labels[indices[b]].bits();
    for (std::size_t c = 0; c < m; ++c) targets[b * m + c] = bits[c];
  }
}

void check_compatible(const model::ModelConfig& config, const Dataset& data) {
  const std::size_t channels = config.input == model::InputKind::RawDirections ? 1 : config.input_channels;
  if (data.length != config.input_length || data.channels != channels)
    throw std::invalid_argument("dataset inputs are " + std::to_string(data.length) + "x" + std::to_string(data.channels) +
                                " but the model expects " + std::to_string(config.input_length) + "x" +
                                std::to_string(channels));
  if (!data.empty() && data.num_classes() != config.classes)
    throw std::invalid_argument("dataset has " + std::to_string(data.num_classes()) + " classes, model has " +
                                std::to_string(config.classes));
}

std::vector<double> predict(model::Model& model, const Dataset& data, std::size_t batch_size) {
  check_compatible(model.config(), data);
  nn::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(data.size() * model.config().classes);
  nn::Tensor inputs, targets;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    make_batch(data, idx, inputs, targets);
    auto probs = model.forward(inputs, false);
    out.insert(out.end(), probs->value.data.begin(), probs->value.data.end());
  }
  return out;
}

std::vector<LogRow> MetricLog::split_rows(const std::string& split) const {
  std::vector<LogRow> out;
  for (const auto& r : rows_)
    if (r.split == split) out.push_back(r);
  return out;
}

std::string MetricLog::to_csv() const {
  auto opt = [](const std::optional<double>& v) { return v ? metrics::format_real(*v) : std::string(); };
  std::string out = "epoch,split,loss,auc,p_at_k,map_at_k\n";
  for (const auto& r : rows_)
    out += std::to_string(r.epoch) + "," + r.split + "," + metrics::format_real(r.loss) + "," + opt(r.auc) + "," +
           opt(r.p_at_k) + "," + opt(r.map_at_k) + "\n";
  return out;
}

MetricLog MetricLog::from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,split,loss,auc,p_at_k,map_at_k")
    throw std::runtime_error("metric log: unexpected header '" + line + "'");
  MetricLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string field; std::getline(ls, field, ',');) f.push_back(field);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw std::runtime_error("metric log: malformed row '" + line + "'");
    auto opt = [](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return std::stod(s);
    };
    log.append({std::stoul(f[0]), f[1], std::stod(f[2]), opt(f[3]), opt(f[4]), opt(f[5])});
  }
  return log;
}

LogRow score_split(std::span<const double> predictions, std::span<const LabelVector> labels, std::size_t epoch,
                   const std::string& split) {
  LogRow row;
  row.epoch = epoch;
  row.split = split;
  const std::size_t m = labels.empty() ? 0 : labels.front().size();
  nn::Tensor pred({labels.size(), m}, std::vector<double>(predictions.begin(), predictions.end()));
  nn::Tensor target({labels.size(), m});
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t c = 0; c < m; ++c) target[i * m + c] = labels[i].test(c) ? 1.0 : 0.0;
  {
    nn::NoGradGuard no_grad;
    row.loss = nn::bce(nn::constant(std::move(pred)), target)->value[0];
  }
  try {
    const auto r = metrics::evaluate(predictions, labels, metrics::KPolicy::true_count());
    row.auc = r.auc;
    row.p_at_k = r.p_at_k;
    row.map_at_k = r.map_at_k;
  } catch (const std::domain_error&) {
    // Too few instances for any site to have both label values.
  }
  return row;
}

namespace {

bool better(const LogRow& a, const LogRow& b) {
  auto key = [](const std::optional<double>& v) { return v.value_or(-1.0); };
  if (key(a.p_at_k) != key(b.p_at_k)) return key(a.p_at_k) > key(b.p_at_k);
  if (key(a.auc) != key(b.auc)) return key(a.auc) > key(b.auc);
  return a.loss < b.loss;
}

}  // namespace

TrainResult train(model::Model& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  check_compatible(model.config(), train_set);
  if (val_set && !val_set->empty()) check_compatible(model.config(), *val_set);
  const bool has_val = val_set && !val_set->empty();

  model.fit_input_statistics(train_set.inputs);
  TrainResult result;
  AdamW optimizer(cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
  const Rng root(cfg.seed);
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::optional<LogRow> best;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(n);
  nn::Tensor inputs, targets;

  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.split(epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    std::vector<double> train_pred(n * train_set.num_classes());
    std::vector<LabelVector> train_labels(n);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      make_batch(train_set, idx, inputs, targets);
      model.params().zero_grad();
      auto probs = model.forward(inputs, true);
      auto loss = nn::bce(probs, targets);
      nn::backward(loss);
      const double lr = lr_at(static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches), cfg);
      optimizer.step(model.params(), lr);
      std::copy(probs->value.data.begin(), probs->value.data.end(),
                train_pred.begin() + static_cast<std::ptrdiff_t>(lo * train_set.num_classes()));
      for (std::size_t i = lo; i < hi; ++i) train_labels[i] = train_set.labels[order[i]];
    }
    LogRow train_row = score_split(train_pred, train_labels, epoch + 1, "train");
    result.log.append(train_row);
    std::optional<LogRow> val_row;
    if (has_val) {
      const auto pred = predict(model, *val_set, cfg.batch_size);
      val_row = score_split(pred, val_set->labels, epoch + 1, "val");
      result.log.append(*val_row);
      if (!best || better(*val_row, *best)) {
        best = val_row;
        result.best_epoch = epoch + 1;
        result.best_params = model.params().clone();
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    if (on_epoch) on_epoch(train_row, val_row);
    if (cfg.patience > 0 && has_val && since_best >= cfg.patience) break;
  }
  if (!has_val) {
    result.best_params = model.params().clone();
    result.best_epoch = cfg.total_epochs;
  }
  return result;
}

Split split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

}  // namespace demux::train
