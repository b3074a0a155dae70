#ifndef DEMUX_AUTODIFF_HPP
#define DEMUX_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <vector>

#include "demux/tensor.hpp"

namespace demux::nn {

// One value in the computation graph. Gradients accumulate into `grad`;
// parameters are long-lived leaf nodes, intermediates die with the graph.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
  void zero_grad();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

// While alive, new ops record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Reverse sweep from a scalar root (seeded with d(root)/d(root) = 1).
void backward(const Var& root);

// x (..., in) * w (in, out) + b (out); b may be null.
Var linear(const Var& x, const Var& w, const Var& b);

// Same-length 1-D convolution with symmetric zero padding.
// x (B, L, Cin), w (k, Cin, Cout) with odd k, b (Cout) or null.
Var conv1d(const Var& x, const Var& w, const Var& b);

Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
// x (B, L, C) plus a per-position table (L, C) shared across the batch.
Var add_positional(const Var& x, const Var& table);

struct BatchNormState {
  Tensor* running_mean;
  Tensor* running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
// Normalizes each channel of x (..., C) over all leading positions. Training
// mode uses batch statistics and updates the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state, bool training);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Max over windows [i*stride, i*stride + kernel) with right-side zero padding, for
// i < ceil(L / stride). x (B, L, C) -> (B, ceil(L/stride), C).
Var max_pool(const Var& x, std::size_t kernel, std::size_t stride);

Var concat_channels(const std::vector<Var>& parts);

// Scaled dot-product attention per head. q, k, v (B, L, d). With rope, queries
// and keys are rotated by position before scoring. Returns the concatenated
// per-head context (B, L, d), before the output projection.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool rope, double rope_base);

// Softmax attention weights for head h of batch item b, as computed by
// attention(); exposed for tests.
Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t heads, std::size_t batch_index,
                         std::size_t head, bool rope, double rope_base);

// Mean over the sequence axis: (B, L, C) -> (B, C).
Var mean_sequence(const Var& x);

Var reshape(const Var& x, Shape shape);

// Mean binary cross-entropy over all entries; predictions are clamped to
// [eps, 1 - eps]. Returns a (1)-shaped scalar.
Var bce(const Var& predictions, const Tensor& targets, double eps = 1e-7);

}  // namespace demux::nn

#endif  // DEMUX_AUTODIFF_HPP
