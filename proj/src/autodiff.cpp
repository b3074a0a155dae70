#include "demux/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "demux/parallel.hpp"
#include "demux/rope.hpp"

namespace demux::nn {

namespace {

thread_local bool g_grad_enabled = true;

// Builds the result node and attaches a backward closure when any input is
// differentiable and recording is enabled.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p && p->requires_grad) needs = true;
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

// Adds per-shard partial sums into `target` in shard order.
void reduce_shards(const std::vector<std::vector<double>>& partials, Tensor& target) {
  for (const auto& part : partials)
    for (std::size_t i = 0; i < part.size(); ++i) target.data[i] += part[i];
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.shape != value.shape || grad.data.size() != value.data.size()) grad = Tensor(value.shape, 0.0);
  return grad;
}

void Node::zero_grad() {
  if (!grad.data.empty()) grad.fill(0.0);
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  require(root && root->value.numel() == 1, "backward: root must be a scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require(wv.rank() == 2, "linear: weight must be 2-D");
  const std::size_t in = wv.shape[0], out = wv.shape[1];
  require(xv.rank() >= 1 && xv.shape.back() == in,
          "linear: input " + shape_string(xv.shape) + " does not match weight " + shape_string(wv.shape));
  require(!b || b->value.numel() == out, "linear: bias size mismatch");
  const std::size_t rows = xv.rows();
  Shape shape = xv.shape;
  shape.back() = out;
  Tensor y(shape);
  const double* bias = b ? b->value.ptr() : nullptr;
  parallel_for(rows, [&](std::size_t r) {
    double* yr = y.ptr() + r * out;
    if (bias) std::copy(bias, bias + out, yr);
    const double* xr = xv.ptr() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double a = xr[i];
      if (a == 0.0) continue;
      const double* wr = wv.ptr() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += a * wr[o];
    }
  });
  return make_node(std::move(y), {x, w, b}, [in, out, rows](Node& self) {
    const Var& x = self.parents[0];
    const Var& w = self.parents[1];
    const Var& b = self.parents[2];
    const Tensor& dy = self.grad;
    if (x->requires_grad) {
      Tensor& dx = x->ensure_grad();
      const Tensor& wv = w->value;
      parallel_for(rows, [&](std::size_t r) {
        const double* dyr = dy.ptr() + r * out;
        double* dxr = dx.ptr() + r * in;
        for (std::size_t i = 0; i < in; ++i) {
          const double* wr = wv.ptr() + i * out;
          double acc = 0.0;
          for (std::size_t o = 0; o < out; ++o) acc += dyr[o] * wr[o];
          dxr[i] += acc;
        }
      });
    }
    const bool need_w = w->requires_grad, need_b = b && b->requires_grad;
    if (need_w || need_b) {
      const std::size_t shards = shard_count(rows);
      std::vector<std::vector<double>> pw(need_w ? shards : 0), pb(need_b ? shards : 0);
      const Tensor& xv = x->value;
      parallel_for(shards, [&](std::size_t s) {
        const auto range = shard_range(rows, s);
        if (need_w) pw[s].assign(in * out, 0.0);
        if (need_b) pb[s].assign(out, 0.0);
        for (std::size_t r = range.begin; r < range.end; ++r) {
          const double* dyr = dy.ptr() + r * out;
          if (need_w) {
            const double* xr = xv.ptr() + r * in;
            for (std::size_t i = 0; i < in; ++i) {
              const double a = xr[i];
              if (a == 0.0) continue;
              double* gw = pw[s].data() + i * out;
              for (std::size_t o = 0; o < out; ++o) gw[o] += a * dyr[o];
            }
          }
          if (need_b)
            for (std::size_t o = 0; o < out; ++o) pb[s][o] += dyr[o];
        }
      });
      if (need_w) reduce_shards(pw, w->ensure_grad());
      if (need_b) reduce_shards(pb, b->ensure_grad());
    }
  });
}

Var conv1d(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require(xv.rank() == 3, "conv1d: input must be (B, L, C), got " + shape_string(xv.shape));
  require(wv.rank() == 3, "conv1d: weight must be (k, Cin, Cout)");
  const std::size_t k = wv.shape[0], cin = wv.shape[1], cout = wv.shape[2];
  require(k % 2 == 1, "conv1d: kernel size must be odd, got " + std::to_string(k));
  require(xv.shape[2] == cin, "conv1d: input has " + std::to_string(xv.shape[2]) + " channels, weight expects " +
                                  std::to_string(cin));
  require(!b || b->value.numel() == cout, "conv1d: bias size mismatch");
  const std::size_t batch = xv.shape[0], len = xv.shape[1];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor y({batch, len, cout});
  const double* bias = b ? b->value.ptr() : nullptr;

  // Valid tap range [j0, j1) for output position t.
  auto taps = [=](std::size_t t) {
    const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t);
    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, pad - st);
    const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(k), static_cast<std::ptrdiff_t>(len) - st + pad);
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(j0), static_cast<std::size_t>(j1));
  };

  parallel_for(batch, [&](std::size_t bi) {
    const double* xb = xv.ptr() + bi * len * cin;
    double* yb = y.ptr() + bi * len * cout;
    for (std::size_t t = 0; t < len; ++t) {
      double* yt = yb + t * cout;
      if (bias) std::copy(bias, bias + cout, yt);
      const auto [j0, j1] = taps(t);
      // The input patch for taps [j0, j1) is contiguous in memory.
      const double* patch = xb + (t + j0 - static_cast<std::size_t>(pad)) * cin;
      const double* wp = wv.ptr() + j0 * cin * cout;
      const std::size_t n = (j1 - j0) * cin;
      for (std::size_t idx = 0; idx < n; ++idx) {
        const double a = patch[idx];
        if (a == 0.0) continue;
        const double* wr = wp + idx * cout;
        for (std::size_t o = 0; o < cout; ++o) yt[o] += a * wr[o];
      }
    }
  });

  return make_node(std::move(y), {x, w, b}, [=](Node& self) {
    const Var& x = self.parents[0];
    const Var& w = self.parents[1];
    const Var& b = self.parents[2];
    const Tensor& dy = self.grad;
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (x->requires_grad) {
      Tensor& dx = x->ensure_grad();
      parallel_for(batch, [&](std::size_t bi) {
        const double* dyb = dy.ptr() + bi * len * cout;
        double* dxb = dx.ptr() + bi * len * cin;
        for (std::size_t t = 0; t < len; ++t) {
          const double* dyt = dyb + t * cout;
          const auto [j0, j1] = taps(t);
          double* patch = dxb + (t + j0 - static_cast<std::size_t>(pad)) * cin;
          const double* wp = wv.ptr() + j0 * cin * cout;
          const std::size_t n = (j1 - j0) * cin;
          for (std::size_t idx = 0; idx < n; ++idx) {
            const double* wr = wp + idx * cout;
            double acc = 0.0;
            for (std::size_t o = 0; o < cout; ++o) acc += dyt[o] * wr[o];
            patch[idx] += acc;
          }
        }
      });
    }
    const bool need_w = w->requires_grad, need_b = b && b->requires_grad;
    if (need_w || need_b) {
      const std::size_t shards = shard_count(batch);
      std::vector<std::vector<double>> pw(need_w ? shards : 0), pb(need_b ? shards : 0);
      parallel_for(shards, [&](std::size_t s) {
        const auto range = shard_range(batch, s);
        if (need_w) pw[s].assign(k * cin * cout, 0.0);
        if (need_b) pb[s].assign(cout, 0.0);
        for (std::size_t bi = range.begin; bi < range.end; ++bi) {
          const double* xb = xv.ptr() + bi * len * cin;
          const double* dyb = dy.ptr() + bi * len * cout;
          for (std::size_t t = 0; t < len; ++t) {
            const double* dyt = dyb + t * cout;
            if (need_b)
              for (std::size_t o = 0; o < cout; ++o) pb[s][o] += dyt[o];
            if (!need_w) continue;
            const auto [j0, j1] = taps(t);
            const double* patch = xb + (t + j0 - static_cast<std::size_t>(pad)) * cin;
            double* gw = pw[s].data() + j0 * cin * cout;
            const std::size_t n = (j1 - j0) * cin;
            for (std::size_t idx = 0; idx < n; ++idx) {
              const double a = patch[idx];
              if (a == 0.0) continue;
              double* g = gw + idx * cout;
              for (std::size_t o = 0; o < cout; ++o) g[o] += a * dyt[o];
            }
          }
        }
      });
      if (need_w) reduce_shards(pw, w->ensure_grad());
      if (need_b) reduce_shards(pb, b->ensure_grad());
    }
  });
}

Var relu(const Var& x) {
  Tensor y = x->value;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(y), {x}, [](Node& self) {
    const Var& x = self.parents[0];
    Tensor& dx = x->ensure_grad();
    for (std::size_t i = 0; i < dx.numel(); ++i)
      if (x->value[i] > 0.0) dx[i] += self.grad[i];
  });
}

Var tanh(const Var& x) {
  Tensor y = x->value;
  for (double& v : y.data) v = std::tanh(v);
  return make_node(std::move(y), {x}, [](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

Var sigmoid(const Var& x) {
  Tensor y = x->value;
  for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
  return make_node(std::move(y), {x}, [](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.numel(); ++i) {
      const double s = self.value[i];
      dx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a->value.shape == b->value.shape,
          "add: shape mismatch " + shape_string(a->value.shape) + " vs " + shape_string(b->value.shape));
  Tensor y = a->value;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
  return make_node(std::move(y), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      const Var& in = self.parents[p];
      if (!in->requires_grad) continue;
      Tensor& d = in->ensure_grad();
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i];
    }
  });
}

Var add_positional(const Var& x, const Var& table) {
  const Tensor& xv = x->value;
  require(xv.rank() == 3, "add_positional: input must be (B, L, C)");
  const std::size_t len = xv.shape[1], ch = xv.shape[2];
  require(table->value.rank() == 2 && table->value.shape[0] >= len && table->value.shape[1] == ch,
          "add_positional: table " + shape_string(table->value.shape) + " does not cover input " + shape_string(xv.shape));
  const std::size_t span = len * ch;
  Tensor y = xv;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += table->value[i % span];
  return make_node(std::move(y), {x, table}, [span](Node& self) {
    const Var& x = self.parents[0];
    const Var& table = self.parents[1];
    if (x->requires_grad) {
      Tensor& dx = x->ensure_grad();
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[i];
    }
    if (table->requires_grad) {
      Tensor& dt = table->ensure_grad();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) dt[i % span] += self.grad[i];
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state, bool training) {
  const Tensor& xv = x->value;
  const std::size_t ch = xv.shape.back();
  const std::size_t rows = xv.rows();
  require(gamma->value.numel() == ch && beta->value.numel() == ch, "batch_norm: affine size mismatch");
  require(state.running_mean && state.running_var && state.running_mean->numel() == ch &&
              state.running_var->numel() == ch,
          "batch_norm: running statistics size mismatch");
  std::vector<double> mean(ch, 0.0), invstd(ch, 0.0);
  if (training) {
    require(rows > 1, "batch_norm: training needs more than one value per channel");
    std::vector<double> var(ch, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) mean[c] += xv[r * ch + c];
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const double d = xv[r * ch + c] - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < ch; ++c) {
      var[c] /= static_cast<double>(rows);
      invstd[c] = 1.0 / std::sqrt(var[c] + state.eps);
      const double unbiased = var[c] * static_cast<double>(rows) / static_cast<double>(rows - 1);
      (*state.running_mean)[c] = (1.0 - state.momentum) * (*state.running_mean)[c] + state.momentum * mean[c];
      (*state.running_var)[c] = (1.0 - state.momentum) * (*state.running_var)[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = (*state.running_mean)[c];
      invstd[c] = 1.0 / std::sqrt((*state.running_var)[c] + state.eps);
    }
  }
  Tensor xhat(xv.shape);
  Tensor y(xv.shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = r * ch + c;
      xhat[i] = (xv[i] - mean[c]) * invstd[c];
      y[i] = gamma->value[c] * xhat[i] + beta->value[c];
    }
  return make_node(std::move(y), {x, gamma, beta},
                   [xhat = std::move(xhat), invstd = std::move(invstd), ch, rows, training](Node& self) {
                     const Var& x = self.parents[0];
                     const Var& gamma = self.parents[1];
                     const Var& beta = self.parents[2];
                     const Tensor& dy = self.grad;
                     std::vector<double> sum_dy(ch, 0.0), sum_dy_xhat(ch, 0.0);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < ch; ++c) {
                         const std::size_t i = r * ch + c;
                         sum_dy[c] += dy[i];
                         sum_dy_xhat[c] += dy[i] * xhat[i];
                       }
                     if (gamma->requires_grad) {
                       Tensor& dg = gamma->ensure_grad();
                       for (std::size_t c = 0; c < ch; ++c) dg[c] += sum_dy_xhat[c];
                     }
                     if (beta->requires_grad) {
                       Tensor& db = beta->ensure_grad();
                       for (std::size_t c = 0; c < ch; ++c) db[c] += sum_dy[c];
                     }
                     if (!x->requires_grad) return;
                     Tensor& dx = x->ensure_grad();
                     const double n = static_cast<double>(rows);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < ch; ++c) {
                         const std::size_t i = r * ch + c;
                         const double g = gamma->value[c];
                         if (training) {
                           dx[i] += g * invstd[c] * (dy[i] - sum_dy[c] / n - xhat[i] * sum_dy_xhat[c] / n);
                         } else {
                           dx[i] += g * invstd[c] * dy[i];
                         }
                       }
                   });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x->value;
  const std::size_t ch = xv.shape.back();
  const std::size_t rows = xv.rows();
  require(gamma->value.numel() == ch && beta->value.numel() == ch, "layer_norm: affine size mismatch");
  Tensor xhat(xv.shape), y(xv.shape);
  std::vector<double> invstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.ptr() + r * ch;
    double mean = 0.0;
    for (std::size_t c = 0; c < ch; ++c) mean += xr[c];
    mean /= static_cast<double>(ch);
    double var = 0.0;
    for (std::size_t c = 0; c < ch; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(ch);
    invstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = r * ch + c;
      xhat[i] = (xr[c] - mean) * invstd[r];
      y[i] = gamma->value[c] * xhat[i] + beta->value[c];
    }
  }
  return make_node(std::move(y), {x, gamma, beta},
                   [xhat = std::move(xhat), invstd = std::move(invstd), ch, rows](Node& self) {
                     const Var& x = self.parents[0];
                     const Var& gamma = self.parents[1];
                     const Var& beta = self.parents[2];
                     const Tensor& dy = self.grad;
                     if (gamma->requires_grad) {
                       Tensor& dg = gamma->ensure_grad();
                       for (std::size_t i = 0; i < dy.numel(); ++i) dg[i % ch] += dy[i] * xhat[i];
                     }
                     if (beta->requires_grad) {
                       Tensor& db = beta->ensure_grad();
                       for (std::size_t i = 0; i < dy.numel(); ++i) db[i % ch] += dy[i];
                     }
                     if (!x->requires_grad) return;
                     Tensor& dx = x->ensure_grad();
                     const double n = static_cast<double>(ch);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double sum_g = 0.0, sum_gx = 0.0;
                       for (std::size_t c = 0; c < ch; ++c) {
                         const std::size_t i = r * ch + c;
                         const double g = dy[i] * gamma->value[c];
                         sum_g += g;
                         sum_gx += g * xhat[i];
                       }
                       for (std::size_t c = 0; c < ch; ++c) {
                         const std::size_t i = r * ch + c;
                         const double g = dy[i] * gamma->value[c];
                         dx[i] += invstd[r] * (g - sum_g / n - xhat[i] * sum_gx / n);
                       }
                     }
                   });
}

Var max_pool(const Var& x, std::size_t kernel, std::size_t stride) {
  const Tensor& xv = x->value;
  require(xv.rank() == 3, "max_pool: input must be (B, L, C)");
  require(kernel >= 1 && stride >= 1, "max_pool: kernel and stride must be positive");
  const std::size_t batch = xv.shape[0], len = xv.shape[1], ch = xv.shape[2];
  require(len >= 1, "max_pool: empty sequence");
  const std::size_t out_len = (len + stride - 1) / stride;
  Tensor y({batch, out_len, ch});
  // Windows running past the end see zero padding; kNone marks a padded maximum.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> argmax(y.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < out_len; ++i) {
      const std::size_t lo = i * stride, hi = std::min(len, lo + kernel);
      const bool padded = lo + kernel > len;
      for (std::size_t c = 0; c < ch; ++c) {
        std::size_t best = (b * len + lo) * ch + c;
        for (std::size_t t = lo + 1; t < hi; ++t) {
          const std::size_t idx = (b * len + t) * ch + c;
          if (xv[idx] > xv[best]) best = idx;
        }
        const std::size_t o = (b * out_len + i) * ch + c;
        if (padded && xv[best] < 0.0) {
          y[o] = 0.0;
          argmax[o] = kNone;
        } else {
          y[o] = xv[best];
          argmax[o] = best;
        }
      }
    }
  return make_node(std::move(y), {x}, [argmax = std::move(argmax), kNone](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < argmax.size(); ++o)
      if (argmax[o] != kNone) dx[argmax[o]] += self.grad[o];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape& lead = parts.front()->value.shape;
  const std::size_t rows = parts.front()->value.rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p->value.shape;
    require(s.size() == lead.size() && std::equal(s.begin(), s.end() - 1, lead.begin()),
            "concat_channels: leading shapes differ");
    widths.push_back(s.back());
    total += s.back();
  }
  Shape shape = lead;
  shape.back() = total;
  Tensor y(shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p]->value;
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.ptr() + r * widths[p], v.ptr() + (r + 1) * widths[p], y.ptr() + r * total + offset);
    offset += widths[p];
  }
  return make_node(std::move(y), parts, [widths, rows, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const Var& in = self.parents[p];
      if (in->requires_grad) {
        Tensor& d = in->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[p]; ++c) d[r * widths[p] + c] += self.grad[r * total + offset + c];
      }
      offset += widths[p];
    }
  });
}

namespace {

struct HeadView {
  std::size_t batch, len, d, heads, dh;
  std::size_t at(std::size_t b, std::size_t t, std::size_t h) const { return (b * len + t) * d + h * dh; }
};

// Gathers head h of item b from a (B, L, d) tensor into a (L, dh) buffer,
// optionally rotating each row by its position.
void gather_head(const Tensor& src, const HeadView& v, std::size_t b, std::size_t h, bool rope, double base,
                 std::vector<double>& out) {
  out.resize(v.len * v.dh);
  for (std::size_t t = 0; t < v.len; ++t) {
    const double* row = src.ptr() + v.at(b, t, h);
    std::copy(row, row + v.dh, out.data() + t * v.dh);
    if (rope) rope_rotate_row(out.data() + t * v.dh, v.dh, static_cast<double>(t), base);
  }
}

void softmax_scores(const std::vector<double>& q, const std::vector<double>& k, const HeadView& v, double* p) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(v.dh));
  for (std::size_t i = 0; i < v.len; ++i) {
    double* row = p + i * v.len;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < v.len; ++j) {
      double s = 0.0;
      for (std::size_t e = 0; e < v.dh; ++e) s += q[i * v.dh + e] * k[j * v.dh + e];
      row[j] = s * scale;
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < v.len; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < v.len; ++j) row[j] /= sum;
  }
}

HeadView head_view(const Tensor& q, std::size_t heads) {
  require(q.rank() == 3, "attention: inputs must be (B, L, d)");
  const std::size_t d = q.shape[2];
  require(heads >= 1 && d % heads == 0, "attention: model width " + std::to_string(d) + " not divisible by " +
                                            std::to_string(heads) + " heads");
  return {q.shape[0], q.shape[1], d, heads, d / heads};
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t heads, std::size_t batch_index,
                         std::size_t head, bool rope, double rope_base) {
  const HeadView v = head_view(q, heads);
  std::vector<double> qh, kh;
  gather_head(q, v, batch_index, head, rope, rope_base, qh);
  gather_head(k, v, batch_index, head, rope, rope_base, kh);
  Tensor p({v.len, v.len});
  softmax_scores(qh, kh, v, p.ptr());
  return p;
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool rope, double rope_base) {
  require(q->value.shape == k->value.shape && q->value.shape == v->value.shape, "attention: q, k, v shapes differ");
  const HeadView hv = head_view(q->value, heads);
  require(!rope || hv.dh % 2 == 0, "attention: RoPE needs an even per-head dimension, got " + std::to_string(hv.dh));
  const std::size_t tasks = hv.batch * hv.heads;
  const std::size_t ll = hv.len * hv.len;
  std::vector<double> probs(tasks * ll);
  Tensor out(q->value.shape);
  parallel_for(tasks, [&](std::size_t task) {
    const std::size_t b = task / hv.heads, h = task % hv.heads;
    std::vector<double> qh, kh;
    gather_head(q->value, hv, b, h, rope, rope_base, qh);
    gather_head(k->value, hv, b, h, rope, rope_base, kh);
    double* p = probs.data() + task * ll;
    softmax_scores(qh, kh, hv, p);
    for (std::size_t i = 0; i < hv.len; ++i) {
      double* o = out.ptr() + hv.at(b, i, h);
      for (std::size_t j = 0; j < hv.len; ++j) {
        const double w = p[i * hv.len + j];
        const double* vr = v->value.ptr() + hv.at(b, j, h);
        for (std::size_t e = 0; e < hv.dh; ++e) o[e] += w * vr[e];
      }
    }
  });
  return make_node(std::move(out), {q, k, v}, [hv, probs = std::move(probs), rope, rope_base](Node& self) {
    const Var& q = self.parents[0];
    const Var& k = self.parents[1];
    const Var& v = self.parents[2];
    const std::size_t ll = hv.len * hv.len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hv.dh));
    Tensor* dq = q->requires_grad ? &q->ensure_grad() : nullptr;
    Tensor* dk = k->requires_grad ? &k->ensure_grad() : nullptr;
    Tensor* dv = v->requires_grad ? &v->ensure_grad() : nullptr;
    parallel_for(hv.batch * hv.heads, [&](std::size_t task) {
      const std::size_t b = task / hv.heads, h = task % hv.heads;
      const double* p = probs.data() + task * ll;
      std::vector<double> dp(ll), ds(ll);
      for (std::size_t i = 0; i < hv.len; ++i) {
        const double* go = self.grad.ptr() + hv.at(b, i, h);
        for (std::size_t j = 0; j < hv.len; ++j) {
          const double* vr = v->value.ptr() + hv.at(b, j, h);
          double acc = 0.0;
          for (std::size_t e = 0; e < hv.dh; ++e) acc += go[e] * vr[e];
          dp[i * hv.len + j] = acc;
          if (dv) {
            double* dvr = dv->ptr() + hv.at(b, j, h);
            const double w = p[i * hv.len + j];
            for (std::size_t e = 0; e < hv.dh; ++e) dvr[e] += w * go[e];
          }
        }
      }
      if (!dq && !dk) return;
      for (std::size_t i = 0; i < hv.len; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < hv.len; ++j) dot += dp[i * hv.len + j] * p[i * hv.len + j];
        for (std::size_t j = 0; j < hv.len; ++j)
          ds[i * hv.len + j] = p[i * hv.len + j] * (dp[i * hv.len + j] - dot) * scale;
      }
      std::vector<double> qh, kh, grad_rot(hv.dh);
      gather_head(q->value, hv, b, h, rope, rope_base, qh);
      gather_head(k->value, hv, b, h, rope, rope_base, kh);
      for (std::size_t i = 0; i < hv.len; ++i) {
        if (dq) {
          std::fill(grad_rot.begin(), grad_rot.end(), 0.0);
          for (std::size_t j = 0; j < hv.len; ++j)
            for (std::size_t e = 0; e < hv.dh; ++e) grad_rot[e] += ds[i * hv.len + j] * kh[j * hv.dh + e];
          if (rope) rope_rotate_row(grad_rot.data(), hv.dh, static_cast<double>(i), rope_base, -1);
          double* dqr = dq->ptr() + hv.at(b, i, h);
          for (std::size_t e = 0; e < hv.dh; ++e) dqr[e] += grad_rot[e];
        }
        if (dk) {
          std::fill(grad_rot.begin(), grad_rot.end(), 0.0);
          for (std::size_t j = 0; j < hv.len; ++j)
            for (std::size_t e = 0; e < hv.dh; ++e) grad_rot[e] += ds[j * hv.len + i] * qh[j * hv.dh + e];
          if (rope) rope_rotate_row(grad_rot.data(), hv.dh, static_cast<double>(i), rope_base, -1);
          double* dkr = dk->ptr() + hv.at(b, i, h);
          for (std::size_t e = 0; e < hv.dh; ++e) dkr[e] += grad_rot[e];
        }
      }
    });
  });
}

Var mean_sequence(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 3, "mean_sequence: input must be (B, L, C)");
  const std::size_t batch = xv.shape[0], len = xv.shape[1], ch = xv.shape[2];
  require(len >= 1, "mean_sequence: empty sequence");
  Tensor y({batch, ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < ch; ++c) y[b * ch + c] += xv[(b * len + t) * ch + c];
  for (double& val : y.data) val /= static_cast<double>(len);
  return make_node(std::move(y), {x}, [batch, len, ch](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t c = 0; c < ch; ++c) dx[(b * len + t) * ch + c] += self.grad[b * ch + c] * inv;
  });
}

Var reshape(const Var& x, Shape shape) {
  require(shape_numel(shape) == x->value.numel(),
          "reshape: " + shape_string(x->value.shape) + " cannot become " + shape_string(shape));
  Tensor y(std::move(shape), x->value.data);
  return make_node(std::move(y), {x}, [](Node& self) {
    Tensor& dx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[i];
  });
}

Var bce(const Var& predictions, const Tensor& targets, double eps) {
  const Tensor& p = predictions->value;
  require(p.shape == targets.shape,
          "bce: predictions " + shape_string(p.shape) + " vs targets " + shape_string(targets.shape));
  require(p.numel() > 0, "bce: empty batch");
  for (double y : targets.data) require(y == 0.0 || y == 1.0, "bce: targets must be binary");
  const double n = static_cast<double>(p.numel());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double q = std::clamp(p[i], eps, 1.0 - eps);
    loss -= targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
  }
  Tensor out({1}, loss / n);
  return make_node(std::move(out), {predictions}, [targets, eps, n](Node& self) {
    const Var& pred = self.parents[0];
    Tensor& dp = pred->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < dp.numel(); ++i) {
      const double q = pred->value[i];
      if (q < eps || q > 1.0 - eps) continue;  // clamped region is flat
      dp[i] += g * (-targets[i] / q + (1.0 - targets[i]) / (1.0 - q)) / n;
    }
  });
}

}  // namespace demux::nn
