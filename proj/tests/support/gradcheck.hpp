#ifndef DEMUX_TESTS_GRADCHECK_HPP
#define DEMUX_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "demux/autodiff.hpp"

namespace demux::oracle {

struct GradReport {
  std::string name;
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  double absolute_error = 0.0;  // ||analytic - numeric||
};

// Compares backpropagated gradients of a scalar loss with central finite
// differences for each listed leaf. `loss` rebuilds the graph from scratch.
// With max_coords > 0, only that many evenly strided coordinates per leaf are
// perturbed.
inline std::vector<GradReport> gradcheck(const std::function<nn::Var()>& loss,
                                         const std::vector<std::pair<std::string, nn::Var>>& leaves, double h = 1e-5,
                                         std::size_t max_coords = 0) {
  for (const auto& [_, v] : leaves) v->zero_grad();
  nn::backward(loss());
  std::vector<GradReport> out;
  for (const auto& [name, v] : leaves) {
    const nn::Tensor analytic = v->ensure_grad();
    double diff = 0.0, na = 0.0, nn_ = 0.0;
    const std::size_t n = v->value.numel();
    const std::size_t step = max_coords == 0 || n <= max_coords ? 1 : (n + max_coords - 1) / max_coords;
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = v->value[i];
      v->value[i] = saved + h;
      const double up = loss()->value[0];
      v->value[i] = saved - h;
      const double down = loss()->value[0];
      v->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn_ += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn_), 1e-12});
    out.push_back({name, std::sqrt(diff) / scale, std::sqrt(na), std::sqrt(diff)});
  }
  return out;
}

}  // namespace demux::oracle

#endif  // DEMUX_TESTS_GRADCHECK_HPP
