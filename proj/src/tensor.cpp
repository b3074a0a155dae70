#include "demux/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace demux::nn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_numel(shape))
    throw std::invalid_argument("tensor of shape " + shape_string(shape) + " given " + std::to_string(data.size()) + " values");
}

std::size_t Tensor::dim(int i) const {
  const int r = static_cast<int>(rank());
  const int idx = i < 0 ? r + i : i;
  if (idx < 0 || idx >= r) throw std::out_of_range("dim " + std::to_string(i) + " of rank-" + std::to_string(r) + " tensor");
  return shape[static_cast<std::size_t>(idx)];
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

}  // namespace demux::nn
