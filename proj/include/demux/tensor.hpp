#ifndef DEMUX_TENSOR_HPP
#define DEMUX_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace demux::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major double tensor.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  // Negative indices count from the end.
  std::size_t dim(int i) const;
  // Product of all but the last dimension.
  std::size_t rows() const { return rank() == 0 ? 1 : numel() / shape.back(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  void fill(double v);
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace demux::nn

#endif  // DEMUX_TENSOR_HPP
