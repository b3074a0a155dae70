#ifndef DEMUX_ROPE_HPP
#define DEMUX_ROPE_HPP

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace demux::nn {

// Rotation frequency of 2-D subspace j for a head of width head_dim.
inline double rope_theta(std::size_t j, std::size_t head_dim, double base) {
  return std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
}

// Rotates subspace j = (row[2j], row[2j+1]) by angle sign * position * theta_j.
// sign = -1 applies the inverse rotation (used by the backward pass).
template <std::floating_point T>
void rope_rotate_row(T* row, std::size_t head_dim, double position, double base, int sign = 1) {
  for (std::size_t j = 0; j < head_dim / 2; ++j) {
    const double angle = sign * position * rope_theta(j, head_dim, base);
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(std::sin(angle));
    const T a = row[2 * j];
    const T b = row[2 * j + 1];
    row[2 * j] = a * c - b * s;
    row[2 * j + 1] = a * s + b * c;
  }
}

// x is a (len, head_dim) row-major tensor; row i sits at positions[i].
template <std::floating_point T>
std::vector<T> rope_rotate(std::span<const T> x, std::size_t head_dim, std::span<const double> positions,
                           double base = 10000.0) {
  if (head_dim == 0 || head_dim % 2 != 0) throw std::invalid_argument("rope: head dimension must be even");
  if (x.size() != positions.size() * head_dim) throw std::invalid_argument("rope: positions do not match row count");
  std::vector<T> out(x.begin(), x.end());
  for (std::size_t i = 0; i < positions.size(); ++i) rope_rotate_row(out.data() + i * head_dim, head_dim, positions[i], base);
  return out;
}

}  // namespace demux::nn

#endif  // DEMUX_ROPE_HPP
