#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "muvi/errors.hpp"

namespace muvi {

/// Axis convention throughout: index 0 = depth (z), 1 = height (y), 2 = width (x).
using Shape3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

inline std::string to_string(const Shape3& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + ")";
}

inline std::int64_t voxel_count(const Shape3& s) {
  return static_cast<std::int64_t>(s[0]) * s[1] * s[2];
}

/// Dense 3D scalar grid, x fastest, contiguous storage.
template <typename T>
struct Grid3 {
  Shape3 shape{0, 0, 0};
  std::vector<T> data;

  Grid3() = default;
  explicit Grid3(const Shape3& s, T fill = T(0))
      : shape(s), data(static_cast<std::size_t>(voxel_count(s)), fill) {}

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  std::int64_t index(int z, int y, int x) const {
    return (static_cast<std::int64_t>(z) * shape[1] + y) * shape[2] + x;
  }

  T& at(int z, int y, int x) { return data[static_cast<std::size_t>(index(z, y, x))]; }
  const T& at(int z, int y, int x) const { return data[static_cast<std::size_t>(index(z, y, x))]; }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  bool in_bounds(int z, int y, int x) const {
    return z >= 0 && z < shape[0] && y >= 0 && y < shape[1] && x >= 0 && x < shape[2];
  }

  bool same_shape(const Grid3& other) const { return shape == other.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Grid3<U> cast() const {
    Grid3<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
bool all_finite(const Grid3<T>& g) {
  for (const T& v : g.data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

}  // namespace muvi
