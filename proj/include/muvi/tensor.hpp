#pragma once

#include <cstdint>
#include <vector>

#include "muvi/grid.hpp"

namespace muvi {

/// Channel-major feature map (C, D, H, W), x fastest.
template <typename T>
struct Tensor4 {
  int c = 0, d = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int c_, int d_, int h_, int w_, T fill = T(0))
      : c(c_), d(d_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * d_ * h_ * w_, fill) {}

  std::int64_t spatial() const { return static_cast<std::int64_t>(d) * h * w; }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  T* channel(int ci) { return data.data() + static_cast<std::int64_t>(ci) * spatial(); }
  const T* channel(int ci) const { return data.data() + static_cast<std::int64_t>(ci) * spatial(); }

  T* row(int ci, int z, int y) {
    return data.data() + ((static_cast<std::int64_t>(ci) * d + z) * h + y) * w;
  }
  const T* row(int ci, int z, int y) const {
    return data.data() + ((static_cast<std::int64_t>(ci) * d + z) * h + y) * w;
  }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  bool same_shape(const Tensor4& o) const { return c == o.c && d == o.d && h == o.h && w == o.w; }
};

template <typename T>
Tensor4<T> tensor_from_grid(const Grid3<T>& g) {
  Tensor4<T> t(1, g.shape[0], g.shape[1], g.shape[2]);
  t.data = g.data;
  return t;
}

template <typename T>
Grid3<T> grid_from_tensor(const Tensor4<T>& t, int ci = 0) {
  Grid3<T> g(Shape3{t.d, t.h, t.w});
  const T* src = t.channel(ci);
  std::copy(src, src + t.spatial(), g.data.begin());
  return g;
}

}  // namespace muvi
