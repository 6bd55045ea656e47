#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/png.hpp"
#include "muvi/volume.hpp"

namespace muvi {

namespace detail {

struct Rgb {
  std::uint8_t r, g, b;
};

inline constexpr std::array<Rgb, 6> kContourPalette{{{230, 60, 60},
                                                     {60, 200, 90},
                                                     {70, 140, 240},
                                                     {240, 200, 60},
                                                     {200, 90, 220},
                                                     {80, 220, 220}}};

/// Central slice (first axis) of a view-permuted grid as row=axis1,
/// col=axis2.
template <typename T>
std::vector<T> central_slice(const Grid3<T>& g, int& rows, int& cols) {
  const int z = g.shape[0] / 2;
  rows = g.shape[1];
  cols = g.shape[2];
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) out[static_cast<std::size_t>(y) * cols + x] = g.at(z, y, x);
  return out;
}

/// In-plane 4-neighbor boundary of a binary slice.
inline std::vector<std::uint8_t> slice_contour(const std::vector<std::uint8_t>& m, int rows, int cols) {
  std::vector<std::uint8_t> out(m.size(), 0);
  const auto at = [&](int y, int x) -> std::uint8_t {
    if (y < 0 || y >= rows || x < 0 || x >= cols) return 0;
    return m[static_cast<std::size_t>(y) * cols + x];
  };
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      if (!at(y, x)) continue;
      if (!at(y - 1, x) || !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1))
        out[static_cast<std::size_t>(y) * cols + x] = 1;
    }
  return out;
}

}  // namespace detail

/// Montage: one row per view (native, pi1, pi2), columns = plain image then
/// image + one mask contour per given mask. Deterministic layout and bytes.
inline Image render_overlay(const Volume& vol, const std::vector<LabelVolume>& masks) {
  for (const LabelVolume& m : masks)
    if (!(m.shape() == vol.shape()))
      throw ShapeMismatch("overlay mask " + to_string(m.shape()) + " vs volume " + to_string(vol.shape()));

  float lo = vol.grid.data.empty() ? 0.0f : vol.grid.data[0];
  float hi = lo;
  for (const float v : vol.grid.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi - lo > 1e-12f ? hi - lo : 1.0f;

  const int n_cols = 1 + static_cast<int>(masks.size());
  const int margin = 2;

  struct Cell {
    std::vector<float> img;
    std::vector<std::vector<std::uint8_t>> contours;
    int rows = 0, cols = 0;
  };
  std::array<Cell, 3> views;
  int cell_rows = 0, cell_cols = 0;
  for (int v = 0; v < 3; ++v) {
    const ViewPermutation& view = ViewPermutation::all()[static_cast<std::size_t>(v)];
    const Grid3<float> pg = permute_grid(vol.grid, view.axis_order);
    Cell& cell = views[static_cast<std::size_t>(v)];
    cell.img = detail::central_slice(pg, cell.rows, cell.cols);
    for (const LabelVolume& m : masks) {
      const Grid3<std::uint8_t> pm = permute_grid(m.grid, view.axis_order);
      int r = 0, c = 0;
      std::vector<std::uint8_t> slice = detail::central_slice(pm, r, c);
      cell.contours.push_back(detail::slice_contour(slice, r, c));
    }
    cell_rows = std::max(cell_rows, cell.rows);
    cell_cols = std::max(cell_cols, cell.cols);
  }

  Image img(3 * cell_rows + 4 * margin, n_cols * cell_cols + (n_cols + 1) * margin);
  for (int v = 0; v < 3; ++v) {
    const Cell& cell = views[static_cast<std::size_t>(v)];
    const int oy = margin + v * (cell_rows + margin);
    for (int col = 0; col < n_cols; ++col) {
      const int ox = margin + col * (cell_cols + margin);
      for (int y = 0; y < cell.rows; ++y)
        for (int x = 0; x < cell.cols; ++x) {
          const float val = cell.img[static_cast<std::size_t>(y) * cell.cols + x];
          const auto gray = static_cast<std::uint8_t>(
              std::clamp(255.0f * (val - lo) / span, 0.0f, 255.0f));
          img.set(oy + y, ox + x, gray, gray, gray);
        }
      if (col > 0) {
        const auto& contour = cell.contours[static_cast<std::size_t>(col - 1)];
        const detail::Rgb rgb =
            detail::kContourPalette[static_cast<std::size_t>(col - 1) % detail::kContourPalette.size()];
        for (int y = 0; y < cell.rows; ++y)
          for (int x = 0; x < cell.cols; ++x)
            if (contour[static_cast<std::size_t>(y) * cell.cols + x])
              img.set(oy + y, ox + x, rgb.r, rgb.g, rgb.b);
      }
    }
  }
  return img;
}

}  // namespace muvi
