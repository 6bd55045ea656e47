#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/grid.hpp"

namespace muvi {

/// Scalar 3D image with per-axis physical voxel size in mm.
template <typename T>
struct VolumeT {
  Grid3<T> grid;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  VolumeT() = default;
  VolumeT(const Shape3& shape, Vec3 sp, T fill = T(0)) : grid(shape, fill), spacing(sp) {}

  const Shape3& shape() const { return grid.shape; }
};

using Volume = VolumeT<float>;

/// Binary voxel mask aligned with a volume of the same shape.
struct LabelVolume {
  Grid3<std::uint8_t> grid;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  LabelVolume() = default;
  LabelVolume(const Shape3& shape, Vec3 sp, std::uint8_t fill = 0) : grid(shape, fill), spacing(sp) {}

  const Shape3& shape() const { return grid.shape; }

  std::int64_t foreground_count() const {
    std::int64_t n = 0;
    for (auto v : grid.data) n += (v != 0);
    return n;
  }
};

/// Per-voxel foreground probabilities in [0,1].
template <typename T>
struct ProbabilityVolumeT {
  Grid3<T> grid;
  Vec3 spacing{1.0, 1.0, 1.0};

  ProbabilityVolumeT() = default;
  ProbabilityVolumeT(const Shape3& shape, Vec3 sp, T fill = T(0)) : grid(shape, fill), spacing(sp) {}

  const Shape3& shape() const { return grid.shape; }
};

using ProbabilityVolume = ProbabilityVolumeT<float>;

template <typename T>
void validate_volume(const VolumeT<T>& vol) {
  for (int a = 0; a < 3; ++a) {
    if (vol.shape()[a] < 1) throw DomainError("volume extent < 1 on axis " + std::to_string(a));
    if (!(vol.spacing[a] > 0.0)) throw DomainError("non-positive spacing on axis " + std::to_string(a));
  }
  if (!all_finite(vol.grid)) throw DomainError("volume contains NaN or Inf");
}

// ---------------------------------------------------------------------------
// View permutations
// ---------------------------------------------------------------------------

enum class ViewId { identity, pi1, pi2 };

inline const char* view_name(ViewId id) {
  switch (id) {
    case ViewId::identity: return "identity";
    case ViewId::pi1: return "pi1";
    case ViewId::pi2: return "pi2";
  }
  return "?";
}

/// Invertible axis reordering. Output axis i reads input axis axis_order[i];
/// the three instances below expose the axial, coronal, and sagittal slice
/// orientations of a (depth, height, width) grid.
struct ViewPermutation {
  ViewId id = ViewId::identity;
  std::array<int, 3> axis_order{0, 1, 2};

  static ViewPermutation identity() { return {ViewId::identity, {0, 1, 2}}; }
  static ViewPermutation pi1() { return {ViewId::pi1, {1, 2, 0}}; }
  static ViewPermutation pi2() { return {ViewId::pi2, {2, 0, 1}}; }

  static const std::array<ViewPermutation, 3>& all() {
    static const std::array<ViewPermutation, 3> views{identity(), pi1(), pi2()};
    return views;
  }

  bool is_identity() const { return axis_order == std::array<int, 3>{0, 1, 2}; }
};

inline ViewPermutation inverse_view(const ViewPermutation& view) {
  ViewPermutation inv;
  inv.id = view.id;
  for (int i = 0; i < 3; ++i) inv.axis_order[view.axis_order[i]] = i;
  return inv;
}

template <typename T>
Grid3<T> permute_grid(const Grid3<T>& in, const std::array<int, 3>& order) {
  if (order == std::array<int, 3>{0, 1, 2}) return in;
  const Shape3 out_shape{in.shape[order[0]], in.shape[order[1]], in.shape[order[2]]};
  Grid3<T> out(out_shape);
  // out[o0,o1,o2] = in[j] with j[order[k]] = o_k.
  std::array<int, 3> inv{};
  for (int i = 0; i < 3; ++i) inv[order[i]] = i;
  std::int64_t pos = 0;
  std::array<int, 3> o{};
  std::array<int, 3> j{};
  for (o[0] = 0; o[0] < out_shape[0]; ++o[0]) {
    for (o[1] = 0; o[1] < out_shape[1]; ++o[1]) {
      for (o[2] = 0; o[2] < out_shape[2]; ++o[2], ++pos) {
        j[0] = o[inv[0]];
        j[1] = o[inv[1]];
        j[2] = o[inv[2]];
        out[pos] = in.at(j[0], j[1], j[2]);
      }
    }
  }
  return out;
}

template <typename T>
VolumeT<T> permute_to_view(const VolumeT<T>& vol, const ViewPermutation& view) {
  VolumeT<T> out;
  out.grid = permute_grid(vol.grid, view.axis_order);
  for (int i = 0; i < 3; ++i) {
    out.spacing[i] = vol.spacing[view.axis_order[i]];
    out.origin[i] = vol.origin[view.axis_order[i]];
  }
  return out;
}

template <typename T>
ProbabilityVolumeT<T> permute_to_view(const ProbabilityVolumeT<T>& vol, const ViewPermutation& view) {
  ProbabilityVolumeT<T> out;
  out.grid = permute_grid(vol.grid, view.axis_order);
  for (int i = 0; i < 3; ++i) out.spacing[i] = vol.spacing[view.axis_order[i]];
  return out;
}

inline LabelVolume permute_to_view(const LabelVolume& vol, const ViewPermutation& view) {
  LabelVolume out;
  out.grid = permute_grid(vol.grid, view.axis_order);
  for (int i = 0; i < 3; ++i) {
    out.spacing[i] = vol.spacing[view.axis_order[i]];
    out.origin[i] = vol.origin[view.axis_order[i]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch grids
// ---------------------------------------------------------------------------

/// Tiling of a volume into overlapping patches with full coverage.
struct PatchGrid {
  Shape3 patch_size{0, 0, 0};
  Shape3 step{0, 0, 0};
  std::vector<Shape3> origins;

  bool cubic() const { return patch_size[0] == patch_size[1] && patch_size[1] == patch_size[2]; }
};

/// Per-axis origins 0, step, 2*step, ... with the final origin clamped to
/// shape - patch; step = floor(patch * (1 - overlap)), minimum 1.
inline PatchGrid plan_patch_grid(const Shape3& shape, const Shape3& patch_size, double overlap_fraction) {
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
    throw ConfigError("overlap fraction must be in [0,1)");
  for (int a = 0; a < 3; ++a) {
    if (patch_size[a] < 1) throw ConfigError("patch size must be >= 1 per axis");
    if (patch_size[a] > shape[a])
      throw PatchTooLarge("patch " + to_string(patch_size) + " exceeds shape " + to_string(shape));
  }
  PatchGrid grid;
  grid.patch_size = patch_size;
  std::array<std::vector<int>, 3> axis_origins;
  for (int a = 0; a < 3; ++a) {
    const int step = std::max(1, static_cast<int>(std::floor(patch_size[a] * (1.0 - overlap_fraction))));
    grid.step[a] = step;
    const int last = shape[a] - patch_size[a];
    int pos = 0;
    while (true) {
      axis_origins[a].push_back(std::min(pos, last));
      if (pos >= last) break;
      pos += step;
    }
    // The clamp may duplicate the final origin; keep origins strictly increasing.
    auto& v = axis_origins[a];
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  for (int z : axis_origins[0])
    for (int y : axis_origins[1])
      for (int x : axis_origins[2]) grid.origins.push_back({z, y, x});
  return grid;
}

template <typename T>
VolumeT<T> extract_patch(const VolumeT<T>& vol, const Shape3& origin, const Shape3& patch_size) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || origin[a] + patch_size[a] > vol.shape()[a])
      throw OutOfBounds("patch origin " + to_string(origin) + " size " + to_string(patch_size) +
                        " outside shape " + to_string(vol.shape()));
  }
  VolumeT<T> out(patch_size, vol.spacing);
  out.origin = vol.origin;
  for (int z = 0; z < patch_size[0]; ++z)
    for (int y = 0; y < patch_size[1]; ++y) {
      const T* src = &vol.grid.at(origin[0] + z, origin[1] + y, origin[2]);
      T* dst = &out.grid.at(z, y, 0);
      std::copy(src, src + patch_size[2], dst);
    }
  return out;
}

inline LabelVolume extract_patch(const LabelVolume& vol, const Shape3& origin, const Shape3& patch_size) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || origin[a] + patch_size[a] > vol.shape()[a])
      throw OutOfBounds("patch origin " + to_string(origin) + " size " + to_string(patch_size) +
                        " outside shape " + to_string(vol.shape()));
  }
  LabelVolume out(patch_size, vol.spacing);
  for (int z = 0; z < patch_size[0]; ++z)
    for (int y = 0; y < patch_size[1]; ++y) {
      const std::uint8_t* src = &vol.grid.at(origin[0] + z, origin[1] + y, origin[2]);
      std::copy(src, src + patch_size[2], &out.grid.at(z, y, 0));
    }
  return out;
}

enum class ReassemblyWeighting { uniform, gaussian };

/// Blending weight of a voxel at patch-local position, gaussian profile with
/// per-axis std = patch/8, floored so border voxels keep nonzero weight.
inline double reassembly_weight(ReassemblyWeighting weighting, const Shape3& patch_size, int z, int y, int x) {
  if (weighting == ReassemblyWeighting::uniform) return 1.0;
  double e = 0.0;
  const std::array<int, 3> pos{z, y, x};
  for (int a = 0; a < 3; ++a) {
    const double sigma = patch_size[a] / 8.0;
    const double d = pos[a] - (patch_size[a] - 1) / 2.0;
    e += (d * d) / (2.0 * sigma * sigma);
  }
  return std::max(std::exp(-e), 1e-3);
}

/// Weighted per-voxel average of overlapping patch probabilities.
template <typename T>
ProbabilityVolumeT<T> reassemble(const std::vector<std::pair<Shape3, ProbabilityVolumeT<T>>>& patch_probs,
                                 const Shape3& shape, ReassemblyWeighting weighting,
                                 Vec3 spacing = {1.0, 1.0, 1.0}) {
  Grid3<double> acc(shape, 0.0);
  Grid3<double> wsum(shape, 0.0);
  for (const auto& [origin, patch] : patch_probs) {
    const Shape3& ps = patch.shape();
    for (int a = 0; a < 3; ++a) {
      if (origin[a] < 0 || origin[a] + ps[a] > shape[a])
        throw OutOfBounds("patch at " + to_string(origin) + " outside target shape " + to_string(shape));
    }
    for (int z = 0; z < ps[0]; ++z)
      for (int y = 0; y < ps[1]; ++y)
        for (int x = 0; x < ps[2]; ++x) {
          const double w = reassembly_weight(weighting, ps, z, y, x);
          const std::int64_t i = acc.index(origin[0] + z, origin[1] + y, origin[2] + x);
          acc[i] += w * static_cast<double>(patch.grid.at(z, y, x));
          wsum[i] += w;
        }
  }
  ProbabilityVolumeT<T> out(shape, spacing);
  for (std::int64_t i = 0; i < acc.size(); ++i) {
    if (wsum[i] <= 0.0) throw CoverageGap("voxel " + std::to_string(i) + " not covered by any patch");
    out.grid[i] = static_cast<T>(std::clamp(acc[i] / wsum[i], 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

enum class ResampleMode { trilinear, nearest };

inline Shape3 resampled_shape(const Shape3& shape, const Vec3& spacing, const Vec3& target_spacing) {
  Shape3 out{};
  for (int a = 0; a < 3; ++a) {
    if (!(target_spacing[a] > 0.0)) throw ConfigError("target spacing must be > 0");
    out[a] = std::max(1, static_cast<int>(std::llround(shape[a] * spacing[a] / target_spacing[a])));
  }
  return out;
}

/// Voxel-center resampling; identical spacing maps grid points onto themselves.
template <typename T>
VolumeT<T> resample(const VolumeT<T>& vol, const Vec3& target_spacing, ResampleMode mode) {
  const Shape3 out_shape = resampled_shape(vol.shape(), vol.spacing, target_spacing);
  VolumeT<T> out(out_shape, target_spacing);
  out.origin = vol.origin;
  const Shape3& in_shape = vol.shape();
  for (int z = 0; z < out_shape[0]; ++z)
    for (int y = 0; y < out_shape[1]; ++y)
      for (int x = 0; x < out_shape[2]; ++x) {
        Vec3 src{};
        const std::array<int, 3> oi{z, y, x};
        for (int a = 0; a < 3; ++a)
          src[a] = (oi[a] + 0.5) * target_spacing[a] / vol.spacing[a] - 0.5;
        if (mode == ResampleMode::nearest) {
          std::array<int, 3> ni{};
          for (int a = 0; a < 3; ++a)
            ni[a] = std::clamp(static_cast<int>(std::llround(src[a])), 0, in_shape[a] - 1);
          out.grid.at(z, y, x) = vol.grid.at(ni[0], ni[1], ni[2]);
        } else {
          std::array<int, 3> i0{}, i1{};
          Vec3 f{};
          for (int a = 0; a < 3; ++a) {
            const double c = std::clamp(src[a], 0.0, static_cast<double>(in_shape[a] - 1));
            i0[a] = static_cast<int>(std::floor(c));
            i1[a] = std::min(i0[a] + 1, in_shape[a] - 1);
            f[a] = c - i0[a];
          }
          double v = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double w = (dz ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dx ? f[2] : 1.0 - f[2]);
                if (w == 0.0) continue;
                v += w * static_cast<double>(vol.grid.at(dz ? i1[0] : i0[0], dy ? i1[1] : i0[1], dx ? i1[2] : i0[2]));
              }
          out.grid.at(z, y, x) = static_cast<T>(v);
        }
      }
  return out;
}

/// Nearest-neighbour resampling of a binary mask.
inline LabelVolume resample_label(const LabelVolume& mask, const Vec3& target_spacing) {
  VolumeT<float> tmp;
  tmp.grid = mask.grid.cast<float>();
  tmp.spacing = mask.spacing;
  const VolumeT<float> res = resample(tmp, target_spacing, ResampleMode::nearest);
  LabelVolume out(res.shape(), target_spacing);
  for (std::int64_t i = 0; i < res.grid.size(); ++i) out.grid[i] = res.grid[i] > 0.5f ? 1 : 0;
  return out;
}

/// Nearest resampling of a mask onto an explicit target grid (shape + spacing),
/// used to undo an isotropic-resample step exactly.
inline LabelVolume resample_label_to(const LabelVolume& mask, const Shape3& target_shape, const Vec3& target_spacing) {
  LabelVolume out(target_shape, target_spacing);
  const Shape3& in_shape = mask.shape();
  for (int z = 0; z < target_shape[0]; ++z)
    for (int y = 0; y < target_shape[1]; ++y)
      for (int x = 0; x < target_shape[2]; ++x) {
        const std::array<int, 3> oi{z, y, x};
        std::array<int, 3> ni{};
        for (int a = 0; a < 3; ++a) {
          const double src = (oi[a] + 0.5) * target_spacing[a] / mask.spacing[a] - 0.5;
          ni[a] = std::clamp(static_cast<int>(std::llround(src)), 0, in_shape[a] - 1);
        }
        out.grid.at(z, y, x) = mask.grid.at(ni[0], ni[1], ni[2]);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Padding
// ---------------------------------------------------------------------------

/// Symmetric zero-padding bookkeeping so outputs can be cropped back.
struct PadInfo {
  Shape3 lo{0, 0, 0};
  Shape3 original{0, 0, 0};
};

template <typename T>
VolumeT<T> pad_to(const VolumeT<T>& vol, const Shape3& min_shape, PadInfo& info) {
  info.original = vol.shape();
  Shape3 out_shape{};
  for (int a = 0; a < 3; ++a) {
    out_shape[a] = std::max(vol.shape()[a], min_shape[a]);
    info.lo[a] = (out_shape[a] - vol.shape()[a]) / 2;
  }
  if (out_shape == vol.shape()) return vol;
  VolumeT<T> out(out_shape, vol.spacing, T(0));
  out.origin = vol.origin;
  for (int z = 0; z < vol.shape()[0]; ++z)
    for (int y = 0; y < vol.shape()[1]; ++y) {
      const T* src = &vol.grid.at(z, y, 0);
      std::copy(src, src + vol.shape()[2], &out.grid.at(info.lo[0] + z, info.lo[1] + y, info.lo[2]));
    }
  return out;
}

template <typename T>
ProbabilityVolumeT<T> crop_back(const ProbabilityVolumeT<T>& vol, const PadInfo& info) {
  if (vol.shape() == info.original) return vol;
  ProbabilityVolumeT<T> out(info.original, vol.spacing);
  for (int z = 0; z < info.original[0]; ++z)
    for (int y = 0; y < info.original[1]; ++y) {
      const T* src = &vol.grid.at(info.lo[0] + z, info.lo[1] + y, info.lo[2]);
      std::copy(src, src + info.original[2], &out.grid.at(z, y, 0));
    }
  return out;
}

}  // namespace muvi
