#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "muvi/errors.hpp"
#include "muvi/grid.hpp"

namespace muvi {

/// Shannon entropy of a Bernoulli probability, in bits. Exactly 0 at the
/// endpoints (0*log 0 := 0) and maximal (1) at 0.5.
inline double binary_entropy(double z) {
  if (z < 0.0 || z > 1.0) throw DomainError("probability " + std::to_string(z) + " outside [0, 1]");
  if (z == 0.0 || z == 1.0) return 0.0;
  return -z * std::log2(z) - (1.0 - z) * std::log2(1.0 - z);
}

/// Per-view entropy acceptance thresholds, indexed by view (0 = original
/// orientation, 1 and 2 = the cyclic permutations).
struct EntropyThresholds {
  std::array<double, 3> tau{0.4, 0.2, 0.2};

  void validate() const {
    for (double t : tau)
      if (!(t >= 0.1 && t <= 0.6))
        throw DomainError("entropy threshold " + std::to_string(t) + " outside [0.1, 0.6]");
    if (tau[0] < tau[1] || tau[0] < tau[2])
      throw DomainError("native-view threshold must be >= the permuted views'");
  }
};

struct PseudoLabel {
  Grid3<std::uint8_t> mask;      // 1 where some confident view votes foreground
  Grid3<std::uint8_t> accepted;  // 1 where at least one view is confident
  std::int64_t accepted_count = 0;
  std::int64_t foreground_count = 0;
};

/// Union fusion: a voxel is accepted when any view's probability has entropy
/// below that view's threshold, and labeled foreground when any such
/// confident view also predicts > 0.5. All three probability grids must be
/// aligned to the original orientation.
template <typename T>
PseudoLabel fuse_pseudolabel(const std::array<Grid3<T>, 3>& view_probs,
                             const EntropyThresholds& thresholds) {
  thresholds.validate();
  for (int v = 1; v < 3; ++v)
    if (!view_probs[0].same_shape(view_probs[static_cast<std::size_t>(v)]))
      throw ShapeMismatch("view probability grids differ in shape");
  PseudoLabel out;
  out.mask = Grid3<std::uint8_t>(view_probs[0].shape, 0);
  out.accepted = Grid3<std::uint8_t>(view_probs[0].shape, 0);
  for (std::int64_t i = 0; i < view_probs[0].size(); ++i) {
    bool any_confident = false;
    bool any_fg = false;
    for (int v = 0; v < 3; ++v) {
      const double p = static_cast<double>(view_probs[static_cast<std::size_t>(v)][i]);
      if (binary_entropy(p) < thresholds.tau[static_cast<std::size_t>(v)]) {
        any_confident = true;
        if (p > 0.5) any_fg = true;
      }
    }
    if (any_confident) {
      out.accepted[i] = 1;
      ++out.accepted_count;
      if (any_fg) {
        out.mask[i] = 1;
        ++out.foreground_count;
      }
    }
  }
  return out;
}

/// Ablation fusion: plain mean of the three aligned probabilities thresholded
/// at 0.5; every voxel is accepted.
template <typename T>
PseudoLabel fuse_mean(const std::array<Grid3<T>, 3>& view_probs) {
  for (int v = 1; v < 3; ++v)
    if (!view_probs[0].same_shape(view_probs[static_cast<std::size_t>(v)]))
      throw ShapeMismatch("view probability grids differ in shape");
  PseudoLabel out;
  out.mask = Grid3<std::uint8_t>(view_probs[0].shape, 0);
  out.accepted = Grid3<std::uint8_t>(view_probs[0].shape, 1);
  out.accepted_count = view_probs[0].size();
  for (std::int64_t i = 0; i < view_probs[0].size(); ++i) {
    const double mean = (static_cast<double>(view_probs[0][i]) + view_probs[1][i] + view_probs[2][i]) / 3.0;
    if (mean > 0.5) {
      out.mask[i] = 1;
      ++out.foreground_count;
    }
  }
  return out;
}

template <typename T>
Grid3<T> label_to_grid(const Grid3<std::uint8_t>& mask) {
  Grid3<T> out(mask.shape);
  for (std::int64_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? T(1) : T(0);
  return out;
}

}  // namespace muvi
