#pragma once

#include <utility>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/losses.hpp"
#include "muvi/model.hpp"
#include "muvi/volume.hpp"

namespace muvi {

struct InferenceConfig {
  double overlap = 0.5;
  ReassemblyWeighting weighting = ReassemblyWeighting::gaussian;
};

/// Tiles the volume with the model's patch size, runs one forward per tile,
/// and blends the sigmoid outputs back with the configured weighting. Volumes
/// smaller than a patch are zero-padded symmetrically and cropped back.
template <typename T>
ProbabilityVolumeT<T> sliding_window_predict(ToyUNet<T>& model, const VolumeT<T>& vol,
                                             const InferenceConfig& cfg = {}) {
  PadInfo pad;
  const VolumeT<T> padded = pad_to(vol, model.patch_size(), pad);
  const PatchGrid grid = plan_patch_grid(padded.shape(), model.patch_size(), cfg.overlap);
  std::vector<std::pair<Shape3, ProbabilityVolumeT<T>>> patch_probs;
  patch_probs.reserve(grid.origins.size());
  for (const Shape3& origin : grid.origins) {
    const VolumeT<T> patch = extract_patch(padded, origin, grid.patch_size);
    ProbabilityVolumeT<T> prob(grid.patch_size, padded.spacing);
    prob.grid = sigmoid_grid(model.forward(patch.grid));
    patch_probs.emplace_back(origin, std::move(prob));
  }
  const ProbabilityVolumeT<T> merged = reassemble(patch_probs, padded.shape(), cfg.weighting, padded.spacing);
  ProbabilityVolumeT<T> out = crop_back(merged, pad);
  out.spacing = vol.spacing;
  return out;
}

/// Predicts under one axis permutation: rotate the volume into the view, run
/// the sliding window there, and rotate the probabilities back so the result
/// is voxel-aligned with the input.
template <typename T>
ProbabilityVolumeT<T> predict_view(ToyUNet<T>& model, const VolumeT<T>& vol, const ViewPermutation& view,
                                   const InferenceConfig& cfg = {}) {
  const VolumeT<T> rotated = permute_to_view(vol, view);
  const ProbabilityVolumeT<T> pred = sliding_window_predict(model, rotated, cfg);
  return permute_to_view(pred, inverse_view(view));
}

template <typename T>
LabelVolume threshold_mask(const ProbabilityVolumeT<T>& probs, double threshold = 0.5) {
  LabelVolume out;
  out.grid = Grid3<std::uint8_t>(probs.grid.shape, 0);
  out.spacing = probs.spacing;
  for (std::int64_t i = 0; i < probs.grid.size(); ++i)
    out.grid[i] = static_cast<double>(probs.grid[i]) > threshold ? 1 : 0;
  return out;
}

}  // namespace muvi
