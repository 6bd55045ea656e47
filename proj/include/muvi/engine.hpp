#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/inference.hpp"
#include "muvi/losses.hpp"
#include "muvi/model.hpp"
#include "muvi/optimizer.hpp"
#include "muvi/pseudolabel.hpp"
#include "muvi/rng.hpp"
#include "muvi/volume.hpp"

namespace muvi {

/// Table-2 style switches; each flag maps onto one ablation row.
struct AblationFlags {
  bool use_entropy_fusion = true;   // off: fuse_mean pseudolabels
  bool use_consistency = true;      // off: lambda2 = lambda3 = 0
  bool use_source_bn_stats = true;  // off: normalize by current input stats
};

struct AdaptationConfig {
  LossWeights weights{};
  EntropyThresholds thresholds{};
  ParamScope scope = ParamScope::all_parameters;
  int epochs = 1;
  double learning_rate = 1e-3;  // 0 is the degenerate no-motion case
  double momentum = 0.9;
  double overlap = 0.5;
  ReassemblyWeighting weighting = ReassemblyWeighting::gaussian;
  AblationFlags ablation{};
  std::uint64_t seed = 0;
  bool multi_view_inference = true;  // false: final prediction from the native view only

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
    if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("overlap must be in [0, 1)");
    thresholds.validate();
  }
};

enum class AblationRow { no_source_bn, no_entropy_labels, no_consistency };

inline AdaptationConfig ablation_variant(AdaptationConfig cfg, AblationRow row) {
  switch (row) {
    case AblationRow::no_source_bn:
      cfg.ablation.use_source_bn_stats = false;
      break;
    case AblationRow::no_entropy_labels:
      cfg.ablation.use_entropy_fusion = false;
      break;
    case AblationRow::no_consistency:
      cfg.ablation.use_consistency = false;
      cfg.weights.lambda2 = 0.0;
      cfg.weights.lambda3 = 0.0;
      break;
  }
  return cfg;
}

template <typename T>
struct AdaptationResultT {
  LabelVolume prediction;
  ProbabilityVolumeT<T> probabilities;
  std::vector<LossReport> loss_trace;
  PseudoLabel pseudolabel;
  double wall_time_seconds = 0.0;
};

using AdaptationResult = AdaptationResultT<float>;

namespace detail {

/// The normalization policy actually used while adapting: the checkpoint's
/// kind, with source statistics frozen unless the ablation disables them
/// (instance norm always normalizes by the current input).
inline NormPolicy resolve_adaptation_policy(const NormPolicy& model_policy, bool use_source_stats) {
  NormPolicy p = model_policy;
  p.affine_trainable = true;
  if (p.kind == NormKind::instance_norm)
    p.stats_source = StatsSource::current_input;
  else
    p.stats_source = use_source_stats ? StatsSource::frozen_source : StatsSource::current_input;
  p.validate();
  return p;
}

/// Mean of the per-view full-volume predictions (or the native view alone).
template <typename T>
ProbabilityVolumeT<T> fused_prediction(ToyUNet<T>& model, const VolumeT<T>& vol, const InferenceConfig& icfg,
                                       bool multi_view) {
  if (!multi_view) return predict_view(model, vol, ViewPermutation::identity(), icfg);
  ProbabilityVolumeT<T> fused(vol.shape(), vol.spacing);
  Grid3<double> acc(vol.shape(), 0.0);
  for (const ViewPermutation& view : ViewPermutation::all()) {
    const ProbabilityVolumeT<T> p = predict_view(model, vol, view, icfg);
    for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(p.grid[i]);
  }
  for (std::int64_t i = 0; i < acc.size(); ++i) fused.grid[i] = static_cast<T>(acc[i] / 3.0);
  return fused;
}

}  // namespace detail

/// Unadapted reference prediction under the checkpoint's own policy (frozen
/// source statistics for batch norm). With multi_view=true this is exactly
/// the inference path the adaptation loop ends with, so a zero learning rate
/// reproduces it.
template <typename T>
AdaptationResultT<T> baseline_predict(ToyUNet<T>& model, const VolumeT<T>& vol, double overlap = 0.5,
                                      ReassemblyWeighting weighting = ReassemblyWeighting::gaussian,
                                      bool multi_view = false) {
  validate_volume(vol);
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationResultT<T> result;
  {
    ResetGuard<T> guard(model);
    model.set_policy(detail::resolve_adaptation_policy(model.policy(), true));
    model.set_train_mode(false);
    const InferenceConfig icfg{overlap, weighting};
    result.probabilities = detail::fused_prediction(model, vol, icfg, multi_view);
    result.prediction = threshold_mask(result.probabilities);
  }
  result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// One self-supervised adaptation pass on a single volume:
///   1. snapshot the model;
///   2. full-volume prediction per view under the resolved policy;
///   3. fuse an image-level pseudolabel (entropy gating or plain mean);
///   4. for each epoch, visit the patch grid in seeded-shuffled order and
///      take one SGD step per patch on the multi-view objective;
///   5. final prediction = mean over the adapted per-view predictions;
///   6. restore the snapshot (also on any exception).
template <typename T>
AdaptationResultT<T> adapt_single_image(ToyUNet<T>& model, const VolumeT<T>& vol,
                                        const AdaptationConfig& cfg) {
  cfg.validate();
  validate_volume(vol);
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationResultT<T> result;
  {
    ResetGuard<T> guard(model);
    model.set_policy(detail::resolve_adaptation_policy(model.policy(), cfg.ablation.use_source_bn_stats));
    model.set_train_mode(false);
    const InferenceConfig icfg{cfg.overlap, cfg.weighting};

    std::array<Grid3<T>, 3> view_probs;
    const auto& views = ViewPermutation::all();
    for (int v = 0; v < 3; ++v)
      view_probs[static_cast<std::size_t>(v)] =
          predict_view(model, vol, views[static_cast<std::size_t>(v)], icfg).grid;
    result.pseudolabel = cfg.ablation.use_entropy_fusion ? fuse_pseudolabel(view_probs, cfg.thresholds)
                                                         : fuse_mean(view_probs);

    PadInfo pad;
    const VolumeT<T> padded = pad_to(vol, model.patch_size(), pad);
    VolumeT<T> padded_pl;
    padded_pl.grid = Grid3<T>(padded.shape(), T(0));
    padded_pl.spacing = padded.spacing;
    {
      const Grid3<T> pl = label_to_grid<T>(result.pseudolabel.mask);
      for (int z = 0; z < pl.shape[0]; ++z)
        for (int y = 0; y < pl.shape[1]; ++y)
          for (int x = 0; x < pl.shape[2]; ++x)
            padded_pl.grid.at(z + pad.lo[0], y + pad.lo[1], x + pad.lo[2]) = pl.at(z, y, x);
    }

    const PatchGrid grid = plan_patch_grid(padded.shape(), model.patch_size(), cfg.overlap);
    const auto params = model.trainable_parameters(cfg.scope);
    SgdMomentum<T> opt(cfg.learning_rate, cfg.momentum);
    LossWeights w = cfg.weights;
    if (!cfg.ablation.use_consistency) {
      w.lambda2 = 0.0;
      w.lambda3 = 0.0;
    }
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(grid.origins.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    result.loss_trace.reserve(static_cast<std::size_t>(cfg.epochs) * order.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      rng.shuffle(order.begin(), order.end());
      for (const std::size_t idx : order) {
        const Shape3& origin = grid.origins[idx];
        const VolumeT<T> patch = extract_patch(padded, origin, grid.patch_size);
        const VolumeT<T> pl_patch = extract_patch(padded_pl, origin, grid.patch_size);
        SgdMomentum<T>::zero_grad(params);
        result.loss_trace.push_back(total_loss(model, patch.grid, pl_patch.grid, w, true));
        if (!cfg.ablation.use_consistency) {
          // The trace records the optimized objective; switched-off terms
          // contribute nothing to it.
          result.loss_trace.back().consistency = 0.0;
          result.loss_trace.back().cosine = 0.0;
        }
        opt.step(params);
      }
    }

    result.probabilities = detail::fused_prediction(model, vol, icfg, cfg.multi_view_inference);
    result.prediction = threshold_mask(result.probabilities);
  }
  result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace muvi
