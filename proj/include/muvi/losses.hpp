#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/model.hpp"
#include "muvi/volume.hpp"

namespace muvi {

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
};

/// Component values are unweighted; total carries the weighted combination.
struct LossReport {
  double total = 0.0;
  double sl = 0.0;
  double consistency = 0.0;
  double cosine = 0.0;
  int degenerate_embeddings = 0;
};

inline constexpr double kDiceSmoothDefault = 1.0;
inline constexpr double kBceClamp = 1e-7;

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Grid3<T> sigmoid_grid(const Grid3<T>& logits) {
  Grid3<T> p(logits.shape);
  for (std::int64_t i = 0; i < logits.size(); ++i) p[i] = sigmoid(logits[i]);
  return p;
}

// ---------------------------------------------------------------------------
// Dice and binary cross entropy (soft, differentiable in probs)
// ---------------------------------------------------------------------------

namespace detail {

/// Order-independent reduction: sorting first makes the result a function of
/// the value multiset alone, so permuting a grid can never change it.
inline double invariant_sum(std::vector<double>& addends) {
  std::sort(addends.begin(), addends.end());
  double acc = 0.0;
  for (double v : addends) acc += v;
  return acc;
}

}  // namespace detail

/// 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s).
template <typename T>
double dice_loss(const Grid3<T>& probs, const Grid3<T>& target, double smooth = kDiceSmoothDefault,
                 Grid3<T>* dprobs = nullptr, double grad_scale = 1.0) {
  if (!probs.same_shape(target)) throw ShapeMismatch("dice inputs differ in shape");
  const auto n = static_cast<std::size_t>(probs.size());
  std::vector<double> pt(n), p_only(n), t_only(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(probs[static_cast<std::int64_t>(i)]);
    const double t = static_cast<double>(target[static_cast<std::int64_t>(i)]);
    pt[i] = p * t;
    p_only[i] = p;
    t_only[i] = t;
  }
  const double sum_pt = detail::invariant_sum(pt);
  const double sum_p = detail::invariant_sum(p_only);
  const double sum_t = detail::invariant_sum(t_only);
  const double num = 2.0 * sum_pt + smooth;
  const double den = sum_p + sum_t + smooth;
  if (dprobs != nullptr) {
    for (std::int64_t i = 0; i < probs.size(); ++i) {
      const double t = static_cast<double>(target[i]);
      (*dprobs)[i] += static_cast<T>(grad_scale * (num - 2.0 * t * den) / (den * den));
    }
  }
  return 1.0 - num / den;
}

/// Mean voxelwise -t*ln(p) - (1-t)*ln(1-p) with p clamped to [delta, 1-delta].
template <typename T>
double bce_loss(const Grid3<T>& probs, const Grid3<T>& target, double clamp = kBceClamp,
                Grid3<T>* dprobs = nullptr, double grad_scale = 1.0) {
  if (!probs.same_shape(target)) throw ShapeMismatch("bce inputs differ in shape");
  const double n = static_cast<double>(probs.size());
  std::vector<double> addends(static_cast<std::size_t>(probs.size()));
  for (std::int64_t i = 0; i < probs.size(); ++i) {
    const double p_raw = static_cast<double>(probs[i]);
    const double p = std::clamp(p_raw, clamp, 1.0 - clamp);
    const double t = static_cast<double>(target[i]);
    addends[static_cast<std::size_t>(i)] = -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
    if (dprobs != nullptr && p_raw > clamp && p_raw < 1.0 - clamp)
      (*dprobs)[i] += static_cast<T>(grad_scale * (-t / p + (1.0 - t) / (1.0 - p)) / n);
  }
  return detail::invariant_sum(addends) / n;
}

/// Shared dice+bce objective used for supervised training and self-learning.
template <typename T>
double dice_bce_loss(const Grid3<T>& probs, const Grid3<T>& target, double smooth = kDiceSmoothDefault,
                     Grid3<T>* dprobs = nullptr, double grad_scale = 1.0) {
  return dice_loss(probs, target, smooth, dprobs, grad_scale) +
         bce_loss(probs, target, kBceClamp, dprobs, grad_scale);
}

// ---------------------------------------------------------------------------
// Cosine embedding distance
// ---------------------------------------------------------------------------

inline constexpr double kEmbeddingNormFloor = 1e-12;

/// 1 - cos(a, b); a degenerate (near-zero) embedding contributes the neutral
/// value 1 with zero gradient and bumps the counter.
template <typename T>
double cosine_distance(const std::vector<T>& a, const std::vector<T>& b, std::vector<T>* da,
                       std::vector<T>* db, double grad_scale, int* degenerate) {
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
    dot += static_cast<double>(a[i]) * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kEmbeddingNormFloor || nb < kEmbeddingNormFloor) {
    if (degenerate != nullptr) ++(*degenerate);
    return 1.0;
  }
  const double c = dot / (na * nb);
  if (da != nullptr) {
    for (std::size_t i = 0; i < a.size(); ++i)
      (*da)[i] += static_cast<T>(grad_scale * -(b[i] / (na * nb) - c * a[i] / (na * na)));
  }
  if (db != nullptr) {
    for (std::size_t i = 0; i < b.size(); ++i)
      (*db)[i] += static_cast<T>(grad_scale * -(a[i] / (na * nb) - c * b[i] / (nb * nb)));
  }
  return 1.0 - c;
}

// ---------------------------------------------------------------------------
// Multi-view objectives
// ---------------------------------------------------------------------------

namespace detail {

/// One traced forward per view plus the bookkeeping shared by the multi-view
/// losses. Views are evaluated in their own orientation; canonical-space
/// targets are permuted rather than aligning predictions back, which gives
/// the identical loss value because the voxelwise sums are permutation
/// invariant.
template <typename T>
struct MultiViewForward {
  std::array<typename ToyUNet<T>::Trace, 3> traces;
  std::array<Grid3<T>, 3> probs;

  MultiViewForward(ToyUNet<T>& model, const Grid3<T>& patch) {
    const auto& views = ViewPermutation::all();
    for (int v = 0; v < 3; ++v) {
      const Grid3<T> vp = permute_grid(patch, views[static_cast<std::size_t>(v)].axis_order);
      traces[static_cast<std::size_t>(v)] = model.forward_trace(vp);
      probs[static_cast<std::size_t>(v)] = sigmoid_grid(traces[static_cast<std::size_t>(v)].logits);
    }
  }
};

template <typename T>
void chain_probs_to_logits(const Grid3<T>& probs, Grid3<T>& dprobs) {
  for (std::int64_t i = 0; i < probs.size(); ++i) dprobs[i] *= probs[i] * (T(1) - probs[i]);
}

}  // namespace detail

/// Computes the weighted multi-view objective on one cubic patch. When grad
/// is true, parameter gradients are accumulated into the model.
///
/// sl          sum over all three views of dice+bce against the pseudolabel
/// consistency sum over the permuted views of dice+bce against the original
///             view's prediction (gradient-stopped soft target)
/// cosine      1 - cos between the original and each permuted embedding
template <typename T>
LossReport total_loss(ToyUNet<T>& model, const Grid3<T>& patch, const Grid3<T>& pseudolabel_patch,
                      const LossWeights& w, bool grad = false, double dice_smooth = kDiceSmoothDefault) {
  if (patch.shape[0] != patch.shape[1] || patch.shape[1] != patch.shape[2])
    throw ShapeMismatch("multi-view losses require a cubic patch");
  if (!(patch.shape == pseudolabel_patch.shape)) throw ShapeMismatch("pseudolabel patch shape differs");
  const auto& views = ViewPermutation::all();
  detail::MultiViewForward<T> fwd(model, patch);
  LossReport report;
  std::array<Grid3<T>, 3> dprobs;
  std::array<std::vector<T>, 3> dembed;
  if (grad) {
    for (int v = 0; v < 3; ++v) {
      dprobs[static_cast<std::size_t>(v)] = Grid3<T>(fwd.probs[static_cast<std::size_t>(v)].shape, T(0));
      dembed[static_cast<std::size_t>(v)].assign(fwd.traces[static_cast<std::size_t>(v)].embedding.size(), T(0));
    }
  }
  // Self-learning: every view against the view-aligned pseudolabel.
  for (int v = 0; v < 3; ++v) {
    const Grid3<T> target = permute_grid(pseudolabel_patch, views[static_cast<std::size_t>(v)].axis_order);
    Grid3<T>* dp = grad ? &dprobs[static_cast<std::size_t>(v)] : nullptr;
    report.sl += dice_loss(fwd.probs[static_cast<std::size_t>(v)], target, dice_smooth, dp, w.lambda1);
    report.sl += bce_loss(fwd.probs[static_cast<std::size_t>(v)], target, kBceClamp, dp, w.lambda1);
  }
  // Cross-view prediction consistency against the stop-gradient original view.
  for (int v = 1; v < 3; ++v) {
    const Grid3<T> target = permute_grid(fwd.probs[0], views[static_cast<std::size_t>(v)].axis_order);
    Grid3<T>* dp = grad ? &dprobs[static_cast<std::size_t>(v)] : nullptr;
    report.consistency += dice_loss(fwd.probs[static_cast<std::size_t>(v)], target, dice_smooth, dp, w.lambda2);
    report.consistency += bce_loss(fwd.probs[static_cast<std::size_t>(v)], target, kBceClamp, dp, w.lambda2);
  }
  // Feature embedding alignment.
  for (int v = 1; v < 3; ++v) {
    std::vector<T>* da = grad ? &dembed[0] : nullptr;
    std::vector<T>* db = grad ? &dembed[static_cast<std::size_t>(v)] : nullptr;
    report.cosine += cosine_distance(fwd.traces[0].embedding, fwd.traces[static_cast<std::size_t>(v)].embedding,
                                     da, db, w.lambda3, &report.degenerate_embeddings);
  }
  report.total = w.lambda1 * report.sl + w.lambda2 * report.consistency + w.lambda3 * report.cosine;
  if (grad) {
    for (int v = 0; v < 3; ++v) {
      detail::chain_probs_to_logits(fwd.probs[static_cast<std::size_t>(v)], dprobs[static_cast<std::size_t>(v)]);
      model.backward(fwd.traces[static_cast<std::size_t>(v)], &dprobs[static_cast<std::size_t>(v)],
                     &dembed[static_cast<std::size_t>(v)]);
    }
  }
  return report;
}

/// Unweighted self-learning component alone.
template <typename T>
double self_learning_loss(ToyUNet<T>& model, const Grid3<T>& patch, const Grid3<T>& pseudolabel_patch,
                          double dice_smooth = kDiceSmoothDefault) {
  LossWeights w{1.0, 0.0, 0.0};
  return total_loss(model, patch, pseudolabel_patch, w, false, dice_smooth).sl;
}

/// Unweighted cross-view prediction consistency alone.
template <typename T>
double view_consistency_loss(ToyUNet<T>& model, const Grid3<T>& patch,
                             double dice_smooth = kDiceSmoothDefault) {
  const Grid3<T> dummy(patch.shape, T(0));
  LossWeights w{0.0, 1.0, 0.0};
  return total_loss(model, patch, dummy, w, false, dice_smooth).consistency;
}

/// Unweighted embedding cosine component alone; in [0, 4].
template <typename T>
double cosine_feature_loss(ToyUNet<T>& model, const Grid3<T>& patch) {
  const Grid3<T> dummy(patch.shape, T(0));
  LossWeights w{0.0, 0.0, 1.0};
  return total_loss(model, patch, dummy, w, false).cosine;
}

}  // namespace muvi
