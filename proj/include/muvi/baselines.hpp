#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "muvi/engine.hpp"
#include "muvi/errors.hpp"
#include "muvi/inference.hpp"
#include "muvi/model.hpp"
#include "muvi/optimizer.hpp"
#include "muvi/pseudolabel.hpp"

namespace muvi {

namespace detail {

template <typename T>
void require_batch_norm(const ToyUNet<T>& model, const char* method) {
  if (model.policy().kind != NormKind::batch_norm)
    throw NormUnsupported(std::string(method) + " requires batch normalization");
}

/// Mean voxelwise Bernoulli entropy in nats of a probability grid; optional
/// gradient w.r.t. the probabilities. Logs are clamped; the sigmoid-chain
/// factor still drives the gradient to zero at saturation.
template <typename T>
double entropy_objective(const Grid3<T>& probs, Grid3<T>* dprobs) {
  const double n = static_cast<double>(probs.size());
  double acc = 0.0;
  for (std::int64_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs[i]), 1e-12, 1.0 - 1e-12);
    acc += -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
    if (dprobs != nullptr) (*dprobs)[i] += static_cast<T>(std::log((1.0 - p) / p) / n);
  }
  return acc / n;
}

template <typename T>
Grid3<T> flip_grid(const Grid3<T>& g, int axis) {
  Grid3<T> out(g.shape);
  for (int z = 0; z < g.shape[0]; ++z)
    for (int y = 0; y < g.shape[1]; ++y)
      for (int x = 0; x < g.shape[2]; ++x) {
        const int fz = axis == 0 ? g.shape[0] - 1 - z : z;
        const int fy = axis == 1 ? g.shape[1] - 1 - y : y;
        const int fx = axis == 2 ? g.shape[2] - 1 - x : x;
        out.at(z, y, x) = g.at(fz, fy, fx);
      }
  return out;
}

/// Collects per-channel input moments of every norm layer over a
/// non-overlapping patch cover of the volume, normalizing with frozen source
/// statistics, then returns the layers' collected (mean, var).
template <typename T>
std::vector<std::pair<std::vector<double>, std::vector<double>>> collect_volume_stats(
    ToyUNet<T>& model, const VolumeT<T>& vol) {
  PadInfo pad;
  const VolumeT<T> padded = pad_to(vol, model.patch_size(), pad);
  const PatchGrid grid = plan_patch_grid(padded.shape(), model.patch_size(), 0.0);
  model.set_collect_stats(true);
  for (const Shape3& origin : grid.origins)
    (void)model.forward(extract_patch(padded, origin, grid.patch_size).grid);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> stats;
  for (NormLayer<T>* nl : model.norm_layers()) {
    std::vector<double> mean, var;
    nl->collected_stats(mean, var);
    stats.emplace_back(std::move(mean), std::move(var));
  }
  model.set_collect_stats(false);
  return stats;
}

/// Overwrites every norm layer's stored statistics with the rho-interpolation
/// between its snapshot values and the collected target moments.
template <typename T>
void blend_layer_stats(ToyUNet<T>& model, const ModelState<T>& source_state,
                       const std::vector<std::pair<std::vector<double>, std::vector<double>>>& target,
                       double rho) {
  std::vector<NormLayer<T>*> layers = model.norm_layers();
  std::size_t bi = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const std::vector<T>& src_mean = source_state.buffers[bi++].second;
    const std::vector<T>& src_var = source_state.buffers[bi++].second;
    NormLayer<T>& nl = *layers[li];
    for (std::size_t c = 0; c < nl.running_mean.size(); ++c) {
      nl.running_mean[c] = static_cast<T>((1.0 - rho) * src_mean[c] + rho * target[li].first[c]);
      nl.running_var[c] = static_cast<T>((1.0 - rho) * src_var[c] + rho * target[li].second[c]);
    }
  }
}

template <typename T>
double elapsed_since(const T& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PTN: normalize by current-input statistics, no learning
// ---------------------------------------------------------------------------

struct PtnConfig {
  double overlap = 0.5;
  ReassemblyWeighting weighting = ReassemblyWeighting::gaussian;
};

template <typename T>
AdaptationResultT<T> ptn_predict(ToyUNet<T>& model, const VolumeT<T>& vol, const PtnConfig& cfg = {}) {
  detail::require_batch_norm(model, "ptn");
  validate_volume(vol);
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationResultT<T> result;
  {
    ResetGuard<T> guard(model);
    model.set_policy({NormKind::batch_norm, StatsSource::current_input, true});
    model.set_train_mode(false);
    result.probabilities =
        predict_view(model, vol, ViewPermutation::identity(), {cfg.overlap, cfg.weighting});
    result.prediction = threshold_mask(result.probabilities);
  }
  result.wall_time_seconds = detail::elapsed_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// Tent: current-input statistics + entropy minimization on gamma/beta
// ---------------------------------------------------------------------------

struct TentConfig {
  double lr = 1e-3;
  int steps_per_patch = 1;
  double momentum = 0.9;
  double overlap = 0.5;
  ReassemblyWeighting weighting = ReassemblyWeighting::gaussian;
};

template <typename T>
AdaptationResultT<T> tent_adapt(ToyUNet<T>& model, const VolumeT<T>& vol, const TentConfig& cfg = {}) {
  detail::require_batch_norm(model, "tent");
  validate_volume(vol);
  if (cfg.steps_per_patch < 1) throw ConfigError("steps_per_patch must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationResultT<T> result;
  {
    ResetGuard<T> guard(model);
    model.set_policy({NormKind::batch_norm, StatsSource::current_input, true});
    model.set_train_mode(false);
    PadInfo pad;
    const VolumeT<T> padded = pad_to(vol, model.patch_size(), pad);
    const PatchGrid grid = plan_patch_grid(padded.shape(), model.patch_size(), cfg.overlap);
    const auto params = model.trainable_parameters(ParamScope::norm_affine_only);
    SgdMomentum<T> opt(cfg.lr, cfg.momentum);
    for (const Shape3& origin : grid.origins) {
      const VolumeT<T> patch = extract_patch(padded, origin, grid.patch_size);
      for (int s = 0; s < cfg.steps_per_patch; ++s) {
        SgdMomentum<T>::zero_grad(params);
        auto trace = model.forward_trace(patch.grid);
        const Grid3<T> probs = sigmoid_grid(trace.logits);
        Grid3<T> dprobs(probs.shape, T(0));
        LossReport rep;
        rep.total = detail::entropy_objective(probs, &dprobs);
        detail::chain_probs_to_logits(probs, dprobs);
        model.backward(trace, &dprobs, nullptr);
        opt.step(params);
        result.loss_trace.push_back(rep);
      }
    }
    result.probabilities =
        predict_view(model, vol, ViewPermutation::identity(), {cfg.overlap, cfg.weighting});
    result.prediction = threshold_mask(result.probabilities);
  }
  result.wall_time_seconds = detail::elapsed_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// BNAdapt: blend source and whole-volume target statistics
// ---------------------------------------------------------------------------

struct BnAdaptConfig {
  double rho = 0.1;
  double overlap = 0.5;
  ReassemblyWeighting weighting = ReassemblyWeighting::gaussian;
};

template <typename T>
AdaptationResultT<T> bnadapt_predict(ToyUNet<T>& model, const VolumeT<T>& vol, const BnAdaptConfig& cfg = {}) {
  detail::require_batch_norm(model, "bnadapt");
  validate_volume(vol);
  if (cfg.rho < 0.0 || cfg.rho > 1.0) throw ConfigError("rho must be in [0, 1]");
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationResultT<T> result;
  {
    ResetGuard<T> guard(model);
    model.set_policy({NormKind::batch_norm, StatsSource::frozen_source, true});
    model.set_train_mode(false);
    const auto target = detail::collect_volume_stats(model, vol);
    detail::blend_layer_stats(model, guard.state(), target, cfg.rho);
    result.probabilities =
        predict_view(model, vol, ViewPermutation::identity(), {cfg.overlap, cfg.weighting});
    result.prediction = threshold_mask(result.probabilities);
  }
  result.wall_time_seconds = detail::elapsed_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// InTent: entropy-weighted ensemble over interpolated statistics
// ---------------------------------------------------------------------------

struct InTentConfig {
  std::vector<double> alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  double temperature = 1.0;
  double overlap = 0.5;
  ReassemblyWeighting weighting = ReassemblyWeighting::gaussian;
};

template <typename T>
AdaptationResultT<T> intent_predict(ToyUNet<T>& model, const VolumeT<T>& vol, const InTentConfig& cfg = {}) {
  detail::require_batch_norm(model, "intent");
  validate_volume(vol);
  if (cfg.alphas.empty()) throw ConfigError("alphas must be nonempty");
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  for (double a : cfg.alphas)
    if (a < 0.0 || a > 1.0) throw ConfigError("alpha must be in [0, 1]");
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationResultT<T> result;
  {
    ResetGuard<T> guard(model);
    model.set_policy({NormKind::batch_norm, StatsSource::frozen_source, true});
    model.set_train_mode(false);
    const auto target = detail::collect_volume_stats(model, vol);
    std::vector<Grid3<T>> candidates;
    std::vector<double> scores;
    for (double alpha : cfg.alphas) {
      detail::blend_layer_stats(model, guard.state(), target, alpha);
      const ProbabilityVolumeT<T> p =
          predict_view(model, vol, ViewPermutation::identity(), {cfg.overlap, cfg.weighting});
      double mean_entropy = 0.0;
      for (std::int64_t i = 0; i < p.grid.size(); ++i)
        mean_entropy += binary_entropy(std::clamp(static_cast<double>(p.grid[i]), 0.0, 1.0));
      mean_entropy /= static_cast<double>(p.grid.size());
      scores.push_back(-mean_entropy / cfg.temperature);
      candidates.push_back(p.grid);
    }
    double max_score = scores[0];
    for (double s : scores) max_score = std::max(max_score, s);
    std::vector<double> weights(scores.size());
    double wsum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      weights[i] = std::exp(scores[i] - max_score);
      wsum += weights[i];
    }
    for (double& w : weights) w /= wsum;
    result.probabilities = ProbabilityVolumeT<T>(vol.shape(), vol.spacing);
    Grid3<double> acc(vol.shape(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i)
      for (std::int64_t j = 0; j < acc.size(); ++j)
        acc[j] += weights[i] * static_cast<double>(candidates[i][j]);
    for (std::int64_t j = 0; j < acc.size(); ++j) result.probabilities.grid[j] = static_cast<T>(acc[j]);
    result.prediction = threshold_mask(result.probabilities);
  }
  result.wall_time_seconds = detail::elapsed_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// MEMO: marginal-entropy minimization over flip augmentations
// ---------------------------------------------------------------------------

struct MemoConfig {
  bool include_flips = true;  // false: identity augmentation only
  double lr = 1e-3;
  int steps = 1;
  double momentum = 0.9;
  double overlap = 0.5;
  ReassemblyWeighting weighting = ReassemblyWeighting::gaussian;
};

template <typename T>
AdaptationResultT<T> memo_adapt(ToyUNet<T>& model, const VolumeT<T>& vol, const MemoConfig& cfg = {}) {
  validate_volume(vol);
  if (cfg.steps < 1) throw ConfigError("steps must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationResultT<T> result;
  {
    ResetGuard<T> guard(model);
    model.set_policy(detail::resolve_adaptation_policy(model.policy(), true));
    model.set_train_mode(false);
    PadInfo pad;
    const VolumeT<T> padded = pad_to(vol, model.patch_size(), pad);
    const PatchGrid grid = plan_patch_grid(padded.shape(), model.patch_size(), cfg.overlap);
    const auto params = model.trainable_parameters(ParamScope::all_parameters);
    SgdMomentum<T> opt(cfg.lr, cfg.momentum);
    const std::vector<int> flips = cfg.include_flips ? std::vector<int>{-1, 0, 1, 2} : std::vector<int>{-1};
    const double k = static_cast<double>(flips.size());
    for (const Shape3& origin : grid.origins) {
      const VolumeT<T> patch = extract_patch(padded, origin, grid.patch_size);
      for (int s = 0; s < cfg.steps; ++s) {
        SgdMomentum<T>::zero_grad(params);
        std::vector<typename ToyUNet<T>::Trace> traces;
        std::vector<Grid3<T>> probs_view;     // in each augmentation's own frame
        std::vector<Grid3<T>> probs_aligned;  // flipped back to the patch frame
        for (int axis : flips) {
          const Grid3<T> in = axis < 0 ? patch.grid : detail::flip_grid(patch.grid, axis);
          traces.push_back(model.forward_trace(in));
          probs_view.push_back(sigmoid_grid(traces.back().logits));
          probs_aligned.push_back(axis < 0 ? probs_view.back()
                                           : detail::flip_grid(probs_view.back(), axis));
        }
        Grid3<T> marginal(patch.grid.shape, T(0));
        for (std::int64_t i = 0; i < marginal.size(); ++i) {
          double acc = 0.0;
          for (const Grid3<T>& p : probs_aligned) acc += static_cast<double>(p[i]);
          marginal[i] = static_cast<T>(acc / k);
        }
        Grid3<T> dmarginal(marginal.shape, T(0));
        LossReport rep;
        rep.total = detail::entropy_objective(marginal, &dmarginal);
        for (std::size_t a = 0; a < flips.size(); ++a) {
          Grid3<T> dp = flips[a] < 0 ? dmarginal : detail::flip_grid(dmarginal, flips[a]);
          for (std::int64_t i = 0; i < dp.size(); ++i) dp[i] = static_cast<T>(dp[i] / k);
          detail::chain_probs_to_logits(probs_view[a], dp);
          model.backward(traces[a], &dp, nullptr);
        }
        opt.step(params);
        result.loss_trace.push_back(rep);
      }
    }
    result.probabilities =
        predict_view(model, vol, ViewPermutation::identity(), {cfg.overlap, cfg.weighting});
    result.prediction = threshold_mask(result.probabilities);
  }
  result.wall_time_seconds = detail::elapsed_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// Method dispatch
// ---------------------------------------------------------------------------

enum class MethodName { none, muvi, ptn, tent, bnadapt, intent, memo };

inline MethodName parse_method(const std::string& name) {
  if (name == "none") return MethodName::none;
  if (name == "muvi") return MethodName::muvi;
  if (name == "ptn") return MethodName::ptn;
  if (name == "tent") return MethodName::tent;
  if (name == "bnadapt") return MethodName::bnadapt;
  if (name == "intent") return MethodName::intent;
  if (name == "memo") return MethodName::memo;
  throw ConfigError("unknown method '" + name + "'");
}

inline const char* method_name(MethodName m) {
  switch (m) {
    case MethodName::none: return "none";
    case MethodName::muvi: return "muvi";
    case MethodName::ptn: return "ptn";
    case MethodName::tent: return "tent";
    case MethodName::bnadapt: return "bnadapt";
    case MethodName::intent: return "intent";
    case MethodName::memo: return "memo";
  }
  return "?";
}

/// One selected strategy plus every method's parameter block; run() applies
/// the one named by `name` under the shared reset-per-image contract.
struct Strategy {
  MethodName name = MethodName::none;
  AdaptationConfig muvi{};
  PtnConfig ptn{};
  TentConfig tent{};
  BnAdaptConfig bnadapt{};
  InTentConfig intent{};
  MemoConfig memo{};

  template <typename T>
  AdaptationResultT<T> run(ToyUNet<T>& model, const VolumeT<T>& vol) const {
    switch (name) {
      case MethodName::none:
        // The unadapted reference shares MuVi's inference protocol flag, so
        // `none` with defaults coincides with MuVi at learning rate 0 and
        // `multi_view_inference = false` gives the plain native-view pass.
        return baseline_predict(model, vol, muvi.overlap, muvi.weighting, muvi.multi_view_inference);
      case MethodName::muvi:
        return adapt_single_image(model, vol, muvi);
      case MethodName::ptn:
        return ptn_predict(model, vol, ptn);
      case MethodName::tent:
        return tent_adapt(model, vol, tent);
      case MethodName::bnadapt:
        return bnadapt_predict(model, vol, bnadapt);
      case MethodName::intent:
        return intent_predict(model, vol, intent);
      case MethodName::memo:
        return memo_adapt(model, vol, memo);
    }
    throw ConfigError("unhandled method");
  }
};

}  // namespace muvi
