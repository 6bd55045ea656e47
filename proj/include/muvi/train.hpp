#pragma once

#include <cstdint>
#include <vector>

#include "muvi/engine.hpp"
#include "muvi/errors.hpp"
#include "muvi/inference.hpp"
#include "muvi/losses.hpp"
#include "muvi/metrics.hpp"
#include "muvi/model.hpp"
#include "muvi/optimizer.hpp"
#include "muvi/phantom.hpp"
#include "muvi/rng.hpp"

namespace muvi {

struct TrainConfig {
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  int batch = 2;              // patches per optimizer step (gradient averaging)
  int steps_per_epoch = 20;
  double foreground_bias = 0.7;  // fraction of patches centered on a tumor voxel
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (foreground_bias < 0.0 || foreground_bias > 1.0) throw ConfigError("foreground_bias in [0,1]");
  }
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean supervised loss per epoch
  double val_dsc = -1.0;           // mean validation DSC, -1 when no val set
};

namespace detail {

/// Random patch origin, biased toward covering tumor voxels so the positive
/// class is actually seen during the short training runs.
template <typename T>
Shape3 sample_origin(const VolumeT<T>& vol, const LabelVolume& mask, const Shape3& patch, Rng& rng,
                     double fg_bias) {
  Shape3 origin{};
  const Shape3& s = vol.shape();
  const bool want_fg = mask.foreground_count() > 0 && rng.uniform() < fg_bias;
  if (want_fg) {
    std::int64_t pick = static_cast<std::int64_t>(rng.uniform_index(
        static_cast<std::uint64_t>(mask.foreground_count())));
    std::int64_t flat = -1;
    for (std::int64_t i = 0; i < mask.grid.size(); ++i) {
      if (mask.grid[i] != 0 && pick-- == 0) {
        flat = i;
        break;
      }
    }
    const int z = static_cast<int>(flat / (s[1] * static_cast<std::int64_t>(s[2])));
    const int y = static_cast<int>((flat / s[2]) % s[1]);
    const int x = static_cast<int>(flat % s[2]);
    const Shape3 center{z, y, x};
    for (int a = 0; a < 3; ++a)
      origin[a] = std::clamp(center[a] - patch[a] / 2, 0, s[a] - patch[a]);
  } else {
    for (int a = 0; a < 3; ++a)
      origin[a] = s[a] == patch[a] ? 0 : static_cast<int>(rng.uniform_index(
                                             static_cast<std::uint64_t>(s[a] - patch[a] + 1)));
  }
  return origin;
}

}  // namespace detail

/// Mean DSC of thresholded sliding-window predictions over a case list, using
/// the model's stored policy (frozen statistics for batch norm).
template <typename T>
double validation_dsc(ToyUNet<T>& model, const std::vector<PhantomCase>& cases, double overlap = 0.25) {
  if (cases.empty()) throw ConfigError("validation set is empty");
  ResetGuard<T> guard(model);
  model.set_train_mode(false);
  double acc = 0.0;
  for (const PhantomCase& c : cases) {
    VolumeT<T> vol;
    vol.grid = c.volume.grid.template cast<T>();
    vol.spacing = c.volume.spacing;
    const ProbabilityVolumeT<T> probs = sliding_window_predict(model, vol, {overlap, ReassemblyWeighting::gaussian});
    acc += dice_score(threshold_mask(probs), c.mask);
  }
  return acc / static_cast<double>(cases.size());
}

/// Supervised source training: dice+bce on randomly sampled patches, batch
/// statistics in the forward pass, running statistics accumulated for later
/// frozen-stats inference. Deterministic given the seed.
template <typename T>
TrainResult train_source_model(ToyUNet<T>& model, const std::vector<PhantomCase>& train_cases,
                               const std::vector<PhantomCase>& val_cases, const TrainConfig& cfg) {
  cfg.validate();
  if (train_cases.empty()) throw ConfigError("training set is empty");
  const Shape3 patch = model.patch_size();
  for (const PhantomCase& c : train_cases)
    for (int a = 0; a < 3; ++a)
      if (c.volume.shape()[a] < patch[a])
        throw ConfigError("case " + c.case_id + " smaller than the training patch");

  std::vector<VolumeT<T>> volumes;
  volumes.reserve(train_cases.size());
  for (const PhantomCase& c : train_cases) {
    VolumeT<T> v;
    v.grid = c.volume.grid.template cast<T>();
    v.spacing = c.volume.spacing;
    volumes.push_back(std::move(v));
  }

  TrainResult result;
  Rng rng(cfg.seed);
  model.set_train_mode(true);
  const auto params = model.trainable_parameters(ParamScope::all_parameters);
  SgdMomentum<T> opt(cfg.lr, cfg.momentum);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_acc = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      SgdMomentum<T>::zero_grad(params);
      double step_loss = 0.0;
      for (int b = 0; b < cfg.batch; ++b) {
        const std::size_t ci = static_cast<std::size_t>(rng.uniform_index(train_cases.size()));
        const Shape3 origin =
            detail::sample_origin(volumes[ci], train_cases[ci].mask, patch, rng, cfg.foreground_bias);
        const VolumeT<T> vp = extract_patch(volumes[ci], origin, patch);
        const LabelVolume mp = extract_patch(train_cases[ci].mask, origin, patch);
        const Grid3<T> target = label_to_grid<T>(mp.grid);
        auto trace = model.forward_trace(vp.grid);
        const Grid3<T> probs = sigmoid_grid(trace.logits);
        Grid3<T> dprobs(probs.shape, T(0));
        step_loss += dice_bce_loss(probs, target, kDiceSmoothDefault, &dprobs, 1.0 / cfg.batch);
        detail::chain_probs_to_logits(probs, dprobs);
        model.backward(trace, &dprobs, nullptr);
      }
      opt.step(params);
      epoch_acc += step_loss / cfg.batch;
    }
    result.epoch_loss.push_back(epoch_acc / cfg.steps_per_epoch);
  }
  model.set_train_mode(false);
  if (!val_cases.empty()) result.val_dsc = validation_dsc(model, val_cases);
  return result;
}

}  // namespace muvi
