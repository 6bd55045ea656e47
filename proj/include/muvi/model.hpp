#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/layers.hpp"
#include "muvi/volume.hpp"

namespace muvi {

enum class ParamScope { norm_affine_only, all_parameters };

/// Exact copy of everything an optimizer or normalization layer can touch.
template <typename T>
struct ModelState {
  std::vector<std::pair<std::string, std::vector<T>>> params;
  std::vector<std::pair<std::string, std::vector<T>>> buffers;
  NormPolicy policy;
  bool train_mode = false;
};

/// Small 3D encoder-decoder with additive skip connections and a
/// single-channel logit head. Channel widths double per level; spatial
/// extents halve. A patch of extent E requires E divisible by 2^depth.
template <typename T>
class ToyUNet {
public:
  struct Config {
    int channels_base = 8;
    int depth = 3;
    Shape3 patch_size{64, 64, 64};
    NormPolicy norm;
    std::uint64_t seed = 0;
    double eps = 1e-5;
  };

  struct BlockCache {
    Tensor4<T> padded_in;
    NormCache<T> norm;
    Tensor4<T> act;
  };

  /// Activations cached by one forward pass, consumed by backward().
  struct Trace {
    std::vector<BlockCache> enc;
    BlockCache bottleneck;
    std::vector<BlockCache> dec;
    Grid3<T> logits;
    std::vector<T> embedding;
  };

  ToyUNet() = default;

  explicit ToyUNet(const Config& cfg) : cfg_(cfg), policy_(cfg.norm) {
    policy_.validate();
    if (cfg.depth < 2) throw ConfigError("depth must be >= 2");
    if (cfg.channels_base < 1) throw ConfigError("channels_base must be >= 1");
    const int div = 1 << cfg.depth;
    for (int a = 0; a < 3; ++a) {
      if (cfg.patch_size[a] % div != 0)
        throw ConfigError("patch extent " + std::to_string(cfg.patch_size[a]) +
                          " not divisible by 2^depth = " + std::to_string(div));
    }
    Rng rng(cfg.seed);
    enc_conv_.resize(cfg.depth);
    enc_norm_.resize(cfg.depth);
    dec_proj_.resize(cfg.depth);
    dec_conv_.resize(cfg.depth);
    dec_norm_.resize(cfg.depth);
    int cin = 1;
    for (int e = 0; e < cfg.depth; ++e) {
      const int ce = cfg.channels_base << e;
      enc_conv_[e].init("enc" + std::to_string(e) + ".conv", cin, ce, rng);
      enc_norm_[e].init("enc" + std::to_string(e) + ".norm", ce);
      enc_norm_[e].eps = cfg.eps;
      cin = ce;
    }
    const int cb = cfg.channels_base << cfg.depth;
    bott_conv_.init("bottleneck.conv", cin, cb, rng);
    bott_norm_.init("bottleneck.norm", cb);
    bott_norm_.eps = cfg.eps;
    for (int e = cfg.depth - 1; e >= 0; --e) {
      const int ce = cfg.channels_base << e;
      const int cprev = e == cfg.depth - 1 ? cb : (cfg.channels_base << (e + 1));
      dec_proj_[e].init("dec" + std::to_string(e) + ".proj", cprev, ce, rng);
      dec_conv_[e].init("dec" + std::to_string(e) + ".conv", ce, ce, rng);
      dec_norm_[e].init("dec" + std::to_string(e) + ".norm", ce);
      dec_norm_[e].eps = cfg.eps;
    }
    head_.init("head", cfg.channels_base, 1, rng);
  }

  const Config& config() const { return cfg_; }
  const Shape3& patch_size() const { return cfg_.patch_size; }
  int feature_dim() const { return cfg_.channels_base << cfg_.depth; }

  NormPolicy& policy() { return policy_; }
  const NormPolicy& policy() const { return policy_; }
  void set_policy(const NormPolicy& p) {
    p.validate();
    policy_ = p;
  }

  /// train_mode: normalize by batch statistics and accumulate running stats.
  void set_train_mode(bool on) { train_mode_ = on; }
  bool train_mode() const { return train_mode_; }
  void set_stats_momentum(double m) { stats_momentum_ = m; }

  /// When enabled, every norm layer records the moments of its inputs.
  void set_collect_stats(bool on) {
    collect_ = on;
    if (on)
      for_each_norm([](NormLayer<T>& nl) { nl.reset_collector(); });
  }

  std::vector<NormLayer<T>*> norm_layers() {
    std::vector<NormLayer<T>*> out;
    for (auto& nl : enc_norm_) out.push_back(&nl);
    out.push_back(&bott_norm_);
    for (auto& nl : dec_norm_) out.push_back(&nl);
    return out;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (int e = 0; e < cfg_.depth; ++e) {
      out.push_back(&enc_conv_[e].weight);
      out.push_back(&enc_conv_[e].bias);
      out.push_back(&enc_norm_[e].gamma);
      out.push_back(&enc_norm_[e].beta);
    }
    out.push_back(&bott_conv_.weight);
    out.push_back(&bott_conv_.bias);
    out.push_back(&bott_norm_.gamma);
    out.push_back(&bott_norm_.beta);
    for (int e = cfg_.depth - 1; e >= 0; --e) {
      out.push_back(&dec_proj_[e].weight);
      out.push_back(&dec_proj_[e].bias);
      out.push_back(&dec_conv_[e].weight);
      out.push_back(&dec_conv_[e].bias);
      out.push_back(&dec_norm_[e].gamma);
      out.push_back(&dec_norm_[e].beta);
    }
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
  }

  std::vector<Param<T>*> trainable_parameters(ParamScope scope) {
    std::vector<Param<T>*> out;
    for (Param<T>* p : parameters()) {
      if (scope == ParamScope::all_parameters) {
        out.push_back(p);
      } else if (p->norm_affine && policy_.affine_trainable) {
        out.push_back(p);
      }
    }
    return out;
  }

  void zero_grad() {
    for (Param<T>* p : parameters()) p->zero_grad();
  }

  // -- forward / backward ---------------------------------------------------

  Trace forward_trace(const Grid3<T>& patch) {
    check_patch(patch.shape);
    Trace t;
    t.enc.resize(cfg_.depth);
    t.dec.resize(cfg_.depth);
    const bool use_current = policy_.kind == NormKind::instance_norm || train_mode_ ||
                             policy_.stats_source == StatsSource::current_input;
    const bool accumulate = policy_.kind == NormKind::batch_norm && train_mode_;
    Tensor4<T> x = tensor_from_grid(patch);
    Tensor4<T> tmp;
    for (int e = 0; e < cfg_.depth; ++e) {
      t.enc[e].padded_in = pad1(x);
      enc_conv_[e].forward(t.enc[e].padded_in, tmp);
      enc_norm_[e].forward(tmp, t.enc[e].act, t.enc[e].norm, use_current, accumulate, stats_momentum_, collect_);
      relu_forward(t.enc[e].act);
      x = avgpool2_forward(t.enc[e].act);
    }
    t.bottleneck.padded_in = pad1(x);
    bott_conv_.forward(t.bottleneck.padded_in, tmp);
    bott_norm_.forward(tmp, t.bottleneck.act, t.bottleneck.norm, use_current, accumulate, stats_momentum_, collect_);
    relu_forward(t.bottleneck.act);
    t.embedding = gap_forward(t.bottleneck.act);
    const Tensor4<T>* prev = &t.bottleneck.act;
    for (int e = cfg_.depth - 1; e >= 0; --e) {
      dec_proj_[e].forward(*prev, tmp);
      Tensor4<T> up = upsample2_forward(tmp);
      const Tensor4<T>& skip = t.enc[e].act;
      for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] += skip.data[i];
      t.dec[e].padded_in = pad1(up);
      dec_conv_[e].forward(t.dec[e].padded_in, tmp);
      dec_norm_[e].forward(tmp, t.dec[e].act, t.dec[e].norm, use_current, accumulate, stats_momentum_, collect_);
      relu_forward(t.dec[e].act);
      prev = &t.dec[e].act;
    }
    head_.forward(t.dec[0].act, tmp);
    t.logits = grid_from_tensor(tmp);
    return t;
  }

  /// Logits over the patch; sigmoid of these is the foreground probability.
  Grid3<T> forward(const Grid3<T>& patch) { return forward_trace(patch).logits; }

  /// Global-average-pooled bottleneck activations.
  std::vector<T> features(const Grid3<T>& patch) { return forward_trace(patch).embedding; }

  /// Accumulates parameter gradients for d(loss)/d(logits) and, optionally,
  /// d(loss)/d(embedding). Either pointer may be null.
  void backward(const Trace& t, const Grid3<T>* dlogits, const std::vector<T>* dembed) {
    Tensor4<T> dx, d1, d2;
    // Head.
    if (dlogits != nullptr) {
      Tensor4<T> dl = tensor_from_grid(*dlogits);
      head_.backward(t.dec[0].act, dl, dx);
    } else {
      dx = Tensor4<T>(t.dec[0].act.c, t.dec[0].act.d, t.dec[0].act.h, t.dec[0].act.w, T(0));
    }
    // Decoder, reverse of forward order (level 0 upward).
    std::vector<Tensor4<T>> dskip(static_cast<std::size_t>(cfg_.depth));
    Tensor4<T> dbott(t.bottleneck.act.c, t.bottleneck.act.d, t.bottleneck.act.h, t.bottleneck.act.w, T(0));
    for (int e = 0; e < cfg_.depth; ++e) {
      relu_backward(t.dec[e].act, dx, d1);
      dec_norm_[e].backward(t.dec[e].norm, d1, d2);
      Tensor4<T> dsum;
      dec_conv_[e].backward(t.dec[e].padded_in, d2, dsum);
      Tensor4<T> dproj_out = upsample2_backward(dsum);
      dskip[static_cast<std::size_t>(e)] = std::move(dsum);
      const Tensor4<T>& proj_in = e == cfg_.depth - 1 ? t.bottleneck.act : t.dec[e + 1].act;
      Tensor4<T> dprev;
      dec_proj_[e].backward(proj_in, dproj_out, dprev);
      if (e == cfg_.depth - 1) {
        for (std::size_t i = 0; i < dbott.data.size(); ++i) dbott.data[i] += dprev.data[i];
      } else {
        dx = std::move(dprev);
      }
    }
    // Bottleneck (embedding gradient enters here).
    if (dembed != nullptr) gap_backward(*dembed, dbott);
    relu_backward(t.bottleneck.act, dbott, d1);
    bott_norm_.backward(t.bottleneck.norm, d1, d2);
    bott_conv_.backward(t.bottleneck.padded_in, d2, dx);
    // Encoder, deepest level first.
    for (int e = cfg_.depth - 1; e >= 0; --e) {
      Tensor4<T> dact = avgpool2_backward(dx);
      const Tensor4<T>& ds = dskip[static_cast<std::size_t>(e)];
      for (std::size_t i = 0; i < dact.data.size(); ++i) dact.data[i] += ds.data[i];
      relu_backward(t.enc[e].act, dact, d1);
      enc_norm_[e].backward(t.enc[e].norm, d1, d2);
      enc_conv_[e].backward(t.enc[e].padded_in, d2, dx);
    }
  }

  // -- state ----------------------------------------------------------------

  ModelState<T> snapshot() const {
    ModelState<T> s;
    for (const Param<T>* p : const_cast<ToyUNet*>(this)->parameters())
      s.params.emplace_back(p->name, p->value);
    const_cast<ToyUNet*>(this)->for_each_norm([&](NormLayer<T>& nl) {
      s.buffers.emplace_back(nl.gamma.name + "#running_mean", nl.running_mean);
      s.buffers.emplace_back(nl.gamma.name + "#running_var", nl.running_var);
    });
    s.policy = policy_;
    s.train_mode = train_mode_;
    return s;
  }

  void restore(const ModelState<T>& s) {
    auto params = parameters();
    if (params.size() != s.params.size()) throw StateMismatch("parameter count differs");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->name != s.params[i].first || params[i]->value.size() != s.params[i].second.size())
        throw StateMismatch("parameter " + params[i]->name + " differs in name or size");
      params[i]->value = s.params[i].second;
    }
    std::size_t bi = 0;
    for_each_norm([&](NormLayer<T>& nl) {
      if (bi + 2 > s.buffers.size()) throw StateMismatch("missing normalization buffers");
      if (s.buffers[bi].second.size() != nl.running_mean.size())
        throw StateMismatch("buffer " + s.buffers[bi].first + " differs in size");
      nl.running_mean = s.buffers[bi++].second;
      nl.running_var = s.buffers[bi++].second;
    });
    if (bi != s.buffers.size()) throw StateMismatch("buffer count differs");
    policy_ = s.policy;
    train_mode_ = s.train_mode;
  }

  template <typename Fn>
  void for_each_norm(Fn&& fn) {
    for (auto& nl : enc_norm_) fn(nl);
    fn(bott_norm_);
    for (auto& nl : dec_norm_) fn(nl);
  }

private:
  void check_patch(const Shape3& s) const {
    const int div = 1 << cfg_.depth;
    if (s != cfg_.patch_size)
      throw ShapeMismatch("patch " + to_string(s) + " != model patch " + to_string(cfg_.patch_size));
    for (int a = 0; a < 3; ++a)
      if (s[a] % div != 0) throw ShapeMismatch("patch extent not divisible by 2^depth");
  }

  Config cfg_;
  NormPolicy policy_;
  bool train_mode_ = false;
  double stats_momentum_ = 0.1;
  bool collect_ = false;

  std::vector<Conv3d3<T>> enc_conv_;
  std::vector<NormLayer<T>> enc_norm_;
  Conv3d3<T> bott_conv_;
  NormLayer<T> bott_norm_;
  std::vector<Conv3d1<T>> dec_proj_;
  std::vector<Conv3d3<T>> dec_conv_;
  std::vector<NormLayer<T>> dec_norm_;
  Conv3d1<T> head_;
};

/// Builds the toy encoder-decoder; deterministic in the seed.
template <typename T = float>
ToyUNet<T> build_toy_unet(int channels_base, int depth, const NormPolicy& norm, const Shape3& patch_size,
                          std::uint64_t seed) {
  typename ToyUNet<T>::Config cfg;
  cfg.channels_base = channels_base;
  cfg.depth = depth;
  cfg.patch_size = patch_size;
  cfg.norm = norm;
  cfg.seed = seed;
  return ToyUNet<T>(cfg);
}

/// Restores the model exactly when leaving scope; adaptation methods use this
/// so the reset happens even on error paths.
template <typename T>
class ResetGuard {
public:
  explicit ResetGuard(ToyUNet<T>& model) : model_(model), state_(model.snapshot()) {}
  ~ResetGuard() { model_.restore(state_); }
  ResetGuard(const ResetGuard&) = delete;
  ResetGuard& operator=(const ResetGuard&) = delete;
  const ModelState<T>& state() const { return state_; }

private:
  ToyUNet<T>& model_;
  ModelState<T> state_;
};

}  // namespace muvi
