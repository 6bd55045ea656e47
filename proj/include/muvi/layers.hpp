#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/parallel.hpp"
#include "muvi/rng.hpp"
#include "muvi/tensor.hpp"

namespace muvi {

/// Named learnable array with a gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool norm_affine = false;

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }

  void init(std::string n, std::vector<int> s, bool affine = false) {
    name = std::move(n);
    shape = std::move(s);
    std::int64_t total = 1;
    for (int e : shape) total *= e;
    value.assign(static_cast<std::size_t>(total), T(0));
    grad.assign(static_cast<std::size_t>(total), T(0));
    norm_affine = affine;
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// ---------------------------------------------------------------------------
// 3x3x3 convolution, stride 1, zero padding 1 ("same")
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> pad1(const Tensor4<T>& in) {
  Tensor4<T> out(in.c, in.d + 2, in.h + 2, in.w + 2, T(0));
  for (int ci = 0; ci < in.c; ++ci)
    for (int z = 0; z < in.d; ++z)
      for (int y = 0; y < in.h; ++y) {
        const T* src = in.row(ci, z, y);
        std::copy(src, src + in.w, out.row(ci, z + 1, y + 1) + 1);
      }
  return out;
}

template <typename T>
struct Conv3d3 {
  int cin = 0, cout = 0;
  Param<T> weight;  // (cout, cin, 3, 3, 3)
  Param<T> bias;    // (cout)

  void init(const std::string& name, int cin_, int cout_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    weight.init(name + ".weight", {cout_, cin_, 3, 3, 3});
    bias.init(name + ".bias", {cout_});
    const double std = std::sqrt(2.0 / (cin_ * 27.0));
    for (auto& v : weight.value) v = static_cast<T>(rng.normal(0.0, std));
  }

  const T* kernel(int co, int ci) const {
    return weight.value.data() + (static_cast<std::int64_t>(co) * cin + ci) * 27;
  }
  T* kernel_grad(int co, int ci) {
    return weight.grad.data() + (static_cast<std::int64_t>(co) * cin + ci) * 27;
  }

  /// padded = pad1(in) is cached by the caller for backward.
  void forward(const Tensor4<T>& padded, Tensor4<T>& out) const {
    const int D = padded.d - 2, H = padded.h - 2, W = padded.w - 2;
    out = Tensor4<T>(cout, D, H, W);
    parallel_for(cout, [&](std::int64_t co) {
      T* oc = out.channel(static_cast<int>(co));
      const T b = bias.value[static_cast<std::size_t>(co)];
      std::fill(oc, oc + out.spatial(), b);
      for (int ci = 0; ci < cin; ++ci) {
        const T* k = kernel(static_cast<int>(co), ci);
        for (int kz = 0; kz < 3; ++kz)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const T w = k[(kz * 3 + ky) * 3 + kx];
              if (w == T(0)) continue;
              for (int z = 0; z < D; ++z)
                for (int y = 0; y < H; ++y) {
                  const T* src = padded.row(ci, z + kz, y + ky) + kx;
                  T* dst = oc + (static_cast<std::int64_t>(z) * H + y) * W;
                  for (int x = 0; x < W; ++x) dst[x] += w * src[x];
                }
            }
      }
    });
  }

  /// Accumulates weight/bias gradients and writes the input gradient.
  void backward(const Tensor4<T>& padded_in, const Tensor4<T>& dout, Tensor4<T>& din) {
    const int D = dout.d, H = dout.h, W = dout.w;
    // dW[co][ci][k] = sum over voxels dout[co] * padded_in[ci] shifted by k.
    parallel_for(cout, [&](std::int64_t co) {
      const T* dyc = dout.channel(static_cast<int>(co));
      T bsum = T(0);
      for (std::int64_t i = 0; i < dout.spatial(); ++i) bsum += dyc[i];
      bias.grad[static_cast<std::size_t>(co)] += bsum;
      for (int ci = 0; ci < cin; ++ci) {
        T* kg = kernel_grad(static_cast<int>(co), ci);
        for (int kz = 0; kz < 3; ++kz)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              T acc = T(0);
              for (int z = 0; z < D; ++z)
                for (int y = 0; y < H; ++y) {
                  const T* src = padded_in.row(ci, z + kz, y + ky) + kx;
                  const T* dy = dyc + (static_cast<std::int64_t>(z) * H + y) * W;
                  for (int x = 0; x < W; ++x) acc += dy[x] * src[x];
                }
              kg[(kz * 3 + ky) * 3 + kx] += acc;
            }
      }
    });
    // dX via transposed convolution, accumulated in a padded buffer.
    Tensor4<T> dpad(cin, D + 2, H + 2, W + 2, T(0));
    parallel_for(cin, [&](std::int64_t ci) {
      for (int co = 0; co < cout; ++co) {
        const T* k = kernel(co, static_cast<int>(ci));
        const T* dyc = dout.channel(co);
        for (int kz = 0; kz < 3; ++kz)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const T w = k[(kz * 3 + ky) * 3 + kx];
              if (w == T(0)) continue;
              for (int z = 0; z < D; ++z)
                for (int y = 0; y < H; ++y) {
                  T* dst = dpad.row(static_cast<int>(ci), z + kz, y + ky) + kx;
                  const T* dy = dyc + (static_cast<std::int64_t>(z) * H + y) * W;
                  for (int x = 0; x < W; ++x) dst[x] += w * dy[x];
                }
            }
      }
    });
    din = Tensor4<T>(cin, D, H, W);
    for (int ci = 0; ci < cin; ++ci)
      for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y) {
          const T* src = dpad.row(ci, z + 1, y + 1) + 1;
          std::copy(src, src + W, din.row(ci, z, y));
        }
  }
};

// ---------------------------------------------------------------------------
// 1x1x1 convolution (channel mixing)
// ---------------------------------------------------------------------------

template <typename T>
struct Conv3d1 {
  int cin = 0, cout = 0;
  Param<T> weight;  // (cout, cin)
  Param<T> bias;    // (cout)

  void init(const std::string& name, int cin_, int cout_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    weight.init(name + ".weight", {cout_, cin_});
    bias.init(name + ".bias", {cout_});
    const double std = std::sqrt(2.0 / cin_);
    for (auto& v : weight.value) v = static_cast<T>(rng.normal(0.0, std));
  }

  void forward(const Tensor4<T>& in, Tensor4<T>& out) const {
    out = Tensor4<T>(cout, in.d, in.h, in.w);
    const std::int64_t n = in.spatial();
    parallel_for(cout, [&](std::int64_t co) {
      T* oc = out.channel(static_cast<int>(co));
      std::fill(oc, oc + n, bias.value[static_cast<std::size_t>(co)]);
      for (int ci = 0; ci < cin; ++ci) {
        const T w = weight.value[static_cast<std::size_t>(co * cin + ci)];
        const T* src = in.channel(ci);
        for (std::int64_t i = 0; i < n; ++i) oc[i] += w * src[i];
      }
    });
  }

  void backward(const Tensor4<T>& in, const Tensor4<T>& dout, Tensor4<T>& din) {
    const std::int64_t n = in.spatial();
    parallel_for(cout, [&](std::int64_t co) {
      const T* dyc = dout.channel(static_cast<int>(co));
      T bsum = T(0);
      for (std::int64_t i = 0; i < n; ++i) bsum += dyc[i];
      bias.grad[static_cast<std::size_t>(co)] += bsum;
      for (int ci = 0; ci < cin; ++ci) {
        const T* src = in.channel(ci);
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i) acc += dyc[i] * src[i];
        weight.grad[static_cast<std::size_t>(co * cin + ci)] += acc;
      }
    });
    din = Tensor4<T>(cin, in.d, in.h, in.w, T(0));
    parallel_for(cin, [&](std::int64_t ci) {
      T* dst = din.channel(static_cast<int>(ci));
      for (int co = 0; co < cout; ++co) {
        const T w = weight.value[static_cast<std::size_t>(static_cast<std::int64_t>(co) * cin + ci)];
        const T* dyc = dout.channel(co);
        for (std::int64_t i = 0; i < n; ++i) dst[i] += w * dyc[i];
      }
    });
  }
};

// ---------------------------------------------------------------------------
// Normalization (batch / instance)
// ---------------------------------------------------------------------------

enum class NormKind { batch_norm, instance_norm };
enum class StatsSource { frozen_source, current_input };

struct NormPolicy {
  NormKind kind = NormKind::batch_norm;
  StatsSource stats_source = StatsSource::frozen_source;
  bool affine_trainable = true;

  void validate() const {
    if (kind == NormKind::instance_norm && stats_source != StatsSource::current_input)
      throw ConfigError("instance norm statistics are always computed from the current input");
  }

  static NormPolicy batch(StatsSource src = StatsSource::frozen_source, bool affine = true) {
    return NormPolicy{NormKind::batch_norm, src, affine};
  }
  static NormPolicy instance(bool affine = true) {
    return NormPolicy{NormKind::instance_norm, StatsSource::current_input, affine};
  }
};

/// What a norm layer caches during a traced forward.
template <typename T>
struct NormCache {
  Tensor4<T> xhat;
  std::vector<T> sinv;       // per-channel 1/sqrt(var + eps)
  bool current_stats = false;  // whether stats came from this very input
};

/// Per-channel normalization with learnable affine and frozen running
/// statistics. x_hat = (x - mu) / sqrt(var + eps), y = gamma * x_hat + beta.
/// Variance is the biased (population) estimate in every code path.
template <typename T>
struct NormLayer {
  int channels = 0;
  double eps = 1e-5;
  Param<T> gamma;
  Param<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;

  // Whole-volume statistics collector (enabled through the owning model).
  std::vector<double> collect_sum, collect_sumsq;
  std::int64_t collect_count = 0;

  void init(const std::string& name, int channels_) {
    channels = channels_;
    gamma.init(name + ".gamma", {channels_}, true);
    beta.init(name + ".beta", {channels_}, true);
    std::fill(gamma.value.begin(), gamma.value.end(), T(1));
    running_mean.assign(static_cast<std::size_t>(channels_), T(0));
    running_var.assign(static_cast<std::size_t>(channels_), T(1));
    collect_sum.assign(static_cast<std::size_t>(channels_), 0.0);
    collect_sumsq.assign(static_cast<std::size_t>(channels_), 0.0);
  }

  void reset_collector() {
    std::fill(collect_sum.begin(), collect_sum.end(), 0.0);
    std::fill(collect_sumsq.begin(), collect_sumsq.end(), 0.0);
    collect_count = 0;
  }

  /// use_current: normalize by this input's statistics; accumulate: fold the
  /// batch statistics into the running buffers (training only).
  void forward(const Tensor4<T>& in, Tensor4<T>& out, NormCache<T>& cache, bool use_current,
               bool accumulate, double momentum, bool collect) {
    const std::int64_t n = in.spatial();
    out = Tensor4<T>(in.c, in.d, in.h, in.w);
    cache.xhat = Tensor4<T>(in.c, in.d, in.h, in.w);
    cache.sinv.assign(static_cast<std::size_t>(channels), T(0));
    cache.current_stats = use_current;
    for (int ci = 0; ci < channels; ++ci) {
      const T* src = in.channel(ci);
      double mean, var;
      if (use_current) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(src[i]);
        mean = s / static_cast<double>(n);
        double sq = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double d = static_cast<double>(src[i]) - mean;
          sq += d * d;
        }
        var = sq / static_cast<double>(n);
        if (accumulate) {
          running_mean[ci] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[ci]) + momentum * mean);
          running_var[ci] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[ci]) + momentum * var);
        }
      } else {
        mean = static_cast<double>(running_mean[ci]);
        var = static_cast<double>(running_var[ci]);
      }
      if (collect) {
        double s = 0.0, sq = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double v = static_cast<double>(src[i]);
          s += v;
          sq += v * v;
        }
        collect_sum[ci] += s;
        collect_sumsq[ci] += sq;
      }
      const T sinv = static_cast<T>(1.0 / std::sqrt(var + eps));
      cache.sinv[ci] = sinv;
      const T mu = static_cast<T>(mean);
      const T g = gamma.value[static_cast<std::size_t>(ci)];
      const T b = beta.value[static_cast<std::size_t>(ci)];
      T* xh = cache.xhat.channel(ci);
      T* dst = out.channel(ci);
      for (std::int64_t i = 0; i < n; ++i) {
        const T v = (src[i] - mu) * sinv;
        xh[i] = v;
        dst[i] = g * v + b;
      }
    }
    if (collect) collect_count += n;
  }

  void backward(const NormCache<T>& cache, const Tensor4<T>& dout, Tensor4<T>& din) {
    const std::int64_t n = dout.spatial();
    din = Tensor4<T>(dout.c, dout.d, dout.h, dout.w);
    for (int ci = 0; ci < channels; ++ci) {
      const T* dy = dout.channel(ci);
      const T* xh = cache.xhat.channel(ci);
      T* dx = din.channel(ci);
      T sum_dy = T(0), sum_dy_xh = T(0);
      for (std::int64_t i = 0; i < n; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * xh[i];
      }
      gamma.grad[static_cast<std::size_t>(ci)] += sum_dy_xh;
      beta.grad[static_cast<std::size_t>(ci)] += sum_dy;
      const T g = gamma.value[static_cast<std::size_t>(ci)];
      const T sinv = cache.sinv[ci];
      if (cache.current_stats) {
        const T inv_n = T(1) / static_cast<T>(n);
        const T mean_dy = sum_dy * inv_n;
        const T mean_dy_xh = sum_dy_xh * inv_n;
        for (std::int64_t i = 0; i < n; ++i)
          dx[i] = g * sinv * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
      } else {
        for (std::int64_t i = 0; i < n; ++i) dx[i] = g * sinv * dy[i];
      }
    }
  }

  /// Collected whole-input moments since the last reset.
  void collected_stats(std::vector<double>& mean, std::vector<double>& var) const {
    mean.assign(static_cast<std::size_t>(channels), 0.0);
    var.assign(static_cast<std::size_t>(channels), 0.0);
    if (collect_count == 0) return;
    for (int ci = 0; ci < channels; ++ci) {
      const double m = collect_sum[ci] / static_cast<double>(collect_count);
      mean[ci] = m;
      var[ci] = std::max(0.0, collect_sumsq[ci] / static_cast<double>(collect_count) - m * m);
    }
  }
};

// ---------------------------------------------------------------------------
// ReLU, pooling, upsampling, global average pooling
// ---------------------------------------------------------------------------

template <typename T>
void relu_forward(Tensor4<T>& x) {
  for (auto& v : x.data)
    if (v < T(0)) v = T(0);
}

/// dx = dy where the stored activation is positive.
template <typename T>
void relu_backward(const Tensor4<T>& activated, const Tensor4<T>& dout, Tensor4<T>& din) {
  din = Tensor4<T>(dout.c, dout.d, dout.h, dout.w);
  for (std::size_t i = 0; i < din.data.size(); ++i)
    din.data[i] = activated.data[i] > T(0) ? dout.data[i] : T(0);
}

template <typename T>
Tensor4<T> avgpool2_forward(const Tensor4<T>& in) {
  if (in.d % 2 || in.h % 2 || in.w % 2) throw ShapeMismatch("pooling requires even extents");
  Tensor4<T> out(in.c, in.d / 2, in.h / 2, in.w / 2);
  const T k = T(1) / T(8);
  for (int ci = 0; ci < in.c; ++ci)
    for (int z = 0; z < out.d; ++z)
      for (int y = 0; y < out.h; ++y) {
        const T* r0a = in.row(ci, 2 * z, 2 * y);
        const T* r0b = in.row(ci, 2 * z, 2 * y + 1);
        const T* r1a = in.row(ci, 2 * z + 1, 2 * y);
        const T* r1b = in.row(ci, 2 * z + 1, 2 * y + 1);
        T* dst = out.row(ci, z, y);
        for (int x = 0; x < out.w; ++x) {
          const int x2 = 2 * x;
          dst[x] = k * (r0a[x2] + r0a[x2 + 1] + r0b[x2] + r0b[x2 + 1] + r1a[x2] + r1a[x2 + 1] + r1b[x2] + r1b[x2 + 1]);
        }
      }
  return out;
}

template <typename T>
Tensor4<T> avgpool2_backward(const Tensor4<T>& dout) {
  Tensor4<T> din(dout.c, dout.d * 2, dout.h * 2, dout.w * 2);
  const T k = T(1) / T(8);
  for (int ci = 0; ci < dout.c; ++ci)
    for (int z = 0; z < dout.d; ++z)
      for (int y = 0; y < dout.h; ++y) {
        const T* src = dout.row(ci, z, y);
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy) {
            T* dst = din.row(ci, 2 * z + dz, 2 * y + dy);
            for (int x = 0; x < dout.w; ++x) {
              const T v = k * src[x];
              dst[2 * x] = v;
              dst[2 * x + 1] = v;
            }
          }
      }
  return din;
}

template <typename T>
Tensor4<T> upsample2_forward(const Tensor4<T>& in) {
  Tensor4<T> out(in.c, in.d * 2, in.h * 2, in.w * 2);
  for (int ci = 0; ci < in.c; ++ci)
    for (int z = 0; z < in.d; ++z)
      for (int y = 0; y < in.h; ++y) {
        const T* src = in.row(ci, z, y);
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy) {
            T* dst = out.row(ci, 2 * z + dz, 2 * y + dy);
            for (int x = 0; x < in.w; ++x) {
              dst[2 * x] = src[x];
              dst[2 * x + 1] = src[x];
            }
          }
      }
  return out;
}

template <typename T>
Tensor4<T> upsample2_backward(const Tensor4<T>& dout) {
  Tensor4<T> din(dout.c, dout.d / 2, dout.h / 2, dout.w / 2, T(0));
  for (int ci = 0; ci < dout.c; ++ci)
    for (int z = 0; z < dout.d; ++z)
      for (int y = 0; y < dout.h; ++y) {
        const T* src = dout.row(ci, z, y);
        T* dst = din.row(ci, z / 2, y / 2);
        for (int x = 0; x < dout.w; ++x) dst[x / 2] += src[x];
      }
  return din;
}

template <typename T>
std::vector<T> gap_forward(const Tensor4<T>& in) {
  std::vector<T> out(static_cast<std::size_t>(in.c), T(0));
  const std::int64_t n = in.spatial();
  for (int ci = 0; ci < in.c; ++ci) {
    const T* src = in.channel(ci);
    T s = T(0);
    for (std::int64_t i = 0; i < n; ++i) s += src[i];
    out[static_cast<std::size_t>(ci)] = s / static_cast<T>(n);
  }
  return out;
}

template <typename T>
void gap_backward(const std::vector<T>& dembed, Tensor4<T>& din_accum) {
  const std::int64_t n = din_accum.spatial();
  for (int ci = 0; ci < din_accum.c; ++ci) {
    const T v = dembed[static_cast<std::size_t>(ci)] / static_cast<T>(n);
    T* dst = din_accum.channel(ci);
    for (std::int64_t i = 0; i < n; ++i) dst[i] += v;
  }
}

}  // namespace muvi
