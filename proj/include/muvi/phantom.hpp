#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/rng.hpp"
#include "muvi/volume.hpp"

namespace muvi {

inline constexpr double kBaseNoiseStd = 0.02;

/// Parametric acquisition model: every field at its default value is the
/// source domain; shifts move individual axes.
struct DomainSpec {
  double contrast_scale = 1.0;
  double intensity_gamma = 1.0;
  double bias_field_amplitude = 0.0;
  Vec3 blur_sigma_mm{0.0, 0.0, 0.0};
  Vec3 spacing{1.0, 1.0, 1.0};
  double noise_std = kBaseNoiseStd;

  void validate() const {
    if (!(contrast_scale > 0.0)) throw ConfigError("contrast_scale must be > 0");
    if (!(intensity_gamma > 0.0)) throw ConfigError("intensity_gamma must be > 0");
    if (bias_field_amplitude < 0.0) throw ConfigError("bias_field_amplitude must be >= 0");
    if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
    for (int a = 0; a < 3; ++a) {
      if (blur_sigma_mm[static_cast<std::size_t>(a)] < 0.0) throw ConfigError("blur sigma must be >= 0");
      if (!(spacing[static_cast<std::size_t>(a)] > 0.0)) throw ConfigError("spacing must be > 0");
    }
  }

  static DomainSpec source() { return {}; }

  /// The held-out acquisition used in the end-to-end experiment: stronger
  /// gamma, doubled noise, thick slices.
  static DomainSpec shifted() {
    DomainSpec d;
    d.intensity_gamma = 1.4;
    d.noise_std = 2.0 * kBaseNoiseStd;
    d.spacing = {2.3, 1.0, 1.0};
    return d;
  }

  /// Stable content fingerprint for manifests (FNV-1a over a canonical
  /// rendering of the fields).
  std::uint64_t hash() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "cs=%.9g g=%.9g b=%.9g bl=%.9g,%.9g,%.9g sp=%.9g,%.9g,%.9g n=%.9g",
                  contrast_scale, intensity_gamma, bias_field_amplitude, blur_sigma_mm[0], blur_sigma_mm[1],
                  blur_sigma_mm[2], spacing[0], spacing[1], spacing[2], noise_std);
    std::uint64_t h = 1469598103934665603ull;
    for (const char* p = buf; *p; ++p) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(*p));
      h *= 1099511628211ull;
    }
    return h;
  }
};

struct PhantomCase {
  Volume volume;
  LabelVolume mask;
  std::uint64_t seed = 0;
  DomainSpec domain;
  std::string case_id;
};

namespace detail {

/// Separable Gaussian blur with per-axis sigma in voxels; kernels are
/// renormalized over the in-bounds taps so borders stay unbiased.
inline void gaussian_blur_inplace(Grid3<float>& g, const Vec3& sigma_vox) {
  for (int axis = 0; axis < 3; ++axis) {
    const double s = sigma_vox[static_cast<std::size_t>(axis)];
    if (s <= 1e-9) continue;
    const int radius = static_cast<int>(std::ceil(3.0 * s));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int k = -radius; k <= radius; ++k)
      kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k / s) * (k / s));
    Grid3<float> out(g.shape);
    const Shape3& sh = g.shape;
    Shape3 idx{};
    for (idx[0] = 0; idx[0] < sh[0]; ++idx[0])
      for (idx[1] = 0; idx[1] < sh[1]; ++idx[1])
        for (idx[2] = 0; idx[2] < sh[2]; ++idx[2]) {
          double acc = 0.0, wsum = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            Shape3 n = idx;
            n[static_cast<std::size_t>(axis)] += k;
            if (n[static_cast<std::size_t>(axis)] < 0 ||
                n[static_cast<std::size_t>(axis)] >= sh[static_cast<std::size_t>(axis)])
              continue;
            const double w = kernel[static_cast<std::size_t>(k + radius)];
            acc += w * g.at(n[0], n[1], n[2]);
            wsum += w;
          }
          out.at(idx[0], idx[1], idx[2]) = static_cast<float>(acc / wsum);
        }
    g = std::move(out);
  }
}

struct Lobe {
  std::array<double, 3> center;  // voxels, native grid
  std::array<double, 3> radius;  // voxels
};

/// Normalized ellipsoid distance of a voxel to a lobe (1 on the surface).
inline double lobe_distance(const Lobe& l, int z, int y, int x) {
  const double dz = (z - l.center[0]) / l.radius[0];
  const double dy = (y - l.center[1]) / l.radius[1];
  const double dx = (x - l.center[2]) / l.radius[2];
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

/// Smooth radial falloff: 1 inside the core, cosine ramp to 0, exactly 0.5
/// on the ellipsoid surface (d = 1) so mask and half-max signal agree.
inline double lobe_falloff(double d) {
  constexpr double d0 = 0.7, d1 = 1.3;
  if (d <= d0) return 1.0;
  if (d >= d1) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (d - d0) / (d1 - d0)));
}

}  // namespace detail

/// Deterministically renders one phantom on a 1 mm native grid, then applies
/// the acquisition chain in fixed order (contrast, gamma, polynomial bias
/// field, anisotropic blur, anti-aliased downsample to the domain spacing,
/// additive noise). The scene is a dim base with a smooth cosine texture,
/// several large mid-intensity "tissue" structures whose count, size, and
/// brightness vary per case, and a 1-3 lobe bright tumor rendered at an
/// absolute intensity level well above every tissue structure — so absolute
/// intensity is the discriminative cue, while image-level statistics swing
/// from case to case with the amount of tissue present. The mask is the
/// exact tumor support before any degradation, resampled nearest onto the
/// acquired grid.
inline PhantomCase generate_phantom(std::uint64_t seed, const Shape3& shape, const DomainSpec& domain) {
  domain.validate();
  for (int a = 0; a < 3; ++a)
    if (shape[static_cast<std::size_t>(a)] < 32)
      throw ConfigError("phantom shape must be >= 32 per axis, got " + to_string(shape));
  Rng rng(seed);

  // Background: dim base level plus a small mixture of low-frequency cosines.
  const double base_level = 0.16 + 0.05 * rng.uniform();
  struct Wave {
    double kz, ky, kx, phase, amp;
  };
  std::array<Wave, 4> waves{};
  for (Wave& w : waves) {
    w.kz = 1.0 + 2.0 * rng.uniform();
    w.ky = 1.0 + 2.0 * rng.uniform();
    w.kx = 1.0 + 2.0 * rng.uniform();
    w.phase = 2.0 * std::numbers::pi * rng.uniform();
    w.amp = 0.015 + 0.02 * rng.uniform();
  }

  // Mid-intensity tissue structures: a varying number of large smooth blobs
  // whose plateaus sit clearly below the tumor level.
  struct Structure {
    detail::Lobe lobe;
    double level;
  };
  const int n_tissue = 2 + static_cast<int>(rng.uniform_index(3));
  const double min_extent = static_cast<double>(std::min({shape[0], shape[1], shape[2]}));
  std::vector<Structure> tissue;
  for (int t = 0; t < n_tissue; ++t) {
    Structure s{};
    for (int a = 0; a < 3; ++a) {
      s.lobe.center[static_cast<std::size_t>(a)] =
          (0.1 + 0.8 * rng.uniform()) * (shape[static_cast<std::size_t>(a)] - 1);
      s.lobe.radius[static_cast<std::size_t>(a)] = (0.16 + 0.14 * rng.uniform()) * min_extent;
    }
    s.level = 0.42 + 0.13 * rng.uniform();
    tissue.push_back(s);
  }

  // Tumor: 1-3 overlapping ellipsoidal lobes around a common center, rendered
  // at an absolute level above every tissue plateau.
  const int n_lobes = 1 + static_cast<int>(rng.uniform_index(3));
  std::vector<detail::Lobe> lobes;
  detail::Lobe first{};
  for (int a = 0; a < 3; ++a) {
    first.center[static_cast<std::size_t>(a)] =
        (0.3 + 0.4 * rng.uniform()) * (shape[static_cast<std::size_t>(a)] - 1);
    first.radius[static_cast<std::size_t>(a)] = (0.11 + 0.08 * rng.uniform()) * min_extent;
  }
  lobes.push_back(first);
  for (int l = 1; l < n_lobes; ++l) {
    detail::Lobe lobe{};
    for (int a = 0; a < 3; ++a) {
      lobe.center[static_cast<std::size_t>(a)] =
          first.center[static_cast<std::size_t>(a)] +
          (rng.uniform() - 0.5) * first.radius[static_cast<std::size_t>(a)];
      lobe.radius[static_cast<std::size_t>(a)] = (0.08 + 0.07 * rng.uniform()) * min_extent;
    }
    lobes.push_back(lobe);
  }
  const double tumor_level = 0.78 + 0.12 * rng.uniform();

  // Bias-field polynomial coefficients are drawn even when the amplitude is
  // zero so the structural draws stay aligned across domains.
  std::array<double, 9> poly{};
  double poly_norm = 0.0;
  for (double& c : poly) {
    c = 2.0 * rng.uniform() - 1.0;
    poly_norm += std::abs(c);
  }
  if (poly_norm < 1e-12) poly_norm = 1.0;

  Volume native;
  native.grid = Grid3<float>(shape);
  native.spacing = {1.0, 1.0, 1.0};
  LabelVolume native_mask;
  native_mask.grid = Grid3<std::uint8_t>(shape, 0);
  native_mask.spacing = native.spacing;

  for (int z = 0; z < shape[0]; ++z)
    for (int y = 0; y < shape[1]; ++y)
      for (int x = 0; x < shape[2]; ++x) {
        double v = base_level;
        for (const Wave& w : waves)
          v += w.amp * std::cos(2.0 * std::numbers::pi *
                                    (w.kz * z / shape[0] + w.ky * y / shape[1] + w.kx * x / shape[2]) +
                                w.phase);
        // Tissue structures blend toward their own absolute plateau.
        for (const Structure& s : tissue) {
          const double f = detail::lobe_falloff(detail::lobe_distance(s.lobe, z, y, x));
          v = v * (1.0 - f) + s.level * f;
        }
        // The tumor blends toward its absolute level on top of everything,
        // so the half-max boundary (falloff 0.5) stays on the mask surface.
        double f = 0.0;
        bool inside = false;
        for (const detail::Lobe& lobe : lobes) {
          const double d = detail::lobe_distance(lobe, z, y, x);
          f = std::max(f, detail::lobe_falloff(d));
          inside = inside || d <= 1.0;
        }
        v = v * (1.0 - f) + tumor_level * f;
        native.grid.at(z, y, x) = static_cast<float>(v);
        if (inside) native_mask.grid.at(z, y, x) = 1;
      }

  // Acquisition chain, fixed order.
  Grid3<float>& g = native.grid;
  if (domain.contrast_scale != 1.0) {
    for (std::int64_t i = 0; i < g.size(); ++i)
      g[i] = static_cast<float>(std::clamp(0.5 + (g[i] - 0.5) * domain.contrast_scale, 0.0, 1.0));
  }
  if (domain.intensity_gamma != 1.0) {
    for (std::int64_t i = 0; i < g.size(); ++i)
      g[i] = static_cast<float>(std::pow(std::clamp(static_cast<double>(g[i]), 0.0, 1.0),
                                         domain.intensity_gamma));
  }
  if (domain.bias_field_amplitude > 0.0) {
    for (int z = 0; z < shape[0]; ++z)
      for (int y = 0; y < shape[1]; ++y)
        for (int x = 0; x < shape[2]; ++x) {
          const double u = shape[0] > 1 ? 2.0 * z / (shape[0] - 1) - 1.0 : 0.0;
          const double v = shape[1] > 1 ? 2.0 * y / (shape[1] - 1) - 1.0 : 0.0;
          const double w = shape[2] > 1 ? 2.0 * x / (shape[2] - 1) - 1.0 : 0.0;
          const double p = (poly[0] * u + poly[1] * v + poly[2] * w + poly[3] * u * v + poly[4] * u * w +
                            poly[5] * v * w + poly[6] * u * u + poly[7] * v * v + poly[8] * w * w) /
                           poly_norm;
          g.at(z, y, x) *= static_cast<float>(1.0 + domain.bias_field_amplitude * p);
        }
  }
  detail::gaussian_blur_inplace(g, domain.blur_sigma_mm);  // native spacing is 1 mm

  PhantomCase out;
  out.seed = seed;
  out.domain = domain;
  char id[32];
  std::snprintf(id, sizeof(id), "case_%06llu", static_cast<unsigned long long>(seed));
  out.case_id = id;

  const bool resample_needed =
      domain.spacing[0] != 1.0 || domain.spacing[1] != 1.0 || domain.spacing[2] != 1.0;
  if (resample_needed) {
    Vec3 aa{0.0, 0.0, 0.0};
    for (int a = 0; a < 3; ++a) {
      const double ratio = domain.spacing[static_cast<std::size_t>(a)];
      if (ratio > 1.0) aa[static_cast<std::size_t>(a)] = 0.5 * std::sqrt(ratio * ratio - 1.0);
    }
    detail::gaussian_blur_inplace(g, aa);
    out.volume = resample(native, domain.spacing, ResampleMode::trilinear);
    out.mask = resample_label(native_mask, domain.spacing);
  } else {
    out.volume = std::move(native);
    out.mask = std::move(native_mask);
  }

  if (domain.noise_std > 0.0) {
    for (std::int64_t i = 0; i < out.volume.grid.size(); ++i)
      out.volume.grid[i] += static_cast<float>(domain.noise_std * rng.normal());
  }
  return out;
}

/// n cases from consecutive seeds; overlapping seed ranges reproduce
/// identical cases, ids included.
inline std::vector<PhantomCase> generate_dataset(int n, std::uint64_t seed, const Shape3& shape,
                                                 const DomainSpec& domain) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  std::vector<PhantomCase> cases;
  cases.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    cases.push_back(generate_phantom(seed + static_cast<std::uint64_t>(i), shape, domain));
  return cases;
}

}  // namespace muvi
