#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/volume.hpp"

namespace muvi {

/// 2|A∩B| / (|A|+|B|). Two empty masks agree perfectly (1); exactly one
/// empty mask scores 0.
inline double dice_score(const LabelVolume& pred, const LabelVolume& ref) {
  if (!(pred.shape() == ref.shape())) throw ShapeMismatch("dice masks differ in shape");
  std::int64_t inter = 0, a = 0, b = 0;
  for (std::int64_t i = 0; i < pred.grid.size(); ++i) {
    const bool pa = pred.grid[i] != 0;
    const bool pb = ref.grid[i] != 0;
    a += pa;
    b += pb;
    inter += (pa && pb);
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

struct SurfacePoint {
  double z, y, x;  // millimetres
};

/// Foreground voxels with at least one background (or out-of-bounds) neighbor
/// under the given connectivity (6 or 26), as physical voxel-center
/// coordinates. An empty mask has no surface.
inline std::vector<SurfacePoint> surface_voxels(const LabelVolume& mask, int connectivity = 6) {
  if (connectivity != 6 && connectivity != 26)
    throw ConfigError("surface connectivity must be 6 or 26");
  std::vector<SurfacePoint> pts;
  const Shape3& s = mask.shape();
  for (int z = 0; z < s[0]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[2]; ++x) {
        if (mask.grid.at(z, y, x) == 0) continue;
        bool boundary = false;
        for (int dz = -1; dz <= 1 && !boundary; ++dz)
          for (int dy = -1; dy <= 1 && !boundary; ++dy)
            for (int dx = -1; dx <= 1 && !boundary; ++dx) {
              if (dz == 0 && dy == 0 && dx == 0) continue;
              if (connectivity == 6 && std::abs(dz) + std::abs(dy) + std::abs(dx) != 1) continue;
              const int nz = z + dz, ny = y + dy, nx = x + dx;
              if (!mask.grid.in_bounds(nz, ny, nx) || mask.grid.at(nz, ny, nx) == 0) boundary = true;
            }
        if (boundary)
          pts.push_back({z * mask.spacing[0], y * mask.spacing[1], x * mask.spacing[2]});
      }
  if (pts.empty()) throw EmptyMask("mask has no foreground surface");
  return pts;
}

namespace detail {

/// Exact nearest-neighbor distances from each query point to the target set.
/// Targets are scanned outward from the closest z-slab so the z-gap bound can
/// cut the scan short; the result is identical to the full pairwise minimum.
inline std::vector<double> directed_surface_distances(const std::vector<SurfacePoint>& from,
                                                      std::vector<SurfacePoint> to) {
  if (from.empty() || to.empty()) throw EmptyMask("surface distance on empty surface");
  std::sort(to.begin(), to.end(), [](const SurfacePoint& a, const SurfacePoint& b) { return a.z < b.z; });
  std::vector<double> out;
  out.reserve(from.size());
  for (const SurfacePoint& p : from) {
    const auto it = std::lower_bound(to.begin(), to.end(), p.z,
                                     [](const SurfacePoint& t, double z) { return t.z < z; });
    std::int64_t lo = static_cast<std::int64_t>(it - to.begin()) - 1;
    std::int64_t hi = static_cast<std::int64_t>(it - to.begin());
    double best = std::numeric_limits<double>::infinity();
    while (lo >= 0 || hi < static_cast<std::int64_t>(to.size())) {
      const double dzlo = lo >= 0 ? p.z - to[static_cast<std::size_t>(lo)].z
                                  : std::numeric_limits<double>::infinity();
      const double dzhi = hi < static_cast<std::int64_t>(to.size())
                              ? to[static_cast<std::size_t>(hi)].z - p.z
                              : std::numeric_limits<double>::infinity();
      if (std::min(dzlo, dzhi) * std::min(dzlo, dzhi) >= best) break;
      const SurfacePoint& t = dzlo <= dzhi ? to[static_cast<std::size_t>(lo--)]
                                           : to[static_cast<std::size_t>(hi++)];
      const double dz = p.z - t.z, dy = p.y - t.y, dx = p.x - t.x;
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace detail

/// Symmetric Hausdorff distance in mm: max over both directed maxima of the
/// nearest-surface distances. Undefined (throws EmptyMask) when either mask
/// has no foreground.
inline double hausdorff_distance(const LabelVolume& pred, const LabelVolume& ref) {
  if (!(pred.shape() == ref.shape())) throw ShapeMismatch("hausdorff masks differ in shape");
  const auto sp = surface_voxels(pred);
  const auto sr = surface_voxels(ref);
  const auto fwd = detail::directed_surface_distances(sp, sr);
  const auto bwd = detail::directed_surface_distances(sr, sp);
  const double mf = *std::max_element(fwd.begin(), fwd.end());
  const double mb = *std::max_element(bwd.begin(), bwd.end());
  return std::max(mf, mb);
}

/// Directed average surface distance in mm from the prediction surface to the
/// reference surface. Undefined (throws EmptyMask) when either mask is empty.
inline double average_surface_distance(const LabelVolume& pred, const LabelVolume& ref) {
  if (!(pred.shape() == ref.shape())) throw ShapeMismatch("asd masks differ in shape");
  const auto sp = surface_voxels(pred);
  const auto sr = surface_voxels(ref);
  const auto fwd = detail::directed_surface_distances(sp, sr);
  double acc = 0.0;
  for (double d : fwd) acc += d;
  return acc / static_cast<double>(fwd.size());
}

struct MetricResult {
  double dsc = 0.0;
  std::optional<double> hausdorff;  // empty when either mask had no surface
  std::optional<double> asd;
};

inline MetricResult compute_metrics(const LabelVolume& pred, const LabelVolume& ref) {
  if (!(pred.shape() == ref.shape())) throw ShapeMismatch("metric masks differ in shape");
  for (int a = 0; a < 3; ++a)
    if (std::abs(pred.spacing[a] - ref.spacing[a]) > 1e-9)
      throw ShapeMismatch("metric masks differ in spacing");
  MetricResult r;
  r.dsc = dice_score(pred, ref);
  if (pred.foreground_count() > 0 && ref.foreground_count() > 0) {
    r.hausdorff = hausdorff_distance(pred, ref);
    r.asd = average_surface_distance(pred, ref);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct AggregateStats {
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation (n-1); 0 when n < 2
  int n = 0;
};

inline AggregateStats aggregate(const std::vector<double>& xs) {
  AggregateStats s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  double acc = 0.0;
  for (double x : xs) acc += x;
  s.mean = acc / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// "0.7000 ± 0.1414" — four decimals on both sides.
inline std::string format_mean_std(const AggregateStats& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", s.mean, s.stdev);
  return buf;
}

/// Per-metric aggregates over a case set; surface metrics aggregate only the
/// cases where they were defined, with the exclusions counted.
struct MetricSummary {
  AggregateStats dsc;
  AggregateStats hausdorff;
  AggregateStats asd;
  int hausdorff_undefined = 0;
  int asd_undefined = 0;
  int cases = 0;
};

inline MetricSummary summarize(const std::vector<MetricResult>& results) {
  if (results.empty()) throw EmptyInput("no metric results to aggregate");
  MetricSummary s;
  s.cases = static_cast<int>(results.size());
  std::vector<double> d, h, a;
  for (const MetricResult& r : results) {
    d.push_back(r.dsc);
    if (r.hausdorff)
      h.push_back(*r.hausdorff);
    else
      ++s.hausdorff_undefined;
    if (r.asd)
      a.push_back(*r.asd);
    else
      ++s.asd_undefined;
  }
  s.dsc = aggregate(d);
  s.hausdorff = aggregate(h);
  s.asd = aggregate(a);
  return s;
}

}  // namespace muvi
