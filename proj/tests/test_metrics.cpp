#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "muvi/metrics.hpp"
#include "muvi/rng.hpp"

namespace {

using namespace muvi;

LabelVolume make_mask(const Shape3& s, Vec3 spacing = {1.0, 1.0, 1.0}) {
  return LabelVolume(s, spacing, 0);
}

LabelVolume random_mask(const Shape3& s, Rng& rng, double density) {
  LabelVolume m = make_mask(s);
  for (auto& v : m.grid.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

/// Independent O(n^2) oracle: enumerate 6-connected surface voxels directly,
/// then form every pairwise distance.
struct BruteSurfaces {
  std::vector<std::array<double, 3>> a, b;

  BruteSurfaces(const LabelVolume& ma, const LabelVolume& mb) {
    a = surface_of(ma);
    b = surface_of(mb);
  }

  static std::vector<std::array<double, 3>> surface_of(const LabelVolume& m) {
    std::vector<std::array<double, 3>> pts;
    const Shape3& s = m.shape();
    for (int z = 0; z < s[0]; ++z)
      for (int y = 0; y < s[1]; ++y)
        for (int x = 0; x < s[2]; ++x) {
          if (m.grid.at(z, y, x) == 0) continue;
          const bool interior = z > 0 && m.grid.at(z - 1, y, x) && z + 1 < s[0] &&
                                m.grid.at(z + 1, y, x) && y > 0 && m.grid.at(z, y - 1, x) &&
                                y + 1 < s[1] && m.grid.at(z, y + 1, x) && x > 0 &&
                                m.grid.at(z, y, x - 1) && x + 1 < s[2] && m.grid.at(z, y, x + 1);
          if (!interior)
            pts.push_back({z * m.spacing[0], y * m.spacing[1], x * m.spacing[2]});
        }
    return pts;
  }

  static double nearest(const std::array<double, 3>& p, const std::vector<std::array<double, 3>>& set) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : set) {
      const double dz = p[0] - q[0], dy = p[1] - q[1], dx = p[2] - q[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    return std::sqrt(best);
  }

  double hausdorff() const {
    double m = 0.0;
    for (const auto& p : a) m = std::max(m, nearest(p, b));
    for (const auto& q : b) m = std::max(m, nearest(q, a));
    return m;
  }

  double asd_a_to_b() const {
    double acc = 0.0;
    for (const auto& p : a) acc += nearest(p, b);
    return acc / static_cast<double>(a.size());
  }
};

TEST(Dsc, TrivialCases) {
  LabelVolume a = make_mask({3, 3, 3});
  LabelVolume b = make_mask({3, 3, 3});
  EXPECT_EQ(dice_score(a, b), 1.0);  // both empty
  a.grid.at(1, 1, 1) = 1;
  EXPECT_EQ(dice_score(a, b), 0.0);  // exactly one empty
  b.grid.at(1, 1, 1) = 1;
  EXPECT_EQ(dice_score(a, b), 1.0);  // identical
  b.grid.at(1, 1, 1) = 0;
  b.grid.at(0, 0, 0) = 1;
  EXPECT_EQ(dice_score(a, b), 0.0);  // disjoint
}

TEST(Dsc, HandArithmeticAndSymmetry) {
  LabelVolume a = make_mask({2, 2, 2});
  LabelVolume b = make_mask({2, 2, 2});
  for (int i = 0; i < 4; ++i) a.grid[i] = 1;          // A = {0,1,2,3}
  for (int i = 2; i < 6; ++i) b.grid[i] = 1;          // B = {2,3,4,5}
  EXPECT_EQ(dice_score(a, b), 0.5);                   // 2*2/(4+4)
  EXPECT_EQ(dice_score(a, b), dice_score(b, a));
}

TEST(Dsc, ShapeMismatchThrows) {
  EXPECT_THROW(dice_score(make_mask({2, 2, 2}), make_mask({2, 2, 3})), ShapeMismatch);
}

TEST(SurfaceVoxels, Enumerations) {
  LabelVolume single = make_mask({5, 5, 5});
  single.grid.at(2, 3, 1) = 1;
  const auto pts = surface_voxels(single);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].z, 2.0);
  EXPECT_EQ(pts[0].y, 3.0);
  EXPECT_EQ(pts[0].x, 1.0);

  LabelVolume block = make_mask({5, 5, 5});
  for (int z = 1; z <= 3; ++z)
    for (int y = 1; y <= 3; ++y)
      for (int x = 1; x <= 3; ++x) block.grid.at(z, y, x) = 1;
  EXPECT_EQ(surface_voxels(block).size(), 26u);  // 3^3 minus the center

  LabelVolume line = make_mask({3, 3, 5});
  line.grid.at(1, 1, 1) = line.grid.at(1, 1, 2) = line.grid.at(1, 1, 3) = 1;
  EXPECT_EQ(surface_voxels(line).size(), 3u);
}

TEST(SurfaceVoxels, VolumeBorderCountsAsBackground) {
  LabelVolume full = make_mask({3, 3, 3});
  for (auto& v : full.grid.data) v = 1;
  EXPECT_EQ(surface_voxels(full).size(), 26u);  // only the center is interior
}

TEST(SurfaceVoxels, TwentySixConnectivitySeesDiagonals) {
  // Solid 3^3 with one corner removed: the center gains a diagonal background
  // neighbor, so it is surface under 26-connectivity but not under 6.
  LabelVolume m = make_mask({3, 3, 3});
  for (auto& v : m.grid.data) v = 1;
  m.grid.at(0, 0, 0) = 0;
  EXPECT_EQ(surface_voxels(m, 6).size(), 25u);
  EXPECT_EQ(surface_voxels(m, 26).size(), 26u);
}

TEST(SurfaceVoxels, EmptyMaskAndBadConnectivity) {
  EXPECT_THROW(surface_voxels(make_mask({3, 3, 3})), EmptyMask);
  LabelVolume m = make_mask({3, 3, 3});
  m.grid.at(1, 1, 1) = 1;
  EXPECT_THROW(surface_voxels(m, 18), ConfigError);
}

TEST(Hausdorff, TwoPointAxisDistance) {
  LabelVolume a = make_mask({1, 1, 5});
  LabelVolume b = make_mask({1, 1, 5});
  a.grid.at(0, 0, 0) = 1;
  b.grid.at(0, 0, 3) = 1;
  EXPECT_EQ(hausdorff_distance(a, b), 3.0);
  EXPECT_EQ(hausdorff_distance(a, a), 0.0);
}

TEST(Asd, ShiftedVoxelAndAsymmetry) {
  LabelVolume a = make_mask({1, 1, 12});
  LabelVolume b = make_mask({1, 1, 12});
  a.grid.at(0, 0, 0) = 1;
  b.grid.at(0, 0, 2) = 1;
  EXPECT_EQ(average_surface_distance(a, b), 2.0);
  EXPECT_EQ(average_surface_distance(a, a), 0.0);
  // Directed average is not symmetric.
  b.grid.at(0, 0, 0) = 1;  // b = {0, 2}, a = {0}
  EXPECT_EQ(average_surface_distance(a, b), 0.0);
  EXPECT_EQ(average_surface_distance(b, a), 1.0);
}

TEST(Distances, BruteForceOracleEquivalence) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Shape3 s{static_cast<int>(3 + rng.uniform_index(8)),
                   static_cast<int>(3 + rng.uniform_index(8)),
                   static_cast<int>(3 + rng.uniform_index(8))};
    const double density = rng.uniform(0.05, 0.6);
    LabelVolume a = random_mask(s, rng, density);
    LabelVolume b = random_mask(s, rng, density);
    if (a.foreground_count() == 0) a.grid.at(0, 0, 0) = 1;
    if (b.foreground_count() == 0) b.grid.at(s[0] - 1, s[1] - 1, s[2] - 1) = 1;
    const BruteSurfaces oracle(a, b);
    const double hd = hausdorff_distance(a, b);
    const double asd = average_surface_distance(a, b);
    ASSERT_EQ(hd, oracle.hausdorff());
    ASSERT_NEAR(asd, oracle.asd_a_to_b(), 1e-9);
    ASSERT_LE(asd, hd + 1e-12);
    ASSERT_EQ(hd, hausdorff_distance(b, a));  // symmetry
  }
}

TEST(Distances, SpacingCovariance) {
  Rng rng(13);
  LabelVolume a = random_mask({6, 6, 6}, rng, 0.2);
  LabelVolume b = random_mask({6, 6, 6}, rng, 0.2);
  a.grid.at(0, 0, 0) = 1;
  b.grid.at(5, 5, 5) = 1;
  const double hd1 = hausdorff_distance(a, b);
  const double asd1 = average_surface_distance(a, b);
  for (double c : {2.0, 0.5, 4.0}) {  // power-of-two scales are exact in binary fp
    LabelVolume ac = a, bc = b;
    for (int i = 0; i < 3; ++i) {
      ac.spacing[i] *= c;
      bc.spacing[i] *= c;
    }
    EXPECT_EQ(hausdorff_distance(ac, bc), c * hd1);
    EXPECT_EQ(average_surface_distance(ac, bc), c * asd1);
    EXPECT_EQ(dice_score(ac, bc), dice_score(a, b));
  }
  // Anisotropic, non-dyadic spacing agrees with the oracle's coordinates.
  LabelVolume an = a, bn = b;
  an.spacing = {2.3, 1.0, 1.0};
  bn.spacing = {2.3, 1.0, 1.0};
  const BruteSurfaces oracle(an, bn);
  EXPECT_NEAR(hausdorff_distance(an, bn), oracle.hausdorff(), 1e-12);
  EXPECT_NEAR(average_surface_distance(an, bn), oracle.asd_a_to_b(), 1e-12);
}

TEST(ComputeMetrics, UndefinedDistancesOnEmptyMask) {
  LabelVolume pred = make_mask({4, 4, 4});
  LabelVolume ref = make_mask({4, 4, 4});
  ref.grid.at(2, 2, 2) = 1;
  const MetricResult r = compute_metrics(pred, ref);
  EXPECT_EQ(r.dsc, 0.0);
  EXPECT_FALSE(r.hausdorff.has_value());
  EXPECT_FALSE(r.asd.has_value());
}

TEST(ComputeMetrics, SpacingMismatchThrows) {
  LabelVolume pred = make_mask({4, 4, 4}, {1.0, 1.0, 1.0});
  LabelVolume ref = make_mask({4, 4, 4}, {2.0, 1.0, 1.0});
  EXPECT_THROW(compute_metrics(pred, ref), ShapeMismatch);
}

TEST(Aggregate, TwoPointSampleStd) {
  const AggregateStats s = aggregate({0.6, 0.8});
  EXPECT_NEAR(s.mean, 0.7, 1e-15);
  EXPECT_NEAR(s.stdev, std::sqrt(0.02 / 1.0), 1e-15);
  EXPECT_EQ(format_mean_std(s), "0.7000 ± 0.1414");
}

TEST(Aggregate, SingleValueRendersZeroStd) {
  const AggregateStats s = aggregate({0.25});
  EXPECT_EQ(format_mean_std(s), "0.2500 ± 0.0000");
}

TEST(Summarize, CountsUndefinedDistances) {
  MetricResult full;
  full.dsc = 0.8;
  full.hausdorff = 2.0;
  full.asd = 1.0;
  MetricResult empty_case;
  empty_case.dsc = 0.0;
  const MetricSummary s = summarize({full, full, empty_case});
  EXPECT_EQ(s.cases, 3);
  EXPECT_EQ(s.hausdorff_undefined, 1);
  EXPECT_EQ(s.asd_undefined, 1);
  EXPECT_EQ(s.hausdorff.n, 2);
  EXPECT_NEAR(s.dsc.mean, (0.8 + 0.8 + 0.0) / 3.0, 1e-15);
  EXPECT_THROW(summarize({}), EmptyInput);
}

}  // namespace
