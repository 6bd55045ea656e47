#include <gtest/gtest.h>

#include <cmath>

#include "muvi/losses.hpp"
#include "muvi/model.hpp"
#include "muvi/rng.hpp"

namespace {

using namespace muvi;

Grid3<double> random_grid(const Shape3& s, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Grid3<double> g(s);
  for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(lo, hi);
  return g;
}

ToyUNet<double> zero_head_model(std::uint64_t seed) {
  auto model = build_toy_unet<double>(2, 2, NormPolicy::batch(), {8, 8, 8}, seed);
  for (Param<double>* p : model.parameters()) {
    if (p->name.find("head") != std::string::npos) std::fill(p->value.begin(), p->value.end(), 0.0);
  }
  return model;
}

TEST(DiceLoss, HandComputedHalf) {
  // Uniform 0.5 prediction, half the voxels foreground, no smoothing:
  // 1 - (2*2)/(4+4) = 0.5.
  Grid3<double> probs(Shape3{2, 2, 2}, 0.5);
  Grid3<double> target(Shape3{2, 2, 2}, 0.0);
  for (int i = 0; i < 4; ++i) target[i] = 1.0;
  EXPECT_DOUBLE_EQ(dice_loss(probs, target, 0.0), 0.5);
}

TEST(DiceLoss, PerfectAndDisjoint) {
  Grid3<double> a(Shape3{3, 3, 3}, 0.0);
  a[0] = a[5] = a[13] = 1.0;
  EXPECT_LE(dice_loss(a, a), 1.0 / (2.0 * 3.0 + 1.0));
  Grid3<double> b(Shape3{3, 3, 3}, 0.0);
  b[1] = b[2] = 1.0;
  const double expected = 1.0 - 1.0 / (3.0 + 2.0 + 1.0);
  EXPECT_NEAR(dice_loss(a, b), expected, 1e-12);
}

TEST(DiceLoss, ShapeMismatchThrows) {
  Grid3<double> a(Shape3{2, 2, 2}, 0.5);
  Grid3<double> b(Shape3{2, 2, 3}, 0.5);
  EXPECT_THROW(dice_loss(a, b), ShapeMismatch);
}

TEST(BceLoss, UniformHalfIsLn2) {
  Grid3<double> probs(Shape3{2, 3, 4}, 0.5);
  const Grid3<double> target = [&] {
    Grid3<double> t(probs.shape, 0.0);
    for (std::int64_t i = 0; i < t.size(); i += 2) t[i] = 1.0;
    return t;
  }();
  EXPECT_NEAR(bce_loss(probs, target), std::log(2.0), 1e-12);
}

TEST(BceLoss, SingleVoxelClosedForm) {
  Grid3<double> probs(Shape3{1, 1, 1}, 0.9);
  Grid3<double> target(Shape3{1, 1, 1}, 1.0);
  EXPECT_NEAR(bce_loss(probs, target), -std::log(0.9), 1e-12);
  EXPECT_NEAR(bce_loss(probs, target), 0.10536, 1e-5);
}

TEST(BceLoss, ExactBinaryPredictionIsClampFloor) {
  Grid3<double> probs(Shape3{2, 2, 2}, 1.0);
  Grid3<double> target(Shape3{2, 2, 2}, 1.0);
  EXPECT_NEAR(bce_loss(probs, target), -std::log(1.0 - kBceClamp), 1e-15);
  EXPECT_LT(bce_loss(probs, target), 1e-6);
}

TEST(Losses, PermutationEquivariance) {
  const Grid3<double> p = random_grid({4, 5, 6}, 1, 0.05, 0.95);
  const Grid3<double> t = random_grid({4, 5, 6}, 2, 0.0, 1.0);
  for (const ViewPermutation& view : ViewPermutation::all()) {
    const Grid3<double> pp = permute_grid(p, view.axis_order);
    const Grid3<double> pt = permute_grid(t, view.axis_order);
    EXPECT_EQ(dice_loss(pp, pt), dice_loss(p, t));
    EXPECT_EQ(bce_loss(pp, pt), bce_loss(p, t));
  }
}

TEST(CosineLoss, CanonicalValues) {
  const std::vector<double> x{1.0, 2.0, -1.0, 0.5};
  EXPECT_NEAR(cosine_distance<double>(x, x, nullptr, nullptr, 0.0, nullptr), 0.0, 1e-12);
  const std::vector<double> a{1.0, 0.0}, b{0.0, 3.0}, na{-2.0, 0.0};
  EXPECT_NEAR(cosine_distance<double>(a, b, nullptr, nullptr, 0.0, nullptr), 1.0, 1e-12);
  EXPECT_NEAR(cosine_distance<double>(a, na, nullptr, nullptr, 0.0, nullptr), 2.0, 1e-12);
}

TEST(CosineLoss, PositiveScaleInvariance) {
  Rng rng(3);
  std::vector<double> a(12), b(12);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const double base = cosine_distance<double>(a, b, nullptr, nullptr, 0.0, nullptr);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<double> scaled = b;
    for (auto& v : scaled) v *= c;
    EXPECT_NEAR(cosine_distance<double>(a, scaled, nullptr, nullptr, 0.0, nullptr), base, 1e-9);
  }
}

TEST(MultiViewLosses, ZeroLogitSelfLearningClosedForm) {
  // All views predict exactly 0.5; with an all-background pseudolabel each
  // view contributes dice = 1 - s/(n/2 + s) and bce = ln 2.
  auto model = zero_head_model(7);
  const Grid3<double> patch = random_grid({8, 8, 8}, 8, -1.0, 1.0);
  const Grid3<double> pl(Shape3{8, 8, 8}, 0.0);
  const double n = 512.0;
  const double per_view = (1.0 - 1.0 / (n / 2.0 + 1.0)) + std::log(2.0);
  EXPECT_NEAR(self_learning_loss(model, patch, pl), 3.0 * per_view, 1e-9);
}

TEST(MultiViewLosses, ZeroLogitSymmetryAcrossViews) {
  auto model = zero_head_model(9);
  const Grid3<double> patch = random_grid({8, 8, 8}, 10, -1.0, 1.0);
  Grid3<double> pl(Shape3{8, 8, 8}, 0.0);
  for (std::int64_t i = 0; i < pl.size() / 2; ++i) pl[i] = 1.0;
  const Grid3<double> probs(Shape3{8, 8, 8}, 0.5);
  const double single = dice_loss(probs, pl) + bce_loss(probs, pl);
  EXPECT_NEAR(self_learning_loss(model, patch, pl), 3.0 * single, 1e-9);
}

TEST(MultiViewLosses, ZeroLogitConsistencyClosedForm) {
  // Original view predicts a uniform 0.5 target; the two permuted views sit at
  // the soft self-consistency floor: dice(0.5,0.5) + ln 2 each.
  auto model = zero_head_model(11);
  const Grid3<double> patch = random_grid({8, 8, 8}, 12, -1.0, 1.0);
  const double n = 512.0;
  const double dice_floor = 1.0 - (2.0 * 0.25 * n + 1.0) / (0.5 * n + 0.5 * n + 1.0);
  EXPECT_NEAR(view_consistency_loss(model, patch), 2.0 * (dice_floor + std::log(2.0)), 1e-9);
}

TEST(MultiViewLosses, CosineRangeOnRandomModels) {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto model = build_toy_unet<double>(2, 2, NormPolicy::batch(), {8, 8, 8}, seed);
    const Grid3<double> patch = random_grid({8, 8, 8}, seed + 50, -2.0, 2.0);
    const double c = cosine_feature_loss(model, patch);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 4.0);
  }
}

TEST(TotalLoss, SingleWeightEqualsComponent) {
  auto model = build_toy_unet<double>(2, 2, NormPolicy::batch(), {8, 8, 8}, 13);
  const Grid3<double> patch = random_grid({8, 8, 8}, 14, -2.0, 2.0);
  Grid3<double> pl(Shape3{8, 8, 8}, 0.0);
  for (std::int64_t i = 0; i < pl.size(); i += 3) pl[i] = 1.0;
  const LossReport rep = total_loss(model, patch, pl, LossWeights{1.0, 0.0, 0.0});
  EXPECT_EQ(rep.total, rep.sl);
}

TEST(TotalLoss, ZeroWeightsGiveZeroTotalAndZeroGradients) {
  auto model = build_toy_unet<double>(2, 2, NormPolicy::batch(), {8, 8, 8}, 15);
  const Grid3<double> patch = random_grid({8, 8, 8}, 16, -2.0, 2.0);
  const Grid3<double> pl(Shape3{8, 8, 8}, 0.0);
  model.zero_grad();
  const LossReport rep = total_loss(model, patch, pl, LossWeights{0.0, 0.0, 0.0}, true);
  EXPECT_EQ(rep.total, 0.0);
  for (const Param<double>* p : model.parameters())
    for (double g : p->grad) ASSERT_EQ(g, 0.0);
}

TEST(TotalLoss, EqualWeightsMatchHandSummedComponents) {
  auto model = build_toy_unet<double>(2, 2, NormPolicy::batch(), {8, 8, 8}, 17);
  const Grid3<double> patch = random_grid({8, 8, 8}, 18, -2.0, 2.0);
  Grid3<double> pl(Shape3{8, 8, 8}, 0.0);
  for (std::int64_t i = 0; i < pl.size(); i += 2) pl[i] = 1.0;
  const LossReport rep = total_loss(model, patch, pl, LossWeights{1.0, 1.0, 1.0});
  const double by_hand = self_learning_loss(model, patch, pl) + view_consistency_loss(model, patch) +
                         cosine_feature_loss(model, patch);
  EXPECT_NEAR(rep.total, by_hand, 1e-12);
  EXPECT_NEAR(rep.total, rep.sl + rep.consistency + rep.cosine, 1e-12);
}

TEST(TotalLoss, DoublingLambdaDoublesContribution) {
  auto model = build_toy_unet<double>(2, 2, NormPolicy::batch(), {8, 8, 8}, 19);
  const Grid3<double> patch = random_grid({8, 8, 8}, 20, -2.0, 2.0);
  const Grid3<double> pl(Shape3{8, 8, 8}, 0.0);
  const LossReport once = total_loss(model, patch, pl, LossWeights{1.0, 0.0, 0.0});
  const LossReport twice = total_loss(model, patch, pl, LossWeights{2.0, 0.0, 0.0});
  EXPECT_EQ(twice.total, 2.0 * once.total);
  EXPECT_EQ(twice.sl, once.sl);  // components stay unweighted
}

TEST(TotalLoss, NonCubicPatchRejected) {
  auto model = build_toy_unet<double>(2, 2, NormPolicy::batch(), {8, 8, 8}, 21);
  const Grid3<double> patch(Shape3{8, 8, 4}, 0.0);
  const Grid3<double> pl(Shape3{8, 8, 4}, 0.0);
  EXPECT_THROW(total_loss(model, patch, pl, LossWeights{}), ShapeMismatch);
}

}  // namespace
