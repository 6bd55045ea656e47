#include <gtest/gtest.h>

#include <cmath>

#include "muvi/layers.hpp"
#include "muvi/model.hpp"
#include "muvi/rng.hpp"

namespace {

using namespace muvi;

Grid3<float> random_patch(const Shape3& shape, std::uint64_t seed) {
  Rng rng(seed);
  Grid3<float> g(shape);
  for (std::int64_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(rng.normal());
  return g;
}

TEST(NormLayer, IdentityWhenStatsMatch) {
  // gamma=1, beta=0, stored stats equal the batch stats -> output is xhat and
  // the frozen/current paths agree within 1e-6.
  NormLayer<double> nl;
  nl.init("n", 2);
  Tensor4<double> in(2, 2, 2, 2);
  Rng rng(42);
  for (auto& v : in.data) v = rng.normal() * 2.0 + 0.3;
  // Store the exact batch statistics.
  for (int ci = 0; ci < 2; ++ci) {
    const double* src = in.channel(ci);
    double mean = 0.0;
    for (int i = 0; i < 8; ++i) mean += src[i];
    mean /= 8.0;
    double var = 0.0;
    for (int i = 0; i < 8; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= 8.0;
    nl.running_mean[ci] = mean;
    nl.running_var[ci] = var;
  }
  Tensor4<double> frozen_out, current_out;
  NormCache<double> cache;
  nl.forward(in, frozen_out, cache, false, false, 0.1, false);
  nl.forward(in, current_out, cache, true, false, 0.1, false);
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    ASSERT_NEAR(frozen_out.data[i], current_out.data[i], 1e-6);
    ASSERT_NEAR(frozen_out.data[i], cache.xhat.data[i], 1e-12);  // gamma=1, beta=0
  }
}

TEST(NormLayer, CollectorMatchesDirectMoments) {
  NormLayer<double> nl;
  nl.init("n", 1);
  nl.reset_collector();
  Tensor4<double> a(1, 2, 2, 2), b(1, 2, 2, 2);
  Rng rng(5);
  for (auto& v : a.data) v = rng.uniform();
  for (auto& v : b.data) v = rng.uniform() * 3.0;
  Tensor4<double> out;
  NormCache<double> cache;
  nl.forward(a, out, cache, false, false, 0.1, true);
  nl.forward(b, out, cache, false, false, 0.1, true);
  std::vector<double> mean, var;
  nl.collected_stats(mean, var);
  double m = 0.0;
  for (double v : a.data) m += v;
  for (double v : b.data) m += v;
  m /= 16.0;
  double s = 0.0;
  for (double v : a.data) s += (v - m) * (v - m);
  for (double v : b.data) s += (v - m) * (v - m);
  s /= 16.0;
  EXPECT_NEAR(mean[0], m, 1e-12);
  EXPECT_NEAR(var[0], s, 1e-12);
}

TEST(Build, PatchDivisibility) {
  EXPECT_NO_THROW(build_toy_unet<float>(8, 3, NormPolicy::batch(), {48, 48, 48}, 1));
  EXPECT_THROW(build_toy_unet<float>(8, 3, NormPolicy::batch(), {50, 50, 50}, 1), ConfigError);
  EXPECT_THROW(build_toy_unet<float>(8, 1, NormPolicy::batch(), {16, 16, 16}, 1), ConfigError);
}

TEST(Build, SeedDeterminism) {
  auto a = build_toy_unet<float>(4, 2, NormPolicy::batch(), {16, 16, 16}, 77);
  auto b = build_toy_unet<float>(4, 2, NormPolicy::batch(), {16, 16, 16}, 77);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i]->name, pb[i]->name);
    ASSERT_EQ(pa[i]->value, pb[i]->value);
  }
}

TEST(Build, InstanceNormPolicyEnforced) {
  NormPolicy bad{NormKind::instance_norm, StatsSource::frozen_source, true};
  EXPECT_THROW(build_toy_unet<float>(4, 2, bad, {16, 16, 16}, 1), ConfigError);
}

TEST(Forward, ZeroHeadGivesHalfProbabilities) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  // Zero the head so logits vanish regardless of features.
  auto params = model.parameters();
  for (Param<float>* p : params) {
    if (p->name.find("head") != std::string::npos)
      std::fill(p->value.begin(), p->value.end(), 0.0f);
  }
  const Grid3<float> logits = model.forward(random_patch({8, 8, 8}, 1));
  for (std::int64_t i = 0; i < logits.size(); ++i) ASSERT_EQ(logits[i], 0.0f);
}

TEST(Forward, WrongPatchShapeThrows) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  EXPECT_THROW(model.forward(random_patch({8, 8, 4}, 1)), ShapeMismatch);
}

TEST(Forward, EvalDeterminism) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  const Grid3<float> patch = random_patch({8, 8, 8}, 9);
  const Grid3<float> a = model.forward(patch);
  const Grid3<float> b = model.forward(patch);
  for (std::int64_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Forward, MatchingStatsEquivalence) {
  // Set momentum to 1 and run one training forward: running stats become the
  // patch's own batch stats at every layer, so frozen and current-input
  // normalization agree on that patch.
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  const Grid3<float> patch = random_patch({8, 8, 8}, 21);
  model.set_stats_momentum(1.0);
  model.set_train_mode(true);
  const Grid3<float> current = model.forward(patch);
  model.set_train_mode(false);
  model.set_policy(NormPolicy::batch(StatsSource::frozen_source));
  const Grid3<float> frozen = model.forward(patch);
  for (std::int64_t i = 0; i < current.size(); ++i) ASSERT_NEAR(current[i], frozen[i], 1e-5);
}

TEST(Features, FixedLengthAndViewSensitivity) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  const Grid3<float> patch = random_patch({8, 8, 8}, 31);
  const auto e1 = model.features(patch);
  const auto e2 = model.features(patch);
  EXPECT_EQ(static_cast<int>(e1.size()), model.feature_dim());
  EXPECT_EQ(e1, e2);
  const Grid3<float> permuted = permute_grid(patch, ViewPermutation::pi1().axis_order);
  const auto e3 = model.features(permuted);
  double dot = 0.0, n1 = 0.0, n3 = 0.0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    dot += static_cast<double>(e1[i]) * e3[i];
    n1 += static_cast<double>(e1[i]) * e1[i];
    n3 += static_cast<double>(e3[i]) * e3[i];
  }
  const double cosine = dot / std::sqrt(n1 * n3);
  EXPECT_LT(cosine, 1.0 - 1e-6);  // embeddings differ across views on a random net
}

TEST(State, SnapshotRestoreExact) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  const ModelState<float> state = model.snapshot();
  for (NormLayer<float>* nl : model.norm_layers()) {
    for (auto& g : nl->gamma.value) g += 1.0f;
    for (auto& m : nl->running_mean) m += 0.5f;
  }
  model.restore(state);
  const ModelState<float> after = model.snapshot();
  ASSERT_EQ(after.params.size(), state.params.size());
  for (std::size_t i = 0; i < state.params.size(); ++i)
    ASSERT_EQ(after.params[i].second, state.params[i].second);
  for (std::size_t i = 0; i < state.buffers.size(); ++i)
    ASSERT_EQ(after.buffers[i].second, state.buffers[i].second);
}

TEST(State, RestoreWrongArchitectureThrows) {
  auto a = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  auto b = build_toy_unet<float>(4, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  EXPECT_THROW(b.restore(a.snapshot()), StateMismatch);
}

TEST(State, FrozenStatsImmutableThroughForwardBackward) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(StatsSource::frozen_source), {8, 8, 8}, 3);
  std::vector<std::vector<float>> before;
  for (NormLayer<float>* nl : model.norm_layers()) {
    before.push_back(nl->running_mean);
    before.push_back(nl->running_var);
  }
  const Grid3<float> patch = random_patch({8, 8, 8}, 55);
  for (int i = 0; i < 3; ++i) {
    auto trace = model.forward_trace(patch);
    Grid3<float> dlogits(trace.logits.shape, 1.0f);
    model.backward(trace, &dlogits, nullptr);
  }
  std::size_t bi = 0;
  for (NormLayer<float>* nl : model.norm_layers()) {
    ASSERT_EQ(nl->running_mean, before[bi++]);
    ASSERT_EQ(nl->running_var, before[bi++]);
  }
}

TEST(Scope, AffineOnlySelection) {
  auto model = build_toy_unet<float>(2, 3, NormPolicy::batch(), {8, 8, 8}, 3);
  // depth 3: 3 encoder + 1 bottleneck + 3 decoder norm layers = 7 layers.
  const auto affine = model.trainable_parameters(ParamScope::norm_affine_only);
  EXPECT_EQ(affine.size(), 14u);
  for (const Param<float>* p : affine) EXPECT_TRUE(p->norm_affine);
  const auto all = model.trainable_parameters(ParamScope::all_parameters);
  EXPECT_GT(all.size(), affine.size());
  for (const Param<float>* p : affine) EXPECT_NE(std::find(all.begin(), all.end(), p), all.end());
}

TEST(Scope, InstanceNormWithoutAffineIsEmpty) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::instance(false), {8, 8, 8}, 3);
  EXPECT_TRUE(model.trainable_parameters(ParamScope::norm_affine_only).empty());
}

TEST(ResetGuardTest, RestoresOnException) {
  auto model = build_toy_unet<float>(2, 2, NormPolicy::batch(), {8, 8, 8}, 3);
  const ModelState<float> before = model.snapshot();
  try {
    ResetGuard<float> guard(model);
    model.norm_layers()[0]->gamma.value[0] += 5.0f;
    throw std::runtime_error("boom");
  } catch (const std::runtime_error&) {
  }
  const ModelState<float> after = model.snapshot();
  for (std::size_t i = 0; i < before.params.size(); ++i)
    ASSERT_EQ(after.params[i].second, before.params[i].second);
}

}  // namespace
