#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "muvi/baselines.hpp"
#include "muvi/losses.hpp"
#include "muvi/model.hpp"
#include "muvi/rng.hpp"

namespace {

using namespace muvi;
using Model = ToyUNet<double>;

constexpr double kFdStep = 1e-5;
constexpr double kRelTol = 1e-4;

Grid3<double> random_grid(const Shape3& s, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  Grid3<double> g(s);
  for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(lo, hi);
  return g;
}

Grid3<double> random_binary(const Shape3& s, std::uint64_t seed) {
  Rng rng(seed);
  Grid3<double> g(s);
  for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return g;
}

Model make_model(const NormPolicy& policy, std::uint64_t seed) {
  Model m = build_toy_unet<double>(2, 2, policy, {8, 8, 8}, seed);
  // Nontrivial stored statistics so the frozen path is exercised for real.
  Rng rng(seed + 101);
  for (NormLayer<double>* nl : m.norm_layers()) {
    for (auto& v : nl->running_mean) v = rng.normal(0.0, 0.3);
    for (auto& v : nl->running_var) v = 0.5 + rng.uniform();
  }
  return m;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2});
}

/// Central finite differences over a random sample of parameter entries,
/// compared against the analytic gradients produced by `accumulate`.
void check_model_gradients(Model& model, ParamScope scope, const std::function<double()>& value,
                           const std::function<void()>& accumulate, std::uint64_t seed,
                           int samples_per_array = 3) {
  model.zero_grad();
  accumulate();
  const auto params = model.trainable_parameters(scope);
  ASSERT_FALSE(params.empty());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Param<double>* p : params) analytic.push_back(p->grad);
  Rng rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param<double>* p = params[pi];
    for (int k = 0; k < samples_per_array; ++k) {
      const auto idx = static_cast<std::size_t>(rng.uniform_index(p->value.size()));
      const double saved = p->value[idx];
      p->value[idx] = saved + kFdStep;
      const double lp = value();
      p->value[idx] = saved - kFdStep;
      const double lm = value();
      p->value[idx] = saved;
      const double fd = (lp - lm) / (2.0 * kFdStep);
      const double g = analytic[pi][idx];
      ASSERT_LE(rel_err(fd, g), kRelTol)
          << p->name << "[" << idx << "] analytic=" << g << " fd=" << fd;
    }
  }
}

TEST(GradCheckDirect, DiceAgainstFiniteDifferences) {
  const Shape3 s{4, 4, 4};
  Grid3<double> probs = random_grid(s, 1, 0.05, 0.95);
  const Grid3<double> target = random_grid(s, 2, 0.0, 1.0);
  Grid3<double> dprobs(s, 0.0);
  dice_loss(probs, target, 1.0, &dprobs);
  for (std::int64_t i = 0; i < probs.size(); i += 7) {
    const double saved = probs[i];
    probs[i] = saved + kFdStep;
    const double lp = dice_loss(probs, target, 1.0);
    probs[i] = saved - kFdStep;
    const double lm = dice_loss(probs, target, 1.0);
    probs[i] = saved;
    EXPECT_LE(rel_err((lp - lm) / (2.0 * kFdStep), dprobs[i]), kRelTol);
  }
}

TEST(GradCheckDirect, DiceGradScaleIsLinear) {
  const Shape3 s{3, 3, 3};
  const Grid3<double> probs = random_grid(s, 3, 0.1, 0.9);
  const Grid3<double> target = random_binary(s, 4);
  Grid3<double> unit(s, 0.0), scaled(s, 0.0);
  dice_loss(probs, target, 1.0, &unit, 1.0);
  dice_loss(probs, target, 1.0, &scaled, 0.7);
  for (std::int64_t i = 0; i < unit.size(); ++i) EXPECT_NEAR(scaled[i], 0.7 * unit[i], 1e-15);
}

TEST(GradCheckDirect, BceAgainstFiniteDifferences) {
  const Shape3 s{4, 4, 4};
  Grid3<double> probs = random_grid(s, 5, 0.05, 0.95);
  const Grid3<double> target = random_binary(s, 6);
  Grid3<double> dprobs(s, 0.0);
  bce_loss(probs, target, kBceClamp, &dprobs);
  for (std::int64_t i = 0; i < probs.size(); i += 5) {
    const double saved = probs[i];
    probs[i] = saved + kFdStep;
    const double lp = bce_loss(probs, target);
    probs[i] = saved - kFdStep;
    const double lm = bce_loss(probs, target);
    probs[i] = saved;
    EXPECT_LE(rel_err((lp - lm) / (2.0 * kFdStep), dprobs[i]), kRelTol);
  }
}

TEST(GradCheckDirect, BceClampZeroesGradientOutsideBand) {
  const Shape3 s{1, 1, 2};
  Grid3<double> probs(s);
  probs[0] = kBceClamp / 2.0;        // below the band
  probs[1] = 1.0 - kBceClamp / 4.0;  // above the band
  Grid3<double> target(s, 1.0);
  Grid3<double> dprobs(s, 0.0);
  const double loss = bce_loss(probs, target, kBceClamp, &dprobs);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_EQ(dprobs[0], 0.0);
  EXPECT_EQ(dprobs[1], 0.0);
}

TEST(GradCheckDirect, CosineAgainstFiniteDifferences) {
  Rng rng(7);
  std::vector<double> a(16), b(16);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  std::vector<double> da(16, 0.0), db(16, 0.0);
  int degenerate = 0;
  cosine_distance(a, b, &da, &db, 1.0, &degenerate);
  EXPECT_EQ(degenerate, 0);
  auto value = [&] {
    return cosine_distance(a, b, static_cast<std::vector<double>*>(nullptr),
                           static_cast<std::vector<double>*>(nullptr), 1.0, nullptr);
  };
  for (std::size_t i = 0; i < a.size(); i += 3) {
    double saved = a[i];
    a[i] = saved + kFdStep;
    const double lp = value();
    a[i] = saved - kFdStep;
    const double lm = value();
    a[i] = saved;
    EXPECT_LE(rel_err((lp - lm) / (2.0 * kFdStep), da[i]), kRelTol);
    saved = b[i];
    b[i] = saved + kFdStep;
    const double lp2 = value();
    b[i] = saved - kFdStep;
    const double lm2 = value();
    b[i] = saved;
    EXPECT_LE(rel_err((lp2 - lm2) / (2.0 * kFdStep), db[i]), kRelTol);
  }
}

TEST(GradCheckDirect, CosineDegenerateEmbeddingIsNeutral) {
  const std::vector<double> zero(8, 0.0);
  std::vector<double> b(8, 0.5);
  std::vector<double> da(8, 0.0), db(8, 0.0);
  int degenerate = 0;
  const double d = cosine_distance(zero, b, &da, &db, 1.0, &degenerate);
  EXPECT_EQ(d, 1.0);
  EXPECT_EQ(degenerate, 1);
  for (double v : da) EXPECT_EQ(v, 0.0);
  for (double v : db) EXPECT_EQ(v, 0.0);
}

TEST(GradCheckModel, SelfLearningComponent) {
  Model model = make_model(NormPolicy::batch(), 11);
  const Grid3<double> patch = random_grid({8, 8, 8}, 12);
  const Grid3<double> pl = random_binary({8, 8, 8}, 13);
  const LossWeights w{1.0, 0.0, 0.0};
  check_model_gradients(
      model, ParamScope::all_parameters,
      [&] { return total_loss(model, patch, pl, w, false).total; },
      [&] { total_loss(model, patch, pl, w, true); }, 14);
}

TEST(GradCheckModel, ConsistencyComponentWithFrozenTargets) {
  Model model = make_model(NormPolicy::batch(), 21);
  const Grid3<double> patch = random_grid({8, 8, 8}, 22);
  const Grid3<double> dummy(Shape3{8, 8, 8}, 0.0);
  const LossWeights w{0.0, 1.0, 0.0};
  // The original view's soft prediction is a gradient-stopped target, so the
  // finite-difference scalar must hold it fixed at the unperturbed value.
  const auto& views = ViewPermutation::all();
  std::array<Grid3<double>, 3> frozen_targets;
  {
    const Grid3<double> probs0 = sigmoid_grid(model.forward(patch));
    for (int v = 1; v < 3; ++v)
      frozen_targets[static_cast<std::size_t>(v)] =
          permute_grid(probs0, views[static_cast<std::size_t>(v)].axis_order);
  }
  check_model_gradients(
      model, ParamScope::all_parameters,
      [&] {
        double acc = 0.0;
        for (int v = 1; v < 3; ++v) {
          const Grid3<double> vp = permute_grid(patch, views[static_cast<std::size_t>(v)].axis_order);
          const Grid3<double> probs = sigmoid_grid(model.forward(vp));
          const Grid3<double>& target = frozen_targets[static_cast<std::size_t>(v)];
          acc += dice_loss(probs, target) + bce_loss(probs, target);
        }
        return acc;
      },
      [&] { total_loss(model, patch, dummy, w, true); }, 23);
}

TEST(GradCheckModel, CosineComponent) {
  Model model = make_model(NormPolicy::batch(), 31);
  const Grid3<double> patch = random_grid({8, 8, 8}, 32);
  const Grid3<double> dummy(Shape3{8, 8, 8}, 0.0);
  const LossWeights w{0.0, 0.0, 1.0};
  check_model_gradients(
      model, ParamScope::all_parameters,
      [&] { return total_loss(model, patch, dummy, w, false).total; },
      [&] { total_loss(model, patch, dummy, w, true); }, 33);
}

TEST(GradCheckModel, TotalIsWeightedSumOfComponents) {
  Model model = make_model(NormPolicy::batch(), 41);
  const Grid3<double> patch = random_grid({8, 8, 8}, 42);
  const Grid3<double> pl = random_binary({8, 8, 8}, 43);
  const LossWeights w{0.6, 0.3, 0.1};
  const LossReport rep = total_loss(model, patch, pl, w);
  EXPECT_NEAR(rep.total, 0.6 * rep.sl + 0.3 * rep.consistency + 0.1 * rep.cosine, 1e-12);
  // Components match the dedicated single-weight evaluations exactly.
  EXPECT_EQ(rep.sl, total_loss(model, patch, pl, LossWeights{1.0, 0.0, 0.0}).sl);
  EXPECT_EQ(rep.consistency, total_loss(model, patch, pl, LossWeights{0.0, 1.0, 0.0}).consistency);
  EXPECT_EQ(rep.cosine, total_loss(model, patch, pl, LossWeights{0.0, 0.0, 1.0}).cosine);
}

TEST(GradCheckModel, GradientIsLinearInWeights) {
  Model model = make_model(NormPolicy::batch(), 51);
  const Grid3<double> patch = random_grid({8, 8, 8}, 52);
  const Grid3<double> pl = random_binary({8, 8, 8}, 53);
  const auto params = model.trainable_parameters(ParamScope::all_parameters);
  auto grads_for = [&](const LossWeights& w) {
    model.zero_grad();
    total_loss(model, patch, pl, w, true);
    std::vector<std::vector<double>> out;
    for (const Param<double>* p : params) out.push_back(p->grad);
    return out;
  };
  const auto g_sl = grads_for({1.0, 0.0, 0.0});
  const auto g_cons = grads_for({0.0, 1.0, 0.0});
  const auto g_cos = grads_for({0.0, 0.0, 1.0});
  const auto g_total = grads_for({0.6, 0.3, 0.1});
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < g_total[pi].size(); ++i) {
      const double expect = 0.6 * g_sl[pi][i] + 0.3 * g_cons[pi][i] + 0.1 * g_cos[pi][i];
      ASSERT_NEAR(g_total[pi][i], expect, 1e-9 + 1e-7 * std::abs(expect));
    }
  }
}

TEST(GradCheckModel, SupervisedDiceBceInTrainMode) {
  Model model = make_model(NormPolicy::batch(), 61);
  model.set_train_mode(true);  // current-input statistics, running stats accumulate
  const Grid3<double> patch = random_grid({8, 8, 8}, 62);
  const Grid3<double> target = random_binary({8, 8, 8}, 63);
  check_model_gradients(
      model, ParamScope::all_parameters,
      [&] {
        const Grid3<double> probs = sigmoid_grid(model.forward(patch));
        return dice_bce_loss(probs, target);
      },
      [&] {
        auto trace = model.forward_trace(patch);
        const Grid3<double> probs = sigmoid_grid(trace.logits);
        Grid3<double> dprobs(probs.shape, 0.0);
        dice_bce_loss(probs, target, kDiceSmoothDefault, &dprobs);
        detail::chain_probs_to_logits(probs, dprobs);
        model.backward(trace, &dprobs, nullptr);
      },
      64);
}

TEST(GradCheckModel, EntropyMinimizationOnNormAffine) {
  Model model = make_model(NormPolicy::batch(StatsSource::current_input), 71);
  const Grid3<double> patch = random_grid({8, 8, 8}, 72);
  check_model_gradients(
      model, ParamScope::norm_affine_only,
      [&] {
        const Grid3<double> probs = sigmoid_grid(model.forward(patch));
        return detail::entropy_objective(probs, static_cast<Grid3<double>*>(nullptr));
      },
      [&] {
        auto trace = model.forward_trace(patch);
        const Grid3<double> probs = sigmoid_grid(trace.logits);
        Grid3<double> dprobs(probs.shape, 0.0);
        detail::entropy_objective(probs, &dprobs);
        detail::chain_probs_to_logits(probs, dprobs);
        model.backward(trace, &dprobs, nullptr);
      },
      73, 4);
}

TEST(GradCheckModel, MarginalEntropyOverFlipsOnInstanceNorm) {
  Model model = make_model(NormPolicy::instance(), 81);
  const Grid3<double> patch = random_grid({8, 8, 8}, 82);
  const std::array<int, 4> flips{-1, 0, 1, 2};
  const double k = static_cast<double>(flips.size());
  auto marginal_of = [&] {
    Grid3<double> marginal(patch.shape, 0.0);
    for (int axis : flips) {
      const Grid3<double> in = axis < 0 ? patch : detail::flip_grid(patch, axis);
      Grid3<double> probs = sigmoid_grid(model.forward(in));
      if (axis >= 0) probs = detail::flip_grid(probs, axis);
      for (std::int64_t i = 0; i < marginal.size(); ++i) marginal[i] += probs[i] / k;
    }
    return marginal;
  };
  check_model_gradients(
      model, ParamScope::all_parameters,
      [&] {
        const Grid3<double> marginal = marginal_of();
        return detail::entropy_objective(marginal, static_cast<Grid3<double>*>(nullptr));
      },
      [&] {
        std::vector<typename Model::Trace> traces;
        std::vector<Grid3<double>> probs_view;
        Grid3<double> marginal(patch.shape, 0.0);
        for (int axis : flips) {
          const Grid3<double> in = axis < 0 ? patch : detail::flip_grid(patch, axis);
          traces.push_back(model.forward_trace(in));
          probs_view.push_back(sigmoid_grid(traces.back().logits));
          const Grid3<double> aligned =
              axis < 0 ? probs_view.back() : detail::flip_grid(probs_view.back(), axis);
          for (std::int64_t i = 0; i < marginal.size(); ++i) marginal[i] += aligned[i] / k;
        }
        Grid3<double> dmarginal(patch.shape, 0.0);
        detail::entropy_objective(marginal, &dmarginal);
        for (std::size_t a = 0; a < flips.size(); ++a) {
          Grid3<double> dp = flips[a] < 0 ? dmarginal : detail::flip_grid(dmarginal, flips[a]);
          for (std::int64_t i = 0; i < dp.size(); ++i) dp[i] /= k;
          detail::chain_probs_to_logits(probs_view[a], dp);
          model.backward(traces[a], &dp, nullptr);
        }
      },
      83, 2);
}

}  // namespace
