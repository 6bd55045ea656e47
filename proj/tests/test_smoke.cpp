#include <gtest/gtest.h>

#include "muvi/muvi.hpp"

TEST(Smoke, EverythingLinks) {
  muvi::Grid3<float> g({2, 2, 2}, 1.0f);
  EXPECT_EQ(g.size(), 8);
  EXPECT_NEAR(muvi::binary_entropy(0.5), 1.0, 1e-12);
}
