#include <gtest/gtest.h>

#include <set>

#include "cast/parallel.hpp"
#include "cast/rng.hpp"

using namespace cast;

// Philox4x32-10 known-answer vector for counter 0 and key 0.
TEST(Philox, KnownAnswer) {
  Philox rng(0, 0);
  EXPECT_EQ(rng(), 0x6627e8d5u);
  EXPECT_EQ(rng(), 0xe169c58du);
  EXPECT_EQ(rng(), 0xbc57ac4cu);
  EXPECT_EQ(rng(), 0x9b00dbd8u);
}

TEST(Philox, StreamsAreReproducibleAndDistinct) {
  Philox a(42, 7), b(42, 7), c(42, 8);
  std::vector<std::uint32_t> va, vb, vc;
  for (int i = 0; i < 64; ++i) {
    va.push_back(a());
    vb.push_back(b());
    vc.push_back(c());
  }
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(Philox, UniformAndBelowRanges) {
  Philox rng(1, 2);
  double sum = 0.0;
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
  EXPECT_EQ(seen.size(), 7u);
}

TEST(DeriveSeed, DistinctTags) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(5, 9), derive_seed(5, 9));
}

TEST(ParallelFor, ResultIndependentOfWorkerCount) {
  auto run = [](std::size_t workers) {
    std::vector<std::uint64_t> out(100);
    parallel_for(100, [&](std::size_t i) {
      Philox r(3, i);
      out[i] = r.next_u64();
    }, workers);
    return out;
  };
  EXPECT_EQ(run(1), run(4));
  EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 3) throw std::runtime_error("x"); }, 2),
               std::runtime_error);
}
