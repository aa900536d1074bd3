#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "mahakit/parallel.hpp"
#include "mahakit/rng.hpp"
#include "mahakit/types.hpp"

using namespace mahakit;

TEST(Rng, Deterministic) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(7);
  const int n = 400000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 3 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sn / n, 0.0, 3 / std::sqrt(double(n)));
  EXPECT_NEAR(sn2 / n, 1.0, 3 * std::sqrt(2.0 / n));
}

TEST(Rng, BelowIsInRange) {
  Rng rng(9);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) ++hist[rng.below(7)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 400);
}

TEST(Rng, DerivedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(Parallel, WorkerCountFromEnvironment) {
  ::setenv("MAHAKIT_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  ::setenv("MAHAKIT_THREADS", "0", 1);
  EXPECT_GE(worker_count(), 1u);
  ::unsetenv("MAHAKIT_THREADS");
}

TEST(Parallel, RunsEveryTaskAndPropagatesErrors) {
  ::setenv("MAHAKIT_THREADS", "4", 1);
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(100,
                            [](std::size_t i) {
                              if (i == 57) throw Error(ErrorCode::NumericalFailure, "boom");
                            }),
               Error);
  ::unsetenv("MAHAKIT_THREADS");
}

TEST(Types, FeatureMatrixRejectsNonFinite) {
  Matrix m = Matrix::Zero(2, 2);
  m(1, 1) = NAN;
  EXPECT_THROW(FeatureMatrix{m}, Error);
  EXPECT_THROW(FeatureMatrix(Matrix::Zero(3, 0)), Error);
  EXPECT_NO_THROW(FeatureMatrix(Matrix::Zero(0, 3)));
}

TEST(Types, LabelsValidated) {
  EXPECT_THROW(Labels({0, 3}, 3), Error);
  EXPECT_THROW(Labels({-1}, 3), Error);
  EXPECT_EQ(Labels::infer({0, 4, 2}).n_classes(), 5);
}
