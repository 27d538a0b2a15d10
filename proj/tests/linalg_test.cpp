#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "lea/linalg.hpp"
#include "support/exact_rank.hpp"

namespace lea {
namespace {

using testing::exact_rank;
using testing::flatten;
using testing::IntMatrix;

std::size_t engine_rank(const IntMatrix& m) {
  const auto data = flatten(m);
  const std::size_t cols = m.empty() ? 1 : m.front().size();
  return numerical_rank(std::span<const double>(data), m.size(), cols);
}

TEST(ExactRankOracle, KnownMatrices) {
  EXPECT_EQ(exact_rank({{1, 0}, {0, 1}}), 2u);
  EXPECT_EQ(exact_rank({{1, 2}, {2, 4}}), 1u);
  EXPECT_EQ(exact_rank({{0, 0, 0}}), 0u);
  EXPECT_EQ(exact_rank({{1, 1, 0}, {0, 1, 1}, {1, 2, 1}}), 2u);
}

TEST(NumericalRank, ScaledDuplicateAddsNothing) {
  // rows v, 2v, w
  const IntMatrix m{{1, 2, 0, -1}, {2, 4, 0, -2}, {0, 1, 3, 1}};
  EXPECT_EQ(engine_rank(m), 2u);
}

TEST(NumericalRank, EmptyMatrix) {
  HiddenStateMatrix m(0, 7, {});
  EXPECT_EQ(numerical_rank(m), 0u);
}

TEST(NumericalRank, RankBoundedByDim) {
  std::mt19937_64 rng(3);
  const auto m = testing::random_int_matrix(rng, 12, 5, -3, 3);
  EXPECT_LE(engine_rank(m), 5u);
  EXPECT_EQ(engine_rank(m), exact_rank(m));
}

TEST(NumericalRank, NonFiniteEntryNamesRow) {
  std::vector<float> data(3 * 4, 1.0f);
  data[2 * 4 + 1] = std::numeric_limits<float>::quiet_NaN();
  HiddenStateMatrix m(3, 4, data);
  try {
    (void)numerical_rank(m);
    FAIL() << "expected validation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
    EXPECT_EQ(e.location(), "row 2, col 1");
  }
  EXPECT_THROW(m.validate(), Error);
}

TEST(NumericalRank, DimMismatchIsSchemaError) {
  std::vector<double> data(10, 1.0);
  try {
    (void)numerical_rank(std::span<const double>(data), 3, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
  }
  EXPECT_THROW(HiddenStateMatrix(2, 3, std::vector<float>(5)), Error);
}

TEST(NumericalRank, MatchesExactOracleOnRandomIntegerMatrices) {
  std::mt19937_64 rng(20240517);
  std::uniform_int_distribution<std::size_t> rows(1, 12), cols(1, 16);
  for (int k = 0; k < 1000; ++k) {
    const auto r = rows(rng), c = cols(rng);
    const auto m = k % 2 ? testing::random_int_matrix(rng, r, c, -3, 3) : testing::random_deficient_matrix(rng, r, c, -3, 3);
    ASSERT_EQ(engine_rank(m), exact_rank(m)) << "instance " << k << " shape " << r << "x" << c;
  }
}

TEST(BasisTryInsert, NewAxisIncreasesRank) {
  OrthoBasis b(4);
  ASSERT_TRUE(b.insert(std::vector<double>{1, 0, 0, 0}, {}));
  ASSERT_TRUE(b.insert(std::vector<double>{0, 1, 0, 0}, {}));
  const std::vector<double> e3{0, 0, 1, 0};
  auto [next, increased] = basis_try_insert(b, std::span<const double>(e3), {});
  EXPECT_TRUE(increased);
  EXPECT_EQ(b.rank(), 2u);
  EXPECT_EQ(next.rank(), 3u);
}

TEST(BasisTryInsert, LinearCombinationIsDependent) {
  OrthoBasis b(4);
  ASSERT_TRUE(b.insert(std::vector<double>{1, 0, 0, 0}, {}));
  ASSERT_TRUE(b.insert(std::vector<double>{0, 1, 0, 0}, {}));
  const std::vector<double> v{5, -2, 0, 0};
  auto [next, increased] = basis_try_insert(b, std::span<const double>(v), {});
  EXPECT_FALSE(increased);
  EXPECT_EQ(next.rank(), 2u);
}

TEST(BasisTryInsert, ZeroVectorIsDependentNotAnError) {
  OrthoBasis b(3);
  EXPECT_FALSE(b.insert(std::vector<double>{0, 0, 0}, {}));
  EXPECT_FALSE(b.insert(std::vector<double>{1e-13, 0, 0}, {}));
  EXPECT_EQ(b.rank(), 0u);
}

TEST(BasisTryInsert, LengthMismatchIsSchemaError) {
  OrthoBasis b(3);
  EXPECT_THROW((void)b.insert(std::vector<double>{1, 2}, {}), Error);
}

TEST(BasisTryInsert, MatchesExactRankComparison) {
  std::mt19937_64 rng(77);
  for (int k = 0; k < 500; ++k) {
    auto base = k % 3 ? testing::random_deficient_matrix(rng, 6, 8, -3, 3) : testing::random_int_matrix(rng, 6, 8, -3, 3);
    IntMatrix v = testing::random_int_matrix(rng, 1, 8, -3, 3);
    if (k % 4 == 0) {
      // Force a combination of base rows.
      for (std::size_t j = 0; j < 8; ++j) v[0][j] = 2 * base[1][j] - base[4][j];
    }
    OrthoBasis b(8);
    for (const auto& row : base) (void)b.insert(std::vector<double>(row.begin(), row.end()), {});
    ASSERT_EQ(b.rank(), exact_rank(base));
    IntMatrix stacked = base;
    stacked.push_back(v[0]);
    const bool expected = exact_rank(stacked) > exact_rank(base);
    const std::vector<double> vd(v[0].begin(), v[0].end());
    EXPECT_EQ(b.independent(std::span<const double>(vd), {}), expected) << "instance " << k;
    EXPECT_EQ(basis_try_insert(b, std::span<const double>(vd), {}).increased, expected) << "instance " << k;
  }
}

TEST(OrthoBasis, StaysOrthonormal) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  OrthoBasis b(32);
  for (int k = 0; k < 40; ++k) {
    std::vector<double> v(32);
    for (auto& x : v) x = n(rng) * std::pow(10.0, k % 7 - 3);
    (void)b.insert(v, {});
  }
  EXPECT_EQ(b.rank(), 32u);
  EXPECT_LT(b.orthonormality_error(), 1e-12);
}

TEST(ToleranceConfig, Validation) {
  EXPECT_NO_THROW(ToleranceConfig{}.validate());
  EXPECT_THROW((ToleranceConfig{0.0, 0.0}.validate()), Error);
  EXPECT_THROW((ToleranceConfig{1.0, 0.0}.validate()), Error);
  EXPECT_THROW((ToleranceConfig{1e-5, -1.0}.validate()), Error);
  EXPECT_THROW((ToleranceConfig{1e-5, 1e-4}.validate()), Error);
}

// Properties over exact (integer) fixtures.

TEST(NumericalRankProperty, AppendMonotonicity) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 300; ++k) {
    auto m = testing::random_deficient_matrix(rng, 7, 6, -2, 2);
    const auto before = engine_rank(m);
    m.push_back(k % 2 ? testing::random_int_matrix(rng, 1, 6, -2, 2)[0] : m[k % 7]);
    const auto after = engine_rank(m);
    EXPECT_TRUE(after == before || after == before + 1) << before << " -> " << after;
  }
}

TEST(NumericalRankProperty, RowPermutationInvariance) {
  std::mt19937_64 rng(12);
  for (int k = 0; k < 300; ++k) {
    auto m = testing::random_deficient_matrix(rng, 9, 7, -3, 3);
    const auto r = engine_rank(m);
    std::shuffle(m.begin(), m.end(), rng);
    EXPECT_EQ(engine_rank(m), r);
  }
}

TEST(NumericalRankProperty, NonzeroRowScaling) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> s(1, 9);
  for (int k = 0; k < 300; ++k) {
    auto m = testing::random_deficient_matrix(rng, 8, 8, -3, 3);
    const auto r = engine_rank(m);
    for (auto& row : m) {
      const int f = s(rng) * (s(rng) % 2 ? 1 : -1);
      for (auto& x : row) x *= f;
    }
    EXPECT_EQ(engine_rank(m), r);
  }
}

TEST(NumericalRankProperty, OracleEquivalenceSmallEntries) {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  for (int k = 0; k < 10000; ++k) {
    const auto r = dim(rng), c = dim(rng);
    const auto m = k % 2 ? testing::random_int_matrix(rng, r, c, -2, 2) : testing::random_deficient_matrix(rng, r, c, -2, 2);
    ASSERT_EQ(engine_rank(m), exact_rank(m)) << "instance " << k;
  }
}

TEST(NumericalRank, FloatRowsAreAccumulatedInDouble) {
  // Near-parallel rows whose difference is far above the tolerance but
  // would be lost by a float-precision dot product.
  HiddenStateMatrix m(2, 3, {1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.001f});
  EXPECT_EQ(numerical_rank(m), 2u);
}

}  // namespace
}  // namespace lea
