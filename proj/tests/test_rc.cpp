#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rcnet/rc.hpp"
#include "test_util.hpp"

using namespace rcnet;
using rcnet::testing::random_tensor;

namespace {

Tensor<double> unroll(RcCell<double>& cell, const Tensor<double>& x, int steps, Mode mode = Mode::kTrain) {
  Graph<double> g(false);
  ForwardContext ctx;
  ctx.mode = mode;
  ctx.update_running_stats = false;
  return g.value(cell.unroll(g, g.input(x), steps, ctx));
}

void randomize_bank(BnBank<double>& bank, std::uint64_t seed) {
  for (auto& grp : bank.groups()) {
    grp.gamma.value = random_tensor<double>({grp.channels}, seed++);
    grp.beta.value = random_tensor<double>({grp.channels}, seed++);
  }
}

}  // namespace

TEST(BnBank, GroupCountsPerMode) {
  for (int m = 1; m <= 5; ++m) {
    for (int slots : {1, 2}) {
      EXPECT_EQ(BnBank<float>(BnMode::kNone, m, slots, 4, "b").group_count(), 0u);
      EXPECT_EQ(BnBank<float>(BnMode::kShared, m, slots, 4, "b").group_count(), static_cast<std::size_t>(slots));
      EXPECT_EQ(BnBank<float>(BnMode::kIndependent, m, slots, 4, "b").group_count(),
                static_cast<std::size_t>(m * slots));
      EXPECT_EQ(BnBank<float>(BnMode::kDoubleIndependent, m, slots, 4, "b").group_count(),
                static_cast<std::size_t>(m * (m + 1) / 2 * slots));
    }
  }
  for (const auto& g : BnBank<float>(BnMode::kDoubleIndependent, 3, 2, 7, "b").groups()) EXPECT_EQ(g.channels, 7);
}

TEST(BnBank, SharedAlwaysSelectsTheSameGroups) {
  BnBank<float> bank(BnMode::kShared, 4, 2, 3, "b");
  const auto first = bank.select(1, 1);
  for (int s = 1; s <= 4; ++s)
    for (int j = 1; j <= s; ++j) EXPECT_EQ(bank.select(s, j), first);
}

TEST(BnBank, IndependentSelectsByUnrollIndex) {
  BnBank<float> bank(BnMode::kIndependent, 4, 1, 3, "b");
  for (int s = 1; s <= 4; ++s)
    for (int j = 1; j <= s; ++j) EXPECT_EQ(bank.select(s, j)[0], &bank.group(static_cast<std::size_t>(j - 1), 0));
}

TEST(BnBank, DoubleIndependentSweepTouchesEachGroupOnce) {
  BnBank<float> bank(BnMode::kDoubleIndependent, 4, 2, 3, "b");
  ASSERT_EQ(bank.group_count(), 20u);
  std::multiset<const BnGroup<float>*> seen;
  for (int s = 1; s <= 4; ++s)
    for (int j = 1; j <= s; ++j)
      for (auto* g : bank.select(s, j)) seen.insert(g);
  EXPECT_EQ(seen.size(), 20u);
  for (const auto& g : bank.groups()) EXPECT_EQ(seen.count(&g), 1u);
}

TEST(BnBank, RowTwoAddressesFollowCanonicalIndex) {
  BnBank<float> bank(BnMode::kDoubleIndependent, 3, 1, 3, "b");
  // Row s=2 holds (2,1) and (2,2) at idx 1 and 2; a 3-step context uses idx 3..5.
  EXPECT_EQ(bank.select(2, 1)[0], &bank.group(1, 0));
  EXPECT_EQ(bank.select(2, 2)[0], &bank.group(2, 0));
  for (int j = 1; j <= 3; ++j) {
    EXPECT_EQ(bank.select(3, j)[0], &bank.group(static_cast<std::size_t>(canonical_bank_index(3, j)), 0));
    const BankAddress addr = bank.address(static_cast<std::size_t>(canonical_bank_index(3, j)));
    EXPECT_EQ(addr.step, 3);
    EXPECT_EQ(addr.unroll, j);
  }
  EXPECT_EQ(canonical_bank_index(1, 1), 0);
  EXPECT_EQ(canonical_bank_index(4, 4), 9);
}

TEST(BnBank, RejectsInvalidAddresses) {
  BnBank<float> bank(BnMode::kDoubleIndependent, 3, 1, 3, "b");
  EXPECT_THROW(bank.select(2, 3), std::out_of_range);
  EXPECT_THROW(bank.select(4, 1), std::out_of_range);
  EXPECT_THROW(bank.select(1, 0), std::out_of_range);
  EXPECT_THROW(BnBank<float>(BnMode::kShared, 0, 1, 3, "b"), std::invalid_argument);
}

TEST(BnBank, CanonicalNames) {
  BnBank<float> bank(BnMode::kDoubleIndependent, 2, 2, 3, "cell1.bank");
  EXPECT_EQ(bank.group(2, 1).name, "cell1.bank.2.slot1");
  EXPECT_EQ(bank.group(2, 1).gamma.name, "cell1.bank.2.slot1.gamma");
}

TEST(BnBank, ModeStringsRoundTrip) {
  for (BnMode m : {BnMode::kNone, BnMode::kShared, BnMode::kIndependent, BnMode::kDoubleIndependent}) {
    EXPECT_EQ(parse_bn_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_bn_mode("indep"), std::invalid_argument);
}

TEST(RcCell, OneStepEqualsOneBodyRun) {
  std::mt19937_64 rng(1);
  RcCell<double> cell("c", CellKind::kPreactResblock, 3, BnMode::kIndependent, 3, false, rng);
  randomize_bank(cell.bank, 2);
  const auto x = random_tensor<double>({2, 3, 4, 4}, 3);
  Graph<double> g(false);
  ForwardContext ctx;
  ctx.update_running_stats = false;
  auto groups = cell.bank.select(1, 1);
  const auto& body = g.value(run_cell_body(g, cell.body, g.input(x), std::span<BnGroup<double>* const>(groups), ctx));
  EXPECT_TRUE(bit_equal(unroll(cell, x, 1), body));
}

TEST(RcCell, PoolsOnceAfterCeilHalf) {
  std::mt19937_64 rng(4);
  RcCell<double> cell("c", CellKind::kPreactResblock, 3, BnMode::kIndependent, 4, true, rng);
  const auto x = random_tensor<double>({2, 3, 8, 8}, 5);
  std::vector<std::pair<int, Shape>> seen;
  Graph<double> g(false);
  ForwardContext ctx;
  const Var y = cell.unroll(g, g.input(x), 4, ctx, [&](int j, Var h) { seen.emplace_back(j, g.value(h).shape()); });
  EXPECT_EQ(g.value(y).shape(), (Shape{2, 3, 4, 4}));
  ASSERT_EQ(seen.size(), 4u);
  EXPECT_EQ(seen[1].second, (Shape{2, 3, 8, 8}));  // state after step 2, before the pool
  EXPECT_EQ(seen[2].second, (Shape{2, 3, 4, 4}));
  EXPECT_EQ(pool_position(4), 2);
  EXPECT_EQ(pool_position(3), 2);
  EXPECT_EQ(pool_position(1), 1);
}

TEST(RcCell, PoolingRejectsOddExtent) {
  std::mt19937_64 rng(6);
  RcCell<double> cell("c", CellKind::kConvBnRelu, 2, BnMode::kShared, 2, true, rng);
  EXPECT_THROW(unroll(cell, random_tensor<double>({2, 2, 5, 5}, 7), 2), ShapeError);
  EXPECT_THROW(unroll(cell, random_tensor<double>({2, 2, 4, 4}, 7), 3), std::out_of_range);
}

TEST(RcCell, DoubleIndependentTouchesOnlyRowS) {
  std::mt19937_64 rng(8);
  RcCell<double> cell("c", CellKind::kPreactResblock, 3, BnMode::kDoubleIndependent, 4, false, rng);
  const auto x = random_tensor<double>({2, 3, 4, 4}, 9);
  for (int s = 1; s <= 4; ++s) {
    for (auto& grp : cell.bank.groups()) grp.reset_audit();
    unroll(cell, x, s);
    for (std::size_t a = 0; a < cell.bank.address_count(); ++a) {
      const BankAddress addr = cell.bank.address(a);
      for (int k = 0; k < 2; ++k) {
        EXPECT_EQ(cell.bank.group(a, k).forward_count, addr.step == s ? 1u : 0u) << "s=" << s << " a=" << a;
      }
    }
  }
}

TEST(RcCell, IndependentMatchesCopiedDoubleIndependentRow) {
  std::mt19937_64 rng_a(10);
  std::mt19937_64 rng_b(10);
  RcCell<double> ind("c", CellKind::kPreactResblock, 3, BnMode::kIndependent, 4, true, rng_a);
  RcCell<double> dbl("c", CellKind::kPreactResblock, 3, BnMode::kDoubleIndependent, 4, true, rng_b);
  randomize_bank(ind.bank, 11);
  for (auto& grp : ind.bank.groups()) {
    grp.running_mean = random_tensor<double>({3}, 40, 0.1);
    grp.running_var = Tensor<double>({3}, 1.3);
  }
  const auto x = random_tensor<double>({2, 3, 8, 8}, 12);
  const int s = 3;
  for (int j = 1; j <= s; ++j) {
    for (int k = 0; k < 2; ++k) {
      dbl.bank.select(s, j)[static_cast<std::size_t>(k)]->gamma.value = ind.bank.select(s, j)[k]->gamma.value;
      dbl.bank.select(s, j)[static_cast<std::size_t>(k)]->beta.value = ind.bank.select(s, j)[k]->beta.value;
      dbl.bank.select(s, j)[static_cast<std::size_t>(k)]->running_mean = ind.bank.select(s, j)[k]->running_mean;
      dbl.bank.select(s, j)[static_cast<std::size_t>(k)]->running_var = ind.bank.select(s, j)[k]->running_var;
    }
  }
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    EXPECT_LT(max_abs_diff(unroll(ind, x, s, mode), unroll(dbl, x, s, mode)), 1e-6);
  }
}

TEST(RcCell, SharedUnrollPrefixComposes) {
  std::mt19937_64 rng(13);
  RcCell<double> cell("c", CellKind::kPreactResblock, 3, BnMode::kShared, 4, false, rng);
  randomize_bank(cell.bank, 14);
  cell.bank.group(0, 0).running_var = Tensor<double>({3}, 2.0);
  const auto x = random_tensor<double>({2, 3, 4, 4}, 15);
  for (int s = 2; s <= 4; ++s) {
    const auto full = unroll(cell, x, s, Mode::kEval);
    const auto composed = unroll(cell, unroll(cell, x, s - 1, Mode::kEval), 1, Mode::kEval);
    EXPECT_TRUE(bit_equal(full, composed));
  }
}

TEST(RcCell, SharedBnParamsAreMarkedShared) {
  std::mt19937_64 rng(16);
  RcCell<float> shared("c", CellKind::kPreactResblock, 3, BnMode::kShared, 2, false, rng);
  RcCell<float> ind("c", CellKind::kPreactResblock, 3, BnMode::kIndependent, 2, false, rng);
  EXPECT_TRUE(shared.bank.group(0, 0).gamma.is_shared);
  EXPECT_EQ(shared.bank.group(0, 0).gamma.lr_scale, 0.5f);
  EXPECT_FALSE(ind.bank.group(0, 0).gamma.is_shared);
  EXPECT_EQ(ind.bank.group(0, 0).gamma.lr_scale, 1.0f);
}

TEST(StepDistribution, EmpiricalFrequenciesMatch) {
  StepDistribution dist({2, 3, 4}, {0.2, 0.3, 0.5});
  std::mt19937_64 rng(17);
  const int n = 100000;
  std::map<int, int> counts;
  for (int i = 0; i < n; ++i) ++counts[dist.sample(rng)];
  EXPECT_EQ(counts.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = dist.probs()[i];
    const double sd = std::sqrt(n * p * (1 - p));
    EXPECT_LT(std::abs(counts[dist.support()[i]] - n * p), 4 * sd);
  }
}

TEST(StepDistribution, SingletonAndDeterminism) {
  const auto fixed = StepDistribution::fixed(3);
  std::mt19937_64 rng(18);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(fixed.sample(rng), 3);
  StepDistribution dist({1, 2, 4}, {0.5, 0.25, 0.25});
  std::mt19937_64 a(19), b(19);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(dist.sample(a), dist.sample(b));
}

TEST(StepDistribution, ValidatesInput) {
  EXPECT_THROW(StepDistribution({2, 2}, {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(StepDistribution({3, 2}, {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(StepDistribution({1, 2}, {0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(StepDistribution({0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(StepDistribution({1, 2}, {1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(StepDistribution({}, {}), std::invalid_argument);
}
