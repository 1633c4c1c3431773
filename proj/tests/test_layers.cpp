#include <gtest/gtest.h>

#include "rcnet/layers.hpp"
#include "rcnet/rc.hpp"
#include "test_util.hpp"

using namespace rcnet;
using rcnet::testing::random_tensor;

namespace {

using Groups = std::vector<BnGroup<double>*>;

Tensor<double> run(CellBody<double>& body, const Tensor<double>& x, const Groups& groups, Mode mode = Mode::kTrain) {
  Graph<double> g(false);
  ForwardContext ctx;
  ctx.mode = mode;
  ctx.update_running_stats = false;
  return g.value(run_cell_body(g, body, g.input(x), std::span<BnGroup<double>* const>(groups), ctx));
}

}  // namespace

TEST(CellBody, KindsDeclareSlotsAndSharedConvs) {
  std::mt19937_64 rng(1);
  CellBody<float> res(CellKind::kPreactResblock, 4, "c", rng);
  CellBody<float> cbr(CellKind::kConvBnRelu, 4, "c", rng);
  EXPECT_EQ(res.bn_slots(), 2);
  EXPECT_EQ(cbr.bn_slots(), 1);
  ASSERT_EQ(res.convs.size(), 2u);
  for (auto& p : res.convs) {
    EXPECT_TRUE(p.is_shared);
    EXPECT_EQ(p.lr_scale, 0.5f);
    EXPECT_EQ(p.value.shape(), (Shape{4, 4, 3, 3}));
  }
}

TEST(CellBody, HeInitScale) {
  std::mt19937_64 rng(2);
  CellBody<double> body(CellKind::kConvBnRelu, 32, "c", rng);
  double sq = 0;
  for (double v : body.convs[0].value.values()) sq += v * v;
  const double var = sq / static_cast<double>(body.convs[0].size());
  EXPECT_NEAR(var, 2.0 / (32 * 9), 0.1 * 2.0 / (32 * 9));
}

TEST(CellBody, ZeroConvResblockIsIdentity) {
  std::mt19937_64 rng(3);
  CellBody<double> body(CellKind::kPreactResblock, 3, "c", rng);
  for (auto& p : body.convs) p.value.zero();
  BnGroup<double> a(3, "a"), b(3, "b");
  a.gamma.value = random_tensor<double>({3}, 4);
  b.beta.value = random_tensor<double>({3}, 5);
  const auto x = random_tensor<double>({2, 3, 4, 4}, 6);
  EXPECT_TRUE(bit_equal(run(body, x, {&a, &b}), x));
  EXPECT_TRUE(bit_equal(run(body, x, {}), x));
}

TEST(CellBody, ConvBnReluIsNonNegativeAndShapePreserving) {
  std::mt19937_64 rng(7);
  CellBody<double> body(CellKind::kConvBnRelu, 3, "c", rng);
  BnGroup<double> bn(3, "bn");
  const auto x = random_tensor<double>({2, 3, 5, 5}, 8);
  const auto y = run(body, x, {&bn});
  EXPECT_EQ(y.shape(), x.shape());
  for (double v : y.values()) EXPECT_GE(v, 0.0);
}

TEST(CellBody, RejectsWrongGroupCountAndReuse) {
  std::mt19937_64 rng(9);
  CellBody<double> body(CellKind::kPreactResblock, 3, "c", rng);
  BnGroup<double> a(3, "a");
  const auto x = random_tensor<double>({2, 3, 4, 4}, 10);
  EXPECT_THROW(run(body, x, {&a}), std::invalid_argument);
  EXPECT_THROW(run(body, x, {&a, &a}), std::logic_error);
  EXPECT_THROW(run(body, random_tensor<double>({2, 4, 4, 4}, 11), {}), ShapeError);
}

TEST(CellBody, TraversalConsumesEachSlotOnce) {
  std::mt19937_64 rng(12);
  CellBody<double> body(CellKind::kPreactResblock, 3, "c", rng);
  BnGroup<double> a(3, "a"), b(3, "b");
  run(body, random_tensor<double>({2, 3, 4, 4}, 13), {&a, &b});
  EXPECT_EQ(a.forward_count, 1u);
  EXPECT_EQ(b.forward_count, 1u);
}

TEST(CellBody, TwoRunsMatchCellUnroll) {
  for (BnMode mode : {BnMode::kShared, BnMode::kIndependent}) {
    std::mt19937_64 rng(14);
    RcCell<double> cell("cell", CellKind::kPreactResblock, 3, mode, 2, false, rng);
    for (auto& grp : cell.bank.groups()) grp.gamma.value = random_tensor<double>({3}, grp.name.size() + 15);
    const auto x = random_tensor<double>({2, 3, 4, 4}, 16);
    const Groups g1 = cell.bank.select(2, 1);
    const Groups g2 = cell.bank.select(2, 2);
    const auto manual = run(cell.body, run(cell.body, x, g1), g2);
    Graph<double> g(false);
    ForwardContext ctx;
    ctx.update_running_stats = false;
    const auto& unrolled = g.value(cell.unroll(g, g.input(x), 2, ctx));
    EXPECT_TRUE(bit_equal(manual, unrolled)) << to_string(mode);
    EXPECT_EQ(g1[0] == g2[0], mode == BnMode::kShared);
  }
}

TEST(Stem, OutputsConfiguredWidth) {
  std::mt19937_64 rng(17);
  Stem<float> stem(3, 16, rng);
  Graph<float> g(false);
  EXPECT_EQ(g.value(stem.forward(g, g.input(Tensor<float>({2, 3, 8, 8})))).shape(), (Shape{2, 16, 8, 8}));
}

TEST(ClassifierHead, ConstantFeatureMapGivesLinearOfConstant) {
  std::mt19937_64 rng(18);
  ClassifierHead<double> head(4, 3, rng);
  head.bias.value = random_tensor<double>({3}, 19);
  Tensor<double> x({1, 4, 3, 3}, 0.7);
  Graph<double> g(false);
  ForwardContext ctx;
  ctx.mode = Mode::kEval;
  const auto& logits = g.value(head.forward(g, g.input(x), nullptr, ctx));
  for (Index k = 0; k < 3; ++k) {
    double expect = head.bias.value[k];
    for (Index c = 0; c < 4; ++c) expect += head.weight.value.at({k, c}) * 0.7;
    EXPECT_NEAR(logits[k], expect, 1e-14);
  }
}

TEST(DenoiseHead, OutputMatchesImageShape) {
  std::mt19937_64 rng(20);
  DenoiseHead<float> head(8, 1, rng);
  Graph<float> g(false);
  EXPECT_EQ(g.value(head.forward(g, g.input(Tensor<float>({2, 8, 10, 10})))).shape(), (Shape{2, 1, 10, 10}));
}
