#include <gtest/gtest.h>

#include <random>

#include "grapy/gradcheck.hpp"
#include "grapy/ops.hpp"

using namespace grapy;

namespace {

Tensor<double> rnd(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Tensor<double>::generate(std::move(s), [&] { return u(rng); });
}

}  // namespace

TEST(Gradcheck, EverySuiteBelowTolerance) {
  const auto results = run_gradcheck_suites(3);
  ASSERT_GE(results.size(), 20u);
  for (const auto& r : results) {
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
    EXPECT_GT(r.entries, 0u) << r.name;
  }
}

TEST(Gradcheck, DetectsAWrongBackward) {
  // relu's derivative replaced by 2: a planted bug must show up as a large error
  std::mt19937_64 rng(1);
  const auto r = check_gradients("bad", {rnd({3, 4}, rng)}, [](Tape<double>& t, const std::vector<Var<double>>& in) {
    const Var<double> x = in[0];
    Tensor<double> v = x.value();
    Var<double> y = t.record(v, {x}, [x](Tape<double>& tape, const Tensor<double>&, const Tensor<double>& g) {
      Tensor<double> gx = g;
      gx.array() *= 2.0;
      tape.accumulate(x, gx);
    }, "double_id");
    return sum_all(mul(y, y));
  });
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(Gradcheck, MatmulChainByHand) {
  // d/dA sum(A B) = 1 B^T
  Tape<double> t;
  Var<double> a = t.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var<double> b = t.leaf(Tensor<double>({3, 2}, {1, -1, 2, 0, 0.5, 3}));
  t.backward(sum_all(matmul(a, b)));
  const Tensor<double> expect({2, 3}, {0, 2, 3.5, 0, 2, 3.5});
  EXPECT_EQ(a.grad(), expect);
  const Tensor<double> expect_b({3, 2}, {5, 5, 7, 7, 9, 9});
  EXPECT_EQ(b.grad(), expect_b);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = rnd({5, 9}, rng, -30, 30);
    const auto s = softmax_rows_value(x);
    for (Index r = 0; r < 5; ++r) {
      double sum = 0;
      for (Index c = 0; c < 9; ++c) sum += s(r, c);
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(5);
  for (double c : {-100.0, -3.5, 0.25, 7.0, 500.0}) {
    const auto x = rnd({4, 6}, rng, -5, 5);
    Tensor<double> shifted = x;
    shifted.array() += c;
    const auto a = softmax_rows_value(x);
    const auto b = softmax_rows_value(shifted);
    EXPECT_LE((a.array() - b.array()).abs().maxCoeff(), 1e-9) << c;
  }
}

TEST(Softmax, ChannelsMatchesRows) {
  std::mt19937_64 rng(6);
  const auto x = rnd({3, 4, 5}, rng);
  Tape<double> t;
  const auto c = softmax_channels(t.constant(x)).value();
  const auto r = softmax_rows_value(x.reshaped({12, 5}));
  EXPECT_EQ(c.reshaped({12, 5}), r);
}

TEST(Tape, DeterministicReplay) {
  auto run = [] {
    std::mt19937_64 rng(9);
    Tape<float> t;
    std::uniform_real_distribution<float> u(-1, 1);
    auto x = t.leaf(Tensor<float>::generate({6, 6, 3}, [&] { return u(rng); }));
    auto k = t.leaf(Tensor<float>::generate({3, 3, 3, 4}, [&] { return u(rng); }));
    auto y = softmax_channels(relu(conv2d(x, k, 1, 1)));
    auto l = mean_all(mul(y, y));
    t.backward(l);
    return std::make_pair(l.value(), k.grad());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Tape, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tape<double> t;
  Var<double> x = t.leaf(Tensor<double>({2}, {1, 2}));
  Var<double> l = sum_all(scale(x, 3.0));
  t.backward(l);
  t.backward(l);
  EXPECT_EQ(x.grad(), Tensor<double>({2}, {6, 6}));
  t.zero_grad();
  t.backward(l);
  EXPECT_EQ(x.grad(), Tensor<double>({2}, {3, 3}));
}

TEST(Tape, ConstantsCollectNoGradient) {
  Tape<double> t;
  Var<double> c = t.constant(Tensor<double>({2}, {1, 2}));
  Var<double> x = t.leaf(Tensor<double>({2}, {3, 4}));
  t.backward(sum_all(mul(c, x)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(c.grad(), Tensor<double>::zeros({2}));
  EXPECT_EQ(x.grad(), Tensor<double>({2}, {1, 2}));
}

TEST(Tape, NonScalarBackwardRejected) {
  Tape<double> t;
  Var<double> x = t.leaf(Tensor<double>({2}, {1, 2}));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, NonFiniteValuesRaiseNumericError) {
  Tape<double> t;
  EXPECT_THROW(t.leaf(Tensor<double>({1}, {std::nan("")})), NumericError);
  Var<double> z = t.leaf(Tensor<double>({2}, {0.0, 1.0}));
  EXPECT_THROW(log(z), NumericError);
  Var<double> big = t.leaf(Tensor<double>({1}, {1e308}));
  EXPECT_THROW(mul(big, big), NumericError);
}

TEST(Broadcast, SizeOneAxesOnly) {
  Tape<double> t;
  Var<double> a = t.leaf(Tensor<double>::ones({2, 3}));
  Var<double> row = t.leaf(Tensor<double>({1, 3}, {1, 2, 3}));
  Var<double> col = t.leaf(Tensor<double>({2, 1}, {10, 20}));
  EXPECT_EQ((a + row).value(), Tensor<double>({2, 3}, {2, 3, 4, 2, 3, 4}));
  EXPECT_EQ((a * col).value(), Tensor<double>({2, 3}, {10, 10, 10, 20, 20, 20}));
  t.backward(sum_all(a * row + col));
  EXPECT_EQ(row.grad(), Tensor<double>({1, 3}, {2, 2, 2}));
  EXPECT_EQ(col.grad(), Tensor<double>({2, 1}, {3, 3}));
}

TEST(Broadcast, NoRankPromotionOrMismatch) {
  Tape<double> t;
  Var<double> a = t.leaf(Tensor<double>::ones({2, 3}));
  Var<double> v = t.leaf(Tensor<double>::ones({3}));
  Var<double> b = t.leaf(Tensor<double>::ones({2, 2}));
  EXPECT_THROW(a + v, ShapeError);
  EXPECT_THROW(a + b, ShapeError);
}

TEST(Conv, PaddedConvKeepsSpatialSize) {
  Tape<double> t;
  Var<double> x = t.constant(Tensor<double>::ones({7, 5, 2}));
  Var<double> k = t.constant(Tensor<double>::ones({3, 3, 2, 4}));
  const auto y = conv2d(x, k, 1, 1).value();
  EXPECT_EQ(y.shape(), (Shape{7, 5, 4}));
  EXPECT_DOUBLE_EQ(y(0, 0, 0), 8.0);   // corner: 2x2 window x 2 channels
  EXPECT_DOUBLE_EQ(y(3, 2, 1), 18.0);  // interior
}

TEST(SegmentOps, MeanMaxAndEmptyRows) {
  Tape<double> t;
  Var<double> x = t.leaf(Tensor<double>({4, 2}, {1, 5, 3, -1, 2, 2, 7, 0}));
  const std::vector<int> labels{0, 0, 2, 0};
  EXPECT_EQ(segment_mean(x, labels, 3).value(),
            Tensor<double>({3, 2}, {11.0 / 3, 4.0 / 3, 0, 0, 2, 2}));
  EXPECT_EQ(segment_max(x, labels, 3).value(), Tensor<double>({3, 2}, {7, 5, 0, 0, 2, 2}));
  t.backward(sum_all(segment_max(x, labels, 3)));
  EXPECT_EQ(x.grad(), Tensor<double>({4, 2}, {0, 1, 0, 0, 1, 1, 1, 0}));
}

TEST(CrossEntropy, LogitsFormMatchesProbabilityForm) {
  std::mt19937_64 rng(8);
  const auto z = rnd({6, 5}, rng, -4, 4);
  const std::vector<int> q{0, 4, 2, 2, 1, 3};
  Tape<double> t;
  const double a = softmax_cross_entropy(t.constant(z), q).value().item();
  const double b = cross_entropy(softmax_rows(t.constant(z)), q).value().item();
  EXPECT_NEAR(a, b, 1e-12);
  std::vector<int> bad{0, 5, 0, 0, 0, 0};
  EXPECT_THROW(softmax_cross_entropy(t.constant(z), bad), std::out_of_range);
}
