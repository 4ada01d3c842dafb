#include <gtest/gtest.h>

#include <cmath>

#include "srl/core/array.hpp"
#include "srl/core/ops.hpp"
#include "srl/core/optim.hpp"
#include "srl/core/rng.hpp"
#include "support.hpp"

using srl::Array;
using srl::Rng;
using srl::Tape;
using srl::TapeScope;

namespace {

// Independent oracle: naive triple-loop matrix product.
Array<double> matmul_oracle(const Array<double>& a, const Array<double>& b) {
  Array<double> out = Array<double>::zeros({a.rows(), b.cols()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST(Matmul, IdentityTimesX) {
  Rng rng(1);
  Array<double> x = srl::test::random_array({3, 4}, rng);
  Array<double> eye = Array<double>::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Array<double> y = srl::matmul(eye, x);
  for (std::size_t i = 0; i < x.numel(); ++i)
    EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Matmul, SmallAnalytic) {
  Array<double> a = Array<double>::from({2, 2}, {1, 2, 3, 4});
  Array<double> b = Array<double>::from({2, 1}, {1, 1});
  Array<double> y = srl::matmul(a, b);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 7.0);
}

TEST(Matmul, AgainstTripleLoopOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Array<double> a = srl::test::random_array({4, 5}, rng);
    Array<double> b = srl::test::random_array({5, 3}, rng);
    Array<double> got = srl::matmul(a, b);
    Array<double> want = matmul_oracle(a, b);
    for (std::size_t i = 0; i < got.numel(); ++i)
      EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchRejected) {
  Array<double> a = Array<double>::zeros({2, 3});
  Array<double> b = Array<double>::zeros({4, 2});
  EXPECT_THROW(srl::matmul(a, b), srl::ShapeError);
}

TEST(SoftmaxRows, ConstantRowIsUniform) {
  Array<double> x = Array<double>::from({1, 3}, {2.5, 2.5, 2.5});
  for (double t : {0.1, 1.0, 7.0}) {
    Array<double> p = srl::softmax_rows(x, t);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(p.at(0, j), 1.0 / 3.0, 1e-12);
  }
}

TEST(SoftmaxRows, ClosedFormTwoEntries) {
  Array<double> x = Array<double>::from({1, 2}, {1.0, -1.0});
  Array<double> p = srl::softmax_rows(x, 1.0);
  EXPECT_NEAR(p.at(0, 0), 0.88080, 1e-4);
  EXPECT_NEAR(p.at(0, 1), 0.11920, 1e-4);
}

TEST(SoftmaxRows, SmallTemperatureConcentratesOnArgmax) {
  Array<double> x = Array<double>::from({1, 2}, {2.0, 1.0});
  Array<double> p = srl::softmax_rows(x, 0.01);
  EXPECT_GT(p.at(0, 0), 1.0 - 1e-6);
}

TEST(SoftmaxRows, RowsSumToOneProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + static_cast<int>(rng.next_below(6));
    const int n = 1 + static_cast<int>(rng.next_below(8));
    Array<double> x = srl::test::random_array({m, n}, rng, -30.0, 30.0);
    Array<double> p = srl::softmax_rows(x, rng.uniform(0.05, 3.0));
    for (int i = 0; i < m; ++i) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        EXPECT_GE(p.at(i, j), 0.0);
        sum += p.at(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(SoftmaxRows, RejectsNonFiniteAndBadTemperature) {
  Array<double> x = Array<double>::from({1, 2}, {1.0, std::nan("")});
  EXPECT_THROW(srl::softmax_rows(x, 1.0), srl::ValueError);
  Array<double> ok = Array<double>::from({1, 2}, {1.0, 2.0});
  EXPECT_THROW(srl::softmax_rows(ok, 0.0), srl::ValueError);
  EXPECT_THROW(srl::softmax_rows(ok, -1.0), srl::ValueError);
}

TEST(CrossEntropyRows, UniformSelfEntropy) {
  Array<double> u = Array<double>::full({2, 4}, 0.25);
  Array<double> ce = srl::cross_entropy_rows(u, u);
  EXPECT_NEAR(ce.item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropyRows, OneHotPicksLogQ) {
  Rng rng(11);
  Array<double> q = srl::test::random_row_stochastic(1, 5, rng);
  Array<double> p = Array<double>::zeros({1, 5});
  p.at(0, 3) = 1.0;
  Array<double> ce = srl::cross_entropy_rows(p, q);
  EXPECT_NEAR(ce.item(), -std::log(q.at(0, 3)), 1e-12);
}

TEST(CrossEntropyRows, AgainstBruteForceOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Array<double> p = srl::test::random_row_stochastic(3, 5, rng);
    Array<double> q = srl::test::random_row_stochastic(3, 5, rng);
    // brute-force double-loop summation
    double want = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 5; ++j) want -= p.at(i, j) * std::log(q.at(i, j));
    want /= 3.0;
    EXPECT_NEAR(srl::cross_entropy_rows(p, q).item(), want, 1e-10);
  }
}

TEST(CrossEntropyRows, BoundedBelowByEntropy) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_below(7));
    Array<double> p = srl::test::random_row_stochastic(2, n, rng);
    Array<double> q = srl::test::random_row_stochastic(2, n, rng);
    const double hp = srl::cross_entropy_rows(p, p).item();
    EXPECT_GE(srl::cross_entropy_rows(p, q).item(), hp - 1e-12);
  }
  // equality case against a direct entropy computation
  Array<double> p = srl::test::random_row_stochastic(3, 6, rng);
  const double h = srl::cross_entropy_rows(p, p).item();
  double direct = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) direct -= p.at(i, j) * std::log(p.at(i, j));
  EXPECT_NEAR(h, direct / 3.0, 1e-9);
}

TEST(CrossEntropyRows, GradientFlowsOnlyIntoQ) {
  Rng rng(19);
  Array<double> p = srl::test::random_row_stochastic(2, 4, rng);
  Array<double> q = srl::test::random_row_stochastic(2, 4, rng);
  p.set_param();
  q.set_param();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Array<double> ce = srl::cross_entropy_rows(p, q);
    tape.backward(ce);
  }
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_EQ(p.grad()[i], 0.0);
  double qsum = 0.0;
  for (std::size_t i = 0; i < q.numel(); ++i) qsum += std::fabs(q.grad()[i]);
  EXPECT_GT(qsum, 0.0);
}

TEST(Backward, SumGivesOnes) {
  Array<double> x = Array<double>::from({2, 2}, {1, 2, 3, 4});
  x.set_param();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Array<double> loss = srl::sum_all(x);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 1.0);
}

TEST(Backward, HalfSquareGivesX) {
  Array<double> x = Array<double>::from({2, 2}, {0.5, -1.5, 2.0, 3.0});
  x.set_param();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Array<double> loss = srl::scale(srl::sum_all(srl::mul(x, x)), 0.5);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.data()[i]);
}

TEST(Backward, RejectsNonScalarLoss) {
  Array<double> x = Array<double>::from({2}, {1, 2});
  x.set_param();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Array<double> y = srl::scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), srl::ValueError);
}

TEST(Backward, UntrackedArraysUntouched) {
  Array<double> x = Array<double>::from({2}, {1, 2});
  Array<double> c = Array<double>::from({2}, {3, 4});
  x.set_param();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Array<double> loss = srl::sum_all(srl::mul(x, c));
    tape.backward(loss);
  }
  EXPECT_FALSE(c.tracked());
  EXPECT_TRUE(c.grad_values().empty());
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(AdamW, ZeroGradZeroDecayKeepsParams) {
  Array<double> p = Array<double>::from({2}, {1.0, -2.0});
  p.set_param();
  std::vector<Array<double>*> params{&p};
  srl::AdamWConfig cfg;
  cfg.lr = 0.1;
  srl::AdamW<double> opt(params, cfg);
  opt.step();
  EXPECT_DOUBLE_EQ(p.at(0), 1.0);
  EXPECT_DOUBLE_EQ(p.at(1), -2.0);
}

TEST(AdamW, FirstStepMagnitudeIsLr) {
  // single-step closed form: bias-corrected update equals lr for g = 1
  Array<double> p = Array<double>::from({1, 1}, {1.0});
  p.set_param();
  p.grad()[0] = 1.0;
  std::vector<Array<double>*> params{&p};
  srl::AdamWConfig cfg;
  cfg.lr = 0.1;
  srl::AdamW<double> opt(params, cfg);
  opt.step();
  EXPECT_NEAR(p.at(0), 0.9, 1e-6);
}

TEST(AdamW, DecayOnlyStep) {
  Array<double> p = Array<double>::from({1, 1}, {1.0});
  p.set_param();
  std::vector<Array<double>*> params{&p};
  srl::AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.1;
  srl::AdamW<double> opt(params, cfg);
  opt.step();
  EXPECT_NEAR(p.at(0), 0.99, 1e-12);
}

TEST(AdamW, NonFiniteGradientRejected) {
  Array<double> p = Array<double>::from({2, 1}, {1.0, 2.0});
  p.set_param();
  p.grad()[1] = std::numeric_limits<double>::infinity();
  std::vector<Array<double>*> params{&p};
  srl::AdamW<double> opt(params, srl::AdamWConfig{});
  EXPECT_THROW(opt.step(), srl::TrainError);
}

TEST(ClipGlobalNorm, RescalesWhenAboveThreshold) {
  Array<double> a = Array<double>::from({2}, {0.0, 0.0});
  Array<double> b = Array<double>::from({1}, {0.0});
  a.set_param();
  b.set_param();
  a.grad()[0] = 3.0;
  a.grad()[1] = 0.0;
  b.grad()[0] = 4.0;  // global norm 5
  std::vector<Array<double>*> params{&a, &b};
  const double pre = srl::clip_global_norm(params, 1.0);
  EXPECT_NEAR(pre, 5.0, 1e-12);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-12);
  // below threshold: untouched
  const double pre2 = srl::clip_global_norm(params, 10.0);
  EXPECT_NEAR(pre2, 1.0, 1e-12);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
}

TEST(Determinism, IdenticalInputsBitIdenticalOutputs) {
  Rng rng(23);
  Array<float> a = Array<float>::zeros({7, 5});
  Array<float> b = Array<float>::zeros({5, 6});
  for (auto& v : a.values()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b.values()) v = static_cast<float>(rng.uniform(-1, 1));
  Array<float> y1 = srl::matmul(a, b);
  Array<float> y2 = srl::matmul(a, b);
  Array<float> s1 = srl::softmax_rows(y1, 0.7f);
  Array<float> s2 = srl::softmax_rows(y2, 0.7f);
  for (std::size_t i = 0; i < y1.numel(); ++i) {
    EXPECT_EQ(y1.data()[i], y2.data()[i]);
  }
  for (std::size_t i = 0; i < s1.numel(); ++i) {
    EXPECT_EQ(s1.data()[i], s2.data()[i]);
  }
}

TEST(Rng, PortableStreamsAndMixing) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(srl::mix64(1, 2), srl::mix64(2, 1));
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  // truncated normal respects the clip
  Rng d(9);
  for (int i = 0; i < 1000; ++i)
    EXPECT_LE(std::fabs(d.truncated_normal(0.02)), 0.04 + 1e-12);
}
