// Copyright 2026 The endorecon Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "endorecon/diffnum/gradcheck.hpp"
#include "endorecon/diffnum/ops.hpp"
#include "endorecon/error.hpp"

namespace dn = endorecon::diffnum;
using dn::Array;
using dn::Tape;
using dn::Var;

namespace {

Array random_array(dn::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Array a = Array::zeros(std::move(shape));
  for (double& v : a.values()) v = dist(rng);
  return a;
}

}  // namespace

TEST(DiffnumForward, IdentityMatmul) {
  Tape t;
  Var out = dn::matmul(t.constant(Array::identity(2)), t.constant(Array::matrix(2, 1, {1, 2})));
  EXPECT_EQ(out.value(), Array::matrix(2, 1, {1, 2}));
}

TEST(DiffnumForward, ElementwiseAdd) {
  Tape t;
  Var out = t.constant(Array::vector({1, 2})) + t.constant(Array::vector({3, 4}));
  EXPECT_EQ(out.value(), Array::vector({4, 6}));
}

TEST(DiffnumForward, MatmulHandArithmetic) {
  Tape t;
  Var out = dn::matmul(t.constant(Array::matrix(2, 2, {1, 2, 3, 4})), t.constant(Array::matrix(2, 1, {1, 1})));
  EXPECT_EQ(out.value(), Array::matrix(2, 1, {3, 7}));
}

TEST(DiffnumForward, ShapeMismatchReportsBothShapes) {
  Tape t;
  Var a = t.constant(Array::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.constant(Array::matrix(2, 1, {1, 1}));
  try {
    dn::matmul(a, b);
    FAIL() << "expected a shape error";
  } catch (const endorecon::Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,1]"), std::string::npos) << msg;
  }
  EXPECT_THROW(t.constant(Array::vector({1, 2})) + t.constant(Array::vector({1, 2, 3})), endorecon::Error);
}

TEST(DiffnumForward, ScalarBroadcast) {
  Tape t;
  Var out = t.constant(Array::vector({1, 2, 3})) * t.constant(2.0);
  EXPECT_EQ(out.value(), Array::vector({2, 4, 6}));
}

TEST(DiffnumBackward, SquareAtThree) {
  Tape t;
  Var x = t.input(Array::scalar(3.0));
  auto g = t.backward(x * x);
  EXPECT_DOUBLE_EQ(g.at(x)[0], 6.0);
}

TEST(DiffnumBackward, SumOfMatrixVectorProduct) {
  Tape t;
  Var a = t.constant(Array::matrix(2, 2, {1, 2, 3, 4}));
  Var x = t.input(Array::vector({0.3, -0.7}));
  auto g = t.backward(dn::sum(dn::matmul(a, x)));
  EXPECT_EQ(g.at(x), Array::vector({4, 6}));
}

TEST(DiffnumBackward, FrozenInputHasNoEntry) {
  Tape t;
  Var x = t.input(Array::scalar(2.0));
  Var frozen = t.input(Array::scalar(5.0), false);
  auto g = t.backward(x * frozen);
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(frozen));
  EXPECT_EQ(g.size(), 1u);
}

TEST(DiffnumBackward, RejectsNonScalarOutput) {
  Tape t;
  Var x = t.input(Array::vector({1, 2}));
  EXPECT_THROW(t.backward(x * 2.0), endorecon::Error);
}

TEST(DiffnumGradCheck, QuadraticIsNearExact) {
  Array x = Array::scalar(3.0);
  auto r = dn::finite_diff_check([](Tape&, std::span<const Var> in) { return in[0] * in[0]; }, std::span(&x, 1));
  EXPECT_TRUE(r.finite);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(DiffnumGradCheck, CubicPolynomial) {
  Array x = Array::vector({1.3, -0.4, 2.2});
  auto cubic = [](Tape&, std::span<const Var> in) {
    Var v = in[0];
    return dn::sum(v * v * v * 0.5 - v * v * 2.0 + v * 3.0 + 1.0);
  };
  EXPECT_LT(dn::finite_diff_check(cubic, std::span(&x, 1)).max_rel_error, 1e-7);
}

TEST(DiffnumGradCheck, ConstantExpressionHasZeroError) {
  Array x = Array::vector({1, 2});
  auto r = dn::finite_diff_check([](Tape& t, std::span<const Var>) { return t.constant(4.0); }, std::span(&x, 1));
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.entries_checked, 2u);
}

TEST(DiffnumGradCheck, ReportsNonFiniteGradient) {
  Array x = Array::scalar(0.0);
  auto r = dn::finite_diff_check([](Tape&, std::span<const Var> in) { return dn::log(in[0]); }, std::span(&x, 1));
  EXPECT_FALSE(r.finite);
  EXPECT_FALSE(r.passed(1e-4));
  EXPECT_NE(r.message.find("index 0"), std::string::npos);
}

TEST(DiffnumProperties, BackwardIsLinear) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Array a0 = random_array({3, 4}, rng);
    const Array x0 = random_array({4}, rng);
    const double ca = coef(rng), cb = coef(rng);
    auto f = [&](Tape& t, Var x) { return dn::sum(dn::sigmoid(dn::matmul(t.constant(a0), x))); };
    auto g = [&](Tape&, Var x) { return dn::mean(x * x * x); };

    Tape t1;
    Var x1 = t1.input(x0);
    auto gf = t1.backward(f(t1, x1)).at(x1);
    Tape t2;
    Var x2 = t2.input(x0);
    auto gg = t2.backward(g(t2, x2)).at(x2);
    Tape t3;
    Var x3 = t3.input(x0);
    auto gc = t3.backward(f(t3, x3) * ca + g(t3, x3) * cb).at(x3);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(gc[i], ca * gf[i] + cb * gg[i], 1e-12);
  }
}

TEST(DiffnumProperties, RandomCompositionsPassGradCheck) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Array> in = {random_array({3, 4}, rng), random_array({4, 2}, rng), random_array({3, 2}, rng)};
    auto expr = [](Tape&, std::span<const Var> v) {
      Var h = dn::sigmoid(dn::matmul(v[0], v[1]) + v[2]);
      Var k = h * v[2] - dn::smooth_abs(v[2] * h + 0.25);
      return dn::mean(k * k) + dn::mean(dn::smooth_abs(dn::matmul(v[0], v[1])));
    };
    auto r = dn::finite_diff_check(expr, in);
    ASSERT_TRUE(r.passed(1e-4)) << "seed " << seed << " err " << r.max_rel_error << " " << r.message;
  }
}

TEST(DiffnumProperties, ForwardIsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(5);
    Tape t;
    Var a = t.constant(random_array({8, 8}, rng));
    Var b = t.constant(random_array({8, 8}, rng));
    return dn::softplus(dn::matmul(a, b) / 3.0).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(DiffnumPrimitives, UnaryAndStructuralOpsPassGradCheck) {
  std::mt19937_64 rng(3);
  std::vector<Array> in = {random_array({4, 3}, rng), random_array({4, 2}, rng)};
  auto expr = [](Tape&, std::span<const Var> v) {
    Var a = dn::exp(v[0] * 0.3) + dn::softplus(v[0]);
    Var b = dn::log(dn::softplus(v[1]) + 0.5) / dn::sqrt(dn::square(v[1]) + 1.0);
    Var c = dn::concat_cols(a, b);
    Var d = dn::matmul(dn::transpose(c), c);
    Var e = dn::gather(dn::reshape(d, {25}), {0, 3, 7, 7, 24});
    return dn::sum(e) + dn::mean(dn::clamp(v[0], -0.5, 0.5) * v[0]) + dn::sum(2.0 / (dn::softplus(v[1]) + 1.0));
  };
  auto r = dn::finite_diff_check(expr, in);
  EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error << " " << r.message;
}

TEST(DiffnumPrimitives, Im2colAndBoxFilterGradCheck) {
  std::mt19937_64 rng(4);
  std::vector<Array> in = {random_array({12, 2}, rng), random_array({18, 3}, rng), random_array({12}, rng)};
  auto expr = [](Tape&, std::span<const Var> v) {
    Var cols = dn::im2col3x3(v[0], 3, 4);
    Var conv = dn::matmul(cols, v[1]);
    Var box = dn::box3x3_reflect(v[2], 3, 4);
    return dn::mean(dn::square(conv)) + dn::sum(box * v[2]);
  };
  auto r = dn::finite_diff_check(expr, in);
  EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error << " " << r.message;
}

TEST(DiffnumPrimitives, Im2colZeroPadsBorder) {
  Tape t;
  Var x = t.constant(Array::matrix(4, 1, {1, 2, 3, 4}));
  Array cols = dn::im2col3x3(x, 2, 2).value();
  // Pixel (0,0): taps top row and left column are padding, centre tap is itself.
  EXPECT_EQ(cols.at(0, 0), 0.0);
  EXPECT_EQ(cols.at(0, 4), 1.0);
  EXPECT_EQ(cols.at(0, 5), 2.0);
  EXPECT_EQ(cols.at(0, 8), 4.0);
}

TEST(DiffnumPrimitives, BoxFilterOfConstantIsConstant) {
  Tape t;
  Array box = dn::box3x3_reflect(t.constant(Array::full({3, 5}, 0.7)), 3, 5).value();
  for (double v : box.values()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(DiffnumPrimitives, BilinearSampleValuesAndGradients) {
  Tape t;
  Var field = t.constant(Array::matrix(2, 3, {0, 1, 2, 10, 11, 12}));
  Var u = t.constant(Array::vector({0.5, 2.0, 1.0, -1.0}));
  Var v = t.constant(Array::vector({0.0, 1.0, 0.25, -1.0}));
  Array s = dn::bilinear_sample(field, 2, 3, u, v, {1, 1, 1, 1}).value();
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 12.0);
  EXPECT_DOUBLE_EQ(s[2], 3.5);
  EXPECT_DOUBLE_EQ(s[3], 0.0);

  std::mt19937_64 rng(9);
  std::vector<Array> in = {random_array({5, 6}, rng), Array::vector({0.3, 2.6, 4.1, 1.7}),
                           Array::vector({0.2, 3.3, 1.9, 2.5})};
  auto expr = [](Tape&, std::span<const Var> vv) {
    return dn::sum(dn::square(dn::bilinear_sample(vv[0], 5, 6, vv[1], vv[2], {1, 1, 1, 1})));
  };
  auto r = dn::finite_diff_check(expr, in);
  EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error << " " << r.message;
}

TEST(DiffnumPrimitives, RodriguesMatchesClosedFormAndGradCheck) {
  Tape t;
  Array r = dn::rodrigues(t.constant(Array::vector({0, 0, M_PI / 2}))).value();
  // R e_x = e_y
  EXPECT_NEAR(r.at(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(r.at(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(r.at(2, 0), 0.0, 1e-15);

  for (const auto& rv : {std::vector<double>{0.3, -0.2, 0.5}, std::vector<double>{1e-3, 2e-3, -1e-3},
                         std::vector<double>{0, 0, 0}, std::vector<double>{-1.2, 0.9, 2.1}}) {
    std::vector<Array> in = {Array::vector(rv), Array::matrix(3, 3, {0.3, -1, 2, 0.5, 0.1, -0.4, 1, 1, -2})};
    auto expr = [](Tape&, std::span<const Var> v) { return dn::sum(dn::rodrigues(v[0]) * v[1]); };
    auto res = dn::finite_diff_check(expr, in, {true, false});
    EXPECT_TRUE(res.passed(1e-7)) << res.max_rel_error;
  }
}
