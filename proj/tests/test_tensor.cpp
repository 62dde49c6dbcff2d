#include <cmath>

#include <gtest/gtest.h>

#include "carnas/carnas.hpp"

using namespace carnas;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor(Shape{1, 2, 3}, std::vector<double>(6)), DimensionError);
  Tensor t(Shape{2, 3}, std::vector<double>(6, 1.5));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.size(), 6u);
}

TEST(Tensor, ScalarAndVectorViews) {
  const Tensor s = Tensor::scalar(4.0);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.rows(), 1u);
  EXPECT_EQ(s.cols(), 1u);
  EXPECT_DOUBLE_EQ(s.item(), 4.0);
  const Tensor v = Tensor::vector({1, 2, 3});
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 3u);
  EXPECT_THROW(v.item(), DimensionError);
}

TEST(Tensor, MatrixLiteralIsRowMajor) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_DOUBLE_EQ(m(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(m(1, 0), 3.0);
  EXPECT_DOUBLE_EQ(m[3], 4.0);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t(2, 2);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
  t[1] = INFINITY;
  EXPECT_FALSE(t.all_finite());
}

TEST(ParamStore, NamesAreUnique) {
  ParamStore s;
  s.add("a.weight", Tensor(2, 2));
  EXPECT_THROW(s.add("a.weight", Tensor(1, 1)), StateError);
  EXPECT_THROW(s.at("missing"), StateError);
}

TEST(ParamStore, IteratesInNameOrder) {
  ParamStore s;
  s.add("b", Tensor(1, 1));
  s.add("a", Tensor(1, 1));
  s.add("a.x", Tensor(1, 1));
  EXPECT_EQ(s.names(), (std::vector<std::string>{"a", "a.x", "b"}));
}

TEST(ParamCount, EmptyStoreIsZero) {
  ParamStore s;
  EXPECT_EQ(param_count(s), 0u);
}

TEST(ParamCount, WeightPlusBias) {
  ParamStore s;
  s.add("layer.weight", Tensor(3, 4));
  s.add("layer.bias", Tensor::vector(std::vector<double>(4)));
  EXPECT_EQ(param_count(s, "layer"), 16u);
}

TEST(ParamCount, UnknownPrefixIsZero) {
  ParamStore s;
  s.add("layer.weight", Tensor(3, 4));
  EXPECT_EQ(param_count(s, "nothing"), 0u);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParamStore s;
  s.add("p", Tensor::matrix({{0.5, -2.0}}));
  s.at("p").has_grad = true;
  adam_step(s, {0.1});
  EXPECT_EQ(s.value("p"), Tensor::matrix({{0.5, -2.0}}));
}

TEST(Adam, FirstStepIsSignStep) {
  ParamStore s;
  s.add("p", Tensor::scalar(1.0));
  s.at("p").grad = Tensor::scalar(1.0);
  s.at("p").has_grad = true;
  adam_step(s, {0.1});
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(s.value("p").item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(s.at("p").step, 1u);
  EXPECT_DOUBLE_EQ(s.at("p").grad.item(), 0.0);
}

TEST(Adam, IdenticalParamsStayIdentical) {
  ParamStore s;
  s.add("a", Tensor::matrix({{0.3, 0.7}}));
  s.add("b", Tensor::matrix({{0.3, 0.7}}));
  for (int step = 0; step < 5; ++step) {
    for (auto& [name, p] : s) {
      p.grad = Tensor::matrix({{0.1 * step, -0.2}});
      p.has_grad = true;
    }
    adam_step(s);
  }
  EXPECT_EQ(s.value("a"), s.value("b"));
}

TEST(Adam, MissingGradientIsAnError) {
  ParamStore s;
  s.add("p", Tensor::scalar(1.0));
  EXPECT_THROW(adam_step(s), StateError);
}

TEST(Adam, MatchesHandRolledUpdate) {
  ParamStore s;
  s.add("p", Tensor::scalar(0.0));
  double m = 0, v = 0, p = 0;
  const double grads[] = {0.5, -1.0, 2.0};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    s.at("p").grad = Tensor::scalar(g);
    s.at("p").has_grad = true;
    adam_step(s, {0.01});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    p -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(s.value("p").item(), p, 1e-15);
  }
}
