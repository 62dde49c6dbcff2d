#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "carnas/carnas.hpp"
#include "test_support.hpp"

using namespace carnas;
using namespace carnas::testing;

namespace {

PrototypeBank small_bank() { return {"protos", 2, kNumOperators, 5}; }

Tensor coefficients(ParamStore& s, const PrototypeBank& bank, const Tensor& h) {
  Tape t;
  return arch_coefficients(t, s, bank, t.constant(h)).value();
}

std::size_t row_argmax(const Tensor& a, std::size_t r, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t u = 1; u < kNumOperators; ++u) {
    if (a(r, k * kNumOperators + u) > a(r, k * kNumOperators + best)) best = u;
  }
  return best;
}

struct SupernetFixture {
  Supernet net{"supernet", 2, 3, 4, 3};
  ParamStore store;
  GraphBatch batch;

  explicit SupernetFixture(std::uint64_t seed) {
    Rng rng = make_rng(seed);
    net.init(store, rng);
    std::vector<Graph> gs;
    for (int i = 0; i < 3; ++i) gs.push_back(random_graph(5 + i, 0.5, 3, rng));
    batch = collate(gs);
  }

  Tensor logits(const Tensor& arch, bool trainable_arch = false) {
    Tape t;
    if (trainable_arch) {
      ParamStore with_arch = store;
      with_arch.add("arch", arch);
      Var v = t.param(with_arch, "arch");
      return net.forward(t, with_arch, v, batch, t.constant(batch.features)).value();
    }
    return net.forward(t, store, t.constant(arch), batch, t.constant(batch.features)).value();
  }

  // The same network with every layer fixed to operator u, built from primitives.
  Tensor pure_path(OperatorKind kind) {
    Tape t;
    const MessageGraph g = MessageGraph::full(batch);
    Var x = t.constant(batch.features);
    for (std::size_t k = 0; k < net.layers; ++k) x = op_forward(t, store, net.op_prefix(k, kind), kind, g, x);
    Var pooled = readout_mean(batch, x);
    return add_row(matmul(pooled, t.param(store, "supernet.classifier.weight")),
                   t.param(store, "supernet.classifier.bias"))
        .value();
  }
};

}  // namespace

TEST(ArchCoefficients, EqualPrototypesGiveUniformRows) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  s.add(bank.name, Tensor(bank.layers * bank.ops, bank.dim, 0.37));
  Rng rng = make_rng(1);
  const Tensor a = coefficients(s, bank, random_tensor(4, 5, rng));
  for (double v : a.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(ArchCoefficients, ZeroEmbeddingGivesUniformRows) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(2);
  bank.init(s, rng, 3.0);
  const Tensor a = coefficients(s, bank, Tensor(2, 5));
  for (double v : a.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(ArchCoefficients, MatchesSoftmaxOfDotProducts) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(3);
  bank.init(s, rng, 1.0);
  const Tensor h = random_tensor(3, 5, rng);
  const Tensor a = coefficients(s, bank, h);
  const Tensor& p = s.value(bank.name);
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t k = 0; k < bank.layers; ++k) {
      std::vector<double> dots(kNumOperators);
      for (std::size_t u = 0; u < kNumOperators; ++u) {
        for (std::size_t d = 0; d < 5; ++d) dots[u] += p(k * kNumOperators + u, d) * h(g, d);
      }
      double z = 0;
      for (double d : dots) z += std::exp(d);
      for (std::size_t u = 0; u < kNumOperators; ++u) {
        EXPECT_NEAR(a(g, k * kNumOperators + u), std::exp(dots[u]) / z, 1e-14);
      }
    }
  }
}

TEST(ArchCoefficients, SharedShiftWithinLayerCancels) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(4);
  bank.init(s, rng, 1.0);
  const Tensor h = random_tensor(3, 5, rng);
  const Tensor before = coefficients(s, bank, h);
  const Tensor c = random_tensor(1, 5, rng, -2, 2);
  for (std::size_t u = 0; u < kNumOperators; ++u) {
    for (std::size_t d = 0; d < 5; ++d) s.at(bank.name).value(1 * kNumOperators + u, d) += c(0, d);
  }
  const Tensor after = coefficients(s, bank, h);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-10);
}

TEST(ArchCoefficients, RowsLieOnSimplex) {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore s;
    const PrototypeBank bank = small_bank();
    bank.init(s, rng, 2.0);
    const Tensor a = coefficients(s, bank, random_tensor(4, 5, rng, -3, 3));
    for (std::size_t g = 0; g < 4; ++g) {
      for (std::size_t k = 0; k < bank.layers; ++k) {
        double sum = 0;
        for (std::size_t u = 0; u < kNumOperators; ++u) {
          const double v = a(g, k * kNumOperators + u);
          EXPECT_GT(v, 0.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(ArchCoefficients, ScalingEmbeddingKeepsArgmax) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(6);
  bank.init(s, rng, 1.0);
  const Tensor h = random_tensor(5, 5, rng);
  const Tensor base = coefficients(s, bank, h);
  for (double lambda : {0.1, 0.5, 2.0, 10.0}) {
    Tensor hs = h;
    for (double& v : hs.data()) v *= lambda;
    const Tensor a = coefficients(s, bank, hs);
    for (std::size_t g = 0; g < 5; ++g) {
      for (std::size_t k = 0; k < bank.layers; ++k) EXPECT_EQ(row_argmax(a, g, k), row_argmax(base, g, k));
    }
  }
}

TEST(ArchCoefficients, DimensionMismatch) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(7);
  bank.init(s, rng);
  EXPECT_THROW(coefficients(s, bank, Tensor(2, 4)), DimensionError);
}

TEST(ArchCoefficients, ArchMatrixView) {
  const Tensor c = Tensor::matrix({{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}});
  const Tensor m = arch_matrix(c, 0, 2);
  EXPECT_EQ(m.shape(), (Shape{2, 6}));
  EXPECT_DOUBLE_EQ(m(1, 0), 7.0);
}

TEST(ArchCoefficients, GradientMatchesFiniteDifferences) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(8);
  bank.init(s, rng, 1.0);
  s.add("h", random_tensor(3, 5, rng));
  auto f = [&](Tape& t, ParamStore& st) { return project(t, arch_coefficients(t, st, bank, t.param(st, "h")), 6); };
  EXPECT_LT(grad_check(f, s), 1e-4);
}

TEST(Supernet, OneHotArchitectureIsThePureOperator) {
  SupernetFixture fx(10);
  for (OperatorKind kind : kOperators) {
    const Tensor arch = one_hot_arch(fx.batch.num_graphs(), fx.net.layers, kind);
    const Tensor expect = fx.pure_path(kind);
    EXPECT_EQ(fx.logits(arch), expect) << operator_name(kind);
    EXPECT_EQ(fx.logits(arch, true), expect) << operator_name(kind);
  }
}

TEST(Supernet, PerGraphArchitectureSelectsPerGraphOperator) {
  SupernetFixture fx(11);
  Tensor arch = one_hot_arch(3, fx.net.layers, OperatorKind::GIN);
  const Tensor gat = one_hot_arch(3, fx.net.layers, OperatorKind::GAT);
  for (std::size_t c = 0; c < arch.cols(); ++c) arch(1, c) = gat(1, c);
  const Tensor mixed = fx.logits(arch);
  const Tensor gin_all = fx.pure_path(OperatorKind::GIN), gat_all = fx.pure_path(OperatorKind::GAT);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(mixed(0, c), gin_all(0, c));
    EXPECT_EQ(mixed(1, c), gat_all(1, c));
    EXPECT_EQ(mixed(2, c), gin_all(2, c));
  }
}

TEST(Supernet, MixtureIsConvexCombinationAtOneLayer) {
  Supernet net{"supernet", 1, 3, 4, 2};
  ParamStore s;
  Rng rng = make_rng(12);
  net.init(s, rng);
  const GraphBatch b = batch_of(random_graph(6, 0.5, 3, rng));
  Tensor arch(1, kNumOperators);
  const std::vector<double> w{0.1, 0.3, 0.05, 0.25, 0.2, 0.1};
  for (std::size_t u = 0; u < kNumOperators; ++u) arch(0, u) = w[u];
  Tape t;
  Var x = t.constant(b.features);
  const Tensor mixed = net.embed_nodes(t, s, t.constant(arch), b, x).value();
  Tensor expect(mixed.rows(), mixed.cols());
  for (std::size_t u = 0; u < kNumOperators; ++u) {
    const Tensor o = op_forward(t, s, net.op_prefix(0, kOperators[u]), kOperators[u], MessageGraph::full(b), x).value();
    for (std::size_t i = 0; i < o.size(); ++i) expect[i] += w[u] * o[i];
  }
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(mixed[i], expect[i], 1e-14);
}

TEST(Supernet, SameArchitectureSameLogits) {
  SupernetFixture fx(13);
  Graph g = fx.batch.unbatch()[0];
  fx.batch = collate(std::vector<Graph>{g, g});
  Tensor arch = uniform_arch(2, fx.net.layers);
  const Tensor same = fx.logits(arch);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(same(0, c), same(1, c));
  const Tensor other = one_hot_arch(2, fx.net.layers, OperatorKind::SAGE);
  for (std::size_t c = 0; c < arch.cols(); ++c) arch(1, c) = other(1, c);
  const Tensor diff = fx.logits(arch);
  bool any = false;
  for (std::size_t c = 0; c < 3; ++c) any = any || diff(0, c) != diff(1, c);
  EXPECT_TRUE(any);
}

TEST(Supernet, ZeroWeightsGiveZeroLogits) {
  Supernet net{"supernet", 1, 3, 4, 3};
  ParamStore s;
  Rng rng = make_rng(14);
  net.init(s, rng);
  for (auto& [name, p] : s) p.value.fill(0.0);
  const GraphBatch b = batch_of(random_graph(5, 0.5, 3, rng));
  Tape t;
  const Tensor logits = net.forward(t, s, t.constant(uniform_arch(1, 1)), b, t.constant(b.features)).value();
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Supernet, RejectsInvalidArchitecture) {
  SupernetFixture fx(15);
  Tensor arch = uniform_arch(3, fx.net.layers);
  arch(0, 0) += 0.1;
  EXPECT_THROW(fx.logits(arch), NumericError);
  arch = uniform_arch(3, fx.net.layers);
  arch(2, 0) = -arch(2, 0);
  arch(2, 1) += 2 * arch(2, 1);
  EXPECT_THROW(fx.logits(arch), NumericError);
  EXPECT_THROW(fx.logits(uniform_arch(2, fx.net.layers)), DimensionError);
}

TEST(Supernet, Deterministic) {
  SupernetFixture a(16), b(16);
  const Tensor arch = uniform_arch(3, a.net.layers);
  EXPECT_EQ(a.logits(arch), b.logits(arch));
}

TEST(Supernet, GradientMatchesFiniteDifferences) {
  Supernet net{"supernet", 2, 3, 3, 2};
  ParamStore s;
  Rng rng = make_rng(17);
  net.init(s, rng);
  const GraphBatch b = collate(std::vector<Graph>{random_graph(5, 0.5, 3, rng), random_graph(4, 0.6, 3, rng)});
  const PrototypeBank bank{"protos", 2, kNumOperators, 4};
  bank.init(s, rng, 1.0);
  s.add("h", random_tensor(2, 4, rng));
  const std::vector<int> labels{0, 1};
  auto f = [&](Tape& t, ParamStore& st) {
    Var arch = arch_coefficients(t, st, bank, t.param(st, "h"));
    return cross_entropy(net.forward(t, st, arch, b, t.constant(b.features)), labels);
  };
  const GradCheckResult r = grad_check_detailed(f, s);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(LossOp, IdenticalPairCountsTwice) {
  ParamStore s;
  const PrototypeBank bank{"protos", 1, 2, 3};
  s.add(bank.name, Tensor::matrix({{1, 2, 3}, {1, 2, 3}}));
  Tape t;
  EXPECT_NEAR(loss_op(t, s, bank).value().item(), 2.0, 1e-12);
}

TEST(LossOp, OrthogonalIsZero) {
  ParamStore s;
  const PrototypeBank bank{"protos", 1, 3, 3};
  s.add(bank.name, Tensor::matrix({{2, 0, 0}, {0, 0.5, 0}, {0, 0, 7}}));
  Tape t;
  EXPECT_NEAR(loss_op(t, s, bank).value().item(), 0.0, 1e-12);
}

TEST(LossOp, OppositeVectorsGiveMinusTwo) {
  ParamStore s;
  const PrototypeBank bank{"protos", 1, 2, 2};
  s.add(bank.name, Tensor::matrix({{1, -3}, {-1, 3}}));
  Tape t;
  EXPECT_NEAR(loss_op(t, s, bank).value().item(), -2.0, 1e-12);
}

TEST(LossOp, MatchesPairwiseCosineSum) {
  ParamStore s;
  const PrototypeBank bank{"protos", 3, kNumOperators, 4};
  Rng rng = make_rng(18);
  bank.init(s, rng, 1.0);
  const Tensor& p = s.value(bank.name);
  double expect = 0.0;
  for (std::size_t k = 0; k < bank.layers; ++k) {
    for (std::size_t u = 0; u < bank.ops; ++u) {
      for (std::size_t v = 0; v < bank.ops; ++v) {
        if (u == v) continue;
        double dot = 0, nu = 0, nv = 0;
        for (std::size_t d = 0; d < 4; ++d) {
          const double a = p(k * bank.ops + u, d), b = p(k * bank.ops + v, d);
          dot += a * b;
          nu += a * a;
          nv += b * b;
        }
        expect += dot / (std::sqrt(nu) * std::sqrt(nv));
      }
    }
  }
  Tape t;
  // The 1e-12 norm guard shifts each cosine by about 1e-12 / |p|.
  EXPECT_NEAR(loss_op(t, s, bank).value().item(), expect, 1e-10);
}

TEST(LossOp, ZeroPrototypeIsFinite) {
  ParamStore s;
  const PrototypeBank bank{"protos", 1, 2, 2};
  s.add(bank.name, Tensor::matrix({{0, 0}, {1, 1}}));
  Tape t;
  EXPECT_TRUE(std::isfinite(loss_op(t, s, bank).value().item()));
}

TEST(LossOp, GradientMatchesFiniteDifferences) {
  ParamStore s;
  const PrototypeBank bank{"protos", 2, kNumOperators, 4};
  Rng rng = make_rng(19);
  bank.init(s, rng, 1.0);
  EXPECT_LT(grad_check([&](Tape& t, ParamStore& st) { return loss_op(t, st, bank); }, s), 1e-4);
}

TEST(LossArch, IdenticalMatricesGiveZero) {
  Tape t;
  Var m = t.constant(Tensor::matrix({{0.2, 0.8}, {0.2, 0.8}, {0.2, 0.8}}));
  EXPECT_EQ(loss_arch(m, 1, 3).value().item(), 0.0);
}

TEST(LossArch, PopulationVarianceOfTwoScalars) {
  Tape t;
  EXPECT_DOUBLE_EQ(loss_arch(t.constant(Tensor::matrix({{0}, {2}})), 1, 2).value().item(), 1.0);
}

TEST(LossArch, AveragesOverGraphsAndSumsEntries) {
  // Graph 0: entries {0,2} and {1,1} -> variances 1 and 0. Graph 1: {4,0} and {0,0} -> 4 and 0.
  Tape t;
  Var m = t.constant(Tensor::matrix({{0, 1}, {2, 1}, {4, 0}, {0, 0}}));
  EXPECT_DOUBLE_EQ(loss_arch(m, 2, 2).value().item(), (1.0 + 4.0) / 2.0);
}

TEST(LossArch, NonNegativeAndZeroOnlyWhenIdentical) {
  Rng rng = make_rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    Tensor m = random_tensor(6, 4, rng);
    EXPECT_GT(loss_arch(t.constant(m), 2, 3).value().item(), 0.0);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 4; ++c) m(r, c) = m((r / 3) * 3, c);
    }
    EXPECT_EQ(loss_arch(t.constant(m), 2, 3).value().item(), 0.0);
  }
}

TEST(LossArch, NoInterventionMeansNoVariance) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(21);
  bank.init(s, rng, 1.0);
  Tape t;
  Var hc = t.constant(random_tensor(4, 5, rng)), hs = t.constant(random_tensor(4, 5, rng));
  const InterventionSet iv = intervene(hc, hs, 4, 0.0, rng);
  EXPECT_EQ(loss_arch(arch_coefficients(t, s, bank, iv.vectors), 4, 4).value().item(), 0.0);
}

TEST(LossArch, Errors) {
  Tape t;
  EXPECT_THROW(loss_arch(t.constant(Tensor(3, 2)), 3, 1), ConfigError);
  EXPECT_THROW(loss_arch(t.constant(Tensor(5, 2)), 2, 2), DimensionError);
}

TEST(LossArch, GradientMatchesFiniteDifferencesThroughInterventions) {
  ParamStore s;
  const PrototypeBank bank = small_bank();
  Rng rng = make_rng(22);
  bank.init(s, rng, 1.0);
  s.add("hc", random_tensor(3, 5, rng));
  s.add("hs", random_tensor(3, 5, rng));
  auto f = [&](Tape& t, ParamStore& st) {
    Rng r = make_rng(5);
    const InterventionSet iv = intervene(t.param(st, "hc"), t.param(st, "hs"), 3, 0.4, r);
    return loss_arch(arch_coefficients(t, st, bank, iv.vectors), 3, 3);
  };
  EXPECT_LT(grad_check(f, s), 1e-4);
}
