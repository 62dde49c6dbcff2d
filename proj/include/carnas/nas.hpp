#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "carnas/autograd.hpp"
#include "carnas/gnn_ops.hpp"
#include "carnas/graph.hpp"
#include "carnas/param_store.hpp"
#include "carnas/rng.hpp"

namespace carnas {

/// Trainable operator prototypes, stored as one (layers * ops) x dim matrix
/// whose row k * ops + u is the prototype of operator u at layer k.
struct PrototypeBank {
  std::string name = "nas.prototypes";
  std::size_t layers = 3;
  std::size_t ops = kNumOperators;
  std::size_t dim = 32;

  void init(ParamStore& store, Rng& rng, double range = 0.1) const {
    Tensor p(layers * ops, dim);
    for (double& v : p.data()) v = uniform(rng, -range, range);
    store.add(name, std::move(p));
  }
};

/// Mixture coefficients for a batch of graph embeddings: row g holds the
/// flattened layers x ops matrix of graph g, each layer a softmax over
/// prototype scores op_u^k . H_g.
inline Var arch_coefficients(Tape& t, ParamStore& store, const PrototypeBank& bank, Var h) {
  if (h.cols() != bank.dim) {
    throw DimensionError("arch_coefficients: embedding width " + std::to_string(h.cols()) + " vs prototype dim " +
                         std::to_string(bank.dim));
  }
  const std::size_t n = h.rows();
  Var logits = matmul(h, transpose(t.param(store, bank.name)));
  Var per_layer = softmax_rows(reshape(logits, Shape{n * bank.layers, bank.ops}));
  return reshape(per_layer, Shape{n, bank.layers * bank.ops});
}

/// K x |O| architecture matrix of one graph from a coefficient batch.
inline Tensor arch_matrix(const Tensor& coeffs, std::size_t graph, std::size_t layers) {
  const std::size_t ops = coeffs.cols() / layers;
  std::vector<double> v(coeffs.data().begin() + static_cast<std::ptrdiff_t>(graph * coeffs.cols()),
                        coeffs.data().begin() + static_cast<std::ptrdiff_t>((graph + 1) * coeffs.cols()));
  return Tensor(Shape{layers, ops}, std::move(v));
}

/// Sum over layers of cosine similarities between all ordered pairs of
/// distinct prototypes within the layer.
inline Var loss_op(Tape& t, ParamStore& store, const PrototypeBank& bank) {
  Var unit = row_normalize(t.param(store, bank.name), 1e-12);
  std::vector<std::size_t> layer_of(bank.layers * bank.ops);
  for (std::size_t r = 0; r < layer_of.size(); ++r) layer_of[r] = r / bank.ops;
  Var per_layer = scatter_add_rows(unit, layer_of, bank.layers);
  // |sum_u n_u|^2 = sum_{u != u'} cos(u, u') + sum_u |n_u|^2
  return sub(sum(mul(per_layer, per_layer)), sum(mul(unit, unit)));
}

/// Mean over graphs of the summed elementwise population variance of each
/// graph's n_s intervened architecture matrices. Row g * n_s + j of
/// `intervened` is the flattened matrix of intervention j on graph g.
inline Var loss_arch(Var intervened, std::size_t num_graphs, std::size_t n_s) {
  if (n_s < 2) throw ConfigError("loss_arch needs at least 2 interventions per graph, got " + std::to_string(n_s));
  if (intervened.rows() != num_graphs * n_s) {
    throw DimensionError("loss_arch: " + std::to_string(intervened.rows()) + " rows for " + std::to_string(num_graphs) +
                         " graphs x " + std::to_string(n_s) + " interventions");
  }
  std::vector<std::size_t> owner(num_graphs * n_s), first(num_graphs * n_s);
  for (std::size_t r = 0; r < owner.size(); ++r) {
    owner[r] = r / n_s;
    first[r] = owner[r] * n_s;
  }
  // Shifting by each graph's first matrix keeps identical matrices at exactly zero.
  Var shifted = sub(intervened, gather_rows(intervened, first));
  Var centre = scale(scatter_add_rows(shifted, owner, num_graphs), 1.0 / static_cast<double>(n_s));
  Var diff = sub(shifted, gather_rows(centre, owner));
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(n_s * num_graphs));
}

/// Differentiable super-network: layer k outputs sum_u alpha_u^k o_u(x),
/// with alpha taken per graph, then mean pooling and a linear classifier.
struct Supernet {
  std::string prefix = "supernet";
  std::size_t layers = 3;
  std::size_t d_in = 8;
  std::size_t width = 64;
  std::size_t num_outputs = 3;

  std::string op_prefix(std::size_t k, OperatorKind kind) const {
    return prefix + ".layer" + std::to_string(k) + "." + std::string(operator_name(kind));
  }

  void init(ParamStore& store, Rng& rng) const {
    for (std::size_t k = 0; k < layers; ++k) {
      for (OperatorKind kind : kOperators) init_operator(store, op_prefix(k, kind), kind, k == 0 ? d_in : width, width, rng);
    }
    detail::add_linear(store, prefix + ".classifier", width, num_outputs, rng);
  }

  /// Node representations after all layers; `arch` is num_graphs x (layers * |O|).
  Var embed_nodes(Tape& t, ParamStore& store, Var arch, const GraphBatch& b, Var x) const {
    check_arch(arch.value(), b.num_graphs());
    const MessageGraph g = MessageGraph::full(b);
    const bool frozen = !t.requires_grad(arch);
    for (std::size_t k = 0; k < layers; ++k) {
      std::vector<Var> outs;
      std::vector<std::size_t> cols;
      for (std::size_t u = 0; u < kNumOperators; ++u) {
        const std::size_t c = k * kNumOperators + u;
        // A frozen all-zero column contributes exactly nothing; skip its operator.
        if (frozen && column_is_zero(arch.value(), c)) continue;
        outs.push_back(op_forward(t, store, op_prefix(k, kOperators[u]), kOperators[u], g, x));
        cols.push_back(c);
      }
      x = mix_rows(outs, arch, cols, b.node_graph);
    }
    return x;
  }

  Var forward(Tape& t, ParamStore& store, Var arch, const GraphBatch& b, Var x) const {
    return detail::linear(t, store, prefix + ".classifier", readout_mean(b, embed_nodes(t, store, arch, b, x)));
  }

  void check_arch(const Tensor& a, std::size_t num_graphs) const {
    if (a.rows() != num_graphs || a.cols() != layers * kNumOperators) {
      throw DimensionError("supernet: architecture " + shape_str(a.shape()) + " for " + std::to_string(num_graphs) +
                           " graphs and " + std::to_string(layers) + " layers");
    }
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t k = 0; k < layers; ++k) {
        double s = 0.0;
        for (std::size_t u = 0; u < kNumOperators; ++u) {
          const double v = a(r, k * kNumOperators + u);
          if (v < 0.0) throw NumericError("supernet: negative mixture coefficient");
          s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw NumericError("supernet: architecture row not on the simplex");
      }
    }
  }

  static bool column_is_zero(const Tensor& a, std::size_t col) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
      if (a(r, col) != 0.0) return false;
    }
    return true;
  }
};

/// Frozen architecture with every layer set to one operator.
inline Tensor one_hot_arch(std::size_t num_graphs, std::size_t layers, OperatorKind kind) {
  Tensor a(num_graphs, layers * kNumOperators);
  const auto u = static_cast<std::size_t>(kind);
  for (std::size_t g = 0; g < num_graphs; ++g) {
    for (std::size_t k = 0; k < layers; ++k) a(g, k * kNumOperators + u) = 1.0;
  }
  return a;
}

inline Tensor uniform_arch(std::size_t num_graphs, std::size_t layers) {
  return Tensor(num_graphs, layers * kNumOperators, 1.0 / static_cast<double>(kNumOperators));
}

}  // namespace carnas
