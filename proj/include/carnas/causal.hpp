#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "carnas/autograd.hpp"
#include "carnas/gnn_ops.hpp"
#include "carnas/graph.hpp"
#include "carnas/param_store.hpp"
#include "carnas/rng.hpp"

namespace carnas {

/// Two-layer perceptron over [Z_u || Z_v] producing one score per directed
/// edge, d0*2 -> d0 -> 1 with a ReLU hidden layer and a sigmoid output.
struct EdgeScorer {
  std::string prefix = "scorer";
  std::size_t node_dim = 16;

  void init(ParamStore& store, Rng& rng) const {
    detail::add_linear(store, prefix + ".fc1", 2 * node_dim, node_dim, rng);
    detail::add_linear(store, prefix + ".fc2", node_dim, 1, rng);
  }

  /// Scores in (0,1); both directions of a pair carry the mean of their two
  /// directional scores.
  Var forward(Tape& t, ParamStore& store, Var z, const GraphBatch& b) const {
    detail::check_width(z, node_dim, prefix);
    if (b.num_edges() == 0) return t.constant(Tensor(0, 1));
    Var pair = concat_cols({gather_rows(z, b.src), gather_rows(z, b.dst)});
    Var hidden = relu(detail::linear(t, store, prefix + ".fc1", pair));
    Var directed = sigmoid(detail::linear(t, store, prefix + ".fc2", hidden));
    return scale(add(directed, gather_rows(directed, b.reverse_edge)), 0.5);
  }
};

/// Partition of each graph's edges into a causal and a non-causal set.
struct CausalSplit {
  double ratio = 1.0;
  std::vector<std::size_t> causal_edges;    // batch directed edge ids
  std::vector<std::size_t> spurious_edges;  // batch directed edge ids
  std::vector<bool> is_causal;              // per batch directed edge
  std::vector<std::size_t> num_pairs;       // undirected pairs per graph
  std::vector<std::size_t> num_causal_pairs;
  std::vector<bool> edgeless;               // graphs with no edges
};

/// Number of pairs kept at ratio t out of m: ceil(t * m), with a small
/// tolerance so that products such as 0.85 * 20 land on the integer.
inline std::size_t topt_count(double t, std::size_t m) {
  const double k = std::ceil(t * static_cast<double>(m) - 1e-9);
  return std::min(m, static_cast<std::size_t>(std::max(0.0, k)));
}

/// Per graph, keeps the ceil(t*m) highest-scoring undirected pairs. Pairs are
/// indexed canonically by their (u < v) position in the sorted edge list;
/// equal scores prefer the smaller canonical index.
inline CausalSplit select_topt(std::span<const double> scores, const GraphBatch& b, double t) {
  if (!(t > 0.0 && t <= 1.0)) throw ConfigError("top-t ratio must lie in (0, 1]");
  if (scores.size() != b.num_edges()) {
    throw DimensionError("select_topt: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(b.num_edges()) + " edges");
  }
  CausalSplit s;
  s.ratio = t;
  s.is_causal.assign(b.num_edges(), false);
  for (std::size_t g = 0; g < b.num_graphs(); ++g) {
    std::vector<std::size_t> pairs;  // canonical order = sorted (u, v) with u < v
    for (std::size_t e = b.edge_offset[g]; e < b.edge_offset[g + 1]; ++e) {
      if (b.src[e] < b.dst[e]) pairs.push_back(e);
    }
    const std::size_t m = pairs.size();
    s.num_pairs.push_back(m);
    s.edgeless.push_back(m == 0);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return scores[pairs[a]] > scores[pairs[c]]; });
    const std::size_t k = topt_count(t, m);
    s.num_causal_pairs.push_back(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t e = pairs[order[i]];
      s.is_causal[e] = true;
      s.is_causal[b.reverse_edge[e]] = true;
    }
  }
  for (std::size_t e = 0; e < b.num_edges(); ++e) (s.is_causal[e] ? s.causal_edges : s.spurious_edges).push_back(e);
  return s;
}

struct SubgraphEmbeddings {
  Var causal;    // H_c, num_graphs x d1
  Var spurious;  // H_s, num_graphs x d1
};

/// Shared GCN encoder applied separately to the causal and non-causal edge
/// sets (all nodes kept in both), followed by mean readout. Each kept edge's
/// message is scaled by its score so the scorer receives gradient.
struct SubgraphEncoder {
  std::string prefix = "gnn1";
  std::size_t layers = 2;
  std::size_t d_in = 8;
  std::size_t width = 32;

  void init(ParamStore& store, Rng& rng) const { init_gcn_stack(store, prefix, d_in, width, layers, rng); }

  Var embed(Tape& t, ParamStore& store, const GraphBatch& b, const MessageGraph& g, Var x) const {
    return readout_mean(b, gcn_stack_forward(t, store, prefix, layers, g, x));
  }

  SubgraphEmbeddings forward(Tape& t, ParamStore& store, const GraphBatch& b, const CausalSplit& split, Var x,
                             Var scores) const {
    const MessageGraph gc = MessageGraph::subset(b, split.causal_edges, scores);
    const MessageGraph gs = MessageGraph::subset(b, split.spurious_edges, scores);
    return {embed(t, store, b, gc, x), embed(t, store, b, gs, x)};
  }
};

/// Linear classifier on subgraph embeddings and its mean loss: softmax
/// cross-entropy for multi-class, logistic loss on one logit for binary.
inline Var classification_loss(Var logits, std::span<const int> labels) {
  return logits.cols() == 1 ? binary_cross_entropy(logits, labels) : cross_entropy(logits, labels);
}

inline Var causal_classify_loss(Tape& t, ParamStore& store, const std::string& prefix, Var hc,
                                std::span<const int> labels) {
  return classification_loss(detail::linear(t, store, prefix, hc), labels);
}

struct InterventionSet {
  Var vectors;  // row g * n_s + j holds H_v[j] of graph g
  std::vector<std::vector<std::size_t>> candidates;
  std::size_t per_graph = 0;
  double mu = 0.0;
};

/// H_v[j] = (1 - mu) H_c + mu H_s[candidate j]. Each graph draws its n_s
/// candidates uniformly without replacement from the batch's H_s pool,
/// itself included.
inline InterventionSet intervene(Var hc, Var hs, std::size_t n_s, double mu, Rng& rng) {
  const std::size_t pool = hs.rows();
  if (hc.rows() != pool || hc.cols() != hs.cols()) {
    throw DimensionError("intervene: H_c " + shape_str(hc.shape()) + " vs H_s " + shape_str(hs.shape()));
  }
  if (n_s == 0 || n_s > pool) {
    throw ConfigError("intervene: " + std::to_string(n_s) + " candidates requested from a pool of " + std::to_string(pool));
  }
  InterventionSet iv;
  iv.per_graph = n_s;
  iv.mu = mu;
  std::vector<std::size_t> own, other;
  std::vector<std::size_t> perm(pool);
  for (std::size_t g = 0; g < pool; ++g) {
    std::iota(perm.begin(), perm.end(), 0);
    // Partial Fisher-Yates: the first n_s entries are a uniform sample.
    for (std::size_t j = 0; j < n_s; ++j) std::swap(perm[j], perm[j + uniform_index(rng, pool - j)]);
    iv.candidates.emplace_back(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_s));
    for (std::size_t j = 0; j < n_s; ++j) {
      own.push_back(g);
      other.push_back(perm[j]);
    }
  }
  iv.vectors = add(scale(gather_rows(hc, own), 1.0 - mu), scale(gather_rows(hs, other), mu));
  return iv;
}

}  // namespace carnas
