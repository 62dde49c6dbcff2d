#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "carnas/autograd.hpp"
#include "carnas/graph.hpp"
#include "carnas/param_store.hpp"
#include "carnas/rng.hpp"

namespace carnas {

/// Candidate operators of the search space, in the order used to index
/// architecture coefficients.
enum class OperatorKind { GCN, GAT, GIN, SAGE, GraphConv, MLP };

inline constexpr std::size_t kNumOperators = 6;
inline constexpr std::array<OperatorKind, kNumOperators> kOperators{
    OperatorKind::GCN, OperatorKind::GAT, OperatorKind::GIN, OperatorKind::SAGE, OperatorKind::GraphConv,
    OperatorKind::MLP};

inline std::string_view operator_name(OperatorKind k) {
  switch (k) {
    case OperatorKind::GCN: return "gcn";
    case OperatorKind::GAT: return "gat";
    case OperatorKind::GIN: return "gin";
    case OperatorKind::SAGE: return "sage";
    case OperatorKind::GraphConv: return "graphconv";
    case OperatorKind::MLP: return "mlp";
  }
  return "?";
}

inline constexpr double kGatNegativeSlope = 0.2;

/// Directed message edges (no self-loops) over `num_nodes` nodes, with an
/// optional differentiable weight per edge that scales its message.
struct MessageGraph {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> src, dst;
  std::optional<Var> weight;  // num_edges x 1

  std::size_t num_edges() const { return src.size(); }

  static MessageGraph full(const GraphBatch& b) { return {b.num_nodes(), b.src, b.dst, std::nullopt}; }

  /// Keeps only the listed batch edges; `scores` (one per batch edge), if
  /// given, becomes the message weight of each kept edge.
  static MessageGraph subset(const GraphBatch& b, std::span<const std::size_t> edges,
                             std::optional<Var> scores = std::nullopt) {
    MessageGraph g{b.num_nodes(), {}, {}, std::nullopt};
    g.src.reserve(edges.size());
    g.dst.reserve(edges.size());
    for (std::size_t e : edges) {
      g.src.push_back(b.src[e]);
      g.dst.push_back(b.dst[e]);
    }
    if (scores && !edges.empty()) g.weight = gather_rows(*scores, edges);
    return g;
  }

  std::vector<double> in_degree() const {
    std::vector<double> deg(num_nodes, 0.0);
    for (std::size_t v : dst) deg[v] += 1.0;
    return deg;
  }
};

namespace detail {

inline Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(in, out);
  for (double& v : w.data()) v = uniform(rng, -limit, limit);
  return w;
}

inline void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                       bool bias = true) {
  store.add(prefix + ".weight", glorot(in, out, rng));
  if (bias) store.add(prefix + ".bias", Tensor::vector(std::vector<double>(out, 0.0)));
}

inline Var linear(Tape& t, ParamStore& store, const std::string& prefix, Var x) {
  Var y = matmul(x, t.param(store, prefix + ".weight"));
  if (store.contains(prefix + ".bias")) y = add_row(y, t.param(store, prefix + ".bias"));
  return y;
}

inline Var check_width(Var x, std::size_t expected, std::string_view what) {
  if (x.cols() != expected) {
    throw DimensionError(std::string(what) + ": input width " + std::to_string(x.cols()) + " but parameters expect " +
                         std::to_string(expected));
  }
  return x;
}

/// Sum over in-neighbours of h[src] * coeff[e], coeff optional.
inline Var aggregate(Var h, const MessageGraph& g, std::optional<Var> coeff) {
  if (g.num_edges() == 0) return h.tape().constant(Tensor(g.num_nodes, h.cols()));
  return propagate(h, g.src, g.dst, coeff, g.num_nodes);
}

/// Constant per-edge coefficients combined with the optional edge weight.
inline std::optional<Var> edge_coeff(Tape& t, const MessageGraph& g, std::optional<std::vector<double>> constant) {
  if (!constant) return g.weight;
  Var c = t.constant(Tensor::column(std::move(*constant)));
  return g.weight ? std::optional<Var>(mul(c, *g.weight)) : std::optional<Var>(c);
}

}  // namespace detail

/// Registers the parameters of one operator under `prefix`.
inline void init_operator(ParamStore& store, const std::string& prefix, OperatorKind kind, std::size_t d_in,
                          std::size_t d_out, Rng& rng) {
  using detail::add_linear;
  switch (kind) {
    case OperatorKind::GCN:
    case OperatorKind::MLP:
      add_linear(store, prefix, d_in, d_out, rng);
      break;
    case OperatorKind::GAT:
      add_linear(store, prefix, d_in, d_out, rng);
      store.add(prefix + ".att_src", detail::glorot(d_out, 1, rng));
      store.add(prefix + ".att_dst", detail::glorot(d_out, 1, rng));
      break;
    case OperatorKind::GIN:
      add_linear(store, prefix + ".mlp1", d_in, d_out, rng);
      add_linear(store, prefix + ".mlp2", d_out, d_out, rng);
      break;
    case OperatorKind::SAGE:
      add_linear(store, prefix, 2 * d_in, d_out, rng);
      break;
    case OperatorKind::GraphConv:
      add_linear(store, prefix + ".root", d_in, d_out, rng);
      add_linear(store, prefix + ".neigh", d_in, d_out, rng, false);
      break;
  }
}

/// Symmetric-normalised propagation with self-loops, before activation:
/// D^-1/2 (A + I) D^-1/2 X W + b, degrees counted on the edge support.
inline Var gcn_propagate(Tape& t, ParamStore& store, const std::string& prefix, const MessageGraph& g, Var x) {
  detail::check_width(x, store.value(prefix + ".weight").rows(), prefix);
  Var h = matmul(x, t.param(store, prefix + ".weight"));
  std::vector<double> deg = g.in_degree();
  for (double& d : deg) d += 1.0;
  std::vector<double> norm(g.num_edges());
  for (std::size_t e = 0; e < g.num_edges(); ++e) norm[e] = 1.0 / std::sqrt(deg[g.src[e]] * deg[g.dst[e]]);
  std::vector<double> self(g.num_nodes);
  for (std::size_t n = 0; n < g.num_nodes; ++n) self[n] = 1.0 / deg[n];
  Var out = mul_rows(h, t.constant(Tensor::column(std::move(self))));
  if (g.num_edges() > 0) out = add(out, detail::aggregate(h, g, detail::edge_coeff(t, g, std::move(norm))));
  return add_row(out, t.param(store, prefix + ".bias"));
}

/// Attention coefficients of a single-head GAT over in-neighbours plus self.
/// Returns the transformed features h = XW and one coefficient per extended
/// edge; extended edges are the message edges followed by one self-loop per node.
struct GatAttention {
  Var h;
  Var alpha;
  std::vector<std::size_t> src, dst;
};

inline GatAttention gat_attention(Tape& t, ParamStore& store, const std::string& prefix, const MessageGraph& g, Var x) {
  detail::check_width(x, store.value(prefix + ".weight").rows(), prefix);
  GatAttention a;
  a.h = matmul(x, t.param(store, prefix + ".weight"));
  a.src = g.src;
  a.dst = g.dst;
  for (std::size_t n = 0; n < g.num_nodes; ++n) {
    a.src.push_back(n);
    a.dst.push_back(n);
  }
  Var s_src = matmul(a.h, t.param(store, prefix + ".att_src"));
  Var s_dst = matmul(a.h, t.param(store, prefix + ".att_dst"));
  Var e = leaky_relu(add(gather_rows(s_src, a.src), gather_rows(s_dst, a.dst)), kGatNegativeSlope);
  a.alpha = segment_softmax(e, a.dst, g.num_nodes);
  return a;
}

/// Runs one candidate operator followed by ReLU.
///
/// GCN: normalised propagation with self-loops. GAT: single-head attention
/// with leaky-ReLU(0.2) scores softmaxed over in-neighbours and self.
/// GIN: 2-layer perceptron on x + sum of neighbours (eps = 0).
/// SAGE: W [x || mean of neighbours]. GraphConv: W1 x + W2 sum of neighbours.
/// MLP: W x, edges ignored.
inline Var op_forward(Tape& t, ParamStore& store, const std::string& prefix, OperatorKind kind, const MessageGraph& g,
                      Var x) {
  if (x.rows() != g.num_nodes) {
    throw DimensionError(prefix + ": " + std::to_string(x.rows()) + " feature rows for " +
                         std::to_string(g.num_nodes) + " nodes");
  }
  switch (kind) {
    case OperatorKind::GCN:
      return relu(gcn_propagate(t, store, prefix, g, x));
    case OperatorKind::GAT: {
      GatAttention a = gat_attention(t, store, prefix, g, x);
      Var coeff = a.alpha;
      if (g.weight) {
        Var self = t.constant(Tensor(g.num_nodes, 1, 1.0));
        Var w = transpose(concat_cols({transpose(*g.weight), transpose(self)}));
        coeff = mul(coeff, w);
      }
      Var out = propagate(a.h, a.src, a.dst, coeff, g.num_nodes);
      return relu(add_row(out, t.param(store, prefix + ".bias")));
    }
    case OperatorKind::GIN: {
      detail::check_width(x, store.value(prefix + ".mlp1.weight").rows(), prefix);
      Var z = g.num_edges() ? add(x, detail::aggregate(x, g, g.weight)) : x;
      Var hidden = relu(detail::linear(t, store, prefix + ".mlp1", z));
      return relu(detail::linear(t, store, prefix + ".mlp2", hidden));
    }
    case OperatorKind::SAGE: {
      detail::check_width(x, store.value(prefix + ".weight").rows() / 2, prefix);
      std::vector<double> inv = g.in_degree();
      for (double& d : inv) d = d > 0.0 ? 1.0 / d : 0.0;
      Var neigh = mul_rows(detail::aggregate(x, g, g.weight), t.constant(Tensor::column(std::move(inv))));
      return relu(detail::linear(t, store, prefix, concat_cols({x, neigh})));
    }
    case OperatorKind::GraphConv: {
      detail::check_width(x, store.value(prefix + ".root.weight").rows(), prefix);
      Var root = detail::linear(t, store, prefix + ".root", x);
      if (g.num_edges() == 0) return relu(root);
      Var neigh = matmul(detail::aggregate(x, g, g.weight), t.param(store, prefix + ".neigh.weight"));
      return relu(add(root, neigh));
    }
    case OperatorKind::MLP:
      detail::check_width(x, store.value(prefix + ".weight").rows(), prefix);
      return relu(detail::linear(t, store, prefix, x));
  }
  throw DimensionError("unknown operator kind");
}

/// Stack of GCN layers named "<prefix>.layer<l>", ReLU after each.
inline void init_gcn_stack(ParamStore& store, const std::string& prefix, std::size_t d_in, std::size_t width,
                           std::size_t layers, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) {
    init_operator(store, prefix + ".layer" + std::to_string(l), OperatorKind::GCN, l == 0 ? d_in : width, width, rng);
  }
}

inline Var gcn_stack_forward(Tape& t, ParamStore& store, const std::string& prefix, std::size_t layers,
                             const MessageGraph& g, Var x) {
  for (std::size_t l = 0; l < layers; ++l) x = op_forward(t, store, prefix + ".layer" + std::to_string(l), OperatorKind::GCN, g, x);
  return x;
}

/// Q independent GCN chunks per layer, concatenated. At layer 0 every chunk
/// reads the raw features; at layer l > 0 chunk q reads only chunk q of the
/// previous layer.
struct DisentangledEncoder {
  std::string prefix = "gnn0";
  std::size_t chunks = 4;
  std::size_t layers = 2;
  std::size_t d_in = 8;
  std::size_t width = 16;

  std::size_t chunk_width() const { return width / chunks; }

  std::string param_prefix(std::size_t q, std::size_t l) const {
    return prefix + ".chunk" + std::to_string(q) + ".layer" + std::to_string(l);
  }

  void init(ParamStore& store, Rng& rng) const {
    if (chunks == 0 || width % chunks != 0) {
      throw ConfigError("encoder width " + std::to_string(width) + " not divisible by " + std::to_string(chunks) + " chunks");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t q = 0; q < chunks; ++q) {
        init_operator(store, param_prefix(q, l), OperatorKind::GCN, l == 0 ? d_in : chunk_width(), chunk_width(), rng);
      }
    }
  }

  Var forward(Tape& t, ParamStore& store, const MessageGraph& g, Var x) const {
    if (chunks == 0 || width % chunks != 0) {
      throw ConfigError("encoder width " + std::to_string(width) + " not divisible by " + std::to_string(chunks) + " chunks");
    }
    Var z = x;
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<Var> parts;
      for (std::size_t q = 0; q < chunks; ++q) {
        Var in = l == 0 ? x : slice_cols(z, q * chunk_width(), (q + 1) * chunk_width());
        parts.push_back(op_forward(t, store, param_prefix(q, l), OperatorKind::GCN, g, in));
      }
      z = concat_cols(parts);
    }
    return z;
  }
};

/// Per-graph mean of node rows.
inline Var readout_mean(const GraphBatch& b, Var z) {
  if (z.rows() != b.num_nodes()) {
    throw DimensionError("readout_mean: " + std::to_string(z.rows()) + " rows for " + std::to_string(b.num_nodes()) +
                         " nodes");
  }
  std::vector<double> inv(b.num_graphs());
  for (std::size_t g = 0; g < b.num_graphs(); ++g) {
    if (b.nodes_in(g) == 0) throw DataError("readout_mean: graph " + std::to_string(g) + " has no nodes");
    inv[g] = 1.0 / static_cast<double>(b.nodes_in(g));
  }
  Var pooled = scatter_add_rows(z, b.node_graph, b.num_graphs());
  return mul_rows(pooled, z.tape().constant(Tensor::column(std::move(inv))));
}

}  // namespace carnas
