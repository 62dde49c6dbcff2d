#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "carnas/errors.hpp"
#include "carnas/rng.hpp"
#include "carnas/tensor.hpp"

namespace carnas {

using Edge = std::pair<std::size_t, std::size_t>;

/// Base and motif shape ids of a synthetic graph.
struct GraphMeta {
  int base = 0;
  int motif = 0;
  friend bool operator==(const GraphMeta&, const GraphMeta&) = default;
};

/// An undirected graph stored as directed edges in both directions,
/// sorted lexicographically, without self-loops or duplicates.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  Tensor features;  // num_nodes x d_in
  int label = 0;
  std::optional<GraphMeta> meta;

  std::size_t num_undirected_edges() const { return edges.size() / 2; }

  friend bool operator==(const Graph&, const Graph&) = default;
};

/// Symmetrises and sorts an undirected edge list; rejects self-loops and
/// out-of-range endpoints.
inline std::vector<Edge> canonical_edges(std::size_t num_nodes, std::span<const Edge> pairs) {
  std::vector<Edge> out;
  out.reserve(2 * pairs.size());
  for (const auto& [u, v] : pairs) {
    if (u >= num_nodes || v >= num_nodes) {
      throw DataError("edge [" + std::to_string(u) + "," + std::to_string(v) + "] out of range for " +
                      std::to_string(num_nodes) + " nodes");
    }
    if (u == v) throw DataError("self-loop on node " + std::to_string(u));
    out.emplace_back(u, v);
    out.emplace_back(v, u);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Checks every stored-graph invariant; throws DataError on the first violation.
inline void validate_graph(const Graph& g) {
  if (g.features.rows() != g.num_nodes || g.features.rank() != 2) {
    throw DataError("feature matrix " + shape_str(g.features.shape()) + " does not match " +
                    std::to_string(g.num_nodes) + " nodes");
  }
  if (!std::is_sorted(g.edges.begin(), g.edges.end())) throw DataError("edge list not canonical");
  for (const auto& [u, v] : g.edges) {
    if (u >= g.num_nodes || v >= g.num_nodes) throw DataError("edge endpoint out of range");
    if (u == v) throw DataError("self-loop in storage");
    if (!std::binary_search(g.edges.begin(), g.edges.end(), Edge{v, u})) throw DataError("asymmetric edge list");
  }
}

enum class Split { Train, Val, Test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

struct Dataset {
  std::vector<Graph> graphs;
  std::vector<std::size_t> train, val, test;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;

  const std::vector<std::size_t>& indices(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Val: return val;
      case Split::Test: return test;
    }
    return train;
  }

  std::vector<std::size_t>& indices(Split s) { return const_cast<std::vector<std::size_t>&>(std::as_const(*this).indices(s)); }

  /// Split membership of each graph.
  std::vector<Split> split_of() const {
    std::vector<Split> out(graphs.size(), Split::Train);
    for (std::size_t i : val) out[i] = Split::Val;
    for (std::size_t i : test) out[i] = Split::Test;
    return out;
  }

  /// Throws DataError unless splits are disjoint and covering and every
  /// graph is valid with a label below num_classes.
  void validate() const {
    std::vector<int> seen(graphs.size(), 0);
    for (auto s : {Split::Train, Split::Val, Split::Test}) {
      for (std::size_t i : indices(s)) {
        if (i >= graphs.size()) throw DataError("split index out of range");
        ++seen[i];
      }
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (seen[i] != 1) throw DataError("graph " + std::to_string(i) + " is in " + std::to_string(seen[i]) + " splits");
    }
    for (const Graph& g : graphs) {
      validate_graph(g);
      if (g.label < 0 || static_cast<std::size_t>(g.label) >= num_classes) throw DataError("label outside num_classes");
      if (g.features.cols() != feature_dim) throw DataError("feature width differs from dataset feature_dim");
    }
  }
};

/// Block-diagonal union of several graphs.
struct GraphBatch {
  Tensor features;                       // total_nodes x d_in
  std::vector<std::size_t> node_offset;  // num_graphs + 1
  std::vector<std::size_t> edge_offset;  // num_graphs + 1
  std::vector<std::size_t> src, dst;     // merged directed edges, global node ids
  std::vector<std::size_t> node_graph;   // graph of each node
  std::vector<std::size_t> reverse_edge; // index of (v,u) for edge (u,v)
  std::vector<int> labels;
  std::vector<std::size_t> graph_ids;    // dataset indices
  std::vector<std::optional<GraphMeta>> metas;

  std::size_t num_graphs() const { return labels.size(); }
  std::size_t num_nodes() const { return node_graph.size(); }
  std::size_t num_edges() const { return src.size(); }
  std::size_t nodes_in(std::size_t g) const { return node_offset[g + 1] - node_offset[g]; }

  /// Splits the batch back into its member graphs.
  std::vector<Graph> unbatch() const {
    std::vector<Graph> out;
    const std::size_t d = features.cols();
    for (std::size_t g = 0; g < num_graphs(); ++g) {
      Graph gr;
      gr.num_nodes = nodes_in(g);
      const std::size_t off = node_offset[g];
      std::vector<double> f(features.data().begin() + static_cast<std::ptrdiff_t>(off * d),
                            features.data().begin() + static_cast<std::ptrdiff_t>((off + gr.num_nodes) * d));
      gr.features = Tensor(Shape{gr.num_nodes, d}, std::move(f));
      for (std::size_t e = edge_offset[g]; e < edge_offset[g + 1]; ++e) gr.edges.emplace_back(src[e] - off, dst[e] - off);
      gr.label = labels[g];
      gr.meta = metas[g];
      out.push_back(std::move(gr));
    }
    return out;
  }
};

inline GraphBatch collate(std::span<const Graph> graphs, std::span<const std::size_t> ids = {}) {
  GraphBatch b;
  const std::size_t d = graphs.empty() ? 0 : graphs.front().features.cols();
  std::size_t total_nodes = 0;
  for (const Graph& g : graphs) total_nodes += g.num_nodes;
  std::vector<double> feats;
  feats.reserve(total_nodes * d);
  b.node_offset.push_back(0);
  b.edge_offset.push_back(0);
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = graphs[gi];
    if (g.features.cols() != d) throw DimensionError("collate: feature widths differ across graphs");
    const std::size_t off = b.node_offset.back();
    const std::size_t eoff = b.src.size();
    feats.insert(feats.end(), g.features.data().begin(), g.features.data().end());
    for (std::size_t n = 0; n < g.num_nodes; ++n) b.node_graph.push_back(gi);
    for (const auto& [u, v] : g.edges) {
      b.src.push_back(u + off);
      b.dst.push_back(v + off);
    }
    // Edges are sorted and symmetric, so the reverse of each is found by binary search.
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      const auto [u, v] = g.edges[e];
      auto it = std::lower_bound(g.edges.begin(), g.edges.end(), Edge{v, u});
      if (it == g.edges.end() || *it != Edge{v, u}) throw DataError("collate: graph is not symmetric");
      b.reverse_edge.push_back(eoff + static_cast<std::size_t>(it - g.edges.begin()));
    }
    b.node_offset.push_back(off + g.num_nodes);
    b.edge_offset.push_back(b.src.size());
    b.labels.push_back(g.label);
    b.graph_ids.push_back(ids.empty() ? gi : ids[gi]);
    b.metas.push_back(g.meta);
  }
  b.features = Tensor(Shape{total_nodes, d}, std::move(feats));
  return b;
}

inline GraphBatch collate(const Dataset& ds, std::span<const std::size_t> ids) {
  std::vector<Graph> gs;
  gs.reserve(ids.size());
  for (std::size_t i : ids) gs.push_back(ds.graphs[i]);
  return collate(gs, ids);
}

/// Partitions a split into batches. The training split is shuffled by
/// (seed, epoch); other splits keep dataset order. The last partial batch is
/// kept, except that a trailing singleton is folded into the previous batch
/// because interventions need at least two graphs per batch.
inline std::vector<std::vector<std::size_t>> batch_indices(const Dataset& ds, Split split, std::size_t batch_size,
                                                           std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  std::vector<std::size_t> order = ds.indices(split);
  if (order.empty()) throw DataError("split '" + std::string(split_name(split)) + "' is empty");
  if (split == Split::Train) {
    Rng rng = make_rng(seed, {0x5348554646ULL, epoch});
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

inline std::vector<GraphBatch> make_batches(const Dataset& ds, Split split, std::size_t batch_size, std::uint64_t seed,
                                            std::uint64_t epoch) {
  std::vector<GraphBatch> out;
  for (const auto& ids : batch_indices(ds, split, batch_size, seed, epoch)) out.push_back(collate(ds, ids));
  return out;
}

}  // namespace carnas
