#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "carnas/errors.hpp"
#include "carnas/graph.hpp"
#include "carnas/rng.hpp"

namespace carnas {

/// Fixed shapes of the Spurious-Motif benchmark.
///
/// Bases: 0 Tree (balanced binary, depth 3, 15 nodes), 1 Ladder (6 rungs,
/// 12 nodes), 2 Wheel (hub + 12-cycle, 13 nodes).
/// Motifs: 0 Cycle (6-cycle), 1 House (square 0-1-2-3 plus apex 4 on 0,1),
/// 2 Crane (8 nodes, see crane_shape()).
struct ShapeGraph {
  std::size_t num_nodes = 0;
  std::vector<Edge> pairs;  // undirected, listed once
};

inline ShapeGraph tree_shape() {
  ShapeGraph s{15, {}};
  for (std::size_t i = 0; 2 * i + 2 < 15; ++i) {
    s.pairs.emplace_back(i, 2 * i + 1);
    s.pairs.emplace_back(i, 2 * i + 2);
  }
  return s;
}

inline ShapeGraph ladder_shape() {
  ShapeGraph s{12, {}};
  for (std::size_t i = 0; i < 6; ++i) {
    s.pairs.emplace_back(i, i + 6);
    if (i + 1 < 6) {
      s.pairs.emplace_back(i, i + 1);
      s.pairs.emplace_back(i + 6, i + 7);
    }
  }
  return s;
}

inline ShapeGraph wheel_shape() {
  ShapeGraph s{13, {}};
  for (std::size_t i = 1; i <= 12; ++i) {
    s.pairs.emplace_back(0, i);
    s.pairs.emplace_back(i, i % 12 + 1);
  }
  return s;
}

inline ShapeGraph cycle_shape() {
  ShapeGraph s{6, {}};
  for (std::size_t i = 0; i < 6; ++i) s.pairs.emplace_back(i, (i + 1) % 6);
  return s;
}

inline ShapeGraph house_shape() { return {5, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 0}, {4, 1}}}; }

/// Mast 0-1-2-3, jib 3-4-5-6, counter-jib 3-7, braces 2-4 and 2-7.
inline ShapeGraph crane_shape() {
  return {8, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {3, 7}, {2, 4}, {2, 7}}};
}

inline ShapeGraph base_shape(int s) {
  switch (s) {
    case 0: return tree_shape();
    case 1: return ladder_shape();
    case 2: return wheel_shape();
  }
  throw ConfigError("unknown base shape " + std::to_string(s));
}

inline ShapeGraph motif_shape(int c) {
  switch (c) {
    case 0: return cycle_shape();
    case 1: return house_shape();
    case 2: return crane_shape();
  }
  throw ConfigError("unknown motif shape " + std::to_string(c));
}

inline constexpr std::size_t kSpMotifFeatureDim = 8;

/// One-hot of min(degree, dim - 1) per node.
inline Tensor degree_features(std::size_t num_nodes, std::span<const Edge> directed_edges,
                              std::size_t dim = kSpMotifFeatureDim) {
  std::vector<std::size_t> deg(num_nodes, 0);
  for (const auto& [u, v] : directed_edges) ++deg[u];
  Tensor f(num_nodes, dim);
  for (std::size_t n = 0; n < num_nodes; ++n) f(n, std::min(deg[n], dim - 1)) = 1.0;
  return f;
}

struct SpMotifConfig {
  std::size_t num_graphs = 3000;
  double bias = 0.9;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;

  /// All violations, empty when valid.
  std::vector<std::string> errors() const {
    std::vector<std::string> e;
    if (!(bias >= 1.0 / 3.0 - 1e-6 && bias < 1.0)) e.push_back("bias must lie in [1/3, 1)");
    if (num_graphs < 3) e.push_back("num_graphs must be >= 3");
    if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0 ||
        std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      e.push_back("split fractions must be non-negative and sum to 1");
    }
    return e;
  }
};

/// Graph = base shape S joined to motif shape C by one bridge edge between a
/// uniformly chosen base node and a uniformly chosen motif node. Label = C.
inline Graph build_spmotif_graph(int base, int motif, Rng& rng) {
  const ShapeGraph b = base_shape(base);
  const ShapeGraph m = motif_shape(motif);
  std::vector<Edge> pairs = b.pairs;
  for (const auto& [u, v] : m.pairs) pairs.emplace_back(u + b.num_nodes, v + b.num_nodes);
  const std::size_t bu = uniform_index(rng, b.num_nodes);
  const std::size_t mv = uniform_index(rng, m.num_nodes);
  pairs.emplace_back(bu, b.num_nodes + mv);
  Graph g;
  g.num_nodes = b.num_nodes + m.num_nodes;
  g.edges = canonical_edges(g.num_nodes, pairs);
  g.features = degree_features(g.num_nodes, g.edges);
  g.label = motif;
  g.meta = GraphMeta{base, motif};
  return g;
}

/// Generates a Spurious-Motif dataset.
///
/// Motif classes are balanced within each split. In the training split a
/// graph of class C gets base S = C with probability b and each other base
/// with probability (1 - b) / 2; validation and test use b = 1/3. The counts
/// per (split, C) are stratified: round(p * n) graphs get each base, so the
/// empirical bias matches its target up to rounding.
inline Dataset generate_spmotif(const SpMotifConfig& cfg) {
  if (auto errs = cfg.errors(); !errs.empty()) throw ConfigError(errs.front());
  Rng rng = make_rng(cfg.seed, {0x53504d4fULL});

  const std::size_t n_train = static_cast<std::size_t>(std::llround(cfg.num_graphs * cfg.train_fraction));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.num_graphs * cfg.val_fraction));
  const std::size_t n_test = cfg.num_graphs - std::min(cfg.num_graphs, n_train + n_val);

  Dataset ds;
  ds.num_classes = 3;
  ds.feature_dim = kSpMotifFeatureDim;

  auto emit = [&](std::size_t count, double b, std::vector<std::size_t>& split) {
    std::vector<std::pair<int, int>> plan;  // (base, motif)
    for (int c = 0; c < 3; ++c) {
      const std::size_t nc = count / 3 + (static_cast<std::size_t>(c) < count % 3 ? 1 : 0);
      const std::size_t same = static_cast<std::size_t>(std::llround(b * static_cast<double>(nc)));
      const std::size_t rest = nc - same;
      const int o1 = (c + 1) % 3, o2 = (c + 2) % 3;
      for (std::size_t i = 0; i < same; ++i) plan.emplace_back(c, c);
      for (std::size_t i = 0; i < rest; ++i) plan.emplace_back(i % 2 == 0 ? o1 : o2, c);
    }
    std::shuffle(plan.begin(), plan.end(), rng);
    for (const auto& [s, c] : plan) {
      split.push_back(ds.graphs.size());
      ds.graphs.push_back(build_spmotif_graph(s, c, rng));
    }
  };
  emit(n_train, cfg.bias, ds.train);
  emit(n_val, 1.0 / 3.0, ds.val);
  emit(n_test, 1.0 / 3.0, ds.test);
  return ds;
}

struct SplitStats {
  std::size_t count = 0;
  std::array<double, 3> class_fraction{};
  double base_equals_motif = 0.0;  // empirical P(S = C); NaN without meta
  double mean_nodes = 0.0;
  double mean_edges = 0.0;  // undirected
};

inline SplitStats split_stats(const Dataset& ds, Split split) {
  SplitStats st;
  const auto& idx = ds.indices(split);
  st.count = idx.size();
  if (idx.empty()) return st;
  std::size_t same = 0, with_meta = 0;
  for (std::size_t i : idx) {
    const Graph& g = ds.graphs[i];
    if (g.label >= 0 && g.label < 3) st.class_fraction[static_cast<std::size_t>(g.label)] += 1.0;
    if (g.meta) {
      ++with_meta;
      same += g.meta->base == g.meta->motif ? 1 : 0;
    }
    st.mean_nodes += static_cast<double>(g.num_nodes);
    st.mean_edges += static_cast<double>(g.num_undirected_edges());
  }
  const double n = static_cast<double>(idx.size());
  for (double& f : st.class_fraction) f /= n;
  st.base_equals_motif = with_meta ? static_cast<double>(same) / static_cast<double>(with_meta) : std::nan("");
  st.mean_nodes /= n;
  st.mean_edges /= n;
  return st;
}

}  // namespace carnas
