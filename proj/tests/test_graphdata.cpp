#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "carnas/carnas.hpp"

using namespace carnas;

namespace {

Graph make_graph(std::size_t n, std::vector<Edge> pairs, int label, std::size_t d = 3, double base = 0.0) {
  Graph g;
  g.num_nodes = n;
  g.edges = canonical_edges(n, pairs);
  g.features = Tensor(n, d);
  for (std::size_t i = 0; i < g.features.size(); ++i) g.features[i] = base + 0.25 * static_cast<double>(i);
  g.label = label;
  return g;
}

Dataset small_dataset(std::size_t count) {
  Dataset ds;
  ds.num_classes = 2;
  ds.feature_dim = 3;
  for (std::size_t i = 0; i < count; ++i) {
    ds.train.push_back(i);
    ds.graphs.push_back(make_graph(3 + i % 3, {{0, 1}, {1, 2}}, static_cast<int>(i % 2), 3, static_cast<double>(i)));
  }
  return ds;
}

std::size_t undirected(const ShapeGraph& s) { return s.pairs.size(); }

}  // namespace

TEST(Shapes, SizesAndEdgeCounts) {
  EXPECT_EQ(tree_shape().num_nodes, 15u);
  EXPECT_EQ(undirected(tree_shape()), 14u);
  EXPECT_EQ(ladder_shape().num_nodes, 12u);
  EXPECT_EQ(undirected(ladder_shape()), 16u);
  EXPECT_EQ(wheel_shape().num_nodes, 13u);
  EXPECT_EQ(undirected(wheel_shape()), 24u);
  EXPECT_EQ(cycle_shape().num_nodes, 6u);
  EXPECT_EQ(undirected(cycle_shape()), 6u);
  EXPECT_EQ(house_shape().num_nodes, 5u);
  EXPECT_EQ(undirected(house_shape()), 6u);
  EXPECT_EQ(crane_shape().num_nodes, 8u);
  EXPECT_EQ(undirected(crane_shape()), 9u);
}

TEST(Shapes, AreConnectedWithoutDuplicates) {
  for (int s = 0; s < 6; ++s) {
    const ShapeGraph g = s < 3 ? base_shape(s) : motif_shape(s - 3);
    std::set<Edge> seen;
    std::vector<std::size_t> comp(g.num_nodes);
    for (std::size_t i = 0; i < g.num_nodes; ++i) comp[i] = i;
    auto find = [&](std::size_t x) {
      while (comp[x] != x) x = comp[x];
      return x;
    };
    for (auto [u, v] : g.pairs) {
      ASSERT_NE(u, v);
      ASSERT_TRUE(seen.insert({std::min(u, v), std::max(u, v)}).second);
      comp[find(u)] = find(v);
    }
    for (std::size_t i = 0; i < g.num_nodes; ++i) EXPECT_EQ(find(i), find(0)) << "shape " << s;
  }
}

TEST(DegreeFeatures, IsolatedNodeIsIndexZero) {
  const Tensor f = degree_features(1, {});
  EXPECT_EQ(f.cols(), 8u);
  EXPECT_DOUBLE_EQ(f(0, 0), 1.0);
}

TEST(DegreeFeatures, DegreeThree) {
  const std::vector<Edge> e = canonical_edges(4, std::vector<Edge>{{0, 1}, {0, 2}, {0, 3}});
  const Tensor f = degree_features(4, e);
  EXPECT_DOUBLE_EQ(f(0, 3), 1.0);
  EXPECT_DOUBLE_EQ(f(1, 1), 1.0);
}

TEST(DegreeFeatures, WheelHubIsCapped) {
  const ShapeGraph w = wheel_shape();
  const Tensor f = degree_features(w.num_nodes, canonical_edges(w.num_nodes, w.pairs));
  EXPECT_DOUBLE_EQ(f(0, 7), 1.0);
  for (std::size_t n = 0; n < w.num_nodes; ++n) {
    double s = 0;
    for (std::size_t c = 0; c < 8; ++c) s += f(n, c);
    EXPECT_DOUBLE_EQ(s, 1.0);
  }
}

TEST(CanonicalEdges, SymmetrizesAndRejectsBadEdges) {
  const auto e = canonical_edges(3, std::vector<Edge>{{1, 0}, {1, 2}, {2, 1}});
  EXPECT_EQ(e, (std::vector<Edge>{{0, 1}, {1, 0}, {1, 2}, {2, 1}}));
  EXPECT_THROW(canonical_edges(2, std::vector<Edge>{{0, 5}}), DataError);
  EXPECT_THROW(canonical_edges(2, std::vector<Edge>{{1, 1}}), DataError);
}

TEST(SpMotif, GraphIsBasePlusMotifPlusOneBridge) {
  Rng rng = make_rng(5);
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 3; ++c) {
      const Graph g = build_spmotif_graph(s, c, rng);
      const ShapeGraph b = base_shape(s), m = motif_shape(c);
      ASSERT_EQ(g.num_nodes, b.num_nodes + m.num_nodes);
      EXPECT_EQ(g.num_undirected_edges(), b.pairs.size() + m.pairs.size() + 1);
      std::size_t bridges = 0;
      for (auto [u, v] : g.edges) {
        if (u < b.num_nodes && v >= b.num_nodes) ++bridges;
      }
      EXPECT_EQ(bridges, 1u);
      EXPECT_EQ(g.label, c);
      ASSERT_TRUE(g.meta.has_value());
      EXPECT_EQ(g.meta->base, s);
      EXPECT_EQ(g.meta->motif, c);
      EXPECT_NO_THROW(validate_graph(g));
    }
  }
}

TEST(SpMotif, UnbiasedTrainSplit) {
  SpMotifConfig cfg;
  cfg.bias = 1.0 / 3.0;
  cfg.seed = 3;
  const Dataset ds = generate_spmotif(cfg);
  EXPECT_NEAR(split_stats(ds, Split::Train).base_equals_motif, 1.0 / 3.0, 0.03);
}

TEST(SpMotif, BiasedTrainUnbiasedTest) {
  SpMotifConfig cfg;
  cfg.bias = 0.9;
  cfg.seed = 7;
  const Dataset ds = generate_spmotif(cfg);
  EXPECT_EQ(ds.graphs.size(), 3000u);
  EXPECT_NEAR(split_stats(ds, Split::Train).base_equals_motif, 0.9, 0.02);
  EXPECT_NEAR(split_stats(ds, Split::Test).base_equals_motif, 1.0 / 3.0, 0.03);
  EXPECT_NEAR(split_stats(ds, Split::Val).base_equals_motif, 1.0 / 3.0, 0.03);
}

TEST(SpMotif, ClassBalanceWithinEachSplit) {
  SpMotifConfig cfg;
  cfg.seed = 1;
  const Dataset ds = generate_spmotif(cfg);
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    for (double f : split_stats(ds, sp).class_fraction) EXPECT_NEAR(f, 1.0 / 3.0, 0.03);
  }
}

TEST(SpMotif, NonMatchingBasesSplitEvenly) {
  SpMotifConfig cfg;
  cfg.bias = 0.6;
  const Dataset ds = generate_spmotif(cfg);
  std::map<std::pair<int, int>, int> count;
  for (std::size_t i : ds.train) ++count[{ds.graphs[i].meta->motif, ds.graphs[i].meta->base}];
  for (int c = 0; c < 3; ++c) {
    EXPECT_LE(std::abs(count[{c, (c + 1) % 3}] - count[{c, (c + 2) % 3}]), 1);
  }
}

TEST(SpMotif, SplitsAreDisjointAndCovering) {
  SpMotifConfig cfg;
  cfg.num_graphs = 301;
  const Dataset ds = generate_spmotif(cfg);
  EXPECT_NO_THROW(ds.validate());
  std::vector<std::size_t> all = ds.train;
  all.insert(all.end(), ds.val.begin(), ds.val.end());
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(all.size(), 301u);
}

TEST(SpMotif, MeanSizeFollowsShapeSizes) {
  // Bases average 40/3 nodes, motifs 19/3; the bridge adds one edge.
  const Dataset ds = generate_spmotif(SpMotifConfig{});
  const SplitStats st = split_stats(ds, Split::Test);
  EXPECT_NEAR(st.mean_nodes, 59.0 / 3.0, 0.5);
  EXPECT_NEAR(st.mean_edges, (54.0 + 21.0) / 3.0 + 1.0, 0.5);
}

TEST(SpMotif, SymmetricStorageWithoutSelfLoops) {
  SpMotifConfig cfg;
  cfg.num_graphs = 60;
  for (const Graph& g : generate_spmotif(cfg).graphs) {
    std::set<Edge> e(g.edges.begin(), g.edges.end());
    for (auto [u, v] : g.edges) {
      EXPECT_NE(u, v);
      EXPECT_TRUE(e.contains({v, u}));
    }
  }
}

TEST(SpMotif, DeterministicForSeed) {
  SpMotifConfig cfg;
  cfg.num_graphs = 90;
  cfg.seed = 42;
  std::ostringstream a, b;
  write_jsonl(generate_spmotif(cfg), a);
  write_jsonl(generate_spmotif(cfg), b);
  EXPECT_EQ(a.str(), b.str());
  cfg.seed = 43;
  std::ostringstream c;
  write_jsonl(generate_spmotif(cfg), c);
  EXPECT_NE(a.str(), c.str());
}

TEST(SpMotif, RejectsBiasOutsideRange) {
  SpMotifConfig cfg;
  for (double b : {0.2, 1.0, 1.5}) {
    cfg.bias = b;
    EXPECT_THROW(generate_spmotif(cfg), ConfigError) << b;
  }
}

TEST(Jsonl, MinimalGraph) {
  std::istringstream in(R"({"num_nodes":2,"edges":[[0,1]],"features":[[1],[1]],"label":0,"split":"train"})");
  const Dataset ds = read_jsonl(in);
  ASSERT_EQ(ds.graphs.size(), 1u);
  EXPECT_EQ(ds.graphs[0].edges, (std::vector<Edge>{{0, 1}, {1, 0}}));
  EXPECT_EQ(ds.train, (std::vector<std::size_t>{0}));
  EXPECT_EQ(ds.feature_dim, 1u);
}

TEST(Jsonl, EmptyInputGivesEmptyDataset) {
  const auto path = std::filesystem::temp_directory_path() / "carnas_empty.jsonl";
  std::ofstream(path).close();
  const Dataset ds = load_jsonl(path.string());
  EXPECT_TRUE(ds.graphs.empty());
  std::filesystem::remove(path);
}

TEST(Jsonl, ErrorsNameTheLine) {
  auto error_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_jsonl(in);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string ok = R"({"num_nodes":2,"edges":[],"features":[[1],[1]],"label":0,"split":"train"})";
  const std::string bad_edge = R"({"num_nodes":2,"edges":[[0,5]],"features":[[1],[1]],"label":0,"split":"train"})";
  EXPECT_NE(error_of(ok + "\n" + bad_edge).find("line 2"), std::string::npos);
  EXPECT_NE(error_of(R"({"num_nodes":1,"edges":[],"features":[[1]],"label":0})").find("split"), std::string::npos);
  EXPECT_NE(error_of(R"({"num_nodes":2,"edges":[],"features":[[1],[1,2]],"label":0,"split":"val"})").find("ragged"),
            std::string::npos);
  EXPECT_NE(error_of("not json").find("line 1"), std::string::npos);
  EXPECT_NE(error_of(R"({"num_nodes":2,"edges":[[1,1]],"features":[[1],[1]],"label":0,"split":"test"})"),
            std::string());
}

TEST(Jsonl, SaveLoadRoundTripIsExact) {
  SpMotifConfig cfg;
  cfg.num_graphs = 30;
  const Dataset ds = generate_spmotif(cfg);
  const auto path = std::filesystem::temp_directory_path() / "carnas_roundtrip.jsonl";
  save_jsonl(ds, path.string());
  const Dataset back = load_jsonl(path.string());
  ASSERT_EQ(back.graphs.size(), ds.graphs.size());
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    EXPECT_EQ(back.graphs[i].edges, ds.graphs[i].edges);
    EXPECT_EQ(back.graphs[i].features, ds.graphs[i].features);
    EXPECT_EQ(back.graphs[i].label, ds.graphs[i].label);
    EXPECT_EQ(back.graphs[i].meta, ds.graphs[i].meta);
  }
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.val, ds.val);
  EXPECT_EQ(back.test, ds.test);
  EXPECT_EQ(back.num_classes, ds.num_classes);
  std::ostringstream a, b;
  write_jsonl(ds, a);
  write_jsonl(back, b);
  EXPECT_EQ(a.str(), b.str());
  std::filesystem::remove(path);
}

TEST(Batches, SizesKeepLastPartialBatch) {
  const Dataset ds = small_dataset(10);
  const auto b = batch_indices(ds, Split::Train, 4, 0, 1);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);
}

TEST(Batches, TrailingSingletonIsFolded) {
  const Dataset ds = small_dataset(9);
  const auto b = batch_indices(ds, Split::Train, 4, 0, 1);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].size(), 5u);
}

TEST(Batches, ShuffleDependsOnSeedAndEpoch) {
  const Dataset ds = small_dataset(40);
  EXPECT_EQ(batch_indices(ds, Split::Train, 8, 3, 2), batch_indices(ds, Split::Train, 8, 3, 2));
  EXPECT_NE(batch_indices(ds, Split::Train, 8, 3, 2), batch_indices(ds, Split::Train, 8, 3, 3));
  EXPECT_NE(batch_indices(ds, Split::Train, 8, 3, 2), batch_indices(ds, Split::Train, 8, 4, 2));
}

TEST(Batches, EvalOrderIsStable) {
  Dataset ds = small_dataset(7);
  ds.test = ds.train;
  ds.train.clear();
  const auto b = batch_indices(ds, Split::Test, 3, 9, 9);
  std::vector<std::size_t> flat;
  for (const auto& x : b) flat.insert(flat.end(), x.begin(), x.end());
  EXPECT_EQ(flat, ds.test);
}

TEST(Batches, Errors) {
  const Dataset ds = small_dataset(4);
  EXPECT_THROW(batch_indices(ds, Split::Val, 2, 0, 1), DataError);
  EXPECT_THROW(batch_indices(ds, Split::Train, 1, 0, 1), ConfigError);
}

TEST(Batches, UnbatchRoundTrip) {
  const Dataset ds = small_dataset(6);
  const std::vector<std::size_t> ids{4, 1, 5, 0};
  const GraphBatch b = collate(ds, ids);
  const auto back = b.unbatch();
  ASSERT_EQ(back.size(), ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Graph& g = ds.graphs[ids[i]];
    EXPECT_EQ(back[i].num_nodes, g.num_nodes);
    EXPECT_EQ(back[i].edges, g.edges);
    EXPECT_EQ(back[i].features, g.features);
    EXPECT_EQ(back[i].label, g.label);
  }
  EXPECT_EQ(b.graph_ids, ids);
}

TEST(Batches, BlockDiagonalAndReverseEdges) {
  SpMotifConfig cfg;
  cfg.num_graphs = 40;
  const Dataset ds = generate_spmotif(cfg);
  for (const GraphBatch& b : make_batches(ds, Split::Train, 7, 1, 1)) {
    for (std::size_t e = 0; e < b.num_edges(); ++e) {
      EXPECT_EQ(b.node_graph[b.src[e]], b.node_graph[b.dst[e]]);
      const std::size_t g = b.node_graph[b.src[e]];
      EXPECT_GE(e, b.edge_offset[g]);
      EXPECT_LT(e, b.edge_offset[g + 1]);
      const std::size_t r = b.reverse_edge[e];
      EXPECT_EQ(b.src[r], b.dst[e]);
      EXPECT_EQ(b.dst[r], b.src[e]);
    }
  }
}

TEST(Dataset, LabelsMustBeBelowClassCount) {
  Dataset ds = small_dataset(3);
  ds.graphs[1].label = 5;
  EXPECT_THROW(ds.validate(), DataError);
}
