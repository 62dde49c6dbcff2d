#pragma once

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "carnas/errors.hpp"
#include "carnas/graph.hpp"

namespace carnas {

namespace detail {

inline Graph graph_from_json(const nlohmann::json& j) {
  for (const char* key : {"num_nodes", "edges", "features", "label", "split"}) {
    if (!j.contains(key)) throw DataError(std::string("missing key '") + key + "'");
  }
  Graph g;
  const auto n = j.at("num_nodes").get<long long>();
  if (n < 0) throw DataError("num_nodes is negative");
  g.num_nodes = static_cast<std::size_t>(n);

  std::vector<Edge> pairs;
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw DataError("edge must be a [src,dst] pair");
    const auto u = e[0].get<long long>(), v = e[1].get<long long>();
    if (u < 0 || v < 0) throw DataError("negative edge endpoint");
    pairs.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
  }
  g.edges = canonical_edges(g.num_nodes, pairs);

  const auto& rows = j.at("features");
  if (!rows.is_array() || rows.size() != g.num_nodes) {
    throw DataError("features must have one row per node (" + std::to_string(g.num_nodes) + ")");
  }
  const std::size_t d = g.num_nodes ? rows[0].size() : 0;
  std::vector<double> data;
  data.reserve(g.num_nodes * d);
  for (const auto& r : rows) {
    if (!r.is_array() || r.size() != d) throw DataError("ragged feature rows");
    for (const auto& v : r) data.push_back(v.get<double>());
  }
  g.features = Tensor(Shape{g.num_nodes, d}, std::move(data));
  g.label = j.at("label").get<int>();
  if (g.label < 0) throw DataError("negative label");
  if (j.contains("meta") && j.at("meta").is_object()) {
    g.meta = GraphMeta{j.at("meta").at("base").get<int>(), j.at("meta").at("motif").get<int>()};
  }
  return g;
}

inline nlohmann::json graph_to_json(const Graph& g, Split split) {
  nlohmann::json j;
  j["num_nodes"] = g.num_nodes;
  auto edges = nlohmann::json::array();
  for (const auto& [u, v] : g.edges) {
    if (u < v) edges.push_back({u, v});
  }
  j["edges"] = std::move(edges);
  auto feats = nlohmann::json::array();
  for (std::size_t r = 0; r < g.num_nodes; ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < g.features.cols(); ++c) row.push_back(g.features(r, c));
    feats.push_back(std::move(row));
  }
  j["features"] = std::move(feats);
  j["label"] = g.label;
  j["split"] = split_name(split);
  if (g.meta) j["meta"] = {{"base", g.meta->base}, {"motif", g.meta->motif}};
  return j;
}

}  // namespace detail

/// Reads one graph per line. Undirected edges are symmetrised on load.
inline Dataset read_jsonl(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  bool have_width = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Graph g = detail::graph_from_json(j);
      const Split s = parse_split(j.at("split").get<std::string>());
      if (!have_width && g.num_nodes > 0) {
        ds.feature_dim = g.features.cols();
        have_width = true;
      } else if (g.num_nodes > 0 && g.features.cols() != ds.feature_dim) {
        throw DataError("feature width " + std::to_string(g.features.cols()) + " differs from " +
                        std::to_string(ds.feature_dim));
      }
      max_label = std::max(max_label, g.label);
      ds.indices(s).push_back(ds.graphs.size());
      ds.graphs.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (Graph& g : ds.graphs) {
    if (g.num_nodes == 0) g.features = Tensor(Shape{0, ds.feature_dim}, {});
  }
  ds.num_classes = static_cast<std::size_t>(std::max(max_label + 1, ds.graphs.empty() ? 0 : 2));
  return ds;
}

inline Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  Dataset ds = read_jsonl(in);
  if (ds.graphs.empty()) std::clog << "warning: '" << path << "' contains no graphs\n";
  return ds;
}

inline void write_jsonl(const Dataset& ds, std::ostream& out) {
  const auto splits = ds.split_of();
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) out << detail::graph_to_json(ds.graphs[i], splits[i]).dump() << '\n';
}

inline void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_jsonl(ds, out);
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace carnas
