#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carnas/checkpoint.hpp"
#include "carnas/config.hpp"
#include "carnas/jsonl.hpp"
#include "carnas/metrics.hpp"
#include "carnas/model.hpp"
#include "carnas/spmotif.hpp"
#include "carnas/trainer.hpp"

namespace carnas {

namespace fs = std::filesystem;

inline constexpr const char* kStepCsvName = "metrics.csv";
inline constexpr const char* kEpochCsvName = "metrics_epoch.csv";
inline constexpr const char* kFinalCheckpointName = "ckpt-final.bin";
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kSummaryName = "summary.json";

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Content hash of a dataset's canonical JSONL serialization.
inline std::string dataset_fingerprint(const Dataset& ds) {
  std::ostringstream os;
  write_jsonl(ds, os);
  return hex64(fnv1a64(os.str()));
}

inline std::string file_fingerprint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

/// Parses "0,1,2" into a seed list.
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("bad seed '" + item + "' in seed list");
    seeds.push_back(v);
  }
  return seeds;
}

/// Everything a train command needs: model config plus run plumbing.
struct RunSpec {
  TrainConfig cfg;
  std::string dataset;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string run_name = "run";
  std::string out = "runs";

  nlohmann::json to_json() const {
    nlohmann::json j = cfg.to_json();
    j["dataset"] = dataset;
    j["seeds"] = seeds;
    j["run_name"] = run_name;
    j["out"] = out;
    return j;
  }

  /// Reads a flat JSON document. Every problem is reported in one ConfigError.
  static RunSpec from_json(const nlohmann::json& j) {
    RunSpec s;
    std::vector<std::string> errs;
    if (!j.is_object()) throw ConfigError("invalid config:\n  - config must be a JSON object");
    nlohmann::json model_keys = nlohmann::json::object();
    for (const auto& [key, value] : j.items()) {
      try {
        if (key == "dataset") {
          s.dataset = value.get<std::string>();
        } else if (key == "run_name") {
          s.run_name = value.get<std::string>();
        } else if (key == "out") {
          s.out = value.get<std::string>();
        } else if (key == "seeds") {
          if (value.is_string()) {
            s.seeds = parse_seed_list(value.get<std::string>());
          } else if (value.is_number_integer()) {
            if (value.get<std::int64_t>() < 0 && !value.is_number_unsigned()) throw ConfigError("seed must be >= 0");
            s.seeds = {value.get<std::uint64_t>()};
          } else {
            s.seeds = value.get<std::vector<std::uint64_t>>();
          }
        } else {
          model_keys[key] = value;
        }
      } catch (const std::exception& e) {
        errs.push_back("bad value for '" + key + "': " + e.what());
      }
    }
    auto more = s.cfg.apply_json(model_keys);
    errs.insert(errs.end(), more.begin(), more.end());
    if (!j.contains("seeds") && j.contains("seed")) s.seeds = {s.cfg.seed};
    more = s.errors();
    errs.insert(errs.end(), more.begin(), more.end());
    if (!errs.empty()) {
      std::string msg = "invalid config:";
      for (const auto& e : errs) msg += "\n  - " + e;
      throw ConfigError(msg);
    }
    return s;
  }

  std::vector<std::string> errors() const {
    std::vector<std::string> e = cfg.errors();
    if (dataset.empty()) e.push_back("dataset path is required");
    if (seeds.empty()) e.push_back("seed list is empty");
    if (run_name.empty() || run_name.find('/') != std::string::npos) e.push_back("run_name must be a plain name");
    return e;
  }
};

/// Turns leftover `--key value`, `--key=value` and bare `--flag` tokens into
/// a JSON object. Dashes in keys become underscores; values parse as JSON
/// when they can and stay strings otherwise.
inline nlohmann::json parse_overrides(std::span<const std::string> args) {
  nlohmann::json j = nlohmann::json::object();
  auto value_of = [](const std::string& text) {
    nlohmann::json v = nlohmann::json::parse(text, nullptr, false);
    return v.is_discarded() ? nlohmann::json(text) : v;
  };
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (!a.starts_with("--") || a.size() == 2) throw ConfigError("unexpected argument '" + a + "'");
    std::string key = a.substr(2);
    std::optional<std::string> text;
    if (auto eq = key.find('='); eq != std::string::npos) {
      text = key.substr(eq + 1);
      key.resize(eq);
    } else if (i + 1 < args.size() && !args[i + 1].starts_with("--")) {
      text = args[++i];
    }
    std::replace(key.begin(), key.end(), '-', '_');
    j[key] = text ? value_of(*text) : nlohmann::json(true);
  }
  return j;
}

/// A run manifest nests the resolved config; flatten it back into the flat
/// config form so a manifest can be fed to `train` directly.
inline nlohmann::json flatten_manifest(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("config") || !j.at("config").is_object()) return j;
  nlohmann::json flat = j.at("config");
  for (const char* key : {"dataset", "seeds", "run_name"}) {
    if (j.contains(key)) flat[key] = j.at(key);
  }
  flat.erase("seed");
  return flat;
}

/// Maps an --ablate value onto the config flags.
inline void apply_ablation(TrainConfig& cfg, const std::string& which) {
  if (which == "no-arch") {
    cfg.disable_arch_reg = true;
  } else if (which == "no-cpred") {
    cfg.disable_cpred = true;
  } else if (which == "no-both") {
    cfg.disable_arch_reg = cfg.disable_cpred = true;
  } else if (which != "none") {
    throw ConfigError("unknown ablation '" + which + "' (expected no-arch, no-cpred, no-both)");
  }
}

/// Output root: $CARNAS_OUT when set, otherwise `configured`.
inline fs::path output_root(const std::string& configured) {
  if (const char* env = std::getenv("CARNAS_OUT"); env != nullptr && *env != '\0') return env;
  return configured;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  fs::path dir;
  std::size_t epochs_done = 0;
  std::string metric_name;
  double test_metric = 0.0;
  std::vector<double> val_losses;  // epochs run in this call
  std::vector<EpochSummary> epochs;
};

struct SeedRunOptions {
  std::optional<fs::path> resume;      // checkpoint to continue from
  std::optional<std::size_t> stop_after;  // stop once this many epochs are done
  std::ostream* log = nullptr;
};

inline nlohmann::json manifest_json(const RunSpec& run, const TrainConfig& cfg, const std::string& fingerprint,
                                    std::size_t epochs_done) {
  return {{"config", cfg.to_json()},
          {"config_hash", hex64(cfg.hash())},
          {"dataset", run.dataset},
          {"dataset_fingerprint", fingerprint},
          {"run_name", run.run_name},
          {"seeds", run.seeds},
          {"epochs_done", epochs_done},
          {"layout",
           {{"step_metrics", kStepCsvName},
            {"epoch_metrics", kEpochCsvName},
            {"checkpoint", kFinalCheckpointName},
            {"summary", std::string("../") + kSummaryName}}}};
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

/// Trains one seed into `dir`: metrics CSVs, final checkpoint, manifest.
/// With `resume`, continues the checkpointed run and appends to its CSVs.
inline SeedOutcome run_seed(const RunSpec& run, const Dataset& ds, const std::string& fingerprint,
                            std::uint64_t seed, const fs::path& dir, const SeedRunOptions& opt = {}) {
  TrainConfig cfg = run.cfg;
  cfg.seed = seed;
  cfg.validate();
  if (ds.train.empty()) throw DataError("dataset has no training graphs");
  if (cfg.task == Task::Multiclass && ds.num_classes < 2) throw DataError("need at least 2 classes");

  std::optional<Trainer> trainer;
  if (opt.resume) {
    Checkpoint ck = load_checkpoint(opt.resume->string(), cfg.hash());
    if (ck.model.feature_dim != ds.feature_dim) {
      throw DimensionError("checkpoint feature dim " + std::to_string(ck.model.feature_dim) + " vs dataset " +
                           std::to_string(ds.feature_dim));
    }
    trainer.emplace(std::move(ck.model), ck.epoch, ds);
  } else {
    trainer.emplace(cfg, ds);
  }

  fs::create_directories(dir);
  const auto mode = opt.resume ? std::ios::binary | std::ios::app : std::ios::binary | std::ios::trunc;
  std::ofstream steps(dir / kStepCsvName, mode), epochs(dir / kEpochCsvName, mode);
  if (!steps || !epochs) throw Error("cannot write metrics under '" + dir.string() + "'");
  if (!opt.resume) {
    steps << kStepCsvHeader;
    epochs << kEpochCsvHeader;
  }

  SeedOutcome out;
  out.seed = seed;
  out.dir = dir;
  const std::size_t limit = opt.stop_after.value_or(cfg.epochs);
  while (!trainer->finished() && trainer->epochs_done() < limit) {
    EpochSummary s = trainer->run_epoch();
    steps << step_csv_rows(s.train);
    epochs << epoch_csv_rows(s);
    steps.flush();
    epochs.flush();
    if (s.val) out.val_losses.push_back(s.val->loss);
    if (opt.log != nullptr) {
      const StepRecord m = s.train.mean();
      *opt.log << "seed " << seed << " epoch " << s.train.epoch << "/" << cfg.epochs << " sigma "
               << s.train.sigma << " L_all " << m.all;
      if (s.val) *opt.log << " val_" << s.val->metric_name << " " << s.val->metric;
      if (s.test) *opt.log << " test_" << s.test->metric_name << " " << s.test->metric;
      *opt.log << "\n";
    }
    out.epochs.push_back(std::move(s));
  }
  out.epochs_done = trainer->epochs_done();
  save_checkpoint(trainer->model(), out.epochs_done, (dir / kFinalCheckpointName).string());
  write_text(dir / kManifestName, manifest_json(run, cfg, fingerprint, out.epochs_done).dump(2) + "\n");
  if (!ds.test.empty()) {
    const EvalResult r = evaluate(trainer->model(), ds, Split::Test);
    out.metric_name = r.metric_name;
    out.test_metric = r.metric;
  }
  return out;
}

struct RunSummary {
  std::string metric_name;
  std::vector<SeedOutcome> seeds;
  MeanStd test;
};

inline nlohmann::json summary_json(const RunSpec& run, const RunSummary& s, const std::string& fingerprint) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& o : s.seeds) per.push_back({{"seed", o.seed}, {"epochs", o.epochs_done}, {"test", o.test_metric}});
  return {{"run_name", run.run_name},
          {"dataset_fingerprint", fingerprint},
          {"metric", s.metric_name},
          {"per_seed", per},
          {"mean", s.test.mean},
          {"std", s.test.stddev}};
}

/// Trains every seed of `run` under `<root>/<run_name>/seed-<k>` and writes
/// the summary with mean and sample std of the final test metric.
inline RunSummary run_experiment(const RunSpec& run, const Dataset& ds, const fs::path& root,
                                 std::ostream* log = nullptr) {
  const std::string fp = dataset_fingerprint(ds);
  const fs::path run_dir = root / run.run_name;
  RunSummary s;
  std::vector<double> metrics;
  for (std::uint64_t seed : run.seeds) {
    SeedRunOptions opt;
    opt.log = log;
    s.seeds.push_back(run_seed(run, ds, fp, seed, run_dir / ("seed-" + std::to_string(seed)), opt));
    s.metric_name = s.seeds.back().metric_name;
    metrics.push_back(s.seeds.back().test_metric);
  }
  s.test = mean_std(metrics);
  write_text(run_dir / kSummaryName, summary_json(run, s, fp).dump(2) + "\n");
  return s;
}

/// Stats report for a generated dataset.
inline nlohmann::json dataset_stats(const Dataset& ds) {
  nlohmann::json splits = nlohmann::json::object();
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    if (ds.indices(sp).empty()) continue;
    const SplitStats st = split_stats(ds, sp);
    nlohmann::json j = {{"count", st.count},
                        {"class_fraction", st.class_fraction},
                        {"mean_nodes", st.mean_nodes},
                        {"mean_edges", st.mean_edges}};
    j["p_base_equals_motif"] = std::isnan(st.base_equals_motif) ? nlohmann::json(nullptr)
                                                                 : nlohmann::json(st.base_equals_motif);
    splits[std::string(split_name(sp))] = j;
  }
  return {{"num_graphs", ds.graphs.size()},
          {"num_classes", ds.num_classes},
          {"feature_dim", ds.feature_dim},
          {"fingerprint", dataset_fingerprint(ds)},
          {"splits", splits}};
}

/// Loads a checkpoint for use with `ds`, rejecting incompatible dims.
inline Model load_model_for(const std::string& ckpt, const Dataset& ds) {
  Checkpoint ck = load_checkpoint(ckpt);
  if (ck.model.feature_dim != ds.feature_dim) {
    throw DimensionError("checkpoint expects feature dim " + std::to_string(ck.model.feature_dim) +
                         ", dataset has " + std::to_string(ds.feature_dim));
  }
  if (ck.model.cfg.task == Task::Multiclass && ds.num_classes > ck.model.num_classes) {
    throw DimensionError("checkpoint has " + std::to_string(ck.model.num_classes) + " classes, dataset has " +
                         std::to_string(ds.num_classes));
  }
  return std::move(ck.model);
}

inline nlohmann::json eval_json(const EvalResult& r, Split split) {
  return {{"split", split_name(split)}, {"metric", r.metric_name}, {"value", r.metric}, {"loss", r.loss},
          {"count", r.count}};
}

/// Parameter counts grouped by module.
inline nlohmann::json param_report(const Model& m) {
  nlohmann::json groups = nlohmann::json::object();
  const std::size_t total = param_count(m.params);
  std::map<std::string, std::size_t> by_module;
  for (const auto& [name, p] : m.params) by_module[name.substr(0, name.find('.'))] += p.value.size();
  for (const auto& [k, v] : by_module) groups[k] = v;
  const std::size_t supernet = by_module.count("supernet") ? by_module.at("supernet") : 0;
  return {{"total", total},
          {"groups", groups},
          {"supernet_fraction", total ? static_cast<double>(supernet) / static_cast<double>(total) : 0.0}};
}

struct InspectReport {
  // class -> layer -> operator mean coefficient
  std::map<int, std::vector<std::vector<double>>> mean_arch;
  std::map<int, std::size_t> class_count;
  std::string arch_csv;
  std::string edges_jsonl;
};

/// Mean architecture per class (motif id when present, else label) over all
/// graphs, plus per-edge scores and causal membership for the first
/// `num_graphs_dump` graphs.
inline InspectReport inspect_model(Model& m, const Dataset& ds, std::size_t num_graphs_dump) {
  InspectReport rep;
  const std::size_t K = m.cfg.layers;
  const std::size_t bs = std::max<std::size_t>(2, m.cfg.batch_size);
  for (std::size_t start = 0; start < ds.graphs.size(); start += bs) {
    std::vector<std::size_t> ids;
    for (std::size_t i = start; i < std::min(ds.graphs.size(), start + bs); ++i) ids.push_back(i);
    const GraphBatch b = collate(ds, ids);
    Tape t;
    ForwardPass f = model_forward(t, m, b);
    const Tensor& arch = f.arch.value();
    for (std::size_t g = 0; g < b.num_graphs(); ++g) {
      const int cls = b.metas[g] ? b.metas[g]->motif : b.labels[g];
      auto& table = rep.mean_arch[cls];
      if (table.empty()) table.assign(K, std::vector<double>(kNumOperators, 0.0));
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t u = 0; u < kNumOperators; ++u) table[k][u] += arch(g, k * kNumOperators + u);
      }
      ++rep.class_count[cls];

      if (b.graph_ids[g] >= num_graphs_dump) continue;
      nlohmann::json edges = nlohmann::json::array();
      const std::size_t off = b.node_offset[g];
      for (std::size_t e = b.edge_offset[g]; e < b.edge_offset[g + 1]; ++e) {
        if (b.src[e] > b.dst[e]) continue;
        nlohmann::json row = {{"u", b.src[e] - off}, {"v", b.dst[e] - off}};
        if (f.scores) {
          row["score"] = f.scores->value()[e];
          row["causal"] = static_cast<bool>(f.split->is_causal[e]);
        }
        edges.push_back(row);
      }
      nlohmann::json line = {{"graph", b.graph_ids[g]}, {"label", b.labels[g]}, {"edges", edges}};
      rep.edges_jsonl += line.dump() + "\n";
    }
  }
  rep.arch_csv = "class,layer,op_index,op_name,alpha\n";
  for (auto& [cls, table] : rep.mean_arch) {
    const double n = static_cast<double>(rep.class_count[cls]);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t u = 0; u < kNumOperators; ++u) {
        table[k][u] /= n;
        rep.arch_csv += std::to_string(cls) + "," + std::to_string(k) + "," + std::to_string(u) + "," +
                        std::string(operator_name(kOperators[u])) + "," + format_double(table[k][u]) + "\n";
      }
    }
  }
  return rep;
}

}  // namespace carnas
