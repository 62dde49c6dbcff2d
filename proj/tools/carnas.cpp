// Command-line driver: gen, train, ablate, eval, inspect.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "carnas/carnas.hpp"

namespace {

using namespace carnas;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

struct GenArgs {
  SpMotifConfig cfg;
  std::string out;
  std::string stats;
};

int cmd_gen(const GenArgs& a) {
  auto errs = a.cfg.errors();
  if (!errs.empty()) {
    std::string msg = "invalid generator settings:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  const Dataset ds = generate_spmotif(a.cfg);
  save_jsonl(ds, a.out);
  const nlohmann::json stats = dataset_stats(ds);
  const std::string stats_path = a.stats.empty() ? a.out + ".stats.json" : a.stats;
  write_text(stats_path, stats.dump(2) + "\n");
  std::cout << "wrote " << ds.graphs.size() << " graphs to " << a.out << "\n";
  for (const auto& [split, st] : stats.at("splits").items()) {
    std::cout << "  " << split << ": " << st.at("count") << " graphs, P(S=C) " << st.at("p_base_equals_motif")
              << ", mean nodes " << st.at("mean_nodes") << ", mean edges " << st.at("mean_edges") << "\n";
  }
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string ablate;
  bool fixed_sigma = false;
  std::string resume;
  std::size_t stop_after = 0;
  std::vector<std::string> extras;
};

int cmd_train(const TrainArgs& a) {
  nlohmann::json j = a.config.empty() ? nlohmann::json::object() : flatten_manifest(read_json_file(a.config));
  j.update(parse_overrides(a.extras));
  if (a.fixed_sigma) j["fixed_sigma"] = true;
  RunSpec run = RunSpec::from_json(j);
  if (!a.ablate.empty()) apply_ablation(run.cfg, a.ablate);
  if (!a.resume.empty() && run.seeds.size() != 1) throw ConfigError("--resume needs exactly one seed");

  const Dataset ds = load_jsonl(run.dataset);
  const fs::path root = output_root(run.out);
  if (a.resume.empty() && a.stop_after == 0) {
    const RunSummary s = run_experiment(run, ds, root, &std::cout);
    std::cout << run.run_name << ": test " << s.metric_name << " " << s.test.mean << " +- " << s.test.stddev << " over "
              << s.seeds.size() << " seed(s)\n";
    return kExitOk;
  }
  SeedRunOptions opt;
  opt.log = &std::cout;
  if (!a.resume.empty()) opt.resume = a.resume;
  if (a.stop_after > 0) opt.stop_after = a.stop_after;
  const std::string fp = dataset_fingerprint(ds);
  for (std::uint64_t seed : run.seeds) {
    const SeedOutcome o =
        run_seed(run, ds, fp, seed, root / run.run_name / ("seed-" + std::to_string(seed)), opt);
    std::cout << "seed " << seed << ": " << o.epochs_done << " epochs done, test " << o.metric_name << " "
              << o.test_metric << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, dataset, split = "test", json;
};

int cmd_eval(const EvalArgs& a) {
  const Split split = parse_split(a.split);
  const Dataset ds = load_jsonl(a.dataset);
  if (ds.indices(split).empty()) throw DataError("split '" + a.split + "' is empty");
  Model m = load_model_for(a.checkpoint, ds);
  const EvalResult r = evaluate(m, ds, split);
  std::cout << split_name(split) << " " << r.metric_name << " " << format_double(r.metric) << " loss "
            << format_double(r.loss) << " (" << r.count << " graphs)\n";
  const std::string out = a.json.empty() ? (fs::path(a.checkpoint).parent_path() /
                                            ("eval-" + std::string(split_name(split)) + ".json")).string()
                                         : a.json;
  write_text(out, eval_json(r, split).dump(2) + "\n");
  return kExitOk;
}

struct InspectArgs {
  std::string checkpoint, dataset, out;
  std::size_t graphs = 10;
};

int cmd_inspect(const InspectArgs& a) {
  const Dataset ds = load_jsonl(a.dataset);
  Model m = load_model_for(a.checkpoint, ds);
  const fs::path dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  fs::create_directories(dir);
  const InspectReport rep = inspect_model(m, ds, a.graphs);
  write_text(dir / "arch_by_class.csv", rep.arch_csv);
  write_text(dir / "edge_scores.jsonl", rep.edges_jsonl);
  const nlohmann::json params = param_report(m);
  write_text(dir / "params.json", params.dump(2) + "\n");
  for (const auto& [cls, table] : rep.mean_arch) {
    std::cout << "class " << cls << " (" << rep.class_count.at(cls) << " graphs):";
    for (std::size_t k = 0; k < table.size(); ++k) {
      std::size_t best = 0;
      for (std::size_t u = 1; u < table[k].size(); ++u) {
        if (table[k][u] > table[k][best]) best = u;
      }
      std::cout << " L" << k << "=" << operator_name(kOperators[best]);
    }
    std::cout << "\n";
  }
  std::cout << "parameters: " << params.at("total") << " total, supernet fraction "
            << params.at("supernet_fraction") << "\n";
  std::cout << "wrote " << (dir / "arch_by_class.csv").string() << ", edge_scores.jsonl, params.json\n";
  return kExitOk;
}

void add_train_options(CLI::App* sub, TrainArgs& a, bool ablate_required) {
  sub->add_option("-c,--config", a.config, "Flat JSON config (or a run manifest)");
  auto* opt = sub->add_option("--ablate", a.ablate, "no-arch | no-cpred | no-both")
                  ->check(CLI::IsMember({"no-arch", "no-cpred", "no-both"}));
  if (ablate_required) opt->required();
  sub->add_flag("--fixed-sigma", a.fixed_sigma, "Hold sigma at (sigma_min + sigma_max) / 2");
  sub->add_option("--resume", a.resume, "Continue from a checkpoint (single seed)");
  sub->add_option("--stop-after", a.stop_after, "Stop once this many epochs are done");
  sub->allow_extras();
  sub->footer("Any config field can be overridden with --key value, e.g. --epochs 30 --seeds 0,1,2.");
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"CARNAS: causal-aware graph neural architecture search"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a Spurious-Motif dataset");
  g->add_option("--bias", gen.cfg.bias, "P(base = motif) on the training split")->capture_default_str();
  g->add_option("--num", gen.cfg.num_graphs, "Number of graphs")->capture_default_str();
  g->add_option("--seed", gen.cfg.seed, "Generator seed")->capture_default_str();
  g->add_option("--train-fraction", gen.cfg.train_fraction)->capture_default_str();
  g->add_option("--val-fraction", gen.cfg.val_fraction)->capture_default_str();
  g->add_option("--test-fraction", gen.cfg.test_fraction)->capture_default_str();
  g->add_option("--out", gen.out, "Output JSONL path")->required();
  g->add_option("--stats", gen.stats, "Stats JSON path (default <out>.stats.json)");

  TrainArgs train, ablate;
  auto* t = app.add_subcommand("train", "Train over a seed list");
  add_train_options(t, train, false);
  auto* ab = app.add_subcommand("ablate", "Train with loss terms removed");
  add_train_options(ab, ablate, true);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  e->add_option("--json", ev.json, "Output JSON (default next to the checkpoint)");

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "Per-class operator probabilities and edge scores");
  i->add_option("--checkpoint", in.checkpoint)->required();
  i->add_option("--dataset", in.dataset)->required();
  i->add_option("--out", in.out, "Output directory (default next to the checkpoint)");
  i->add_option("--graphs", in.graphs, "Graphs to include in the edge-score dump")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) {
      train.extras = t->remaining();
      return cmd_train(train);
    }
    if (*ab) {
      ablate.extras = ab->remaining();
      return cmd_train(ablate);
    }
    if (*e) return cmd_eval(ev);
    if (*i) return cmd_inspect(in);
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
