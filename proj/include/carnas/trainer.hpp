#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "carnas/config.hpp"
#include "carnas/errors.hpp"
#include "carnas/graph.hpp"
#include "carnas/metrics.hpp"
#include "carnas/model.hpp"
#include "carnas/optim.hpp"
#include "carnas/rng.hpp"

namespace carnas {

/// Loss components logged for one optimizer step.
struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double pred = 0, cpred = 0, arch = 0, op = 0, sigma = 0, all = 0;
};

struct EpochReport {
  std::size_t epoch = 0;
  double sigma = 0.0;
  std::vector<StepRecord> steps;

  /// Unweighted means over steps.
  StepRecord mean() const {
    StepRecord m{epoch, steps.size(), 0, 0, 0, 0, sigma, 0};
    for (const auto& s : steps) {
      m.pred += s.pred;
      m.cpred += s.cpred;
      m.arch += s.arch;
      m.op += s.op;
      m.all += s.all;
    }
    const double n = steps.empty() ? 1.0 : static_cast<double>(steps.size());
    m.pred /= n;
    m.cpred /= n;
    m.arch /= n;
    m.op /= n;
    m.all /= n;
    return m;
  }
};

/// One pass over the training split, one combined backward and Adam update
/// per batch. Batch order and intervention sampling derive from
/// (seed, epoch, batch), so an epoch is reproducible in isolation.
inline EpochReport train_epoch(Model& m, const Dataset& ds, std::size_t p) {
  const double sigma = sigma_at(p, m.cfg);
  EpochReport rep{p, sigma, {}};
  const auto batches = batch_indices(ds, Split::Train, m.cfg.batch_size, m.cfg.seed, p);
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const GraphBatch b = collate(ds, batches[bi]);
    Rng rng = make_rng(m.cfg.seed, {0x494e5456ULL, p, bi});
    Tape tape;
    StepLosses l;
    try {
      l = step_losses(tape, m, b, sigma, rng);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(p) + " step " + std::to_string(bi) + ": " + e.what());
    }
    StepRecord r{p, bi, l.pred.item(), l.cpred.item(), l.arch.item(), l.op.item(), sigma, l.all.item()};
    if (!std::isfinite(r.all)) {
      std::ostringstream os;
      os << "non-finite loss at epoch " << p << " step " << bi << ": L_pred=" << r.pred << " L_cpred=" << r.cpred
         << " L_arch=" << r.arch << " L_op=" << r.op;
      throw NumericError(os.str());
    }
    tape.backward(l.all);
    adam_step(m.params, AdamOptions{m.cfg.lr});
    rep.steps.push_back(r);
  }
  return rep;
}

struct EvalResult {
  std::string metric_name;  // "accuracy" or "roc_auc"
  double metric = 0.0;
  double loss = 0.0;  // mean prediction loss over graphs
  std::size_t count = 0;
  std::vector<int> predicted;   // argmax class (multiclass)
  std::vector<double> scores;   // positive-class probability (binary)
};

/// Prediction metric on a split: accuracy for multi-class tasks, ROC-AUC for
/// binary ones. Graphs are processed in dataset order.
inline EvalResult evaluate(Model& m, const Dataset& ds, Split split) {
  EvalResult r;
  const bool binary = m.cfg.task == Task::Binary;
  r.metric_name = binary ? "roc_auc" : "accuracy";
  std::vector<int> labels;
  double loss_sum = 0.0;
  for (const auto& ids : batch_indices(ds, split, std::max<std::size_t>(2, m.cfg.batch_size), 0, 0)) {
    const GraphBatch b = collate(ds, ids);
    Tape tape;
    ForwardPass f = model_forward(tape, m, b);
    loss_sum += classification_loss(f.logits, b.labels).item() * static_cast<double>(b.num_graphs());
    const Tensor& z = f.logits.value();
    for (std::size_t g = 0; g < b.num_graphs(); ++g) {
      labels.push_back(b.labels[g]);
      if (binary) {
        r.scores.push_back(stable_sigmoid(z(g, 0)));
      } else {
        std::size_t best = 0;
        for (std::size_t c = 1; c < z.cols(); ++c) {
          if (z(g, c) > z(g, best)) best = c;
        }
        r.predicted.push_back(static_cast<int>(best));
      }
    }
  }
  r.count = labels.size();
  r.loss = loss_sum / static_cast<double>(r.count);
  r.metric = binary ? roc_auc(r.scores, labels) : accuracy(r.predicted, labels);
  return r;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Per-epoch summary: training means plus validation and test metrics.
struct EpochSummary {
  EpochReport train;
  std::optional<EvalResult> val;
  std::optional<EvalResult> test;
};

/// Drives epochs 1..P, optionally resuming from a checkpointed model.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& ds)
      : ds_(&ds), model_(Model::create(cfg, ds.feature_dim, ds.num_classes)) {}

  Trainer(Model model, std::size_t epochs_done, const Dataset& ds)
      : ds_(&ds), model_(std::move(model)), done_(epochs_done) {}

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  std::size_t epochs_done() const { return done_; }
  bool finished() const { return done_ >= model_.cfg.epochs; }

  EpochSummary run_epoch() {
    if (finished()) throw StateError("all " + std::to_string(model_.cfg.epochs) + " epochs already run");
    EpochSummary s;
    s.train = train_epoch(model_, *ds_, done_ + 1);
    ++done_;
    if (!ds_->val.empty()) s.val = evaluate(model_, *ds_, Split::Val);
    if (!ds_->test.empty()) s.test = evaluate(model_, *ds_, Split::Test);
    return s;
  }

  /// Runs up to `max_epochs` more epochs (all remaining by default).
  std::vector<EpochSummary> run(std::size_t max_epochs = static_cast<std::size_t>(-1),
                                const std::function<void(const EpochSummary&)>& on_epoch = {}) {
    std::vector<EpochSummary> out;
    for (std::size_t i = 0; i < max_epochs && !finished(); ++i) {
      out.push_back(run_epoch());
      if (on_epoch) on_epoch(out.back());
    }
    return out;
  }

 private:
  const Dataset* ds_;
  Model model_;
  std::size_t done_ = 0;
};

/// CSV writers for the metrics stream.
inline constexpr const char* kStepCsvHeader = "epoch,step,L_pred,L_cpred,L_arch,L_op,sigma,L_all\n";
inline constexpr const char* kEpochCsvHeader = "epoch,split,metric,value\n";

inline std::string step_csv_rows(const EpochReport& r) {
  std::string out;
  for (const auto& s : r.steps) {
    out += std::to_string(s.epoch) + "," + std::to_string(s.step) + "," + format_double(s.pred) + "," +
           format_double(s.cpred) + "," + format_double(s.arch) + "," + format_double(s.op) + "," +
           format_double(s.sigma) + "," + format_double(s.all) + "\n";
  }
  return out;
}

inline std::string epoch_csv_rows(const EpochSummary& s) {
  const std::string e = std::to_string(s.train.epoch);
  const StepRecord m = s.train.mean();
  std::string out;
  auto row = [&](std::string_view split, std::string_view metric, double v) {
    out += e + "," + std::string(split) + "," + std::string(metric) + "," + format_double(v) + "\n";
  };
  row("train", "L_pred", m.pred);
  row("train", "L_cpred", m.cpred);
  row("train", "L_arch", m.arch);
  row("train", "L_op", m.op);
  row("train", "L_all", m.all);
  row("train", "sigma", s.train.sigma);
  if (s.val) {
    row("val", "loss", s.val->loss);
    row("val", s.val->metric_name, s.val->metric);
  }
  if (s.test) {
    row("test", "loss", s.test->loss);
    row("test", s.test->metric_name, s.test->metric);
  }
  return out;
}

}  // namespace carnas
