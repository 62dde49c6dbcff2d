#pragma once

#include <optional>
#include <span>
#include <string>

#include "carnas/autograd.hpp"
#include "carnas/causal.hpp"
#include "carnas/config.hpp"
#include "carnas/gnn_ops.hpp"
#include "carnas/graph.hpp"
#include "carnas/nas.hpp"
#include "carnas/param_store.hpp"
#include "carnas/rng.hpp"

namespace carnas {

/// Parameters plus the configuration that shapes them.
struct Model {
  TrainConfig cfg;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  ParamStore params;

  bool causal() const { return cfg.model == ModelKind::Carnas; }
  std::size_t num_outputs() const { return cfg.task == Task::Binary ? 1 : num_classes; }

  DisentangledEncoder encoder() const { return {"gnn0", cfg.chunks, cfg.encoder_layers, feature_dim, cfg.d0}; }
  EdgeScorer scorer() const { return {"scorer", cfg.d0}; }
  SubgraphEncoder shared_encoder() const { return {"gnn1", cfg.shared_layers, feature_dim, cfg.d1}; }
  PrototypeBank bank() const { return {"nas.prototypes", cfg.layers, kNumOperators, cfg.d1}; }
  Supernet supernet() const { return {"supernet", cfg.layers, feature_dim, cfg.ds, num_outputs()}; }
  static constexpr const char* kCausalClassifier = "phi";

  /// Fresh parameters. Each component draws from its own stream derived
  /// from cfg.seed, so adding or removing components leaves the others'
  /// initial values unchanged.
  static Model create(const TrainConfig& cfg, std::size_t feature_dim, std::size_t num_classes) {
    cfg.validate();
    if (feature_dim == 0) throw DimensionError("feature dimension must be positive");
    if (cfg.task == Task::Multiclass && num_classes < 2) throw DataError("need at least 2 classes");
    Model m{cfg, feature_dim, num_classes, {}};
    if (m.causal()) {
      Rng r0 = make_rng(cfg.seed, {1}), r1 = make_rng(cfg.seed, {2}), r2 = make_rng(cfg.seed, {3}),
          r3 = make_rng(cfg.seed, {4}), r4 = make_rng(cfg.seed, {5});
      m.encoder().init(m.params, r0);
      m.scorer().init(m.params, r1);
      m.shared_encoder().init(m.params, r2);
      detail::add_linear(m.params, kCausalClassifier, cfg.d1, m.num_outputs(), r3);
      m.bank().init(m.params, r4);
    }
    Rng rs = make_rng(cfg.seed, {6});
    m.supernet().init(m.params, rs);
    return m;
  }
};

/// Everything one forward pass over a batch produces.
struct ForwardPass {
  Var features;
  Var logits;  // supernet predictions, num_graphs x outputs
  Var arch;    // A_c, num_graphs x (K * |O|)
  std::optional<Var> node_repr;  // disentangled Z
  std::optional<Var> scores;     // per directed edge
  std::optional<CausalSplit> split;
  std::optional<SubgraphEmbeddings> embeddings;
};

/// Identifies the causal subgraph, embeds both subgraphs, derives each
/// graph's architecture from H_c and runs the supernet on the full graph.
/// Fixed-architecture models skip straight to the supernet.
inline ForwardPass model_forward(Tape& t, Model& m, const GraphBatch& b) {
  ForwardPass f;
  f.features = t.constant(b.features);
  if (!m.causal()) {
    f.arch = t.constant(m.cfg.model == ModelKind::FixedGcn ? one_hot_arch(b.num_graphs(), m.cfg.layers, OperatorKind::GCN)
                                                           : uniform_arch(b.num_graphs(), m.cfg.layers));
  } else {
    const MessageGraph full = MessageGraph::full(b);
    f.node_repr = m.encoder().forward(t, m.params, full, f.features);
    f.scores = m.scorer().forward(t, m.params, *f.node_repr, b);
    f.split = select_topt(f.scores->value().data(), b, m.cfg.t);
    f.embeddings = m.shared_encoder().forward(t, m.params, b, *f.split, f.features, *f.scores);
    f.arch = arch_coefficients(t, m.params, m.bank(), f.embeddings->causal);
  }
  f.logits = m.supernet().forward(t, m.params, f.arch, b, f.features);
  return f;
}

struct StepLosses {
  Var pred, cpred, arch, op, all;
  double sigma = 0.0;
  std::size_t interventions = 0;
};

/// Intervention count for a batch: N_s, or the batch size when N_s is 0,
/// capped by the batch size for a short final batch.
inline std::size_t interventions_for(const TrainConfig& cfg, std::size_t batch) {
  return cfg.num_interventions == 0 ? batch : std::min(cfg.num_interventions, batch);
}

/// All loss components of one training step and their weighted total.
inline StepLosses step_losses(Tape& t, Model& m, const GraphBatch& b, double sigma, Rng& rng) {
  ForwardPass f = model_forward(t, m, b);
  StepLosses l;
  l.sigma = sigma;
  l.pred = classification_loss(f.logits, b.labels);
  if (!m.causal()) {
    l.cpred = l.arch = l.op = t.constant(Tensor::scalar(0.0));
    l.all = l.pred;
    return l;
  }
  l.cpred = causal_classify_loss(t, m.params, Model::kCausalClassifier, f.embeddings->causal, b.labels);
  l.interventions = interventions_for(m.cfg, b.num_graphs());
  InterventionSet iv = intervene(f.embeddings->causal, f.embeddings->spurious, l.interventions, m.cfg.mu, rng);
  Var intervened = arch_coefficients(t, m.params, m.bank(), iv.vectors);
  l.arch = loss_arch(intervened, b.num_graphs(), l.interventions);
  l.op = loss_op(t, m.params, m.bank());
  l.all = total_loss(l.pred, l.cpred, l.arch, l.op, sigma, m.cfg);
  return l;
}

}  // namespace carnas
