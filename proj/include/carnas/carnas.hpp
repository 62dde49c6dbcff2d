#pragma once

#include "carnas/alloc.hpp"
#include "carnas/autograd.hpp"
#include "carnas/causal.hpp"
#include "carnas/checkpoint.hpp"
#include "carnas/config.hpp"
#include "carnas/errors.hpp"
#include "carnas/experiment.hpp"
#include "carnas/gnn_ops.hpp"
#include "carnas/grad_check.hpp"
#include "carnas/graph.hpp"
#include "carnas/jsonl.hpp"
#include "carnas/metrics.hpp"
#include "carnas/model.hpp"
#include "carnas/nas.hpp"
#include "carnas/optim.hpp"
#include "carnas/param_store.hpp"
#include "carnas/rng.hpp"
#include "carnas/spmotif.hpp"
#include "carnas/tensor.hpp"
#include "carnas/trainer.hpp"
