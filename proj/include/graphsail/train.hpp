#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphsail/common.hpp"
#include "graphsail/distill.hpp"
#include "graphsail/graph.hpp"
#include "graphsail/interactions.hpp"
#include "graphsail/model.hpp"

namespace graphsail {

struct TrainConfig {
  double lr_base = 1e-3;
  double lr_inc = 5e-4;
  double l2 = 1e-5;
  std::size_t n_neg = 10;
  std::size_t batch_size = 2048;
  std::size_t patience_base = 50;
  std::size_t patience_inc = 2;
  std::size_t max_epochs_base = 300;  // safety cap; patience normally fires first
  std::size_t max_epochs_inc = 6;
  std::size_t n_sample = 10;  // neighbors per aggregation
  std::uint64_t seed = 0;

  void validate() const {
    if (lr_base <= 0 || lr_inc <= 0) throw ConfigError("train: learning rates must be > 0");
    if (l2 < 0) throw ConfigError("train: l2 must be >= 0");
    if (n_neg < 1) throw ConfigError("train: n_neg must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (patience_base < 1 || patience_inc < 1) throw ConfigError("train: patience must be >= 1");
    if (max_epochs_base < 1 || max_epochs_inc < 1)
      throw ConfigError("train: epoch caps must be >= 1");
  }
};

enum class Method { Finetune, Embd, Lsp, GraphSail, FullBatch };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// Adam moments mirroring every parameter tensor. Embedding moments follow
/// sparse semantics: only rows with a gradient in the step are updated.
struct AdamState {
  Matrix m_user, v_user, m_item, v_item;
  Matrix m_wu, v_wu, m_wi, v_wi;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState like(const ModelState& m);
};

/// Bias-corrected Adam update from sparse row grads plus dense W grads.
/// Throws DivergenceError when any gradient is non-finite.
void adam_step(ModelState& model, const ModelGrads& grads, AdamState& state, double lr);

struct BprResult {
  double loss = 0.0;
  Matrix d_u, d_i, d_j;  // row-aligned with the input batches
};

/// Pairwise ranking loss over aligned (user, pos, neg) final-embedding rows:
/// sum of -log sigmoid(u.i - u.j) plus l2 * squared norm of the three
/// batches. Pass l2 = 0 when regularization is handled on the raw
/// parameters instead.
BprResult bpr_loss(const Matrix& emb_u, const Matrix& emb_i, const Matrix& emb_j, double l2);

/// n_neg items uniform over [0, n_items), rejecting the user's training
/// items; with replacement across draws.
std::vector<std::uint32_t> sample_negatives(const BipartiteGraph& g_train, std::uint32_t user,
                                            std::size_t n_neg, Rng& rng);

struct EpochLog {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_bpr = 0.0;
  double loss_l2 = 0.0;
  double loss_self = 0.0;   // lambda-weighted contributions
  double loss_local = 0.0;
  double loss_global = 0.0;
  double loss_embd = 0.0;
  double loss_lsp = 0.0;
  double val_recall = 0.0;
  double seconds = 0.0;  // training compute, excluding validation
};

using EvalFn = std::function<double(const ModelState&, int epoch)>;
using LogFn = std::function<void(const EpochLog&)>;

struct TrainResult {
  ModelState model;  // best-validation checkpoint
  double best_val = -1.0;
  int best_epoch = -1;
  int epochs_run = 0;
  double train_seconds = 0.0;  // sum of per-epoch training compute
};

/// Shared mini-batch BPR(+distillation) engine. Positive pairs come from
/// `positives`; `graph` provides neighbor aggregation and the negative
/// sampler's rejection set. Early-stops on eval_fn with the given patience
/// and returns the best-validation parameters.
struct TrainStage {
  LogSlice positives;
  const BipartiteGraph* graph = nullptr;
  Method method = Method::Finetune;
  const TeacherSnapshot* teacher = nullptr;  // required unless finetune/full-batch
  DistillConfig distill;
  double lr = 1e-3;
  std::size_t patience = 50;
  std::size_t max_epochs = 300;
  std::uint64_t stage_id = 0;  // keys the rng streams
};

TrainResult run_training(ModelState model, const TrainStage& stage, const TrainConfig& cfg,
                         const EvalFn& eval_fn, const LogFn& log_fn = nullptr);

/// Random 80/10/10 division of the base block.
struct BaseSplit {
  std::vector<Interaction> train, val, test;
};
BaseSplit split_base_block(LogSlice base, Rng rng);

/// Base-block training: BPR only on the base 80% slice, per-epoch Recall@20
/// on the base validation slice, patience cfg.patience_base. When eval_fn is
/// provided it replaces the built-in validation (tests use this).
TrainResult train_base(const BlockSplit& split, ModelState model, const TrainConfig& cfg,
                       const EvalFn& eval_fn = nullptr, const LogFn& log_fn = nullptr);

/// Incremental training on block_t (1-based) with the method's distillation
/// terms; aggregation and negative rejection use the cumulative training
/// graph through block_t. val_pairs drive early stopping (patience
/// cfg.patience_inc, cap cfg.max_epochs_inc).
TrainResult train_incremental(ModelState model, const TeacherSnapshot* teacher,
                              const BlockSplit& split, std::size_t block_t,
                              const BipartiteGraph& cum_graph,
                              std::span<const Interaction> val_pairs, const TrainConfig& cfg,
                              const DistillConfig& dcfg, Method method,
                              const LogFn& log_fn = nullptr);

/// Full retraining from scratch on base-train plus blocks 1..up_to_block.
TrainResult train_full_batch(const BlockSplit& split, std::size_t up_to_block,
                             const BipartiteGraph& cum_graph,
                             std::span<const Interaction> val_pairs, const TrainConfig& cfg,
                             std::size_t dim, int layers, const LogFn& log_fn = nullptr);

}  // namespace graphsail
