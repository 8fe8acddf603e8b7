#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graphsail/eval.hpp"
#include "graphsail/interactions.hpp"
#include "graphsail/train.hpp"

namespace graphsail {

struct ProtocolConfig {
  std::size_t dim = 128;
  int layers = 1;
  TrainConfig train;
  DistillConfig distill;
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  bool deterministic = false;  // serial execution, timings reported as 0
  std::string log_dir;         // per-(method, seed) JSONL epoch logs; empty disables
  std::string checkpoint_dir;  // per-block checkpoints; empty disables
  std::string config_echo;     // effective config JSON embedded in the report
};

struct BlockResult {
  int block = 0;  // 0 = base training, t >= 1 = incremental block t
  std::string method;
  std::uint64_t seed = 0;
  double test_recall = 0.0;
  double val_recall = 0.0;
  double train_seconds = 0.0;
  int epochs = 0;
  bool failed = false;
  std::string error;
};

struct MethodSummary {
  std::string method;
  std::vector<double> per_block_mean;  // over seeds, blocks 1..n_transitions
  double mean_recall = 0.0;            // mean over seeds of per-seed block averages
  double std_recall = 0.0;             // sample std over seeds
  double mean_train_seconds = 0.0;     // per incremental block
  bool has_improvement = false;
  double pct_improvement_vs_finetune = 0.0;
};

struct MetricsReport {
  std::vector<BlockResult> per_block;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  std::size_t n_transitions = 0;
  bool deterministic = false;
  std::string config_echo;

  std::vector<MethodSummary> summaries() const;
  std::string to_json(bool pretty = true) const;
  /// Aligned text table: method rows, per-block columns, average column,
  /// improvement relative to finetune.
  std::string to_table() const;
};

/// Trains the base block once per seed, then walks the incremental blocks:
/// block t trains, block t+1 supplies the validation/test halves. Needs at
/// least two incremental blocks. Per-method failures are recorded in the
/// report instead of aborting the other methods.
MetricsReport run_protocol(const BlockSplit& split, const ProtocolConfig& cfg);

}  // namespace graphsail
