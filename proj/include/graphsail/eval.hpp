#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "graphsail/common.hpp"
#include "graphsail/graph.hpp"
#include "graphsail/interactions.hpp"
#include "graphsail/model.hpp"

namespace graphsail {

/// Validation/test halves of an incremental block.
struct EvalSplit {
  std::vector<Interaction> val;
  std::vector<Interaction> test;
  int source_block = -1;
};

/// Uniform random permutation; first ceil(n/2) records become validation,
/// the rest test.
EvalSplit halve_block(LogSlice block, Rng rng, int source_block = -1);

/// The k best unmasked items by (score desc, item id asc). `masked` must be
/// sorted ascending. Throws when fewer than k items remain.
std::vector<std::uint32_t> top_k_items(std::span<const double> scores,
                                       std::span<const std::uint32_t> masked, std::size_t k);

/// Recall@k: per user with at least one usable test item, scores every item,
/// masks the user's training items, counts top-k hits. Pooled over users:
/// sum of hits / sum of test-set sizes. Users unknown to the training graph
/// are excluded, as are test items hidden by the mask (they cannot be
/// ranked). Returns 0 when no user is evaluable.
double recall_at_k(const FinalEmbeddings& emb, std::span<const Interaction> test,
                   const BipartiteGraph& mask_graph, std::size_t k);

}  // namespace graphsail
