#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "graphsail/common.hpp"
#include "graphsail/interactions.hpp"

namespace graphsail {

enum class Side { User, Item };

inline Side other_side(Side s) { return s == Side::User ? Side::Item : Side::User; }

/// Bipartite adjacency over dense ids. Edge sets are deduplicated and each
/// adjacency list is sorted, so membership tests are O(log d).
class BipartiteGraph {
 public:
  BipartiteGraph() = default;
  BipartiteGraph(std::uint32_t n_users, std::uint32_t n_items, std::string block_tag);

  /// Adjacency of the edges in `records`, merged with `base` when non-null
  /// (union of the two edge sets).
  static BipartiteGraph build(LogSlice records, std::uint32_t n_users, std::uint32_t n_items,
                              const BipartiteGraph* base = nullptr, std::string block_tag = {});

  std::uint32_t n_users() const { return n_users_; }
  std::uint32_t n_items() const { return n_items_; }
  const std::string& block_tag() const { return tag_; }

  std::span<const std::uint32_t> neighbors(Side side, std::uint32_t node) const {
    const auto& off = side == Side::User ? user_off_ : item_off_;
    const auto& adj = side == Side::User ? user_adj_ : item_adj_;
    return {adj.data() + off[node], off[node + 1] - off[node]};
  }

  std::size_t degree(Side side, std::uint32_t node) const { return neighbors(side, node).size(); }

  bool has_edge(std::uint32_t user, std::uint32_t item) const;

  std::size_t n_edges() const { return user_adj_.size(); }

  /// n ids drawn uniformly with replacement from the node's adjacency list.
  /// Throws on degree-zero nodes; callers mask isolated nodes instead.
  std::vector<std::uint32_t> sample_neighbors(Side side, std::uint32_t node, std::size_t n,
                                              Rng& rng) const;
  void sample_neighbors_into(Side side, std::uint32_t node, std::size_t n, Rng& rng,
                             std::uint32_t* out) const;

 private:
  std::uint32_t n_users_ = 0;
  std::uint32_t n_items_ = 0;
  std::string tag_;
  // CSR-style storage, one array per side.
  std::vector<std::size_t> user_off_;
  std::vector<std::size_t> item_off_;
  std::vector<std::uint32_t> user_adj_;
  std::vector<std::uint32_t> item_adj_;
};

}  // namespace graphsail
