#include "graphsail/graph.hpp"

#include <algorithm>

namespace graphsail {

BipartiteGraph::BipartiteGraph(std::uint32_t n_users, std::uint32_t n_items, std::string block_tag)
    : n_users_(n_users), n_items_(n_items), tag_(std::move(block_tag)) {
  user_off_.assign(n_users_ + 1, 0);
  item_off_.assign(n_items_ + 1, 0);
}

BipartiteGraph BipartiteGraph::build(LogSlice records, std::uint32_t n_users,
                                     std::uint32_t n_items, const BipartiteGraph* base,
                                     std::string block_tag) {
  if (base && (base->n_users() > n_users || base->n_items() > n_items))
    throw DataError("build_graph: base graph larger than node universe");

  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  edges.reserve(records.size() + (base ? base->n_edges() : 0));
  for (const auto& r : records) {
    if (r.user >= n_users || r.item >= n_items)
      throw DataError("build_graph: id out of range (user " + std::to_string(r.user) + ", item " +
                      std::to_string(r.item) + ")");
    edges.emplace_back(r.user, r.item);
  }
  if (base) {
    for (std::uint32_t u = 0; u < base->n_users(); ++u)
      for (std::uint32_t i : base->neighbors(Side::User, u)) edges.emplace_back(u, i);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  BipartiteGraph g(n_users, n_items, std::move(block_tag));
  for (const auto& [u, i] : edges) {
    ++g.user_off_[u + 1];
    ++g.item_off_[i + 1];
  }
  for (std::uint32_t u = 0; u < n_users; ++u) g.user_off_[u + 1] += g.user_off_[u];
  for (std::uint32_t i = 0; i < n_items; ++i) g.item_off_[i + 1] += g.item_off_[i];
  g.user_adj_.resize(edges.size());
  g.item_adj_.resize(edges.size());
  std::vector<std::size_t> ucur(g.user_off_.begin(), g.user_off_.end() - 1);
  std::vector<std::size_t> icur(g.item_off_.begin(), g.item_off_.end() - 1);
  for (const auto& [u, i] : edges) {
    g.user_adj_[ucur[u]++] = i;  // edges sorted by (u, i): user lists come out sorted
    g.item_adj_[icur[i]++] = u;
  }
  for (std::uint32_t i = 0; i < n_items; ++i) {
    auto begin = g.item_adj_.begin() + static_cast<std::ptrdiff_t>(g.item_off_[i]);
    auto end = g.item_adj_.begin() + static_cast<std::ptrdiff_t>(g.item_off_[i + 1]);
    std::sort(begin, end);
  }
  return g;
}

bool BipartiteGraph::has_edge(std::uint32_t user, std::uint32_t item) const {
  auto nbrs = neighbors(Side::User, user);
  return std::binary_search(nbrs.begin(), nbrs.end(), item);
}

void BipartiteGraph::sample_neighbors_into(Side side, std::uint32_t node, std::size_t n, Rng& rng,
                                           std::uint32_t* out) const {
  auto nbrs = neighbors(side, node);
  if (nbrs.empty())
    throw DataError("isolated node " + std::to_string(node) +
                    (side == Side::User ? " (user side)" : " (item side)"));
  for (std::size_t k = 0; k < n; ++k) out[k] = nbrs[rng.below(nbrs.size())];
}

std::vector<std::uint32_t> BipartiteGraph::sample_neighbors(Side side, std::uint32_t node,
                                                            std::size_t n, Rng& rng) const {
  std::vector<std::uint32_t> out(n);
  sample_neighbors_into(side, node, n, rng, out.data());
  return out;
}

}  // namespace graphsail
