#include "graphsail/eval.hpp"

#include <algorithm>
#include <map>
#include <queue>

namespace graphsail {

EvalSplit halve_block(LogSlice block, Rng rng, int source_block) {
  const std::size_t n = block.size();
  if (n < 2) throw DataError("halve_block: need at least 2 records");
  std::vector<std::size_t> perm(n);
  for (std::size_t k = 0; k < n; ++k) perm[k] = k;
  for (std::size_t k = n; k > 1; --k) {
    const std::size_t j = rng.below(k);
    std::swap(perm[k - 1], perm[j]);
  }
  EvalSplit out;
  out.source_block = source_block;
  const std::size_t n_val = (n + 1) / 2;  // odd count: extra record goes to val
  out.val.reserve(n_val);
  out.test.reserve(n - n_val);
  for (std::size_t k = 0; k < n; ++k) {
    if (k < n_val)
      out.val.push_back(block[perm[k]]);
    else
      out.test.push_back(block[perm[k]]);
  }
  return out;
}

std::vector<std::uint32_t> top_k_items(std::span<const double> scores,
                                       std::span<const std::uint32_t> masked, std::size_t k) {
  const std::size_t n = scores.size();
  if (masked.size() + k > n)
    throw DataError("top_k_items: fewer than k unmasked items (" +
                    std::to_string(n - masked.size()) + " < " + std::to_string(k) + ")");

  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // ties broken by lower item id
  };
  // priority_queue with `better` keeps the worst of the current k on top.
  std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, decltype(better)> heap(better);

  std::size_t mpos = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    while (mpos < masked.size() && masked[mpos] < i) ++mpos;
    if (mpos < masked.size() && masked[mpos] == i) continue;
    if (heap.size() < k) {
      heap.push(i);
    } else if (better(i, heap.top())) {
      heap.pop();
      heap.push(i);
    }
  }
  std::vector<std::uint32_t> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());  // best first
  return out;
}

double recall_at_k(const FinalEmbeddings& emb, std::span<const Interaction> test,
                   const BipartiteGraph& mask_graph, std::size_t k) {
  const std::size_t d = emb.users.cols();
  const std::uint32_t n_items = static_cast<std::uint32_t>(emb.items.rows());

  // Usable test sets per user, in ascending user order for a deterministic
  // reduction.
  std::map<std::uint32_t, std::vector<std::uint32_t>> per_user;
  for (const Interaction& rec : test) {
    if (rec.user >= emb.users.rows() || rec.item >= n_items)
      throw DataError("recall_at_k: test interaction outside the embedding universe");
    if (mask_graph.degree(Side::User, rec.user) == 0) continue;  // unknown user
    if (mask_graph.has_edge(rec.user, rec.item)) continue;       // hidden by the mask
    per_user[rec.user].push_back(rec.item);
  }
  std::vector<std::uint32_t> users;
  std::vector<std::vector<std::uint32_t>> tests;
  users.reserve(per_user.size());
  for (auto& [u, items] : per_user) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    users.push_back(u);
    tests.push_back(std::move(items));
  }
  if (users.empty()) return 0.0;

  std::vector<std::size_t> hits(users.size(), 0);
  std::vector<char> failed(users.size(), 0);
  parallel_for(users.size(), [&](std::size_t idx) {
    const std::uint32_t u = users[idx];
    auto masked = mask_graph.neighbors(Side::User, u);
    if (masked.size() + k > n_items) {
      failed[idx] = 1;
      return;
    }
    std::vector<double> scores(n_items);
    const double* eu = emb.users.row(u);
    for (std::uint32_t i = 0; i < n_items; ++i) scores[i] = dot(eu, emb.items.row(i), d);
    const auto topk = top_k_items(scores, masked, k);
    const auto& tset = tests[idx];
    for (std::uint32_t i : topk)
      if (std::binary_search(tset.begin(), tset.end(), i)) ++hits[idx];
  });

  std::size_t total_hits = 0, total_pos = 0;
  for (std::size_t idx = 0; idx < users.size(); ++idx) {
    if (failed[idx])
      throw DataError("recall_at_k: k exceeds unmasked item count for user " +
                      std::to_string(users[idx]));
    total_hits += hits[idx];
    total_pos += tests[idx].size();
  }
  return static_cast<double>(total_hits) / static_cast<double>(total_pos);
}

}  // namespace graphsail
