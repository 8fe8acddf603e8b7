#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "graphsail/graph.hpp"

using namespace graphsail;

namespace {

std::vector<Interaction> edges_to_records(
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
  std::vector<Interaction> recs;
  recs.reserve(edges.size());
  std::int64_t t = 0;
  for (auto [u, i] : edges) recs.push_back({u, i, t++});
  return recs;
}

BipartiteGraph graph_of(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                        std::uint32_t n_users, std::uint32_t n_items,
                        const BipartiteGraph* base = nullptr) {
  auto recs = edges_to_records(edges);
  return BipartiteGraph::build({recs.data(), recs.size()}, n_users, n_items, base);
}

}  // namespace

TEST_CASE("degrees of a small edge set") {
  BipartiteGraph g = graph_of({{0, 1}, {0, 2}, {1, 2}}, 2, 3);
  CHECK(g.degree(Side::User, 0) == 2);
  CHECK(g.degree(Side::Item, 2) == 2);
  CHECK(g.degree(Side::Item, 0) == 0);
  CHECK(g.n_edges() == 3);
  CHECK(g.has_edge(0, 1));
  CHECK_FALSE(g.has_edge(1, 1));
}

TEST_CASE("merge takes the union of edge sets") {
  BipartiteGraph base = graph_of({{0, 1}, {1, 0}}, 2, 2);
  BipartiteGraph merged = graph_of({{0, 1}}, 2, 2, &base);
  CHECK(merged.n_edges() == 2);
  CHECK(merged.degree(Side::User, 0) == 1);
  CHECK(merged.degree(Side::User, 1) == 1);
}

TEST_CASE("duplicate records deduplicate") {
  BipartiteGraph g = graph_of({{0, 1}, {0, 1}, {0, 1}}, 1, 2);
  CHECK(g.n_edges() == 1);
}

TEST_CASE("out-of-range ids are rejected") {
  auto recs = edges_to_records({{5, 0}});
  CHECK_THROWS_AS(BipartiteGraph::build({recs.data(), recs.size()}, 2, 2), DataError);
}

TEST_CASE("adjacency symmetry holds on random edge sets") {
  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const std::uint32_t nu = 2 + static_cast<std::uint32_t>(rng.below(12));
    const std::uint32_t ni = 2 + static_cast<std::uint32_t>(rng.below(12));
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    const std::size_t m = rng.below(60);
    for (std::size_t k = 0; k < m; ++k)
      edges.emplace_back(static_cast<std::uint32_t>(rng.below(nu)),
                         static_cast<std::uint32_t>(rng.below(ni)));
    if (edges.empty()) edges.emplace_back(0, 0);
    BipartiteGraph g = graph_of(edges, nu, ni);

    std::size_t user_sum = 0, item_sum = 0;
    for (std::uint32_t u = 0; u < nu; ++u) {
      user_sum += g.degree(Side::User, u);
      for (std::uint32_t i : g.neighbors(Side::User, u)) {
        auto back = g.neighbors(Side::Item, i);
        CHECK(std::binary_search(back.begin(), back.end(), u));
      }
    }
    for (std::uint32_t i = 0; i < ni; ++i) {
      item_sum += g.degree(Side::Item, i);
      for (std::uint32_t u : g.neighbors(Side::Item, i)) {
        auto fwd = g.neighbors(Side::User, u);
        CHECK(std::binary_search(fwd.begin(), fwd.end(), i));
      }
    }
    CHECK(user_sum == g.n_edges());
    CHECK(item_sum == g.n_edges());
  }
}

TEST_CASE("merged degrees never shrink") {
  Rng rng(22);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> e1, e2;
    for (std::size_t k = 0; k < 30; ++k) {
      e1.emplace_back(static_cast<std::uint32_t>(rng.below(8)),
                      static_cast<std::uint32_t>(rng.below(8)));
      e2.emplace_back(static_cast<std::uint32_t>(rng.below(8)),
                      static_cast<std::uint32_t>(rng.below(8)));
    }
    BipartiteGraph base = graph_of(e1, 8, 8);
    BipartiteGraph merged = graph_of(e2, 8, 8, &base);
    BipartiteGraph alone = graph_of(e2, 8, 8);
    for (std::uint32_t u = 0; u < 8; ++u) {
      CHECK(merged.degree(Side::User, u) >= base.degree(Side::User, u));
      CHECK(merged.degree(Side::User, u) >= alone.degree(Side::User, u));
    }
  }
}

TEST_CASE("sampling a degree-1 node repeats the single neighbor") {
  BipartiteGraph g = graph_of({{0, 3}}, 1, 4);
  Rng rng(1);
  auto sample = g.sample_neighbors(Side::User, 0, 10, rng);
  REQUIRE(sample.size() == 10);
  for (std::uint32_t s : sample) CHECK(s == 3);
}

TEST_CASE("sampling is deterministic for a fixed seed") {
  BipartiteGraph g = graph_of({{0, 0}, {0, 1}, {0, 2}, {0, 3}}, 1, 4);
  Rng a(99), b(99);
  CHECK(g.sample_neighbors(Side::User, 0, 16, a) == g.sample_neighbors(Side::User, 0, 16, b));
}

TEST_CASE("sampling a degree-0 node fails") {
  BipartiteGraph g = graph_of({{0, 0}}, 2, 1);
  Rng rng(3);
  CHECK_THROWS_WITH_AS(g.sample_neighbors(Side::User, 1, 4, rng), doctest::Contains("isolated"),
                       DataError);
}

TEST_CASE("with-replacement sampling is uniform (3-sigma binomial check)") {
  BipartiteGraph g = graph_of({{0, 0}, {0, 1}, {0, 2}, {0, 3}}, 1, 4);
  Rng rng(7);
  constexpr std::size_t kDraws = 100000;
  std::map<std::uint32_t, std::size_t> counts;
  for (std::size_t k = 0; k < kDraws / 10; ++k)
    for (std::uint32_t s : g.sample_neighbors(Side::User, 0, 10, rng)) ++counts[s];
  const double p = 0.25;
  const double sigma = std::sqrt(kDraws * p * (1 - p));
  for (std::uint32_t i = 0; i < 4; ++i) {
    CHECK(counts[i] > kDraws * p - 3 * sigma);
    CHECK(counts[i] < kDraws * p + 3 * sigma);
  }
}
