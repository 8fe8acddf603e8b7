#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphsail/common.hpp"
#include "graphsail/graph.hpp"

namespace graphsail {

/// Embedding tables plus one PinSage-style aggregation layer per side.
/// layers == 0 drops the aggregation entirely (pure MF mode); the W matrices
/// are then empty and the final embedding is the table row itself.
struct ModelState {
  Matrix e_user;  // n_users x d
  Matrix e_item;  // n_items x d
  Matrix w_user;  // d x 2d
  Matrix w_item;  // d x 2d
  int layers = 1;
  std::size_t dim = 0;

  std::uint32_t n_users() const { return static_cast<std::uint32_t>(e_user.rows()); }
  std::uint32_t n_items() const { return static_cast<std::uint32_t>(e_item.rows()); }

  Matrix& table(Side s) { return s == Side::User ? e_user : e_item; }
  const Matrix& table(Side s) const { return s == Side::User ? e_user : e_item; }
  Matrix& weight(Side s) { return s == Side::User ? w_user : w_item; }
  const Matrix& weight(Side s) const { return s == Side::User ? w_user : w_item; }

  bool all_finite() const {
    return e_user.all_finite() && e_item.all_finite() && w_user.all_finite() &&
           w_item.all_finite();
  }
};

/// Xavier-uniform init, deterministic in the rng stream.
ModelState init_model(std::uint32_t n_users, std::uint32_t n_items, std::size_t dim, int layers,
                      Rng rng);

/// Final (post-aggregation) embeddings for every node, frozen snapshot style.
struct FinalEmbeddings {
  Matrix users;
  Matrix items;
  int block_id = -1;
  int epoch = -1;

  const Matrix& table(Side s) const { return s == Side::User ? users : items; }
};

/// Forward activations for one batch of same-side nodes, cached for backward.
struct ForwardBatch {
  Side side = Side::User;
  std::size_t dim = 0;
  std::size_t n_sample = 0;
  int layers = 1;
  std::vector<std::uint32_t> nodes;
  std::vector<std::uint32_t> nbr_ids;  // nodes.size() * n_sample, other-side ids
  std::vector<char> has_nbrs;          // 0 for isolated nodes (zero-vector fallback)
  Matrix concat;                       // nodes.size() x 2d: [e_node ; mean of sampled e_nbr]
  Matrix out;                          // nodes.size() x d, post-ReLU
};

/// One-layer forward: h = ReLU(W [e_node ; mean of sampled cross-side
/// embeddings]). Neighbors are drawn with replacement from a per-node rng
/// stream forked as nbr_rng.fork(side, node), so results do not depend on
/// batch composition. Isolated nodes get a zero neighborhood vector when
/// `isolated_fallback` is set and throw otherwise.
ForwardBatch forward_embed(const ModelState& m, const BipartiteGraph& g, Side side,
                           std::span<const std::uint32_t> nodes, std::size_t n_sample,
                           const Rng& nbr_rng, bool isolated_fallback = true);

/// Forward with caller-chosen neighbor lists (nodes.size() * n_sample ids).
/// Used by tests and by replays of a cached batch.
ForwardBatch forward_with_neighbors(const ModelState& m, Side side,
                                    std::span<const std::uint32_t> nodes,
                                    std::span<const std::uint32_t> nbr_ids, std::size_t n_sample);

/// Full-table forward over both sides.
FinalEmbeddings compute_final_embeddings(const ModelState& m, const BipartiteGraph& g,
                                         std::size_t n_sample, const Rng& nbr_rng,
                                         int block_id = -1, int epoch = -1);

std::vector<double> score_pairs(const FinalEmbeddings& emb,
                                std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs);

/// Sparse per-row gradient accumulator for an embedding table.
class SparseRowGrads {
 public:
  explicit SparseRowGrads(std::size_t dim = 0) : dim_(dim) {}

  /// Accumulator row for a table row, created zeroed on first touch.
  double* acc(std::uint32_t row);
  const double* find(std::uint32_t row) const;

  /// Sorts rows ascending; call once accumulation is done so iteration and
  /// the optimizer update run in a reproducible order.
  void finalize();

  std::size_t size() const { return rows_.size(); }
  std::size_t dim() const { return dim_; }
  std::uint32_t row_id(std::size_t k) const { return rows_[k]; }
  const double* row_val(std::size_t k) const { return vals_[k].data(); }
  double* row_val(std::size_t k) { return vals_[k].data(); }

  bool all_finite() const;

 private:
  std::size_t dim_;
  std::vector<std::uint32_t> rows_;
  std::vector<std::vector<double>> vals_;
  std::unordered_map<std::uint32_t, std::size_t> index_;
  bool finalized_ = false;
};

struct ModelGrads {
  SparseRowGrads d_user;
  SparseRowGrads d_item;
  Matrix dw_user;
  Matrix dw_item;

  explicit ModelGrads(const ModelState& m)
      : d_user(m.dim),
        d_item(m.dim),
        dw_user(m.w_user.rows(), m.w_user.cols()),
        dw_item(m.w_item.rows(), m.w_item.cols()) {}
};

/// Backpropagates upstream gradients on batch outputs (rows aligned with
/// batch.nodes) into table rows and W. ReLU subgradient at 0 is 0.
void backward(const ModelState& m, const ForwardBatch& batch, const Matrix& upstream,
              ModelGrads& grads);

// Model checkpoints: a directory holding manifest.json plus one raw
// little-endian float32 file per tensor, row-major.
void save_checkpoint(const std::string& dir, const ModelState& m, std::uint64_t seed,
                     int block_id, const std::string& extra_json = {});
struct Checkpoint {
  ModelState model;
  std::uint64_t seed = 0;
  int block_id = -1;
  std::string extra_json;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace graphsail
