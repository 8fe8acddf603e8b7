#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "graphsail/common.hpp"
#include "graphsail/graph.hpp"
#include "graphsail/model.hpp"

namespace graphsail {

/// Loss weights and knobs for incremental distillation.
struct DistillConfig {
  double lambda_self = 0.0;
  double lambda_local = 0.0;
  double lambda_global = 0.0;
  std::size_t k_clusters = 10;
  double tau = 1.0;
  double lambda_embd = 0.0;  // unweighted embedding-MSE baseline
  double lambda_lsp = 0.0;   // sampled local-structure-preservation baseline
  std::size_t lsp_neighbors = 10;

  void validate() const {
    if (tau <= 0.0) throw ConfigError("distill: tau must be > 0");
    if (k_clusters < 1) throw ConfigError("distill: K must be >= 1");
    if (lambda_self < 0 || lambda_local < 0 || lambda_global < 0 || lambda_embd < 0 ||
        lambda_lsp < 0)
      throw ConfigError("distill: loss weights must be non-negative");
  }
};

/// Read access to student final embeddings by node id. Training supplies a
/// batch-registry view; tests and snapshot code supply full tables.
class NodeEmbeddings {
 public:
  virtual ~NodeEmbeddings() = default;
  virtual const double* get(Side side, std::uint32_t node) const = 0;  // null when absent
  virtual std::size_t dim() const = 0;
};

class FullTableView final : public NodeEmbeddings {
 public:
  explicit FullTableView(const FinalEmbeddings& emb) : emb_(&emb) {}
  const double* get(Side side, std::uint32_t node) const override {
    return emb_->table(side).row(node);
  }
  std::size_t dim() const override { return emb_->users.cols(); }

 private:
  const FinalEmbeddings* emb_;
};

struct KmeansResult {
  std::vector<std::int32_t> assignments;  // one per input point
  Matrix centroids;                       // K x d
  std::vector<double> objective_trace;    // sum of squared distances, per Lloyd iteration
};

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are repaired by
/// moving the point currently farthest from its centroid.
KmeansResult kmeans_cluster(const Matrix& points, std::size_t k, Rng rng,
                            std::size_t max_iter = 100, double tol = 1e-4);

/// Softmax over dot-product similarities to the anchors, temperature tau.
std::vector<double> anchor_distribution(std::span<const double> emb_row, const Matrix& anchors,
                                        double tau);
/// Log-domain variant; never underflows to -inf for finite similarities.
std::vector<double> anchor_log_distribution(std::span<const double> emb_row, const Matrix& anchors,
                                            double tau);

/// Everything frozen from the block t-1 model that distillation on block t
/// needs. No field mutates after construction.
struct TeacherSnapshot {
  FinalEmbeddings emb;  // teacher final embeddings, full tables
  std::shared_ptr<const BipartiteGraph> graph_prev;  // neighbor sets through t-1

  Matrix anchors_user;  // K x d teacher centroids
  Matrix anchors_item;
  std::vector<std::int32_t> cluster_user;  // node -> cluster, -1 when uncovered
  std::vector<std::int32_t> cluster_item;

  // Per-node self-distillation weights eta = |N^{t-1}| / max(1, |N^t_block|),
  // zero for uncovered nodes, plus the per-side L2 normalizers.
  std::vector<double> eta_user;
  std::vector<double> eta_item;
  double eta_norm_user = 0.0;
  double eta_norm_item = 0.0;

  // Cached teacher quantities: dot(emb_v, mean of teacher neighborhood), and
  // log global-structure distributions against both anchor sets.
  std::vector<double> local_dot_user;
  std::vector<double> local_dot_item;
  Matrix logq_user_vs_au, logq_user_vs_ai;  // n_users x K
  Matrix logq_item_vs_au, logq_item_vs_ai;  // n_items x K

  double tau = 1.0;

  bool covered(Side side, std::uint32_t node) const {
    return graph_prev->degree(side, node) > 0;
  }
  const Matrix& anchors(Side s) const { return s == Side::User ? anchors_user : anchors_item; }
};

/// Builds the frozen teacher state: full-graph forward with fresh neighbor
/// samples, K-means anchors per side, eta weights from the new block's
/// degrees. Throws when a side has fewer than K covered nodes. Baselines
/// that never touch anchors pass with_anchors = false to skip clustering.
TeacherSnapshot make_teacher_snapshot(const ModelState& prev_model,
                                      std::shared_ptr<const BipartiteGraph> prev_graph,
                                      std::size_t k_clusters, double tau, const Rng& rng,
                                      std::span<const std::uint32_t> block_user_deg,
                                      std::span<const std::uint32_t> block_item_deg,
                                      std::size_t n_sample, bool with_anchors = true);

/// Student anchors: centroids of current student embeddings under the
/// teacher's frozen cluster assignments. Recomputed once per training epoch
/// and treated as constants by the gradient.
struct StudentAnchors {
  Matrix users;  // K x d
  Matrix items;
};
StudentAnchors compute_student_anchors(const NodeEmbeddings& student,
                                       const TeacherSnapshot& teacher);

struct DistillGrads {
  SparseRowGrads users;
  SparseRowGrads items;
  explicit DistillGrads(std::size_t dim) : users(dim), items(dim) {}
};

struct LossOut {
  double loss = 0.0;
  DistillGrads grads;
  explicit LossOut(std::size_t dim) : grads(dim) {}
};

// All losses average per side over the full count of nodes passed in the
// batch; nodes without teacher coverage contribute exactly zero loss and
// receive no gradient. Gradients are with respect to student final
// embeddings only.

/// eta-weighted squared distance between teacher and student embeddings.
LossOut self_distill_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                          std::span<const std::uint32_t> batch_users,
                          std::span<const std::uint32_t> batch_items);

/// Unweighted embedding-MSE baseline (Emb_d).
LossOut embd_baseline_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                           std::span<const std::uint32_t> batch_users,
                           std::span<const std::uint32_t> batch_items);

/// Squared change of dot(node, mean of its t-1 neighborhood); the student
/// side re-averages current embeddings over the frozen neighbor set, so the
/// gradient reaches every student neighbor embedding.
LossOut local_distill_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                           std::span<const std::uint32_t> batch_users,
                           std::span<const std::uint32_t> batch_items);

/// KL(student || teacher) between anchor-similarity distributions, against
/// user and item anchors for every node. Student anchors are constants.
LossOut global_distill_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                            const StudentAnchors& student_anchors, double tau,
                            std::span<const std::uint32_t> batch_users,
                            std::span<const std::uint32_t> batch_items);

/// LSP_s baseline: KL(student || teacher) over softmax similarities to
/// n_nbrs neighbors sampled from N^{t-1} (the same sample for both models,
/// via rng.fork(side, node)). Pooled average over all batch nodes.
LossOut lsp_baseline_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                          std::size_t n_nbrs, double tau, const Rng& rng,
                          std::span<const std::uint32_t> batch_users,
                          std::span<const std::uint32_t> batch_items);

}  // namespace graphsail
