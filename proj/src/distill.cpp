#include "graphsail/distill.hpp"

#include <algorithm>
#include <cstring>

namespace graphsail {

namespace {

double log_sum_exp(std::span<const double> xs) {
  double m = xs[0];
  for (double x : xs) m = std::max(m, x);
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

const double* require(const NodeEmbeddings& view, Side side, std::uint32_t node) {
  const double* p = view.get(side, node);
  if (!p)
    throw ConfigError("student embedding missing for " +
                      std::string(side == Side::User ? "user " : "item ") + std::to_string(node));
  return p;
}

}  // namespace

// --------------------------------------------------------------------------
// K-means
// --------------------------------------------------------------------------

KmeansResult kmeans_cluster(const Matrix& points, std::size_t k, Rng rng, std::size_t max_iter,
                            double tol) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (n < k) throw DataError("kmeans: need at least K points (" + std::to_string(n) + " < " +
                             std::to_string(k) + ")");

  KmeansResult res;
  res.centroids = Matrix(k, d);
  res.assignments.assign(n, 0);

  auto dist2 = [&](const double* a, const double* b) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double t = a[c] - b[c];
      s += t * t;
    }
    return s;
  };

  // k-means++ seeding.
  std::vector<double> mind(n);
  {
    const std::size_t first = rng.below(n);
    std::memcpy(res.centroids.row(0), points.row(first), d * sizeof(double));
    for (std::size_t i = 0; i < n; ++i) mind[i] = dist2(points.row(i), res.centroids.row(0));
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (double v : mind) total += v;
      std::size_t pick;
      if (total <= 0.0) {
        pick = rng.below(n);
      } else {
        const double target = rng.unit() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += mind[i];
          if (acc > target) {
            pick = i;
            break;
          }
        }
      }
      std::memcpy(res.centroids.row(c), points.row(pick), d * sizeof(double));
      for (std::size_t i = 0; i < n; ++i)
        mind[i] = std::min(mind[i], dist2(points.row(i), res.centroids.row(c)));
    }
  }

  std::vector<double> assigned_d2(n, 0.0);
  std::vector<std::size_t> counts(k, 0);
  Matrix next(k, d);

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // Assignment (ties go to the lowest cluster index).
    parallel_for(n, [&](std::size_t i) {
      const double* p = points.row(i);
      double best = dist2(p, res.centroids.row(0));
      std::int32_t arg = 0;
      for (std::size_t c = 1; c < k; ++c) {
        const double v = dist2(p, res.centroids.row(c));
        if (v < best) {
          best = v;
          arg = static_cast<std::int32_t>(c);
        }
      }
      res.assignments[i] = arg;
      assigned_d2[i] = best;
    });

    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(res.assignments[i])];

    // Empty-cluster repair: relocate the centroid onto the point farthest
    // from its current centroid, drawn from a cluster with >= 2 members.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double fard = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(res.assignments[i])] < 2) continue;
        if (assigned_d2[i] > fard) {
          fard = assigned_d2[i];
          far = i;
        }
      }
      if (far == n) throw DataError("kmeans: cannot repair empty cluster");
      --counts[static_cast<std::size_t>(res.assignments[far])];
      res.assignments[far] = static_cast<std::int32_t>(c);
      counts[c] = 1;
      std::memcpy(res.centroids.row(c), points.row(far), d * sizeof(double));
      assigned_d2[far] = 0.0;
    }

    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) objective += assigned_d2[i];
    res.objective_trace.push_back(objective);

    // Mean update.
    next.fill(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = next.row(static_cast<std::size_t>(res.assignments[i]));
      const double* p = points.row(i);
      for (std::size_t c = 0; c < d; ++c) row[c] += p[c];
    }
    double shift2 = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double inv = 1.0 / static_cast<double>(counts[c]);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        next.at(c, j) *= inv;
        const double t = next.at(c, j) - res.centroids.at(c, j);
        s += t * t;
      }
      shift2 = std::max(shift2, s);
    }
    std::swap(res.centroids, next);
    if (std::sqrt(shift2) < tol) break;
  }

  // Leave assignments consistent with the returned centroids: one final
  // assignment against the updated means, then recompute the means.
  parallel_for(n, [&](std::size_t i) {
    const double* p = points.row(i);
    double best = dist2(p, res.centroids.row(0));
    std::int32_t arg = 0;
    for (std::size_t c = 1; c < k; ++c) {
      const double v = dist2(p, res.centroids.row(c));
      if (v < best) {
        best = v;
        arg = static_cast<std::int32_t>(c);
      }
    }
    res.assignments[i] = arg;
    assigned_d2[i] = best;
  });
  std::fill(counts.begin(), counts.end(), 0);
  for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(res.assignments[i])];
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = n;
    double fard = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (counts[static_cast<std::size_t>(res.assignments[i])] < 2) continue;
      if (assigned_d2[i] > fard) {
        fard = assigned_d2[i];
        far = i;
      }
    }
    if (far == n) throw DataError("kmeans: cannot repair empty cluster");
    --counts[static_cast<std::size_t>(res.assignments[far])];
    res.assignments[far] = static_cast<std::int32_t>(c);
    counts[c] = 1;
    assigned_d2[far] = 0.0;
  }
  next.fill(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = next.row(static_cast<std::size_t>(res.assignments[i]));
    const double* p = points.row(i);
    for (std::size_t c = 0; c < d; ++c) row[c] += p[c];
  }
  for (std::size_t c = 0; c < k; ++c) {
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (std::size_t j = 0; j < d; ++j) next.at(c, j) *= inv;
  }
  res.centroids = std::move(next);
  return res;
}

// --------------------------------------------------------------------------
// Anchor distributions
// --------------------------------------------------------------------------

std::vector<double> anchor_log_distribution(std::span<const double> emb_row, const Matrix& anchors,
                                            double tau) {
  if (tau <= 0.0) throw ConfigError("anchor_distribution: tau must be > 0");
  const std::size_t k = anchors.rows();
  const std::size_t d = anchors.cols();
  std::vector<double> s(k);
  for (std::size_t c = 0; c < k; ++c) s[c] = dot(emb_row.data(), anchors.row(c), d) / tau;
  const double lse = log_sum_exp(s);
  for (double& v : s) v -= lse;
  return s;
}

std::vector<double> anchor_distribution(std::span<const double> emb_row, const Matrix& anchors,
                                        double tau) {
  std::vector<double> p = anchor_log_distribution(emb_row, anchors, tau);
  for (double& v : p) v = std::exp(v);
  return p;
}

// --------------------------------------------------------------------------
// Teacher snapshot
// --------------------------------------------------------------------------

TeacherSnapshot make_teacher_snapshot(const ModelState& prev_model,
                                      std::shared_ptr<const BipartiteGraph> prev_graph,
                                      std::size_t k_clusters, double tau, const Rng& rng,
                                      std::span<const std::uint32_t> block_user_deg,
                                      std::span<const std::uint32_t> block_item_deg,
                                      std::size_t n_sample, bool with_anchors) {
  if (!prev_graph) throw ConfigError("make_teacher_snapshot: prev_graph is null");
  TeacherSnapshot snap;
  snap.tau = tau;
  snap.graph_prev = std::move(prev_graph);
  const BipartiteGraph& g = *snap.graph_prev;
  snap.emb = compute_final_embeddings(prev_model, g, n_sample, rng.fork(stream::kTeacher));

  const std::size_t d = prev_model.dim;
  for (Side side : {Side::User, Side::Item}) {
    const std::uint32_t n = side == Side::User ? prev_model.n_users() : prev_model.n_items();
    const Matrix& emb = snap.emb.table(side);

    std::vector<std::uint32_t> covered;
    covered.reserve(n);
    for (std::uint32_t v = 0; v < n; ++v)
      if (g.degree(side, v) > 0) covered.push_back(v);
    if (covered.size() < k_clusters)
      throw DataError("make_teacher_snapshot: fewer than K covered nodes on the " +
                      std::string(side == Side::User ? "user" : "item") + " side");

    if (with_anchors) {
      Matrix pts(covered.size(), d);
      for (std::size_t i = 0; i < covered.size(); ++i)
        std::memcpy(pts.row(i), emb.row(covered[i]), d * sizeof(double));
      KmeansResult km = kmeans_cluster(
          pts, k_clusters, rng.fork(stream::kKmeans, static_cast<std::uint64_t>(side)));

      auto& assign = side == Side::User ? snap.cluster_user : snap.cluster_item;
      assign.assign(n, -1);
      for (std::size_t i = 0; i < covered.size(); ++i) assign[covered[i]] = km.assignments[i];
      (side == Side::User ? snap.anchors_user : snap.anchors_item) = std::move(km.centroids);
    }

    // eta weights over covered nodes.
    const auto& block_deg = side == Side::User ? block_user_deg : block_item_deg;
    auto& eta = side == Side::User ? snap.eta_user : snap.eta_item;
    eta.assign(n, 0.0);
    double norm2 = 0.0;
    for (std::uint32_t v : covered) {
      const double prev_deg = static_cast<double>(g.degree(side, v));
      const double new_deg =
          v < block_deg.size() ? std::max<std::uint32_t>(1, block_deg[v]) : 1.0;
      eta[v] = prev_deg / static_cast<double>(new_deg);
      norm2 += eta[v] * eta[v];
    }
    (side == Side::User ? snap.eta_norm_user : snap.eta_norm_item) = std::sqrt(norm2);

    // dot(node, mean of its t-1 neighborhood) under the teacher.
    const Matrix& cross = snap.emb.table(other_side(side));
    auto& local_dot = side == Side::User ? snap.local_dot_user : snap.local_dot_item;
    local_dot.assign(n, 0.0);
    parallel_for(covered.size(), [&](std::size_t i) {
      const std::uint32_t v = covered[i];
      auto nbrs = g.neighbors(side, v);
      std::vector<double> mean(d, 0.0);
      for (std::uint32_t w : nbrs) {
        const double* e = cross.row(w);
        for (std::size_t c = 0; c < d; ++c) mean[c] += e[c];
      }
      const double inv = 1.0 / static_cast<double>(nbrs.size());
      for (std::size_t c = 0; c < d; ++c) mean[c] *= inv;
      local_dot[v] = dot(emb.row(v), mean.data(), d);
    });
  }

  if (!with_anchors) return snap;

  // Teacher log global-structure distributions against both anchor sets.
  auto fill_logq = [&](Side node_side, const Matrix& anchors, Matrix& out) {
    const std::uint32_t n =
        node_side == Side::User ? prev_model.n_users() : prev_model.n_items();
    const Matrix& emb = snap.emb.table(node_side);
    out = Matrix(n, k_clusters);
    parallel_for(n, [&](std::size_t v) {
      if (g.degree(node_side, static_cast<std::uint32_t>(v)) == 0) return;
      std::vector<double> lq =
          anchor_log_distribution({emb.row(v), d}, anchors, tau);
      std::memcpy(out.row(v), lq.data(), k_clusters * sizeof(double));
    });
  };
  fill_logq(Side::User, snap.anchors_user, snap.logq_user_vs_au);
  fill_logq(Side::User, snap.anchors_item, snap.logq_user_vs_ai);
  fill_logq(Side::Item, snap.anchors_user, snap.logq_item_vs_au);
  fill_logq(Side::Item, snap.anchors_item, snap.logq_item_vs_ai);
  return snap;
}

StudentAnchors compute_student_anchors(const NodeEmbeddings& student,
                                       const TeacherSnapshot& teacher) {
  const std::size_t d = student.dim();
  const std::size_t k = teacher.anchors_user.rows();
  StudentAnchors anchors;
  for (Side side : {Side::User, Side::Item}) {
    const auto& assign = side == Side::User ? teacher.cluster_user : teacher.cluster_item;
    Matrix acc(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::uint32_t v = 0; v < assign.size(); ++v) {
      if (assign[v] < 0) continue;
      const double* e = require(student, side, v);
      double* row = acc.row(static_cast<std::size_t>(assign[v]));
      for (std::size_t c = 0; c < d; ++c) row[c] += e[c];
      ++counts[static_cast<std::size_t>(assign[v])];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) throw DataError("student anchors: empty teacher cluster");
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < d; ++j) acc.at(c, j) *= inv;
    }
    (side == Side::User ? anchors.users : anchors.items) = std::move(acc);
  }
  return anchors;
}

// --------------------------------------------------------------------------
// Distillation losses
// --------------------------------------------------------------------------

namespace {

// Shared core of self_distill_loss and embd_baseline_loss. weight(side, v)
// returns the per-node factor multiplying the squared distance.
template <typename WeightFn>
LossOut weighted_sq_distance_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                                  std::span<const std::uint32_t> batch_users,
                                  std::span<const std::uint32_t> batch_items, WeightFn weight) {
  const std::size_t d = student.dim();
  LossOut out(d);
  for (Side side : {Side::User, Side::Item}) {
    const auto& batch = side == Side::User ? batch_users : batch_items;
    if (batch.empty()) continue;
    const double inv_cnt = 1.0 / static_cast<double>(batch.size());
    const Matrix& temb = teacher.emb.table(side);
    SparseRowGrads& grads = side == Side::User ? out.grads.users : out.grads.items;
    for (std::uint32_t v : batch) {
      if (!teacher.covered(side, v)) continue;
      const double w = weight(side, v);
      const double* es = require(student, side, v);
      const double* et = temb.row(v);
      double* g = grads.acc(v);
      double sum = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = es[c] - et[c];
        sum += diff * diff;
        g[c] += 2.0 * w * inv_cnt * diff;
      }
      out.loss += w * inv_cnt * sum;
    }
  }
  return out;
}

}  // namespace

LossOut self_distill_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                          std::span<const std::uint32_t> batch_users,
                          std::span<const std::uint32_t> batch_items) {
  return weighted_sq_distance_loss(
      student, teacher, batch_users, batch_items, [&](Side side, std::uint32_t v) {
        const double norm = side == Side::User ? teacher.eta_norm_user : teacher.eta_norm_item;
        const auto& eta = side == Side::User ? teacher.eta_user : teacher.eta_item;
        return eta[v] / norm;
      });
}

LossOut embd_baseline_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                           std::span<const std::uint32_t> batch_users,
                           std::span<const std::uint32_t> batch_items) {
  return weighted_sq_distance_loss(student, teacher, batch_users, batch_items,
                                   [](Side, std::uint32_t) { return 1.0; });
}

LossOut local_distill_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                           std::span<const std::uint32_t> batch_users,
                           std::span<const std::uint32_t> batch_items) {
  const std::size_t d = student.dim();
  LossOut out(d);
  const BipartiteGraph& g = *teacher.graph_prev;
  std::vector<double> c_t(d);
  for (Side side : {Side::User, Side::Item}) {
    const auto& batch = side == Side::User ? batch_users : batch_items;
    if (batch.empty()) continue;
    const double inv_cnt = 1.0 / static_cast<double>(batch.size());
    const auto& local_dot = side == Side::User ? teacher.local_dot_user : teacher.local_dot_item;
    SparseRowGrads& self_grads = side == Side::User ? out.grads.users : out.grads.items;
    SparseRowGrads& nbr_grads = side == Side::User ? out.grads.items : out.grads.users;
    const Side cross = other_side(side);
    for (std::uint32_t v : batch) {
      auto nbrs = g.neighbors(side, v);
      if (nbrs.empty()) continue;
      const double* es = require(student, side, v);
      std::fill(c_t.begin(), c_t.end(), 0.0);
      for (std::uint32_t w : nbrs) {
        const double* e = require(student, cross, w);
        for (std::size_t c = 0; c < d; ++c) c_t[c] += e[c];
      }
      const double inv_deg = 1.0 / static_cast<double>(nbrs.size());
      for (std::size_t c = 0; c < d; ++c) c_t[c] *= inv_deg;

      const double s = dot(es, c_t.data(), d);
      const double diff = s - local_dot[v];
      out.loss += diff * diff * inv_cnt;

      const double coef = 2.0 * diff * inv_cnt;
      double* gv = self_grads.acc(v);
      for (std::size_t c = 0; c < d; ++c) gv[c] += coef * c_t[c];
      const double coef_n = coef * inv_deg;
      for (std::uint32_t w : nbrs) {
        double* gw = nbr_grads.acc(w);
        for (std::size_t c = 0; c < d; ++c) gw[c] += coef_n * es[c];
      }
    }
  }
  return out;
}

LossOut global_distill_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                            const StudentAnchors& student_anchors, double tau,
                            std::span<const std::uint32_t> batch_users,
                            std::span<const std::uint32_t> batch_items) {
  if (tau <= 0.0) throw ConfigError("global_distill_loss: tau must be > 0");
  const std::size_t d = student.dim();
  const std::size_t k = student_anchors.users.rows();
  LossOut out(d);
  for (Side side : {Side::User, Side::Item}) {
    const auto& batch = side == Side::User ? batch_users : batch_items;
    if (batch.empty()) continue;
    const double inv_cnt = 1.0 / static_cast<double>(batch.size());
    SparseRowGrads& grads = side == Side::User ? out.grads.users : out.grads.items;
    for (std::uint32_t v : batch) {
      if (!teacher.covered(side, v)) continue;
      const double* es = require(student, side, v);
      double* gv = nullptr;  // created lazily so the loop body stays cheap
      for (Side anchor_side : {Side::User, Side::Item}) {
        const Matrix& a_student =
            anchor_side == Side::User ? student_anchors.users : student_anchors.items;
        const Matrix& logq_tab =
            side == Side::User
                ? (anchor_side == Side::User ? teacher.logq_user_vs_au : teacher.logq_user_vs_ai)
                : (anchor_side == Side::User ? teacher.logq_item_vs_au : teacher.logq_item_vs_ai);
        const std::vector<double> logp = anchor_log_distribution({es, d}, a_student, tau);
        const double* logq = logq_tab.row(v);
        double kl = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          const double p = std::exp(logp[c]);
          if (p > 0.0) kl += p * (logp[c] - logq[c]);
        }
        out.loss += kl * inv_cnt;
        if (!gv) gv = grads.acc(v);
        for (std::size_t c = 0; c < k; ++c) {
          const double p = std::exp(logp[c]);
          if (p == 0.0) continue;
          const double coef = p * ((logp[c] - logq[c]) - kl) * inv_cnt / tau;
          const double* arow = a_student.row(c);
          for (std::size_t j = 0; j < d; ++j) gv[j] += coef * arow[j];
        }
      }
    }
  }
  return out;
}

LossOut lsp_baseline_loss(const NodeEmbeddings& student, const TeacherSnapshot& teacher,
                          std::size_t n_nbrs, double tau, const Rng& rng,
                          std::span<const std::uint32_t> batch_users,
                          std::span<const std::uint32_t> batch_items) {
  if (tau <= 0.0) throw ConfigError("lsp_baseline_loss: tau must be > 0");
  if (n_nbrs == 0) throw ConfigError("lsp_baseline_loss: n_nbrs must be >= 1");
  const std::size_t d = student.dim();
  LossOut out(d);
  const BipartiteGraph& g = *teacher.graph_prev;
  const std::size_t total = batch_users.size() + batch_items.size();
  if (total == 0) return out;
  const double inv_cnt = 1.0 / static_cast<double>(total);

  std::vector<std::uint32_t> sample(n_nbrs);
  std::vector<double> ts(n_nbrs), ss(n_nbrs);
  for (Side side : {Side::User, Side::Item}) {
    const auto& batch = side == Side::User ? batch_users : batch_items;
    const Side cross = other_side(side);
    const Matrix& temb_self = teacher.emb.table(side);
    const Matrix& temb_cross = teacher.emb.table(cross);
    SparseRowGrads& self_grads = side == Side::User ? out.grads.users : out.grads.items;
    SparseRowGrads& nbr_grads = side == Side::User ? out.grads.items : out.grads.users;
    for (std::uint32_t v : batch) {
      if (g.degree(side, v) == 0) continue;
      Rng r = rng.fork(static_cast<std::uint64_t>(side), v);
      g.sample_neighbors_into(side, v, n_nbrs, r, sample.data());

      const double* es = require(student, side, v);
      const double* et = temb_self.row(v);
      for (std::size_t s = 0; s < n_nbrs; ++s) {
        ts[s] = dot(et, temb_cross.row(sample[s]), d) / tau;
        ss[s] = dot(es, require(student, cross, sample[s]), d) / tau;
      }
      const double lse_t = log_sum_exp(ts);
      const double lse_s = log_sum_exp(ss);
      double kl = 0.0;
      for (std::size_t s = 0; s < n_nbrs; ++s) {
        const double logp = ss[s] - lse_s;
        const double logq = ts[s] - lse_t;
        const double p = std::exp(logp);
        if (p > 0.0) kl += p * (logp - logq);
      }
      out.loss += kl * inv_cnt;

      double* gv = self_grads.acc(v);
      for (std::size_t s = 0; s < n_nbrs; ++s) {
        const double logp = ss[s] - lse_s;
        const double logq = ts[s] - lse_t;
        const double p = std::exp(logp);
        if (p == 0.0) continue;
        const double coef = p * ((logp - logq) - kl) * inv_cnt / tau;
        const double* ew = require(student, cross, sample[s]);
        for (std::size_t c = 0; c < d; ++c) gv[c] += coef * ew[c];
        double* gw = nbr_grads.acc(sample[s]);
        for (std::size_t c = 0; c < d; ++c) gw[c] += coef * es[c];
      }
    }
  }
  return out;
}

}  // namespace graphsail
