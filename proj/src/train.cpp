#include "graphsail/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>

#include "graphsail/eval.hpp"

namespace graphsail {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_s(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t pack(std::uint64_t hi, std::uint64_t lo) { return (hi << 32) | (lo & 0xffffffffULL); }

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::Finetune: return "finetune";
    case Method::Embd: return "embd";
    case Method::Lsp: return "lsp";
    case Method::GraphSail: return "graphsail";
    case Method::FullBatch: return "full_batch";
  }
  throw ConfigError("unknown method");
}

Method method_from_name(const std::string& name) {
  if (name == "finetune") return Method::Finetune;
  if (name == "embd") return Method::Embd;
  if (name == "lsp") return Method::Lsp;
  if (name == "graphsail") return Method::GraphSail;
  if (name == "full_batch") return Method::FullBatch;
  throw ConfigError("unknown method '" + name + "'");
}

AdamState AdamState::like(const ModelState& m) {
  AdamState s;
  s.m_user = Matrix(m.e_user.rows(), m.e_user.cols());
  s.v_user = Matrix(m.e_user.rows(), m.e_user.cols());
  s.m_item = Matrix(m.e_item.rows(), m.e_item.cols());
  s.v_item = Matrix(m.e_item.rows(), m.e_item.cols());
  if (m.layers == 1) {
    s.m_wu = Matrix(m.w_user.rows(), m.w_user.cols());
    s.v_wu = Matrix(m.w_user.rows(), m.w_user.cols());
    s.m_wi = Matrix(m.w_item.rows(), m.w_item.cols());
    s.v_wi = Matrix(m.w_item.rows(), m.w_item.cols());
  }
  return s;
}

void adam_step(ModelState& model, const ModelGrads& grads, AdamState& state, double lr) {
  if (!grads.dw_user.all_finite() || !grads.dw_item.all_finite() || !grads.d_user.all_finite() ||
      !grads.d_item.all_finite())
    throw DivergenceError("divergence: non-finite gradient");

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double b1 = state.beta1, b2 = state.beta2, eps = state.eps;

  auto update_rows = [&](const SparseRowGrads& g, Matrix& theta, Matrix& mm, Matrix& vv) {
    const std::size_t d = theta.cols();
    parallel_for(g.size(), [&](std::size_t k) {
      const std::uint32_t r = g.row_id(k);
      const double* gr = g.row_val(k);
      double* t = theta.row(r);
      double* m = mm.row(r);
      double* v = vv.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        m[c] = b1 * m[c] + (1.0 - b1) * gr[c];
        v[c] = b2 * v[c] + (1.0 - b2) * gr[c] * gr[c];
        t[c] -= lr * (m[c] / bc1) / (std::sqrt(v[c] / bc2) + eps);
      }
    });
  };
  update_rows(grads.d_user, model.e_user, state.m_user, state.v_user);
  update_rows(grads.d_item, model.e_item, state.m_item, state.v_item);

  auto update_dense = [&](const Matrix& g, Matrix& theta, Matrix& mm, Matrix& vv) {
    if (theta.empty()) return;
    parallel_for(theta.rows(), [&](std::size_t r) {
      const double* gr = g.row(r);
      double* t = theta.row(r);
      double* m = mm.row(r);
      double* v = vv.row(r);
      for (std::size_t c = 0; c < theta.cols(); ++c) {
        m[c] = b1 * m[c] + (1.0 - b1) * gr[c];
        v[c] = b2 * v[c] + (1.0 - b2) * gr[c] * gr[c];
        t[c] -= lr * (m[c] / bc1) / (std::sqrt(v[c] / bc2) + eps);
      }
    });
  };
  if (model.layers == 1) {
    update_dense(grads.dw_user, model.w_user, state.m_wu, state.v_wu);
    update_dense(grads.dw_item, model.w_item, state.m_wi, state.v_wi);
  }
}

BprResult bpr_loss(const Matrix& emb_u, const Matrix& emb_i, const Matrix& emb_j, double l2) {
  const std::size_t n = emb_u.rows();
  const std::size_t d = emb_u.cols();
  if (emb_i.rows() != n || emb_j.rows() != n || emb_i.cols() != d || emb_j.cols() != d)
    throw ConfigError("bpr_loss: batch shapes misaligned");

  BprResult res;
  res.d_u = Matrix(n, d);
  res.d_i = Matrix(n, d);
  res.d_j = Matrix(n, d);
  for (std::size_t k = 0; k < n; ++k) {
    const double* u = emb_u.row(k);
    const double* i = emb_i.row(k);
    const double* j = emb_j.row(k);
    const double x = dot(u, i, d) - dot(u, j, d);
    res.loss += -log_sigmoid(x);
    const double coef = sigmoid(x) - 1.0;  // d(-log sigmoid(x))/dx
    double* du = res.d_u.row(k);
    double* di = res.d_i.row(k);
    double* dj = res.d_j.row(k);
    for (std::size_t c = 0; c < d; ++c) {
      du[c] = coef * (i[c] - j[c]) + 2.0 * l2 * u[c];
      di[c] = coef * u[c] + 2.0 * l2 * i[c];
      dj[c] = -coef * u[c] + 2.0 * l2 * j[c];
    }
    res.loss += l2 * (sq_norm(u, d) + sq_norm(i, d) + sq_norm(j, d));
  }
  return res;
}

std::vector<std::uint32_t> sample_negatives(const BipartiteGraph& g_train, std::uint32_t user,
                                            std::size_t n_neg, Rng& rng) {
  const std::uint32_t n_items = g_train.n_items();
  auto observed = g_train.neighbors(Side::User, user);
  if (observed.size() >= n_items)
    throw DataError("sample_negatives: user " + std::to_string(user) +
                    " has interacted with all items");
  std::vector<std::uint32_t> out(n_neg);
  for (std::size_t k = 0; k < n_neg; ++k) {
    for (;;) {
      const auto cand = static_cast<std::uint32_t>(rng.below(n_items));
      if (!std::binary_search(observed.begin(), observed.end(), cand)) {
        out[k] = cand;
        break;
      }
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// Training engine
// --------------------------------------------------------------------------

namespace {

struct ActiveLosses {
  double self = 0, local = 0, global = 0, embd = 0, lsp = 0;
  bool any() const { return self > 0 || local > 0 || global > 0 || embd > 0 || lsp > 0; }
};

ActiveLosses resolve_losses(Method m, const DistillConfig& d) {
  switch (m) {
    case Method::GraphSail: return {d.lambda_self, d.lambda_local, d.lambda_global, 0, 0};
    case Method::Embd: return {0, 0, 0, d.lambda_embd, 0};
    case Method::Lsp: return {0, 0, 0, 0, d.lambda_lsp};
    default: return {};
  }
}

// Per-step node registry: unique node ids per side with their row index in
// that side's forward batch.
struct Registry {
  std::unordered_map<std::uint32_t, std::uint32_t> map[2];
  std::vector<std::uint32_t> nodes[2];

  std::uint32_t add(Side s, std::uint32_t node) {
    auto& mm = map[static_cast<int>(s)];
    auto it = mm.find(node);
    if (it != mm.end()) return it->second;
    const auto row = static_cast<std::uint32_t>(nodes[static_cast<int>(s)].size());
    mm.emplace(node, row);
    nodes[static_cast<int>(s)].push_back(node);
    return row;
  }
  const std::uint32_t* find(Side s, std::uint32_t node) const {
    auto it = map[static_cast<int>(s)].find(node);
    return it == map[static_cast<int>(s)].end() ? nullptr : &it->second;
  }
};

class RegistryView final : public NodeEmbeddings {
 public:
  RegistryView(const Registry& reg, const ForwardBatch& fu, const ForwardBatch& fi)
      : reg_(&reg), fu_(&fu), fi_(&fi) {}
  const double* get(Side side, std::uint32_t node) const override {
    const std::uint32_t* row = reg_->find(side, node);
    if (!row) return nullptr;
    return (side == Side::User ? fu_ : fi_)->out.row(*row);
  }
  std::size_t dim() const override { return fu_->dim; }

 private:
  const Registry* reg_;
  const ForwardBatch* fu_;
  const ForwardBatch* fi_;
};

void merge_loss_grads(const DistillGrads& g, double lambda, const Registry& reg, Matrix& dh_user,
                      Matrix& dh_item) {
  for (Side side : {Side::User, Side::Item}) {
    const SparseRowGrads& src = side == Side::User ? g.users : g.items;
    Matrix& dst = side == Side::User ? dh_user : dh_item;
    for (std::size_t k = 0; k < src.size(); ++k) {
      const std::uint32_t* row = reg.find(side, src.row_id(k));
      if (!row) throw ConfigError("distill gradient for node outside the batch registry");
      double* out = dst.row(*row);
      const double* in = src.row_val(k);
      for (std::size_t c = 0; c < dst.cols(); ++c) out[c] += lambda * in[c];
    }
  }
}

}  // namespace

TrainResult run_training(ModelState model, const TrainStage& stage, const TrainConfig& cfg,
                         const EvalFn& eval_fn, const LogFn& log_fn) {
  cfg.validate();
  if (!stage.graph) throw ConfigError("run_training: graph is required");
  const ActiveLosses active = resolve_losses(stage.method, stage.distill);
  if (active.any()) {
    stage.distill.validate();
    if (!stage.teacher) throw ConfigError("run_training: method needs a teacher snapshot");
  }

  const std::size_t d = model.dim;
  const std::size_t n_pos = stage.positives.size();
  if (n_pos == 0) throw DataError("run_training: no positive pairs");

  const Rng root(cfg.seed);
  AdamState adam = AdamState::like(model);

  TrainResult result;
  result.model = model;  // placeholder until the first evaluation
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  std::vector<std::size_t> perm(n_pos);
  StudentAnchors anchors;

  for (int epoch = 1; epoch <= static_cast<int>(stage.max_epochs); ++epoch) {
    const auto t0 = Clock::now();
    EpochLog log;
    log.epoch = epoch;

    if (active.global > 0) {
      // Student anchors refresh: full-graph forward under this epoch's
      // stream, then centroid means under the frozen teacher assignments.
      const Rng ar = root.fork(stream::kAnchors, pack(stage.stage_id, epoch));
      FinalEmbeddings fe = compute_final_embeddings(model, *stage.graph, cfg.n_sample, ar);
      FullTableView view(fe);
      anchors = compute_student_anchors(view, *stage.teacher);
    }

    for (std::size_t k = 0; k < n_pos; ++k) perm[k] = k;
    {
      Rng sh = root.fork(stream::kShuffle, pack(stage.stage_id, epoch));
      for (std::size_t k = n_pos; k > 1; --k) {
        const std::size_t j = sh.below(k);
        std::swap(perm[k - 1], perm[j]);
      }
    }

    const std::size_t n_steps = (n_pos + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t step = 0; step < n_steps; ++step) {
      const std::size_t begin = step * cfg.batch_size;
      const std::size_t end = std::min(n_pos, begin + cfg.batch_size);
      const std::size_t bsz = end - begin;

      Registry reg;
      struct Triple {
        std::uint32_t u_row, i_row, j_row;
      };
      std::vector<Triple> triples;
      triples.reserve(bsz * cfg.n_neg);
      const Rng neg_base = root.fork(stream::kNegative, pack(stage.stage_id, epoch), step);
      for (std::size_t b = begin; b < end; ++b) {
        const Interaction& rec = stage.positives[perm[b]];
        const std::uint32_t u_row = reg.add(Side::User, rec.user);
        const std::uint32_t i_row = reg.add(Side::Item, rec.item);
        Rng nr = neg_base.fork(b - begin);
        const auto negs = sample_negatives(*stage.graph, rec.user, cfg.n_neg, nr);
        for (std::uint32_t j : negs)
          triples.push_back({u_row, i_row, reg.add(Side::Item, j)});
      }

      // The distillation batch is the triple node set; neighbor extensions
      // below only add rows the active losses read or write.
      const std::vector<std::uint32_t> dist_users = reg.nodes[0];
      const std::vector<std::uint32_t> dist_items = reg.nodes[1];

      if (active.local > 0) {
        const BipartiteGraph& gp = *stage.teacher->graph_prev;
        for (std::uint32_t u : dist_users)
          for (std::uint32_t w : gp.neighbors(Side::User, u)) reg.add(Side::Item, w);
        for (std::uint32_t i : dist_items)
          for (std::uint32_t w : gp.neighbors(Side::Item, i)) reg.add(Side::User, w);
      }
      const Rng lsp_rng = root.fork(stream::kLsp, pack(stage.stage_id, epoch), step);
      if (active.lsp > 0) {
        const BipartiteGraph& gp = *stage.teacher->graph_prev;
        std::vector<std::uint32_t> sample(stage.distill.lsp_neighbors);
        for (Side side : {Side::User, Side::Item}) {
          for (std::uint32_t v : (side == Side::User ? dist_users : dist_items)) {
            if (gp.degree(side, v) == 0) continue;
            Rng r = lsp_rng.fork(static_cast<std::uint64_t>(side), v);
            gp.sample_neighbors_into(side, v, sample.size(), r, sample.data());
            for (std::uint32_t w : sample) reg.add(other_side(side), w);
          }
        }
      }

      const Rng nbr_rng = root.fork(stream::kNeighbor, pack(stage.stage_id, epoch), step);
      const ForwardBatch fb_u =
          forward_embed(model, *stage.graph, Side::User, reg.nodes[0], cfg.n_sample, nbr_rng);
      const ForwardBatch fb_i =
          forward_embed(model, *stage.graph, Side::Item, reg.nodes[1], cfg.n_sample, nbr_rng);

      Matrix dh_user(reg.nodes[0].size(), d);
      Matrix dh_item(reg.nodes[1].size(), d);

      // BPR over the triples (Eq. 10 sums, it does not average).
      for (const Triple& t : triples) {
        const double* eu = fb_u.out.row(t.u_row);
        const double* ei = fb_i.out.row(t.i_row);
        const double* ej = fb_i.out.row(t.j_row);
        const double x = dot(eu, ei, d) - dot(eu, ej, d);
        log.loss_bpr += -log_sigmoid(x);
        const double coef = sigmoid(x) - 1.0;
        double* du = dh_user.row(t.u_row);
        double* di = dh_item.row(t.i_row);
        double* dj = dh_item.row(t.j_row);
        for (std::size_t c = 0; c < d; ++c) {
          du[c] += coef * (ei[c] - ej[c]);
          di[c] += coef * eu[c];
          dj[c] -= coef * eu[c];
        }
      }

      const RegistryView view(reg, fb_u, fb_i);
      if (active.self > 0) {
        LossOut l = self_distill_loss(view, *stage.teacher, dist_users, dist_items);
        log.loss_self += active.self * l.loss;
        merge_loss_grads(l.grads, active.self, reg, dh_user, dh_item);
      }
      if (active.local > 0) {
        LossOut l = local_distill_loss(view, *stage.teacher, dist_users, dist_items);
        log.loss_local += active.local * l.loss;
        merge_loss_grads(l.grads, active.local, reg, dh_user, dh_item);
      }
      if (active.global > 0) {
        LossOut l = global_distill_loss(view, *stage.teacher, anchors, stage.distill.tau,
                                        dist_users, dist_items);
        log.loss_global += active.global * l.loss;
        merge_loss_grads(l.grads, active.global, reg, dh_user, dh_item);
      }
      if (active.embd > 0) {
        LossOut l = embd_baseline_loss(view, *stage.teacher, dist_users, dist_items);
        log.loss_embd += active.embd * l.loss;
        merge_loss_grads(l.grads, active.embd, reg, dh_user, dh_item);
      }
      if (active.lsp > 0) {
        LossOut l = lsp_baseline_loss(view, *stage.teacher, stage.distill.lsp_neighbors,
                                      stage.distill.tau, lsp_rng, dist_users, dist_items);
        log.loss_lsp += active.lsp * l.loss;
        merge_loss_grads(l.grads, active.lsp, reg, dh_user, dh_item);
      }

      ModelGrads grads(model);
      backward(model, fb_u, dh_user, grads);
      backward(model, fb_i, dh_item, grads);

      // L2 over the parameters the batch touches: base rows of the triple
      // nodes plus both W matrices (Theta of Eq. 10).
      if (cfg.l2 > 0) {
        for (std::uint32_t u : dist_users) {
          double* g = grads.d_user.acc(u);
          const double* e = model.e_user.row(u);
          for (std::size_t c = 0; c < d; ++c) g[c] += 2.0 * cfg.l2 * e[c];
          log.loss_l2 += cfg.l2 * sq_norm(e, d);
        }
        for (std::uint32_t i : dist_items) {
          double* g = grads.d_item.acc(i);
          const double* e = model.e_item.row(i);
          for (std::size_t c = 0; c < d; ++c) g[c] += 2.0 * cfg.l2 * e[c];
          log.loss_l2 += cfg.l2 * sq_norm(e, d);
        }
        if (model.layers == 1) {
          for (std::size_t k = 0; k < grads.dw_user.data().size(); ++k)
            grads.dw_user.data()[k] += 2.0 * cfg.l2 * model.w_user.data()[k];
          for (std::size_t k = 0; k < grads.dw_item.data().size(); ++k)
            grads.dw_item.data()[k] += 2.0 * cfg.l2 * model.w_item.data()[k];
          log.loss_l2 += cfg.l2 * (sq_norm(model.w_user.data().data(), model.w_user.data().size()) +
                                   sq_norm(model.w_item.data().data(), model.w_item.data().size()));
        }
      }

      grads.d_user.finalize();
      grads.d_item.finalize();
      adam_step(model, grads, adam, stage.lr);
    }

    if (!model.all_finite()) throw DivergenceError("divergence: non-finite parameter after epoch");

    log.seconds = elapsed_s(t0);
    result.train_seconds += log.seconds;
    result.epochs_run = epoch;

    log.loss_total = log.loss_bpr + log.loss_l2 + log.loss_self + log.loss_local +
                     log.loss_global + log.loss_embd + log.loss_lsp;
    log.val_recall = eval_fn ? eval_fn(model, epoch) : 0.0;
    if (log_fn) log_fn(log);

    if (!eval_fn) {
      result.model = model;  // no validation signal: keep the last state
      continue;
    }
    if (log.val_recall > best_val) {
      best_val = log.val_recall;
      result.best_val = log.val_recall;
      result.best_epoch = epoch;
      result.model = model;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= stage.patience) break;
    }
  }
  return result;
}

// --------------------------------------------------------------------------
// Stage wrappers
// --------------------------------------------------------------------------

BaseSplit split_base_block(LogSlice base, Rng rng) {
  const std::size_t n = base.size();
  if (n < 3) throw DataError("base block too small to split 80/10/10");
  std::vector<std::size_t> perm(n);
  for (std::size_t k = 0; k < n; ++k) perm[k] = k;
  for (std::size_t k = n; k > 1; --k) {
    const std::size_t j = rng.below(k);
    std::swap(perm[k - 1], perm[j]);
  }
  const std::size_t n_train = (n * 8) / 10;
  const std::size_t n_val = (n - n_train) / 2;
  BaseSplit out;
  out.train.reserve(n_train);
  out.val.reserve(n_val);
  out.test.reserve(n - n_train - n_val);
  for (std::size_t k = 0; k < n; ++k) {
    const Interaction& rec = base[perm[k]];
    if (k < n_train)
      out.train.push_back(rec);
    else if (k < n_train + n_val)
      out.val.push_back(rec);
    else
      out.test.push_back(rec);
  }
  return out;
}

TrainResult train_base(const BlockSplit& split, ModelState model, const TrainConfig& cfg,
                       const EvalFn& eval_fn, const LogFn& log_fn) {
  const Rng root(cfg.seed);
  BaseSplit base = split_base_block(split.base(), root.fork(stream::kBaseSplit));
  auto graph = std::make_shared<BipartiteGraph>(
      BipartiteGraph::build({base.train.data(), base.train.size()}, split.log->n_users,
                            split.log->n_items, nullptr, "base-train"));

  TrainStage stage;
  stage.positives = {base.train.data(), base.train.size()};
  stage.graph = graph.get();
  stage.method = Method::Finetune;
  stage.lr = cfg.lr_base;
  stage.patience = cfg.patience_base;
  stage.max_epochs = cfg.max_epochs_base;
  stage.stage_id = 0;

  EvalFn val = eval_fn;
  if (!val) {
    val = [root, graph, base, &cfg](const ModelState& m, int epoch) {
      const Rng er = root.fork(stream::kEval, pack(0, epoch));
      FinalEmbeddings fe = compute_final_embeddings(m, *graph, cfg.n_sample, er);
      return recall_at_k(fe, {base.val.data(), base.val.size()}, *graph, 20);
    };
  }
  return run_training(std::move(model), stage, cfg, val, log_fn);
}

TrainResult train_incremental(ModelState model, const TeacherSnapshot* teacher,
                              const BlockSplit& split, std::size_t block_t,
                              const BipartiteGraph& cum_graph,
                              std::span<const Interaction> val_pairs, const TrainConfig& cfg,
                              const DistillConfig& dcfg, Method method, const LogFn& log_fn) {
  if (block_t < 1 || block_t > split.n_inc())
    throw ConfigError("train_incremental: block index out of range");
  const Rng root(cfg.seed);

  TrainStage stage;
  LogSlice block = split.inc(block_t - 1);
  stage.positives = {block.data, block.count};
  stage.graph = &cum_graph;
  stage.method = method;
  stage.teacher = teacher;
  stage.distill = dcfg;
  stage.lr = cfg.lr_inc;
  stage.patience = cfg.patience_inc;
  stage.max_epochs = cfg.max_epochs_inc;
  stage.stage_id = block_t;

  EvalFn val = [root, &cum_graph, val_pairs, &cfg, block_t](const ModelState& m, int epoch) {
    const Rng er = root.fork(stream::kEval, pack(block_t, epoch));
    FinalEmbeddings fe = compute_final_embeddings(m, cum_graph, cfg.n_sample, er);
    return recall_at_k(fe, val_pairs, cum_graph, 20);
  };
  return run_training(std::move(model), stage, cfg, val, log_fn);
}

TrainResult train_full_batch(const BlockSplit& split, std::size_t up_to_block,
                             const BipartiteGraph& cum_graph,
                             std::span<const Interaction> val_pairs, const TrainConfig& cfg,
                             std::size_t dim, int layers, const LogFn& log_fn) {
  if (up_to_block > split.n_inc()) throw ConfigError("train_full_batch: block out of range");
  const Rng root(cfg.seed);
  BaseSplit base = split_base_block(split.base(), root.fork(stream::kBaseSplit));

  std::vector<Interaction> positives = base.train;
  for (std::size_t t = 1; t <= up_to_block; ++t) {
    LogSlice block = split.inc(t - 1);
    positives.insert(positives.end(), block.begin(), block.end());
  }

  ModelState model = init_model(split.log->n_users, split.log->n_items, dim, layers,
                                root.fork(stream::kInit, 1000 + up_to_block));

  TrainStage stage;
  stage.positives = {positives.data(), positives.size()};
  stage.graph = &cum_graph;
  stage.method = Method::FullBatch;
  stage.lr = cfg.lr_base;
  stage.patience = cfg.patience_base;
  stage.max_epochs = cfg.max_epochs_base;
  stage.stage_id = 1000 + up_to_block;

  EvalFn val = [root, &cum_graph, val_pairs, &cfg, up_to_block](const ModelState& m, int epoch) {
    const Rng er = root.fork(stream::kEval, pack(1000 + up_to_block, epoch));
    FinalEmbeddings fe = compute_final_embeddings(m, cum_graph, cfg.n_sample, er);
    return recall_at_k(fe, val_pairs, cum_graph, 20);
  };
  return run_training(std::move(model), stage, cfg, val, log_fn);
}

}  // namespace graphsail
