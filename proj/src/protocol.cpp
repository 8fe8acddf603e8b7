#include "graphsail/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace graphsail {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

std::uint64_t pack(std::uint64_t hi, std::uint64_t lo) { return (hi << 32) | (lo & 0xffffffffULL); }

constexpr std::uint64_t kTestEvalTag = 0xffffffffULL;

struct EpochLogWriter {
  std::ofstream out;
  std::string stage;

  void operator()(const EpochLog& e) {
    if (!out.is_open()) return;
    json j;
    j["stage"] = stage;
    j["epoch"] = e.epoch;
    j["loss_total"] = e.loss_total;
    j["loss_bpr"] = e.loss_bpr;
    j["loss_l2"] = e.loss_l2;
    j["loss_self"] = e.loss_self;
    j["loss_local"] = e.loss_local;
    j["loss_global"] = e.loss_global;
    j["loss_embd"] = e.loss_embd;
    j["loss_lsp"] = e.loss_lsp;
    j["val_recall"] = e.val_recall;
    j["seconds"] = e.seconds;
    out << j.dump() << "\n";
  }
};

std::vector<std::uint32_t> block_degrees(LogSlice block, std::uint32_t n, Side side) {
  std::vector<std::uint32_t> deg(n, 0);
  for (const Interaction& rec : block) ++deg[side == Side::User ? rec.user : rec.item];
  return deg;
}

}  // namespace

MetricsReport run_protocol(const BlockSplit& split, const ProtocolConfig& cfg) {
  if (split.n_inc() < 2)
    throw ConfigError("run_protocol: need at least 2 incremental blocks (the last one is "
                      "evaluation data)");
  if (cfg.methods.empty()) throw ConfigError("run_protocol: no methods configured");
  if (cfg.seeds.empty()) throw ConfigError("run_protocol: no seeds configured");
  cfg.train.validate();
  cfg.distill.validate();

  if (cfg.deterministic) set_max_threads(1);

  namespace fs = std::filesystem;
  if (!cfg.log_dir.empty()) fs::create_directories(cfg.log_dir);

  MetricsReport report;
  report.seeds = cfg.seeds;
  report.n_transitions = split.n_inc() - 1;
  report.deterministic = cfg.deterministic;
  report.config_echo = cfg.config_echo;
  for (Method m : cfg.methods) report.methods.push_back(method_name(m));

  const std::uint32_t n_users = split.log->n_users;
  const std::uint32_t n_items = split.log->n_items;

  const bool needs_base =
      std::any_of(cfg.methods.begin(), cfg.methods.end(),
                  [](Method m) { return m != Method::FullBatch; });

  for (std::uint64_t seed : cfg.seeds) {
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;
    const Rng root(seed);

    // Validation/test halves are fixed per seed, shared by every method.
    std::vector<EvalSplit> halves(split.n_inc() + 1);
    for (std::size_t t = 1; t + 1 <= split.n_inc(); ++t)
      halves[t] = halve_block(split.inc(t), root.fork(stream::kHalve, t + 1),
                              static_cast<int>(t + 1));

    BaseSplit base_split = split_base_block(split.base(), root.fork(stream::kBaseSplit));
    auto base_graph = std::make_shared<const BipartiteGraph>(
        BipartiteGraph::build({base_split.train.data(), base_split.train.size()}, n_users,
                              n_items, nullptr, "base-train"));

    ModelState base_model;
    if (needs_base) {
      EpochLogWriter logw;
      if (!cfg.log_dir.empty()) {
        logw.out.open(fs::path(cfg.log_dir) / ("base_seed" + std::to_string(seed) + ".jsonl"),
                      std::ios::trunc);
        logw.stage = "base";
      }
      ModelState init = init_model(n_users, n_items, cfg.dim, cfg.layers,
                                   root.fork(stream::kInit, 0));
      TrainResult res = train_base(split, std::move(init), tcfg, nullptr,
                                   cfg.log_dir.empty() ? LogFn(nullptr) : LogFn(std::ref(logw)));
      base_model = std::move(res.model);
      BlockResult row;
      row.block = 0;
      row.method = "base";
      row.seed = seed;
      row.val_recall = res.best_val;
      row.train_seconds = cfg.deterministic ? 0.0 : res.train_seconds;
      row.epochs = res.epochs_run;
      report.per_block.push_back(row);
      if (!cfg.checkpoint_dir.empty())
        save_checkpoint((fs::path(cfg.checkpoint_dir) / ("seed" + std::to_string(seed)) / "base")
                            .string(),
                        base_model, seed, 0, cfg.config_echo);
    }

    for (Method method : cfg.methods) {
      const std::string mname = method_name(method);
      EpochLogWriter logw;
      if (!cfg.log_dir.empty())
        logw.out.open(fs::path(cfg.log_dir) / (mname + "_seed" + std::to_string(seed) + ".jsonl"),
                      std::ios::trunc);

      try {
        if (method == Method::FullBatch) {
          auto cum_graph = base_graph;
          for (std::size_t t = 1; t + 1 <= split.n_inc(); ++t) {
            cum_graph = std::make_shared<const BipartiteGraph>(
                BipartiteGraph::build(split.inc(t - 1), n_users, n_items, cum_graph.get(),
                                      "cumulative-b" + std::to_string(t)));
            logw.stage = "full_batch_b" + std::to_string(t);
            const auto t0 = Clock::now();
            TrainResult res = train_full_batch(
                split, t, *cum_graph, {halves[t].val.data(), halves[t].val.size()}, tcfg,
                cfg.dim, cfg.layers, cfg.log_dir.empty() ? LogFn(nullptr) : LogFn(std::ref(logw)));
            const double secs = std::chrono::duration<double>(Clock::now() - t0).count();

            const Rng er = root.fork(stream::kEval, pack(1000 + t, kTestEvalTag));
            FinalEmbeddings fe =
                compute_final_embeddings(res.model, *cum_graph, tcfg.n_sample, er);
            BlockResult row;
            row.block = static_cast<int>(t);
            row.method = mname;
            row.seed = seed;
            row.test_recall =
                recall_at_k(fe, {halves[t].test.data(), halves[t].test.size()}, *cum_graph, 20);
            row.val_recall = res.best_val;
            row.train_seconds = cfg.deterministic ? 0.0 : secs;
            row.epochs = res.epochs_run;
            report.per_block.push_back(row);
            if (!cfg.checkpoint_dir.empty())
              save_checkpoint((fs::path(cfg.checkpoint_dir) / mname /
                               ("seed" + std::to_string(seed)) / ("block" + std::to_string(t)))
                                  .string(),
                              res.model, seed, static_cast<int>(t), cfg.config_echo);
          }
          continue;
        }

        ModelState model = base_model;
        std::shared_ptr<const BipartiteGraph> prev_graph = base_graph;
        for (std::size_t t = 1; t + 1 <= split.n_inc(); ++t) {
          LogSlice block = split.inc(t - 1);
          auto cum_graph = std::make_shared<const BipartiteGraph>(BipartiteGraph::build(
              block, n_users, n_items, prev_graph.get(), "cumulative-b" + std::to_string(t)));

          const auto t0 = Clock::now();
          TeacherSnapshot teacher;
          const bool needs_teacher = method != Method::Finetune;
          if (needs_teacher) {
            const auto udeg = block_degrees(block, n_users, Side::User);
            const auto ideg = block_degrees(block, n_items, Side::Item);
            teacher = make_teacher_snapshot(model, prev_graph, cfg.distill.k_clusters,
                                            cfg.distill.tau, root.fork(stream::kTeacher, t), udeg,
                                            ideg, tcfg.n_sample,
                                            /*with_anchors=*/method == Method::GraphSail);
          }
          logw.stage = mname + "_b" + std::to_string(t);
          TrainResult res = train_incremental(
              std::move(model), needs_teacher ? &teacher : nullptr, split, t, *cum_graph,
              {halves[t].val.data(), halves[t].val.size()}, tcfg, cfg.distill, method,
              cfg.log_dir.empty() ? LogFn(nullptr) : LogFn(std::ref(logw)));
          const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
          model = std::move(res.model);

          const Rng er = root.fork(stream::kEval, pack(t, kTestEvalTag));
          FinalEmbeddings fe = compute_final_embeddings(model, *cum_graph, tcfg.n_sample, er);
          BlockResult row;
          row.block = static_cast<int>(t);
          row.method = mname;
          row.seed = seed;
          row.test_recall =
              recall_at_k(fe, {halves[t].test.data(), halves[t].test.size()}, *cum_graph, 20);
          row.val_recall = res.best_val;
          row.train_seconds = cfg.deterministic ? 0.0 : secs;
          row.epochs = res.epochs_run;
          report.per_block.push_back(row);
          if (!cfg.checkpoint_dir.empty())
            save_checkpoint((fs::path(cfg.checkpoint_dir) / mname /
                             ("seed" + std::to_string(seed)) / ("block" + std::to_string(t)))
                                .string(),
                            model, seed, static_cast<int>(t), cfg.config_echo);
          prev_graph = cum_graph;
        }
      } catch (const std::exception& e) {
        BlockResult row;
        row.method = mname;
        row.seed = seed;
        row.failed = true;
        row.error = e.what();
        report.per_block.push_back(row);
      }
    }
  }
  return report;
}

// --------------------------------------------------------------------------
// Report aggregation and serialization
// --------------------------------------------------------------------------

std::vector<MethodSummary> MetricsReport::summaries() const {
  std::vector<MethodSummary> out;
  double finetune_mean = 0.0;
  bool have_finetune = false;

  for (const std::string& mname : methods) {
    MethodSummary s;
    s.method = mname;
    s.per_block_mean.assign(n_transitions, 0.0);
    std::vector<std::size_t> counts(n_transitions, 0);
    // Per-seed averages over blocks give the mean/std across seeds.
    std::vector<double> per_seed_sum(seeds.size(), 0.0);
    std::vector<std::size_t> per_seed_cnt(seeds.size(), 0);
    double secs = 0.0;
    std::size_t secs_cnt = 0;

    for (const BlockResult& row : per_block) {
      if (row.method != mname || row.failed || row.block < 1) continue;
      const std::size_t b = static_cast<std::size_t>(row.block - 1);
      if (b >= n_transitions) continue;
      s.per_block_mean[b] += row.test_recall;
      ++counts[b];
      const auto it = std::find(seeds.begin(), seeds.end(), row.seed);
      if (it != seeds.end()) {
        per_seed_sum[static_cast<std::size_t>(it - seeds.begin())] += row.test_recall;
        ++per_seed_cnt[static_cast<std::size_t>(it - seeds.begin())];
      }
      secs += row.train_seconds;
      ++secs_cnt;
    }
    for (std::size_t b = 0; b < n_transitions; ++b)
      if (counts[b]) s.per_block_mean[b] /= static_cast<double>(counts[b]);

    std::vector<double> per_seed_avg;
    for (std::size_t k = 0; k < seeds.size(); ++k)
      if (per_seed_cnt[k]) per_seed_avg.push_back(per_seed_sum[k] / per_seed_cnt[k]);
    if (!per_seed_avg.empty()) {
      double mean = 0.0;
      for (double v : per_seed_avg) mean += v;
      mean /= static_cast<double>(per_seed_avg.size());
      double var = 0.0;
      for (double v : per_seed_avg) var += (v - mean) * (v - mean);
      s.mean_recall = mean;
      s.std_recall = per_seed_avg.size() > 1
                         ? std::sqrt(var / static_cast<double>(per_seed_avg.size() - 1))
                         : 0.0;
    }
    s.mean_train_seconds = secs_cnt ? secs / static_cast<double>(secs_cnt) : 0.0;
    if (mname == "finetune") {
      finetune_mean = s.mean_recall;
      have_finetune = true;
    }
    out.push_back(std::move(s));
  }
  if (have_finetune && finetune_mean > 0.0) {
    for (MethodSummary& s : out) {
      if (s.method == "finetune") continue;
      s.has_improvement = true;
      s.pct_improvement_vs_finetune = 100.0 * (s.mean_recall - finetune_mean) / finetune_mean;
    }
  }
  return out;
}

std::string MetricsReport::to_json(bool pretty) const {
  json j;
  j["schema"] = "graphsail-metrics-report";
  j["deterministic"] = deterministic;
  if (!config_echo.empty()) j["config"] = json::parse(config_echo);
  j["seeds"] = seeds;
  j["methods"] = methods;
  j["n_transitions"] = n_transitions;
  j["runs"] = json::array();
  for (const BlockResult& row : per_block) {
    json r;
    r["block"] = row.block;
    r["method"] = row.method;
    r["seed"] = row.seed;
    r["failed"] = row.failed;
    if (row.failed) {
      r["error"] = row.error;
    } else {
      r["test_recall"] = row.test_recall;
      r["val_recall"] = row.val_recall;
      r["train_seconds"] = row.train_seconds;
      r["epochs"] = row.epochs;
    }
    j["runs"].push_back(r);
  }
  j["summary"] = json::object();
  for (const MethodSummary& s : summaries()) {
    json ms;
    ms["per_block_mean"] = s.per_block_mean;
    ms["mean_recall"] = s.mean_recall;
    ms["std_recall"] = s.std_recall;
    ms["mean_train_seconds"] = s.mean_train_seconds;
    if (s.has_improvement) ms["pct_improvement_vs_finetune"] = s.pct_improvement_vs_finetune;
    j["summary"][s.method] = ms;
  }
  return pretty ? j.dump(2) : j.dump();
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  const auto sums = summaries();
  auto fmt = [](double v, int prec = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(prec);
    s << v;
    return s.str();
  };

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"method"};
  for (std::size_t b = 1; b <= n_transitions; ++b) head.push_back("Inc. b" + std::to_string(b));
  head.push_back("Avg. Recall@20");
  head.push_back("%imprv");
  head.push_back("time/block");
  rows.push_back(head);
  for (const MethodSummary& s : sums) {
    std::vector<std::string> row{s.method};
    for (double v : s.per_block_mean) row.push_back(fmt(v));
    row.push_back(fmt(s.mean_recall) + " +- " + fmt(s.std_recall));
    row.push_back(s.has_improvement ? fmt(s.pct_improvement_vs_finetune, 2) + "%" : "-");
    row.push_back(fmt(s.mean_train_seconds, 1) + " s");
    rows.push_back(row);
  }

  std::vector<std::size_t> widths(head.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      os << rows[r][c] << std::string(widths[c] - rows[r][c].size() + 2, ' ');
    }
    os << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : widths) total += w + 2;
      os << std::string(total, '-') << "\n";
    }
  }

  bool any_failed = false;
  for (const BlockResult& row : per_block) any_failed |= row.failed;
  if (any_failed) {
    os << "\nfailures:\n";
    for (const BlockResult& row : per_block)
      if (row.failed)
        os << "  " << row.method << " seed " << row.seed << ": " << row.error << "\n";
  }
  return os.str();
}

}  // namespace graphsail
