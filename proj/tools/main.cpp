#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "graphsail/eval.hpp"
#include "graphsail/protocol.hpp"
#include "graphsail/run_config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace graphsail;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;  // overrides config out_dir when set
  bool force = false;
  bool deterministic = false;
  std::optional<std::uint64_t> seed_override;
};

std::string resolve_out_dir(const RunConfig& cfg, const CommonOpts& opts) {
  return opts.out_dir.empty() ? cfg.out_dir : opts.out_dir;
}

RunConfig load_config(const CommonOpts& opts) {
  RunConfig cfg = load_run_config(opts.config_path);
  if (opts.seed_override) cfg.seeds = {*opts.seed_override};
  return cfg;
}

int cmd_prepare(const CommonOpts& opts) {
  RunConfig cfg = load_config(opts);
  const fs::path out = resolve_out_dir(cfg, opts);
  const fs::path manifest_path = out / "blocks.gsb";
  if (fs::exists(manifest_path) && !opts.force) {
    std::cerr << "error: " << manifest_path.string() << " exists; pass --force to overwrite\n";
    return 2;
  }
  fs::create_directories(out);

  InteractionLog log = load_dataset(cfg);
  BlockSplit split = temporal_split(log, cfg.base_frac, cfg.n_inc);
  write_manifest(manifest_path.string(), log, split, cfg.to_json());

  const double density = static_cast<double>(log.records.size()) /
                         (static_cast<double>(log.n_users) * static_cast<double>(log.n_items));
  json summary;
  summary["n_users"] = log.n_users;
  summary["n_items"] = log.n_items;
  summary["n_interactions"] = log.records.size();
  summary["density_pct"] = 100.0 * density;
  summary["base_size"] = split.boundaries.front();
  json inc_sizes = json::array();
  for (std::size_t t = 0; t < split.n_inc(); ++t) inc_sizes.push_back(split.inc(t).size());
  summary["inc_block_sizes"] = inc_sizes;
  summary["config"] = json::parse(cfg.to_json());
  std::ofstream sf(out / "summary.json", std::ios::trunc);
  sf << summary.dump(2) << "\n";

  std::cout << "wrote " << manifest_path.string() << "\n"
            << "users " << log.n_users << ", items " << log.n_items << ", interactions "
            << log.records.size() << ", density " << summary["density_pct"].dump() << "%\n"
            << "base " << split.boundaries.front() << " records, " << split.n_inc()
            << " incremental blocks " << inc_sizes.dump() << "\n";
  return 0;
}

int cmd_run(const CommonOpts& opts) {
  RunConfig cfg = load_config(opts);
  const fs::path out = resolve_out_dir(cfg, opts);
  const fs::path manifest_path = out / "blocks.gsb";
  if (!fs::exists(manifest_path))
    throw DataError("missing " + manifest_path.string() + "; run `graphsail prepare` first");

  Manifest manifest = read_manifest(manifest_path.string());
  BlockSplit split = manifest.split();

  if (cfg.threads > 0) set_max_threads(cfg.threads);

  ProtocolConfig pcfg;
  pcfg.dim = cfg.dim;
  pcfg.layers = cfg.layers;
  pcfg.train = cfg.train;
  pcfg.distill = cfg.distill;
  pcfg.methods = cfg.methods;
  pcfg.seeds = cfg.seeds;
  pcfg.deterministic = opts.deterministic;
  pcfg.log_dir = (out / "logs").string();
  pcfg.checkpoint_dir = (out / "checkpoints").string();
  pcfg.config_echo = cfg.to_json();

  MetricsReport report = run_protocol(split, pcfg);

  {
    std::ofstream rf(out / "report.json", std::ios::trunc);
    rf << report.to_json(true) << "\n";
  }
  {
    std::ofstream tf(out / "report.txt", std::ios::trunc);
    tf << report.to_table();
  }
  {
    std::ofstream cf(out / "effective_config.json", std::ios::trunc);
    cf << cfg.to_json() << "\n";
  }
  std::cout << report.to_table();

  std::vector<json> failures;
  for (const BlockResult& row : report.per_block)
    if (row.failed)
      failures.push_back({{"method", row.method}, {"seed", row.seed}, {"error", row.error}});
  if (!failures.empty()) {
    std::ofstream ff(out / "failures.json", std::ios::trunc);
    ff << json(failures).dump(2) << "\n";
    std::cerr << "error: " << failures.size() << " method run(s) failed; see failures.json\n";
    return 3;
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_dir, std::size_t eval_block) {
  RunConfig cfg = load_config(opts);
  const fs::path out = resolve_out_dir(cfg, opts);
  Manifest manifest = read_manifest((out / "blocks.gsb").string());
  BlockSplit split = manifest.split();
  if (eval_block < 1 || eval_block > split.n_inc())
    throw ConfigError("eval: --block must be in [1, n_inc]");

  if (cfg.threads > 0) set_max_threads(cfg.threads);
  if (opts.deterministic) set_max_threads(1);

  Checkpoint ck = load_checkpoint(checkpoint_dir);
  const std::uint64_t seed = cfg.seeds.front();
  const Rng root(seed);

  // Training graph through the block before the evaluation block.
  BaseSplit base = split_base_block(split.base(), root.fork(stream::kBaseSplit));
  BipartiteGraph cum = BipartiteGraph::build({base.train.data(), base.train.size()},
                                             split.log->n_users, split.log->n_items);
  for (std::size_t t = 1; t < eval_block; ++t)
    cum = BipartiteGraph::build(split.inc(t - 1), split.log->n_users, split.log->n_items, &cum);

  EvalSplit halves = halve_block(split.inc(eval_block - 1), root.fork(stream::kHalve, eval_block),
                                 static_cast<int>(eval_block));
  const Rng er = root.fork(stream::kEval, (eval_block << 32) | 0xffffffffULL);
  FinalEmbeddings fe = compute_final_embeddings(ck.model, cum, cfg.train.n_sample, er);

  json result;
  result["checkpoint"] = checkpoint_dir;
  result["checkpoint_block"] = ck.block_id;
  result["eval_block"] = eval_block;
  result["seed"] = seed;
  result["val_recall_at_20"] =
      recall_at_k(fe, {halves.val.data(), halves.val.size()}, cum, 20);
  result["test_recall_at_20"] =
      recall_at_k(fe, {halves.test.data(), halves.test.size()}, cum, 20);
  std::cout << result.dump(2) << "\n";
  return 0;
}

int cmd_inspect(const std::string& checkpoint_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_dir);
  json info;
  info["dir"] = checkpoint_dir;
  info["seed"] = ck.seed;
  info["block_id"] = ck.block_id;
  info["dim"] = ck.model.dim;
  info["layers"] = ck.model.layers;
  if (!ck.extra_json.empty()) info["config"] = json::parse(ck.extra_json);
  auto stats = [](const Matrix& m) {
    json s;
    s["rows"] = m.rows();
    s["cols"] = m.cols();
    if (m.empty()) return s;
    double lo = m.data()[0], hi = m.data()[0], sum = 0.0, sq = 0.0;
    for (double v : m.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
      sq += v * v;
    }
    s["min"] = lo;
    s["max"] = hi;
    s["mean"] = sum / static_cast<double>(m.data().size());
    s["l2_norm"] = std::sqrt(sq);
    return s;
  };
  info["tensors"]["e_user"] = stats(ck.model.e_user);
  info["tensors"]["e_item"] = stats(ck.model.e_item);
  if (ck.model.layers == 1) {
    info["tensors"]["w_user"] = stats(ck.model.w_user);
    info["tensors"]["w_item"] = stats(ck.model.w_item);
  }
  std::cout << info.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GraphSAIL incremental recommender: prepare data blocks, run the incremental "
               "training protocol, evaluate checkpoints."};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string checkpoint_dir;
  std::size_t eval_block = 1;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", opts.config_path, "path to the JSON config");
    if (needs_config) c->required();
    cmd->add_option("--out", opts.out_dir, "output directory (overrides config out_dir)");
    cmd->add_option("--seed", opts.seed_override, "run a single seed, overriding the config");
    cmd->add_flag("--deterministic", opts.deterministic,
                  "single-threaded replayable execution; timings reported as 0");
  };

  CLI::App* prepare = app.add_subcommand("prepare", "parse, filter and split the dataset");
  add_common(prepare, true);
  prepare->add_flag("--force", opts.force, "overwrite an existing block manifest");

  CLI::App* run = app.add_subcommand("run", "run the incremental protocol and write reports");
  add_common(run, true);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on one incremental block");
  add_common(ev, true);
  ev->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
  ev->add_option("--block", eval_block, "incremental block to evaluate on (1-based)")->required();

  CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint metadata");
  inspect->add_option("checkpoint", checkpoint_dir, "checkpoint directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return cmd_prepare(opts);
    if (run->parsed()) return cmd_run(opts);
    if (ev->parsed()) return cmd_eval(opts, checkpoint_dir, eval_block);
    if (inspect->parsed()) return cmd_inspect(checkpoint_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
