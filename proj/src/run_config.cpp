#include "graphsail/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace graphsail {

namespace {

using json = nlohmann::json;

void check_keys(const json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"dataset", "split", "model", "train", "distill", "methods", "seeds", "threads",
              "out_dir"});

  RunConfig cfg;
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, "dataset",
               {"path", "format", "user_col", "item_col", "time_col", "skip_header",
                "time_divisor", "dedup", "min_degree", "synthetic"});
    read(d, "path", cfg.dataset_path);
    std::string format = "tsv";
    read(d, "format", format);
    if (format == "tsv")
      cfg.parse.format = FileFormat::Tsv;
    else if (format == "csv")
      cfg.parse.format = FileFormat::Csv;
    else
      throw ConfigError("dataset.format must be 'tsv' or 'csv'");
    read(d, "user_col", cfg.parse.user_col);
    read(d, "item_col", cfg.parse.item_col);
    read(d, "time_col", cfg.parse.time_col);
    read(d, "skip_header", cfg.parse.skip_header);
    read(d, "time_divisor", cfg.parse.time_divisor);
    read(d, "dedup", cfg.dedup);
    read(d, "min_degree", cfg.min_degree);
    if (d.contains("synthetic")) {
      const json& s = d["synthetic"];
      check_keys(s, "dataset.synthetic",
                 {"kind", "n_users", "n_items", "n_records", "n_groups", "n_item_groups",
                  "base_per_user", "inc_per_user", "holdout_per_user", "shift_fraction", "noise",
                  "drift_fraction", "post_drift_mix", "trend_fraction", "trend_pool",
                  "trend_phases", "zipf_user", "zipf_item", "seed"});
      std::string kind;
      read(s, "kind", kind);
      if (kind == "two_phase") {
        TwoPhaseConfig t;
        read(s, "n_users", t.n_users);
        read(s, "n_items", t.n_items);
        read(s, "n_groups", t.n_groups);
        read(s, "base_per_user", t.base_per_user);
        read(s, "inc_per_user", t.inc_per_user);
        read(s, "holdout_per_user", t.holdout_per_user);
        read(s, "shift_fraction", t.shift_fraction);
        read(s, "noise", t.noise);
        read(s, "seed", t.seed);
        cfg.synth_two_phase = t;
      } else if (kind == "drift") {
        DriftConfig t;
        read(s, "n_users", t.n_users);
        read(s, "n_items", t.n_items);
        read(s, "n_records", t.n_records);
        read(s, "n_item_groups", t.n_item_groups);
        read(s, "zipf_user", t.zipf_user);
        read(s, "zipf_item", t.zipf_item);
        read(s, "noise", t.noise);
        read(s, "drift_fraction", t.drift_fraction);
        read(s, "post_drift_mix", t.post_drift_mix);
        read(s, "trend_fraction", t.trend_fraction);
        read(s, "trend_pool", t.trend_pool);
        read(s, "trend_phases", t.trend_phases);
        read(s, "seed", t.seed);
        cfg.synth_drift = t;
      } else {
        throw ConfigError("dataset.synthetic.kind must be 'two_phase' or 'drift'");
      }
    }
    if (cfg.dataset_path.empty() && !cfg.synth_two_phase && !cfg.synth_drift)
      throw ConfigError("dataset: either 'path' or 'synthetic' is required");
    if (!cfg.dataset_path.empty() && (cfg.synth_two_phase || cfg.synth_drift))
      throw ConfigError("dataset: 'path' and 'synthetic' are mutually exclusive");
  } else {
    throw ConfigError("config: 'dataset' section is required");
  }

  if (j.contains("split")) {
    check_keys(j["split"], "split", {"base_frac", "n_inc"});
    read(j["split"], "base_frac", cfg.base_frac);
    read(j["split"], "n_inc", cfg.n_inc);
  }
  if (!(cfg.base_frac > 0.0 && cfg.base_frac < 1.0))
    throw ConfigError("split.base_frac must be in (0,1)");
  if (cfg.n_inc < 1) throw ConfigError("split.n_inc must be >= 1");

  if (j.contains("model")) {
    check_keys(j["model"], "model", {"dim", "layers", "n_sample"});
    read(j["model"], "dim", cfg.dim);
    read(j["model"], "layers", cfg.layers);
    read(j["model"], "n_sample", cfg.train.n_sample);
  }
  if (cfg.dim < 1) throw ConfigError("model.dim must be >= 1");
  if (cfg.layers != 0 && cfg.layers != 1) throw ConfigError("model.layers must be 0 or 1");

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train",
               {"lr_base", "lr_inc", "l2", "n_neg", "batch_size", "patience_base", "patience_inc",
                "max_epochs_base", "max_epochs_inc"});
    read(t, "lr_base", cfg.train.lr_base);
    read(t, "lr_inc", cfg.train.lr_inc);
    read(t, "l2", cfg.train.l2);
    read(t, "n_neg", cfg.train.n_neg);
    read(t, "batch_size", cfg.train.batch_size);
    read(t, "patience_base", cfg.train.patience_base);
    read(t, "patience_inc", cfg.train.patience_inc);
    read(t, "max_epochs_base", cfg.train.max_epochs_base);
    read(t, "max_epochs_inc", cfg.train.max_epochs_inc);
  }
  cfg.train.validate();

  if (j.contains("distill")) {
    const json& d = j["distill"];
    check_keys(d, "distill",
               {"lambda_self", "lambda_local", "lambda_global", "K", "tau", "lambda_embd",
                "lambda_lsp", "lsp_neighbors"});
    read(d, "lambda_self", cfg.distill.lambda_self);
    read(d, "lambda_local", cfg.distill.lambda_local);
    read(d, "lambda_global", cfg.distill.lambda_global);
    read(d, "K", cfg.distill.k_clusters);
    read(d, "tau", cfg.distill.tau);
    read(d, "lambda_embd", cfg.distill.lambda_embd);
    read(d, "lambda_lsp", cfg.distill.lambda_lsp);
    read(d, "lsp_neighbors", cfg.distill.lsp_neighbors);
  }
  cfg.distill.validate();

  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j["methods"]) cfg.methods.push_back(method_from_name(m.get<std::string>()));
    if (cfg.methods.empty()) throw ConfigError("methods: need at least one method");
  }
  if (j.contains("seeds")) {
    cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("seeds: need at least one seed");
  }
  read(j, "threads", cfg.threads);
  if (cfg.threads < 0) throw ConfigError("threads must be >= 0");
  read(j, "out_dir", cfg.out_dir);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_run_config(buf.str());
}

std::string RunConfig::to_json() const {
  json j;
  json& d = j["dataset"];
  if (!dataset_path.empty()) {
    d["path"] = dataset_path;
    d["format"] = parse.format == FileFormat::Tsv ? "tsv" : "csv";
    d["user_col"] = parse.user_col;
    d["item_col"] = parse.item_col;
    d["time_col"] = parse.time_col;
    d["skip_header"] = parse.skip_header;
    d["time_divisor"] = parse.time_divisor;
  }
  d["dedup"] = dedup;
  d["min_degree"] = min_degree;
  if (synth_two_phase) {
    const TwoPhaseConfig& t = *synth_two_phase;
    d["synthetic"] = {{"kind", "two_phase"},
                      {"n_users", t.n_users},
                      {"n_items", t.n_items},
                      {"n_groups", t.n_groups},
                      {"base_per_user", t.base_per_user},
                      {"inc_per_user", t.inc_per_user},
                      {"holdout_per_user", t.holdout_per_user},
                      {"shift_fraction", t.shift_fraction},
                      {"noise", t.noise},
                      {"seed", t.seed}};
  }
  if (synth_drift) {
    const DriftConfig& t = *synth_drift;
    d["synthetic"] = {{"kind", "drift"},
                      {"n_users", t.n_users},
                      {"n_items", t.n_items},
                      {"n_records", t.n_records},
                      {"n_item_groups", t.n_item_groups},
                      {"zipf_user", t.zipf_user},
                      {"zipf_item", t.zipf_item},
                      {"noise", t.noise},
                      {"drift_fraction", t.drift_fraction},
                      {"post_drift_mix", t.post_drift_mix},
                      {"trend_fraction", t.trend_fraction},
                      {"trend_pool", t.trend_pool},
                      {"trend_phases", t.trend_phases},
                      {"seed", t.seed}};
  }
  j["split"] = {{"base_frac", base_frac}, {"n_inc", n_inc}};
  j["model"] = {{"dim", dim}, {"layers", layers}, {"n_sample", train.n_sample}};
  j["train"] = {{"lr_base", train.lr_base},
                {"lr_inc", train.lr_inc},
                {"l2", train.l2},
                {"n_neg", train.n_neg},
                {"batch_size", train.batch_size},
                {"patience_base", train.patience_base},
                {"patience_inc", train.patience_inc},
                {"max_epochs_base", train.max_epochs_base},
                {"max_epochs_inc", train.max_epochs_inc}};
  j["distill"] = {{"lambda_self", distill.lambda_self},
                  {"lambda_local", distill.lambda_local},
                  {"lambda_global", distill.lambda_global},
                  {"K", distill.k_clusters},
                  {"tau", distill.tau},
                  {"lambda_embd", distill.lambda_embd},
                  {"lambda_lsp", distill.lambda_lsp},
                  {"lsp_neighbors", distill.lsp_neighbors}};
  json methods_json = json::array();
  for (Method m : methods) methods_json.push_back(method_name(m));
  j["methods"] = methods_json;
  j["seeds"] = seeds;
  j["threads"] = threads;
  j["out_dir"] = out_dir;
  return j.dump(2);
}

InteractionLog load_dataset(const RunConfig& cfg) {
  if (cfg.synth_two_phase) return make_two_phase(*cfg.synth_two_phase).log;
  if (cfg.synth_drift) return make_drifting_log(*cfg.synth_drift);
  InteractionLog log = parse_interactions(cfg.dataset_path, cfg.parse);
  if (cfg.dedup || cfg.min_degree > 0) log = preprocess(log, cfg.dedup, cfg.min_degree);
  return log;
}

}  // namespace graphsail
