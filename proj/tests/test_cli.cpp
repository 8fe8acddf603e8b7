#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "graphsail/run_config.hpp"

using namespace graphsail;
namespace fs = std::filesystem;

namespace {

std::string g_binary;

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string redirect = " >" + std::string("/tmp/gs_cli_out.txt") + " 2>&1";
  const int rc = std::system((g_binary + " " + args + redirect).c_str());
  if (output) {
    std::ifstream f("/tmp/gs_cli_out.txt");
    std::ostringstream buf;
    buf << f.rdbuf();
    *output = buf.str();
  }
  return WEXITSTATUS(rc);
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

const char* kTinyConfig = R"({
  "dataset": {
    "synthetic": {"kind": "two_phase", "n_users": 30, "n_items": 60, "n_groups": 4,
                   "base_per_user": 6, "inc_per_user": 6, "seed": 5}
  },
  "split": {"base_frac": 0.55, "n_inc": 3},
  "model": {"dim": 8, "layers": 1, "n_sample": 3},
  "train": {"batch_size": 64, "max_epochs_base": 2, "max_epochs_inc": 1,
             "patience_base": 3, "n_neg": 2},
  "distill": {"lambda_self": 1.0, "lambda_local": 1.0, "lambda_global": 1.0,
               "K": 3, "tau": 0.5},
  "methods": ["finetune", "graphsail"],
  "seeds": [0],
  "out_dir": "OUTDIR"
})";

std::string write_config(const fs::path& dir, const std::string& out_dir) {
  std::string text = kTinyConfig;
  const auto pos = text.find("OUTDIR");
  text.replace(pos, 6, out_dir);
  const fs::path p = dir / "config.json";
  std::ofstream f(p);
  f << text;
  return p.string();
}

}  // namespace

TEST_CASE("config parsing: defaults, table values, unknown keys") {
  RunConfig cfg = parse_run_config(kTinyConfig);
  CHECK(cfg.distill.k_clusters == 3);
  CHECK(cfg.train.lr_base == doctest::Approx(1e-3));
  CHECK(cfg.train.lr_inc == doctest::Approx(5e-4));
  CHECK(cfg.train.patience_inc == 2);
  CHECK(cfg.methods.size() == 2);

  // The published LastFM/PinSage hyperparameter set round-trips.
  const char* lastfm = R"({
    "dataset": {"path": "x.tsv"},
    "split": {"base_frac": 0.6, "n_inc": 4},
    "distill": {"lambda_self": 100.0, "lambda_local": 1e5, "lambda_global": 1e6,
                 "K": 10, "tau": 0.1, "lambda_embd": 10.0, "lambda_lsp": 1e9}
  })";
  RunConfig lf = parse_run_config(lastfm);
  CHECK(lf.distill.lambda_self == doctest::Approx(100.0));
  CHECK(lf.distill.lambda_local == doctest::Approx(1e5));
  CHECK(lf.distill.lambda_global == doctest::Approx(1e6));
  CHECK(lf.distill.k_clusters == 10);
  CHECK(lf.distill.tau == doctest::Approx(0.1));
  CHECK(lf.dim == 128);            // embedding default
  CHECK(lf.train.n_sample == 10);  // neighbors per aggregation default
  CHECK(lf.train.n_neg == 10);

  CHECK_THROWS_AS(parse_run_config(R"({"dataset": {"path": "x"}, "typo": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"dataset": {"path": "x", "fmt": "tsv"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"dataset": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("not json"), ConfigError);

  // Effective config re-parses to the same effective config.
  RunConfig again = parse_run_config(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());
}

TEST_CASE("prepare writes a manifest and refuses to clobber it") {
  const fs::path dir = fs::temp_directory_path() / "gs_cli_prepare";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = write_config(dir, (dir / "out").string());

  std::string out;
  CHECK(run_cli("prepare --config " + cfg, &out) == 0);
  CHECK(fs::exists(dir / "out" / "blocks.gsb"));
  CHECK(fs::exists(dir / "out" / "summary.json"));
  CHECK(out.find("users 30") != std::string::npos);

  CHECK(run_cli("prepare --config " + cfg, &out) == 2);
  CHECK(out.find("--force") != std::string::npos);
  CHECK(run_cli("prepare --config " + cfg + " --force") == 0);
  fs::remove_all(dir);
}

TEST_CASE("run produces reports, checkpoints and logs; eval and inspect work") {
  const fs::path dir = fs::temp_directory_path() / "gs_cli_run";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = write_config(dir, (dir / "out").string());

  std::string out;
  CHECK(run_cli("run --config " + cfg, &out) == 2);  // no manifest yet
  REQUIRE(run_cli("prepare --config " + cfg) == 0);
  REQUIRE(run_cli("run --config " + cfg, &out) == 0);
  CHECK(fs::exists(dir / "out" / "report.json"));
  CHECK(fs::exists(dir / "out" / "report.txt"));
  CHECK(fs::exists(dir / "out" / "effective_config.json"));
  CHECK(fs::exists(dir / "out" / "logs" / "base_seed0.jsonl"));
  CHECK(fs::exists(dir / "out" / "logs" / "graphsail_seed0.jsonl"));
  const fs::path ckpt = dir / "out" / "checkpoints" / "graphsail" / "seed0" / "block2";
  CHECK(fs::exists(ckpt / "manifest.json"));
  CHECK(out.find("finetune") != std::string::npos);
  CHECK(out.find("graphsail") != std::string::npos);

  CHECK(run_cli("eval --config " + cfg + " --checkpoint " + ckpt.string() + " --block 2", &out) ==
        0);
  CHECK(out.find("test_recall_at_20") != std::string::npos);
  CHECK(run_cli("inspect-checkpoint " + ckpt.string(), &out) == 0);
  CHECK(out.find("e_user") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("deterministic runs produce byte-identical reports") {
  const fs::path dir = fs::temp_directory_path() / "gs_cli_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = write_config(dir, (dir / "out").string());
  REQUIRE(run_cli("prepare --config " + cfg) == 0);

  REQUIRE(run_cli("run --config " + cfg + " --deterministic") == 0);
  const std::string first = read_file(dir / "out" / "report.json");
  REQUIRE(run_cli("run --config " + cfg + " --deterministic") == 0);
  const std::string second = read_file(dir / "out" / "report.json");
  CHECK(first == second);
  CHECK(!first.empty());
  fs::remove_all(dir);
}

TEST_CASE("exit codes: config errors 1, data errors 2") {
  const fs::path dir = fs::temp_directory_path() / "gs_cli_err";
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::ofstream bad(dir / "bad.json");
  bad << R"({"dataset": {"path": "x.tsv"}, "unknown_key": true})";
  bad.close();
  std::string out;
  CHECK(run_cli("prepare --config " + (dir / "bad.json").string(), &out) == 1);
  CHECK(out.find("config error") != std::string::npos);

  std::ofstream missing(dir / "missing.json");
  missing << R"({"dataset": {"path": "/no/such/data.tsv"}, "out_dir": ")"
          << (dir / "out").string() << R"("})";
  missing.close();
  CHECK(run_cli("prepare --config " + (dir / "missing.json").string(), &out) == 2);
  CHECK(out.find("data error") != std::string::npos);
  fs::remove_all(dir);
}

int main(int argc, char** argv) {
  if (argc > 1 && argv[argc - 1][0] != '-') {
    g_binary = argv[argc - 1];
    --argc;
  }
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
