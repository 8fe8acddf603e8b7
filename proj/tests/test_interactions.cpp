#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "graphsail/interactions.hpp"
#include "graphsail/synthetic.hpp"

using namespace graphsail;

namespace {

InteractionLog parse(const std::string& text, ParseOptions opts = {}) {
  return parse_interactions_text(text, opts);
}

InteractionLog random_log(Rng& rng, std::uint32_t n_users, std::uint32_t n_items, std::size_t n) {
  std::string text;
  for (std::size_t k = 0; k < n; ++k) {
    text += "u" + std::to_string(rng.below(n_users)) + "\ti" + std::to_string(rng.below(n_items)) +
            "\t" + std::to_string(rng.below(1000)) + "\n";
  }
  return parse(text);
}

}  // namespace

TEST_CASE("parse assigns dense ids in first-appearance order and sorts by time") {
  InteractionLog log = parse("a\tX\t5\nb\tY\t1\na\tY\t3\n");
  CHECK(log.n_users == 2);
  CHECK(log.n_items == 2);
  REQUIRE(log.records.size() == 3);
  // a=0, b=1, X=0, Y=1; sorted: (b,Y,1), (a,Y,3), (a,X,5)
  CHECK(log.records[0] == Interaction{1, 1, 1});
  CHECK(log.records[1] == Interaction{0, 1, 3});
  CHECK(log.records[2] == Interaction{0, 0, 5});
  CHECK(log.user_map.at("a") == 0);
  CHECK(log.item_map.at("Y") == 1);
}

TEST_CASE("parse keeps file order on timestamp ties") {
  InteractionLog log = parse("a\tX\t7\nb\tY\t7\nc\tZ\t7\n");
  CHECK(log.records[0].user == log.user_map.at("a"));
  CHECK(log.records[1].user == log.user_map.at("b"));
  CHECK(log.records[2].user == log.user_map.at("c"));
}

TEST_CASE("parse error paths") {
  CHECK_THROWS_AS(parse(""), DataError);
  CHECK_THROWS_AS(parse("\n\n"), DataError);
  CHECK_THROWS_WITH_AS(parse("a\tX\t1\nb\tY\n"), doctest::Contains(":2"), DataError);
  CHECK_THROWS_AS(parse("a\tX\tnope\n"), DataError);
  CHECK_THROWS_AS(parse_interactions("/no/such/file.tsv", {}), DataError);
}

TEST_CASE("parse handles csv, column selection, header and time divisor") {
  ParseOptions opts;
  opts.format = FileFormat::Csv;
  opts.user_col = 1;
  opts.item_col = 0;
  opts.time_col = 3;
  opts.skip_header = true;
  opts.time_divisor = 1000;
  InteractionLog log = parse("item,user,tag,ts\nX,a,junk,5000\nY,b,junk,1000\n", opts);
  REQUIRE(log.records.size() == 2);
  CHECK(log.records[0].time == 1);
  CHECK(log.records[1].time == 5);
  CHECK(log.records[0].user == log.user_map.at("b"));
}

TEST_CASE("dedup keeps the earliest record per pair") {
  InteractionLog log = parse("u\ti\t7\nu\ti\t1\n");
  InteractionLog out = preprocess(log, true, 0);
  REQUIRE(out.records.size() == 1);
  CHECK(out.records[0].time == 1);
}

TEST_CASE("min-degree filtering runs to fixpoint") {
  // u0: i0,i1,i2; u1: i0,i1; u2: i2. With min_degree 2, u2 goes first,
  // which drops i2 to degree 1, which in turn drops it from u0's list.
  InteractionLog log = parse(
      "u0\ti0\t0\nu0\ti1\t1\nu0\ti2\t2\n"
      "u1\ti0\t3\nu1\ti1\t4\n"
      "u2\ti2\t5\n");
  InteractionLog out = preprocess(log, false, 2);
  CHECK(out.n_users == 2);
  CHECK(out.n_items == 2);
  CHECK(out.records.size() == 4);
  for (const auto& r : out.records) {
    CHECK(r.user < out.n_users);
    CHECK(r.item < out.n_items);
  }
}

TEST_CASE("min-degree cascade can empty the log") {
  InteractionLog log = parse("u0\ti0\t0\nu1\ti1\t1\n");
  CHECK_THROWS_WITH_AS(preprocess(log, false, 2), doctest::Contains("empty"), DataError);
}

TEST_CASE("preprocess with no filters is the identity") {
  Rng rng(11);
  InteractionLog log = random_log(rng, 20, 30, 200);
  InteractionLog out = preprocess(log, false, 0);
  CHECK(out.records == log.records);
  CHECK(out.n_users == log.n_users);
  CHECK(out.n_items == log.n_items);
}

TEST_CASE("preprocess is idempotent") {
  Rng rng(12);
  for (int rep = 0; rep < 10; ++rep) {
    InteractionLog log = random_log(rng, 15, 15, 300);
    for (bool dedup : {false, true}) {
      for (std::uint32_t md : {0u, 2u, 3u}) {
        InteractionLog once;
        try {
          once = preprocess(log, dedup, md);
        } catch (const DataError&) {
          continue;  // everything filtered away
        }
        InteractionLog twice = preprocess(once, dedup, md);
        CHECK(twice.records == once.records);
        CHECK(twice.n_users == once.n_users);
        CHECK(twice.n_items == once.n_items);
      }
    }
  }
}

TEST_CASE("temporal_split sizes: 100 records, 0.7 base, 5 blocks") {
  Rng rng(13);
  InteractionLog log = random_log(rng, 10, 10, 100);
  BlockSplit split = temporal_split(log, 0.7, 5);
  CHECK(split.base().size() == 70);
  REQUIRE(split.n_inc() == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(split.inc(k).size() == 6);
}

TEST_CASE("temporal_split near-equal blocks, full coverage, time ordering") {
  Rng rng(14);
  InteractionLog log = random_log(rng, 10, 10, 103);
  BlockSplit split = temporal_split(log, 0.6, 4);
  std::size_t total = split.base().size();
  std::size_t mn = SIZE_MAX, mx = 0;
  for (std::size_t k = 0; k < split.n_inc(); ++k) {
    total += split.inc(k).size();
    mn = std::min(mn, split.inc(k).size());
    mx = std::max(mx, split.inc(k).size());
  }
  CHECK(total == log.records.size());
  CHECK(mx - mn <= 1);
  std::vector<Interaction> concat(split.base().begin(), split.base().end());
  for (std::size_t k = 0; k < split.n_inc(); ++k)
    concat.insert(concat.end(), split.inc(k).begin(), split.inc(k).end());
  CHECK(concat == log.records);
  for (std::size_t k = 0; k + 1 < split.n_inc(); ++k)
    CHECK(split.inc(k).end()[-1].time <= split.inc(k + 1).begin()->time);
}

TEST_CASE("temporal_split rejects empty blocks and bad arguments") {
  Rng rng(15);
  InteractionLog log = random_log(rng, 5, 5, 4);
  CHECK_THROWS_AS(temporal_split(log, 0.9, 5), DataError);
  CHECK_THROWS_AS(temporal_split(log, 1.5, 2), ConfigError);
  CHECK_THROWS_AS(temporal_split(log, 0.5, 0), ConfigError);
}

TEST_CASE("manifest round-trips bit-exactly") {
  Rng rng(16);
  InteractionLog log = random_log(rng, 25, 25, 500);
  BlockSplit split = temporal_split(log, 0.7, 3);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "gs_manifest_test";
  fs::create_directories(dir);
  const std::string path = (dir / "blocks.gsb").string();
  write_manifest(path, log, split, R"({"note":"t"})");

  Manifest m = read_manifest(path);
  CHECK(m.log.records == log.records);
  CHECK(m.log.n_users == log.n_users);
  CHECK(m.boundaries == split.boundaries);
  BlockSplit split2 = m.split();
  CHECK(split2.base().size() == split.base().size());

  const std::string path2 = (dir / "blocks2.gsb").string();
  write_manifest(path2, m.log, split2, m.config_json);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  fs::remove_all(dir);
}

TEST_CASE("manifest rejects out-of-range timestamps") {
  InteractionLog log = parse("a\tX\t99999999999\n");
  BlockSplit split;
  split.log = &log;
  split.boundaries = {1};
  CHECK_THROWS_WITH_AS(write_manifest("/tmp/gs_bad.gsb", log, split, ""),
                       doctest::Contains("time_divisor"), DataError);
}

TEST_CASE("synthetic logs are valid interaction logs") {
  TwoPhaseConfig cfg;
  cfg.n_users = 40;
  cfg.n_items = 30;
  cfg.base_per_user = 5;
  cfg.inc_per_user = 2;
  TwoPhaseData data = make_two_phase(cfg);
  CHECK(data.log.records.size() == 40u * 7u);
  CHECK(data.phase1_count == 40u * 5u);
  for (std::size_t k = 1; k < data.log.records.size(); ++k)
    CHECK(data.log.records[k - 1].time <= data.log.records[k].time);
  BlockSplit split = make_split(data.log, {data.phase1_count, data.log.records.size()});
  CHECK(split.base().size() == data.phase1_count);

  DriftConfig dcfg;
  dcfg.n_users = 50;
  dcfg.n_items = 120;
  dcfg.n_records = 2000;
  dcfg.n_item_groups = 4;
  InteractionLog drift = make_drifting_log(dcfg);
  CHECK(drift.records.size() == 2000);
  for (const auto& r : drift.records) {
    CHECK(r.user < 50);
    CHECK(r.item < 120);
  }
}

// Verifies the published Gowalla statistics when the raw check-in file is
// available; point GRAPHSAIL_GOWALLA at a TSV of (user, epoch_s, ..., item).
TEST_CASE("gowalla preprocessing statistics" *
          doctest::skip(std::getenv("GRAPHSAIL_GOWALLA") == nullptr)) {
  const char* path = std::getenv("GRAPHSAIL_GOWALLA");
  REQUIRE(path != nullptr);
  ParseOptions opts;
  opts.user_col = 0;
  opts.item_col = 4;
  opts.time_col = 1;
  InteractionLog raw = parse_interactions(path, opts);
  InteractionLog log = preprocess(raw, true, 10);
  CHECK(log.n_users == 29858);
  CHECK(log.n_items == 40998);
  CHECK(log.records.size() == 1027464);
  BlockSplit split = temporal_split(log, 0.7, 5);
  CHECK(split.inc(0).size() >= 61646);
  CHECK(split.inc(0).size() <= 61648);
}
