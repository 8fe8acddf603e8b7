#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphsail/common.hpp"

namespace graphsail {

struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  std::int64_t time = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

enum class FileFormat { Tsv, Csv };

struct ParseOptions {
  FileFormat format = FileFormat::Tsv;
  int user_col = 0;
  int item_col = 1;
  int time_col = 2;
  bool skip_header = false;
  // Divides raw timestamps on ingest (e.g. 1000 for millisecond sources).
  std::int64_t time_divisor = 1;
};

/// Timestamp-ordered interaction log over dense contiguous ids.
/// Records are sorted non-decreasing by time with input order preserved on
/// ties; id maps cover exactly the ids present, in first-appearance order.
struct InteractionLog {
  std::vector<Interaction> records;
  std::uint32_t n_users = 0;
  std::uint32_t n_items = 0;
  std::vector<std::string> user_ids;  // dense id -> raw id
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, std::uint32_t> user_map;  // raw id -> dense id
  std::unordered_map<std::string, std::uint32_t> item_map;
};

/// A contiguous slice [begin, end) of a log's record array.
struct LogSlice {
  const Interaction* data = nullptr;
  std::size_t count = 0;

  const Interaction* begin() const { return data; }
  const Interaction* end() const { return data + count; }
  std::size_t size() const { return count; }
  bool empty() const { return count == 0; }
  const Interaction& operator[](std::size_t i) const { return data[i]; }
};

/// Temporal partition: one base block followed by n incremental blocks.
/// boundaries[k] is the record index one past block k (base is block 0),
/// so boundaries.front() is the base size and boundaries.back() == size.
struct BlockSplit {
  const InteractionLog* log = nullptr;
  std::vector<std::size_t> boundaries;

  std::size_t n_inc() const { return boundaries.size() - 1; }
  LogSlice base() const { return {log->records.data(), boundaries[0]}; }
  LogSlice inc(std::size_t k) const {
    return {log->records.data() + boundaries[k], boundaries[k + 1] - boundaries[k]};
  }
  LogSlice all() const { return {log->records.data(), log->records.size()}; }
};

InteractionLog parse_interactions(const std::string& path, const ParseOptions& opts);

/// Parse from already-loaded text (used by tests and the python bindings).
InteractionLog parse_interactions_text(const std::string& text, const ParseOptions& opts,
                                       const std::string& origin = "<memory>");

/// Optionally keep only the earliest record per (user, item), then drop users
/// and items with fewer than min_degree records until a fixpoint, re-densify.
InteractionLog preprocess(const InteractionLog& log, bool dedup, std::uint32_t min_degree);

/// Base gets floor(base_frac * n) records; the remainder is cut into n_inc
/// contiguous slices whose sizes differ by at most one.
BlockSplit temporal_split(const InteractionLog& log, double base_frac, std::size_t n_inc);

// Block manifest file: 8-byte magic, u64 header length, JSON header, then the
// record array as little-endian u32 triples (user, item, time).
void write_manifest(const std::string& path, const InteractionLog& log,
                    const BlockSplit& split, const std::string& config_json);
struct Manifest {
  InteractionLog log;
  std::vector<std::size_t> boundaries;
  std::string config_json;

  BlockSplit split() const { return BlockSplit{&log, boundaries}; }
};
Manifest read_manifest(const std::string& path);

}  // namespace graphsail
