#include "graphsail/interactions.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace graphsail {

namespace {

using json = nlohmann::json;

std::uint32_t intern(const std::string& raw, std::unordered_map<std::string, std::uint32_t>& map,
                     std::vector<std::string>& ids) {
  auto it = map.find(raw);
  if (it != map.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(ids.size());
  map.emplace(raw, id);
  ids.push_back(raw);
  return id;
}

void sort_by_time(std::vector<Interaction>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const Interaction& a, const Interaction& b) { return a.time < b.time; });
}

// Splits one delimited line into fields. Quoting is not handled; the cell
// content of these datasets is plain ids and integers.
void split_fields(const std::string& line, char delim, std::vector<std::string>& out) {
  out.clear();
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string trimmed(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

InteractionLog parse_interactions_text(const std::string& text, const ParseOptions& opts,
                                       const std::string& origin) {
  if (opts.time_divisor <= 0) throw ConfigError("time_divisor must be positive");
  const char delim = opts.format == FileFormat::Tsv ? '\t' : ',';
  const int need = std::max({opts.user_col, opts.item_col, opts.time_col}) + 1;

  InteractionLog log;
  std::vector<std::string> fields;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_pending = opts.skip_header;
  while (std::getline(in, line)) {
    ++lineno;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    std::string t = trimmed(line);
    if (t.empty()) continue;
    split_fields(t, delim, fields);
    if (static_cast<int>(fields.size()) < need) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": expected at least " +
                      std::to_string(need) + " columns, got " + std::to_string(fields.size()));
    }
    const std::string user_raw = trimmed(fields[opts.user_col]);
    const std::string item_raw = trimmed(fields[opts.item_col]);
    const std::string time_raw = trimmed(fields[opts.time_col]);
    if (user_raw.empty() || item_raw.empty()) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": empty id field");
    }
    std::int64_t time = 0;
    auto [p, ec] = std::from_chars(time_raw.data(), time_raw.data() + time_raw.size(), time);
    if (ec != std::errc() || p != time_raw.data() + time_raw.size()) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": non-numeric timestamp '" +
                      time_raw + "'");
    }
    if (time < 0) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": negative timestamp");
    }
    Interaction rec;
    rec.user = intern(user_raw, log.user_map, log.user_ids);
    rec.item = intern(item_raw, log.item_map, log.item_ids);
    rec.time = time / opts.time_divisor;
    log.records.push_back(rec);
  }
  if (log.records.empty()) throw DataError(origin + ": no records");
  log.n_users = static_cast<std::uint32_t>(log.user_ids.size());
  log.n_items = static_cast<std::uint32_t>(log.item_ids.size());
  sort_by_time(log.records);
  return log;
}

InteractionLog parse_interactions(const std::string& path, const ParseOptions& opts) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_interactions_text(buf.str(), opts, path);
}

InteractionLog preprocess(const InteractionLog& log, bool dedup, std::uint32_t min_degree) {
  std::vector<Interaction> recs = log.records;

  if (dedup) {
    // Records are time-sorted, so the first occurrence of a pair is the
    // earliest one.
    std::unordered_map<std::uint64_t, bool> seen;
    seen.reserve(recs.size());
    std::vector<Interaction> kept;
    kept.reserve(recs.size());
    for (const auto& r : recs) {
      const std::uint64_t key = (static_cast<std::uint64_t>(r.user) << 32) | r.item;
      if (seen.emplace(key, true).second) kept.push_back(r);
    }
    recs = std::move(kept);
  }

  std::vector<char> live(recs.size(), 1);
  if (min_degree > 0) {
    // Remove low-degree users/items until no removal changes any count.
    for (;;) {
      std::vector<std::uint32_t> udeg(log.n_users, 0), ideg(log.n_items, 0);
      for (std::size_t k = 0; k < recs.size(); ++k) {
        if (!live[k]) continue;
        ++udeg[recs[k].user];
        ++ideg[recs[k].item];
      }
      bool changed = false;
      for (std::size_t k = 0; k < recs.size(); ++k) {
        if (!live[k]) continue;
        if (udeg[recs[k].user] < min_degree || ideg[recs[k].item] < min_degree) {
          live[k] = 0;
          changed = true;
        }
      }
      if (!changed) break;
    }
  }

  // Re-densify preserving relative id order, so filtering nothing is the
  // identity.
  std::vector<char> user_live(log.n_users, 0), item_live(log.n_items, 0);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    if (!live[k]) continue;
    user_live[recs[k].user] = 1;
    item_live[recs[k].item] = 1;
  }
  constexpr std::uint32_t kGone = 0xffffffffu;
  std::vector<std::uint32_t> user_remap(log.n_users, kGone), item_remap(log.n_items, kGone);
  InteractionLog out;
  for (std::uint32_t u = 0; u < log.n_users; ++u) {
    if (!user_live[u]) continue;
    user_remap[u] = static_cast<std::uint32_t>(out.user_ids.size());
    out.user_ids.push_back(log.user_ids[u]);
    out.user_map.emplace(log.user_ids[u], user_remap[u]);
  }
  for (std::uint32_t i = 0; i < log.n_items; ++i) {
    if (!item_live[i]) continue;
    item_remap[i] = static_cast<std::uint32_t>(out.item_ids.size());
    out.item_ids.push_back(log.item_ids[i]);
    out.item_map.emplace(log.item_ids[i], item_remap[i]);
  }
  for (std::size_t k = 0; k < recs.size(); ++k) {
    if (!live[k]) continue;
    out.records.push_back({user_remap[recs[k].user], item_remap[recs[k].item], recs[k].time});
  }
  if (out.records.empty()) throw DataError("empty after filtering");
  out.n_users = static_cast<std::uint32_t>(out.user_ids.size());
  out.n_items = static_cast<std::uint32_t>(out.item_ids.size());
  return out;  // input was sorted; filtering preserves order
}

BlockSplit temporal_split(const InteractionLog& log, double base_frac, std::size_t n_inc) {
  if (log.records.empty()) throw DataError("temporal_split: empty log");
  if (n_inc < 1) throw ConfigError("temporal_split: n_inc must be >= 1");
  if (!(base_frac > 0.0 && base_frac < 1.0))
    throw ConfigError("temporal_split: base_frac must be in (0,1)");

  const std::size_t n = log.records.size();
  const std::size_t base = static_cast<std::size_t>(std::floor(base_frac * static_cast<double>(n)));
  const std::size_t rest = n - base;

  BlockSplit split;
  split.log = &log;
  split.boundaries.resize(n_inc + 1);
  split.boundaries[0] = base;
  std::size_t offset = base;
  for (std::size_t k = 0; k < n_inc; ++k) {
    std::size_t sz = rest / n_inc + (k < rest % n_inc ? 1 : 0);
    offset += sz;
    split.boundaries[k + 1] = offset;
  }

  if (base == 0) throw DataError("temporal_split: base block empty");
  for (std::size_t k = 0; k < n_inc; ++k) {
    if (split.boundaries[k + 1] == split.boundaries[k])
      throw DataError("temporal_split: incremental block " + std::to_string(k + 1) + " empty");
  }
  return split;
}

// --------------------------------------------------------------------------
// Manifest I/O
// --------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'G', 'S', 'A', 'I', 'L', 'v', '1', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.append(b, 4);
}

std::uint32_t get_u32(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint32_t>(u[0]) | (static_cast<std::uint32_t>(u[1]) << 8) |
         (static_cast<std::uint32_t>(u[2]) << 16) | (static_cast<std::uint32_t>(u[3]) << 24);
}
}  // namespace

void write_manifest(const std::string& path, const InteractionLog& log, const BlockSplit& split,
                    const std::string& config_json) {
  json header;
  header["schema"] = "graphsail-block-manifest";
  header["version"] = 1;
  header["n_users"] = log.n_users;
  header["n_items"] = log.n_items;
  header["n_records"] = log.records.size();
  header["boundaries"] = split.boundaries;
  if (!config_json.empty()) header["config"] = json::parse(config_json);
  const std::string head = header.dump();

  std::string body;
  body.reserve(log.records.size() * 12);
  for (const auto& r : log.records) {
    if (r.time < 0 || r.time > static_cast<std::int64_t>(0xffffffffULL))
      throw DataError("manifest: timestamp out of 32-bit range; set time_divisor");
    put_u32(body, r.user);
    put_u32(body, r.item);
    put_u32(body, static_cast<std::uint32_t>(r.time));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(kMagic, 8);
  const std::uint64_t hlen = head.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
  out.write(lenbuf, 8);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw DataError("'" + path + "' is not a block manifest");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i)
    hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (16 + hlen > bytes.size()) throw DataError("'" + path + "': truncated header");
  json header = json::parse(bytes.substr(16, hlen));

  Manifest m;
  m.log.n_users = header.at("n_users").get<std::uint32_t>();
  m.log.n_items = header.at("n_items").get<std::uint32_t>();
  const auto n_records = header.at("n_records").get<std::size_t>();
  m.boundaries = header.at("boundaries").get<std::vector<std::size_t>>();
  if (header.contains("config")) m.config_json = header["config"].dump();

  const char* p = bytes.data() + 16 + hlen;
  if (bytes.size() - 16 - hlen != n_records * 12) throw DataError("'" + path + "': truncated body");
  m.log.records.resize(n_records);
  for (std::size_t k = 0; k < n_records; ++k) {
    m.log.records[k].user = get_u32(p + 12 * k);
    m.log.records[k].item = get_u32(p + 12 * k + 4);
    m.log.records[k].time = get_u32(p + 12 * k + 8);
  }
  return m;
}

}  // namespace graphsail
