#include "graphsail/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace graphsail {

namespace {

void finish_ids(InteractionLog& log, std::uint32_t n_users, std::uint32_t n_items) {
  log.n_users = n_users;
  log.n_items = n_items;
  log.user_ids.reserve(n_users);
  log.item_ids.reserve(n_items);
  for (std::uint32_t u = 0; u < n_users; ++u) {
    log.user_ids.push_back("u" + std::to_string(u));
    log.user_map.emplace(log.user_ids.back(), u);
  }
  for (std::uint32_t i = 0; i < n_items; ++i) {
    log.item_ids.push_back("i" + std::to_string(i));
    log.item_map.emplace(log.item_ids.back(), i);
  }
}

// Cumulative zipf weights over [0, n): w_k proportional to 1/(k+1)^a.
std::vector<double> zipf_cdf(std::size_t n, double a) {
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    acc += 1.0 / std::pow(static_cast<double>(k + 1), a);
    cdf[k] = acc;
  }
  for (double& v : cdf) v /= acc;
  return cdf;
}

std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.unit();
  return static_cast<std::size_t>(
      std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

}  // namespace

TwoPhaseData make_two_phase(const TwoPhaseConfig& cfg) {
  if (cfg.n_items % cfg.n_groups != 0)
    throw ConfigError("two_phase: n_items must divide evenly into groups");
  Rng rng = Rng(cfg.seed).fork(stream::kSynth, 1);
  const std::uint32_t group_size = cfg.n_items / cfg.n_groups;

  std::vector<std::uint32_t> group(cfg.n_users);
  std::vector<char> shifted(cfg.n_users, 0);
  for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
    group[u] = static_cast<std::uint32_t>(rng.below(cfg.n_groups));
    shifted[u] = rng.unit() < cfg.shift_fraction ? 1 : 0;
  }

  auto draw_item = [&](std::uint32_t g) -> std::uint32_t {
    if (rng.unit() < cfg.noise) return static_cast<std::uint32_t>(rng.below(cfg.n_items));
    return g * group_size + static_cast<std::uint32_t>(rng.below(group_size));
  };

  TwoPhaseData out;
  std::int64_t time = 0;
  // Phase 1: every user draws from its own group.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> events;
  for (std::uint32_t rep = 0; rep < cfg.base_per_user; ++rep)
    for (std::uint32_t u = 0; u < cfg.n_users; ++u) events.emplace_back(u, draw_item(group[u]));
  for (std::size_t k = events.size(); k > 1; --k) std::swap(events[k - 1], events[rng.below(k)]);
  for (auto& [u, i] : events) out.log.records.push_back({u, i, time++});
  out.phase1_count = out.log.records.size();

  // Phase 2: shifted users move one group over.
  events.clear();
  for (std::uint32_t rep = 0; rep < cfg.inc_per_user; ++rep)
    for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
      const std::uint32_t g = shifted[u] ? (group[u] + 1) % cfg.n_groups : group[u];
      events.emplace_back(u, draw_item(g));
    }
  for (std::size_t k = events.size(); k > 1; --k) std::swap(events[k - 1], events[rng.below(k)]);
  for (auto& [u, i] : events) out.log.records.push_back({u, i, time++});

  finish_ids(out.log, cfg.n_users, cfg.n_groups * group_size);

  // Phase-1 preference probes, excluding pairs that appear anywhere in the
  // log (they would be masked during evaluation).
  std::set<std::uint64_t> known;
  for (const Interaction& r : out.log.records)
    known.insert((static_cast<std::uint64_t>(r.user) << 32) | r.item);
  for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
    std::uint32_t made = 0;
    for (int attempt = 0; attempt < 200 && made < cfg.holdout_per_user; ++attempt) {
      const std::uint32_t i = group[u] * group_size + static_cast<std::uint32_t>(rng.below(group_size));
      const std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | i;
      if (known.count(key)) continue;
      known.insert(key);
      out.holdout.push_back({u, i, 0});
      ++made;
    }
  }
  return out;
}

InteractionLog make_drifting_log(const DriftConfig& cfg) {
  if (cfg.n_item_groups < 2) throw ConfigError("drift: need at least 2 item groups");
  Rng rng = Rng(cfg.seed).fork(stream::kSynth, 2);

  const auto user_cdf = zipf_cdf(cfg.n_users, cfg.zipf_user);
  // Per-group popularity over member items.
  const std::uint32_t group_size = (cfg.n_items + cfg.n_item_groups - 1) / cfg.n_item_groups;
  const auto item_cdf = zipf_cdf(group_size, cfg.zipf_item);

  // Random permutation of items so group membership is not id-contiguous.
  std::vector<std::uint32_t> item_perm(cfg.n_items);
  for (std::uint32_t i = 0; i < cfg.n_items; ++i) item_perm[i] = i;
  for (std::size_t k = cfg.n_items; k > 1; --k)
    std::swap(item_perm[k - 1], item_perm[rng.below(k)]);
  auto group_item = [&](std::uint32_t g, std::uint32_t slot) {
    const std::size_t idx = static_cast<std::size_t>(g) * group_size + slot;
    return item_perm[idx % cfg.n_items];
  };

  std::vector<std::uint32_t> primary(cfg.n_users), secondary(cfg.n_users), drifted(cfg.n_users);
  std::vector<double> drift_at(cfg.n_users, 2.0);  // fraction of the timeline
  for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
    primary[u] = static_cast<std::uint32_t>(rng.below(cfg.n_item_groups));
    secondary[u] = static_cast<std::uint32_t>(rng.below(cfg.n_item_groups));
    if (rng.unit() < cfg.drift_fraction) {
      drifted[u] = 1 + static_cast<std::uint32_t>(rng.below(cfg.n_item_groups - 1));
      drift_at[u] = 0.3 + 0.7 * rng.unit();
    } else {
      drifted[u] = 0;
    }
  }

  // Short-lived trending pools, refreshed per phase, drawn across groups.
  const std::uint32_t n_phases = std::max<std::uint32_t>(1, cfg.trend_phases);
  std::vector<std::vector<std::uint32_t>> trending(n_phases);
  for (auto& pool : trending) {
    pool.resize(std::max<std::uint32_t>(1, cfg.trend_pool));
    for (auto& it : pool) it = static_cast<std::uint32_t>(rng.below(cfg.n_items));
  }

  InteractionLog log;
  log.records.reserve(cfg.n_records);
  for (std::size_t k = 0; k < cfg.n_records; ++k) {
    const double t_frac = static_cast<double>(k) / static_cast<double>(cfg.n_records);
    const auto phase = std::min<std::uint32_t>(
        n_phases - 1, static_cast<std::uint32_t>(t_frac * n_phases));
    const auto u = static_cast<std::uint32_t>(sample_cdf(user_cdf, rng));

    const double r = rng.unit();
    std::uint32_t item;
    if (r < cfg.trend_fraction) {
      const auto& pool = trending[phase];
      item = pool[rng.below(pool.size())];
    } else if (r < cfg.trend_fraction + cfg.noise) {
      item = static_cast<std::uint32_t>(rng.below(cfg.n_items));
    } else {
      std::uint32_t g;
      std::uint32_t cur_primary = primary[u];
      // A drifted user splits time between the old and the new group.
      if (drifted[u] && t_frac >= drift_at[u] && rng.unit() >= cfg.post_drift_mix)
        cur_primary = (primary[u] + drifted[u]) % cfg.n_item_groups;
      g = rng.unit() < 0.25 ? secondary[u] : cur_primary;
      const auto slot = static_cast<std::uint32_t>(sample_cdf(item_cdf, rng));
      item = group_item(g, slot);
    }
    log.records.push_back({u, item, static_cast<std::int64_t>(k)});
  }
  finish_ids(log, cfg.n_users, cfg.n_items);
  return log;
}

BlockSplit make_split(const InteractionLog& log, std::vector<std::size_t> boundaries) {
  if (boundaries.size() < 2) throw ConfigError("make_split: need base plus >= 1 block");
  std::size_t prev = 0;
  for (std::size_t b : boundaries) {
    if (b <= prev && !(b == prev && prev == 0))
      throw ConfigError("make_split: boundaries must be strictly increasing");
    prev = b;
  }
  if (boundaries.back() != log.records.size())
    throw ConfigError("make_split: boundaries must cover the whole log");
  BlockSplit split;
  split.log = &log;
  split.boundaries = std::move(boundaries);
  return split;
}

}  // namespace graphsail
