#pragma once

#include <cstdint>
#include <vector>

#include "graphsail/interactions.hpp"

namespace graphsail {

/// Two-phase forgetting benchmark: block-structured preferences in phase 1,
/// half the users shift to a different item group in phase 2. The holdout
/// probes phase-1 preferences with pairs absent from the log.
struct TwoPhaseConfig {
  std::uint32_t n_users = 500;
  std::uint32_t n_items = 300;
  std::uint32_t n_groups = 5;
  std::uint32_t base_per_user = 20;
  std::uint32_t inc_per_user = 8;
  std::uint32_t holdout_per_user = 5;
  double shift_fraction = 0.5;
  double noise = 0.1;  // probability of a uniform off-group item
  std::uint64_t seed = 0;
};

struct TwoPhaseData {
  InteractionLog log;
  std::size_t phase1_count = 0;  // boundary between base and incremental records
  std::vector<Interaction> holdout;
};

TwoPhaseData make_two_phase(const TwoPhaseConfig& cfg);

/// Preference-drift log at a configurable scale: zipf user activity and item
/// popularity, group-structured stable preferences, a fraction of users who
/// pick up a new primary group partway through the timeline, and short-lived
/// trending item pools that churn across phases.
struct DriftConfig {
  std::uint32_t n_users = 1892;
  std::uint32_t n_items = 12523;
  std::size_t n_records = 186474;
  std::uint32_t n_item_groups = 24;
  double zipf_user = 0.9;
  double zipf_item = 0.8;
  double noise = 0.15;           // uniform off-preference picks
  double drift_fraction = 0.3;   // users who acquire a new primary group
  double post_drift_mix = 0.5;   // how often a drifted user still visits the old group
  double trend_fraction = 0.15;  // picks drawn from the current trending pool
  std::uint32_t trend_pool = 120;
  std::uint32_t trend_phases = 12;
  std::uint64_t seed = 42;
};

InteractionLog make_drifting_log(const DriftConfig& cfg);

/// BlockSplit over explicit boundaries (block k ends at boundaries[k]).
BlockSplit make_split(const InteractionLog& log, std::vector<std::size_t> boundaries);

}  // namespace graphsail
