#pragma once

#include <optional>
#include <string>
#include <vector>

#include "graphsail/interactions.hpp"
#include "graphsail/protocol.hpp"
#include "graphsail/synthetic.hpp"
#include "graphsail/train.hpp"

namespace graphsail {

/// Full experiment configuration, loaded from a JSON file. Unknown keys are
/// rejected; missing keys take the defaults below (mirroring the published
/// PinSage setup).
struct RunConfig {
  // dataset
  std::string dataset_path;  // empty when synthetic
  ParseOptions parse;
  bool dedup = false;
  std::uint32_t min_degree = 0;
  std::optional<TwoPhaseConfig> synth_two_phase;
  std::optional<DriftConfig> synth_drift;

  // split
  double base_frac = 0.6;
  std::size_t n_inc = 4;

  // model
  std::size_t dim = 128;
  int layers = 1;

  TrainConfig train;
  DistillConfig distill;

  std::vector<Method> methods{Method::Finetune, Method::GraphSail};
  std::vector<std::uint64_t> seeds{0};
  int threads = 0;  // 0 = hardware
  std::string out_dir = "runs/out";

  /// Canonical JSON of the effective config (defaults applied, keys sorted).
  std::string to_json() const;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

/// Resolves the configured dataset: parse + preprocess a file, or generate
/// the configured synthetic log.
InteractionLog load_dataset(const RunConfig& cfg);

}  // namespace graphsail
