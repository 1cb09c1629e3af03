#pragma once

#include <string>

#include "seqplace/model.hpp"
#include "seqplace/overlap.hpp"
#include "seqplace/range_projection.hpp"
#include "seqplace/training.hpp"

namespace seqplace {

struct EvalConfig {
  std::size_t top_k = 20;
  std::size_t stride = 1;     // evaluate every stride-th query
  std::size_t pr_points = 50;
};

/**
 * One JSON document configuring a whole run. Blocks: sensor, model, train,
 * overlap, data, eval; every key optional, unknown keys rejected with their
 * path. The materialized form (run_config_json) spells out every default so
 * run manifests are self-describing.
 */
struct RunConfig {
  SensorModel sensor;
  ModelConfig model;
  TrainConfig train;
  OverlapBuildOptions overlap;
  std::string data_manifest;   // data.manifest
  uint64_t synthetic_seed = 7;  // data.synthetic_seed, used when generating
  EvalConfig eval;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/** Canonical JSON with all defaults materialized. */
std::string run_config_json(const RunConfig& cfg);

/** Fingerprint of the materialized JSON, for run manifests. */
uint64_t config_hash(const RunConfig& cfg);

}  // namespace seqplace
