#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqplace/range_projection.hpp"

namespace seqplace {

/**
 * Pairwise overlap labels between scans. values is an n x n row-major dense
 * matrix; entry (i, j) is the overlap of scan j's cloud reprojected into scan
 * i's frame against scan i's own range image. Row/column position doubles as
 * the scan id.
 */
struct OverlapTable {
  std::size_t n = 0;
  float delta = 1.0f;
  float pos_threshold = 0.3f;
  std::vector<float> values;  // n*n

  float at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  float& at(std::size_t i, std::size_t j) { return values[i * n + j]; }

  /** Scan ids with overlap(query, id) > pos_threshold, id != query. */
  std::vector<std::size_t> positives_of(std::size_t query) const;
  std::vector<std::size_t> negatives_of(std::size_t query) const;
};

/**
 * Fraction of pixels valid in both images whose absolute range difference is
 * at most delta, normalized by the smaller valid-pixel count. Returns 0 when
 * either image has no valid pixels. Identical images overlap exactly 1.
 */
float overlap(const RangeImage& a, const RangeImage& b, float delta);

struct OverlapBuildOptions {
  float delta = 1.0f;
  float pos_threshold = 0.3f;
  // When positive, pairs whose sensor origins are farther apart than this
  // radius are assigned overlap 0 without reprojection. 0 disables the gate.
  double gate_radius = 0.0;
  int workers = 1;
};

/**
 * Builds the full pairwise table: each scan is projected once; every ordered
 * pair (i, j), i != j, reprojects cloud j into frame i and compares against
 * image i. The diagonal is exactly 1.
 */
OverlapTable build_pair_labels(const std::vector<PointCloud>& clouds, const std::vector<Pose>& poses,
                               const SensorModel& sensor, const OverlapBuildOptions& options);

/** Anchor ids for one training step: a query, positives, and negatives. */
struct TrainingTuple {
  std::size_t query = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

/**
 * Samples n_pos positives (overlap > pos_threshold) and n_neg negatives
 * uniformly without replacement, reproducibly from rng_seed. Candidates below
 * min_id are skipped so every sampled anchor has enough preceding scans to
 * form its window. Throws DataError naming the deficit when a side is short.
 */
TrainingTuple sample_training_tuple(const OverlapTable& table, std::size_t query_id,
                                    std::size_t n_pos, std::size_t n_neg, uint64_t rng_seed,
                                    std::size_t min_id = 0);

/**
 * Overlap table container, little-endian:
 *   "SQOT" magic, u8 version=1, u32 n, f32 delta, f32 pos_threshold,
 *   n*n f32 row-major.
 */
void save_overlap_table(const std::string& path, const OverlapTable& table);
OverlapTable load_overlap_table(const std::string& path);

}  // namespace seqplace
