#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seqplace/model.hpp"
#include "seqplace/overlap.hpp"

namespace seqplace {

/** Immutable store of (scan id, descriptor) rows, insertion order preserved. */
class DescriptorIndex {
 public:
  static DescriptorIndex build(const std::vector<std::pair<uint64_t, Descriptor>>& rows);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  uint64_t id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data_.data() + i * dim_, dim_);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<uint64_t> ids_;
  std::vector<float> data_;  // size() x dim(), row-major
};

/**
 * Index file, little-endian:
 *   "SQIX" magic, u8 version=1, u32 count, u32 dim, then per row:
 *   u64 id, dim f32 values.
 */
void save_index(const std::string& path, const DescriptorIndex& index);
DescriptorIndex load_index(const std::string& path);

struct Match {
  uint64_t id = 0;
  float distance = 0.0f;  // squared Euclidean, accumulated in double then narrowed
};

/**
 * Exact exhaustive search: ascending squared Euclidean distance, ties broken
 * by lower id, min(k, size) results.
 */
std::vector<Match> query_top_k(const DescriptorIndex& index, std::span<const float> query,
                               std::size_t k);

using QuerySet = std::vector<std::pair<uint64_t, Descriptor>>;

struct RecallResult {
  double value = 0.0;       // over evaluated queries; 0 when none evaluated
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // queries with no true reference anywhere in the index
};

/**
 * Fraction of queries whose top-n results contain at least one entry with
 * truth overlap above the table's positive threshold. Queries with no true
 * reference in the whole index are excluded from the fraction and counted.
 */
RecallResult average_recall_at_n(const QuerySet& queries, const DescriptorIndex& index,
                                 const OverlapTable& truth, std::size_t n, int workers = 1);

struct PrPoint {
  float threshold = 0.0f;
  double precision = 0.0;
  double recall = 0.0;
};

/**
 * Sweeps a distance threshold over the top-1 matches: a query predicts a
 * loop when its top-1 distance is <= threshold, and the prediction is correct
 * when that match's overlap exceeds the positive threshold. Queries without
 * any true reference still contribute predictions (possible false positives)
 * but are left out of the recall denominator.
 */
std::vector<PrPoint> precision_recall_curve(const QuerySet& queries, const DescriptorIndex& index,
                                            const OverlapTable& truth,
                                            const std::vector<float>& thresholds, int workers = 1);

/** Evenly spaced candidate thresholds covering [0, max of the values]. */
std::vector<float> threshold_sweep(const std::vector<float>& top1_distances, std::size_t count);

double f1_max(const std::vector<PrPoint>& curve);

struct EvalReport {
  double ar1 = 0.0, ar5 = 0.0, ar20 = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  std::vector<PrPoint> pr;
  double f1 = 0.0;
  std::vector<std::vector<Match>> top_lists;  // per query, in query order
};

/** AR@1/5/20 plus the PR sweep in one pass over per-query top-20 lists. */
EvalReport evaluate(const QuerySet& queries, const DescriptorIndex& index,
                    const OverlapTable& truth, std::size_t pr_points, int workers = 1);

/** JSON body with keys ar1, ar5, ar20, excluded_queries, pr, f1_max. */
std::string eval_report_json(const EvalReport& report);

}  // namespace seqplace
