#pragma once

#include <functional>

#include "seqplace/model.hpp"
#include "seqplace/overlap.hpp"

namespace seqplace {

/** Optimization schedule and tuple shape (1 query + n_pos + n_neg samples). */
struct TrainConfig {
  float margin = 0.5f;  // alpha in the hinge
  std::size_t n_pos = 6;
  std::size_t n_neg = 6;
  int epochs = 20;
  int steps_per_epoch = 0;  // 0: one step per eligible query per epoch
  float lr_phase1 = 5e-6f;
  float lr_phase2 = 5e-5f;
  float lr_decay = 0.9f;
  int lr_decay_epochs = 5;  // decay interval, in epochs
  uint64_t seed = 1;

  void validate() const;
};

/**
 * Lazy-triplet objective: with the hardest positive distance
 * h = max_p d(q, p), the loss is sum_n max(0, margin + h - d(q, n)) over the
 * negatives, d = squared Euclidean. Gradients reach the query, the hardest
 * positive, and every negative whose hinge term is active.
 */
template <typename T>
nn::Var<T> triplet_loss(nn::Var<T> query, const std::vector<nn::Var<T>>& positives,
                        const std::vector<nn::Var<T>>& negatives, T margin) {
  nn::require(!positives.empty(), "triplet_loss: no positives");
  nn::require(!negatives.empty(), "triplet_loss: no negatives");
  nn::require(margin > T(0), "triplet_loss: margin must be positive");
  std::vector<nn::Var<T>> pos_d;
  pos_d.reserve(positives.size());
  for (const auto& p : positives) pos_d.push_back(nn::squared_distance(query, p));
  auto hardest = nn::vmax(pos_d);
  nn::Var<T> total;
  for (const auto& n : negatives) {
    auto term = nn::relu(nn::add_const(nn::sub(hardest, nn::squared_distance(query, n)), margin));
    total = total.defined() ? nn::add(total, term) : term;
  }
  return total;
}

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/** Per-parameter moment accumulators, keyed like the parameter map. */
struct AdamState {
  std::size_t step = 0;
  nn::TensorMap m, v;
};

/**
 * One adaptive-moment update with bias correction. Touches exactly the
 * parameters that have an entry in grads; moments are created on first use.
 */
void adam_step(nn::TensorMap& params, const nn::TensorMap& grads, AdamState& state, float lr,
               const AdamConfig& opt = {});

/** Learning rate for a 0-based epoch under multiplicative decay. */
float scheduled_lr(float base, float decay, int decay_epochs, int epoch);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  float lr = 0.0f;
  std::size_t steps = 0;
};

struct TrainResult {
  nn::TensorMap checkpoint;  // model params plus "adam." / "trainer." entries
  std::vector<EpochStats> curve;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/**
 * Phase 1: trains the scan encoder and window fusion with the sub-descriptor
 * triplet loss. Each step samples one query plus n_pos/n_neg references, runs
 * the 3-scan window of each sample, and commits one optimizer update. The
 * pooling exponent receives no gradient and stays put.
 *
 * start: either fresh model params (init_params) or a phase-1 checkpoint to
 * resume; resuming continues after the recorded epoch and reproduces the
 * uninterrupted run bit-exactly.
 */
TrainResult train_phase1(const std::vector<RangeImage>& scans, const OverlapTable& table,
                         const ModelConfig& mcfg, const TrainConfig& tcfg, nn::TensorMap start,
                         const EpochCallback& on_epoch = {});

/**
 * Sub-descriptor for every 3-scan window, indexed by the id of the window's
 * last scan; entries for ids below window-1 stay empty.
 */
std::vector<Descriptor> cache_sub_descriptors(const nn::TensorMap& params, const ModelConfig& cfg,
                                              const std::vector<RangeImage>& scans,
                                              int workers = 1);

/**
 * Phase 2: freezes the encoder and trains only the pooling exponent with the
 * global-descriptor triplet loss over m-scan sequences assembled from the
 * cached sub-descriptors. Every non-pooling parameter of the returned
 * checkpoint is bit-identical to its input.
 */
TrainResult train_phase2(const std::vector<Descriptor>& subs, const OverlapTable& table,
                         const ModelConfig& mcfg, const TrainConfig& tcfg, nn::TensorMap start,
                         const EpochCallback& on_epoch = {});

}  // namespace seqplace
