#include "seqplace/overlap.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"

namespace seqplace {

std::vector<std::size_t> OverlapTable::positives_of(std::size_t query) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != query && at(query, j) > pos_threshold) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> OverlapTable::negatives_of(std::size_t query) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != query && at(query, j) <= pos_threshold) out.push_back(j);
  }
  return out;
}

float overlap(const RangeImage& a, const RangeImage& b, float delta) {
  if (a.height != b.height || a.width != b.width) {
    throw ConfigError("overlap: image shapes differ, " + std::to_string(a.height) + "x" +
                      std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                      std::to_string(b.width));
  }
  if (!(delta > 0.0f)) {
    throw ConfigError("overlap: delta must be positive");
  }
  std::size_t valid_a = 0, valid_b = 0, hits = 0;
  const std::size_t total = a.range.size();
  for (std::size_t i = 0; i < total; ++i) {
    const bool va = a.mask[i] != 0;
    const bool vb = b.mask[i] != 0;
    valid_a += va;
    valid_b += vb;
    if (va && vb && std::fabs(a.range[i] - b.range[i]) <= delta) ++hits;
  }
  const std::size_t denom = std::min(valid_a, valid_b);
  if (denom == 0) return 0.0f;
  return static_cast<float>(hits) / static_cast<float>(denom);
}

OverlapTable build_pair_labels(const std::vector<PointCloud>& clouds, const std::vector<Pose>& poses,
                               const SensorModel& sensor, const OverlapBuildOptions& options) {
  if (clouds.size() != poses.size()) {
    throw DataError("build_pair_labels: " + std::to_string(clouds.size()) + " clouds but " +
                    std::to_string(poses.size()) + " poses");
  }
  const std::size_t n = clouds.size();
  OverlapTable table;
  table.n = n;
  table.delta = options.delta;
  table.pos_threshold = options.pos_threshold;
  table.values.assign(n * n, 0.0f);
  if (n == 0) return table;

  for (const Pose& p : poses) p.validate();

  std::vector<RangeImage> images(n);
  parallel_for(n, options.workers, [&](std::size_t i) { images[i] = project(clouds[i], sensor); });

  const double gate2 = options.gate_radius > 0.0 ? options.gate_radius * options.gate_radius : -1.0;
  parallel_for(n, options.workers, [&](std::size_t i) {
    table.at(i, i) = 1.0f;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (gate2 > 0.0) {
        const Eigen::Vector3d d = poses[i].translation() - poses[j].translation();
        if (d.squaredNorm() > gate2) {
          table.at(i, j) = 0.0f;
          continue;
        }
      }
      const RangeImage back = reproject(clouds[j], poses[j], poses[i], sensor);
      table.at(i, j) = overlap(images[i], back, options.delta);
    }
  });
  return table;
}

TrainingTuple sample_training_tuple(const OverlapTable& table, std::size_t query_id,
                                    std::size_t n_pos, std::size_t n_neg, uint64_t rng_seed,
                                    std::size_t min_id) {
  if (query_id >= table.n) {
    throw ConfigError("sample_training_tuple: query " + std::to_string(query_id) +
                      " out of range (table has " + std::to_string(table.n) + " scans)");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t j = min_id; j < table.n; ++j) {
    if (j == query_id) continue;
    if (table.at(query_id, j) > table.pos_threshold) {
      pos.push_back(j);
    } else {
      neg.push_back(j);
    }
  }
  if (pos.size() < n_pos) {
    throw DataError("query " + std::to_string(query_id) + " has " + std::to_string(pos.size()) +
                    " positives, need " + std::to_string(n_pos));
  }
  if (neg.size() < n_neg) {
    throw DataError("query " + std::to_string(query_id) + " has " + std::to_string(neg.size()) +
                    " negatives, need " + std::to_string(n_neg));
  }
  Rng rng(rng_seed);
  TrainingTuple tuple;
  tuple.query = query_id;
  tuple.positives = rng.sample(pos, n_pos);
  tuple.negatives = rng.sample(neg, n_neg);
  return tuple;
}

void save_overlap_table(const std::string& path, const OverlapTable& table) {
  io::Writer w(path);
  w.magic("SQOT");
  w.pod<uint8_t>(1);
  w.pod<uint32_t>(static_cast<uint32_t>(table.n));
  w.pod<float>(table.delta);
  w.pod<float>(table.pos_threshold);
  w.bytes(table.values.data(), table.values.size() * sizeof(float));
  w.finish();
}

OverlapTable load_overlap_table(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("SQOT", "overlap table");
  r.expect_version(1, "overlap table");
  OverlapTable table;
  table.n = r.pod<uint32_t>();
  table.delta = r.pod<float>();
  table.pos_threshold = r.pod<float>();
  table.values.resize(table.n * table.n);
  r.bytes(table.values.data(), table.values.size() * sizeof(float));
  if (!r.at_eof()) {
    throw DataError(path + ": trailing bytes after overlap payload at offset " +
                    std::to_string(r.offset()));
  }
  return table;
}

}  // namespace seqplace
