#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqplace/range_projection.hpp"

namespace seqplace {

/** Raw cloud files: little-endian f32 quadruples (x, y, z, intensity). */
PointCloud load_cloud(const std::string& path);
void save_cloud(const std::string& path, const PointCloud& cloud);

/** Pose files: one line per pose, 12 floats = row-major 3x4, completed with (0,0,0,1). */
std::vector<Pose> load_poses(const std::string& path);
void save_poses(const std::string& path, const std::vector<Pose>& poses);

// ---------------------------------------------------------------------------
// Synthetic world

struct Box {
  double cx = 0, cy = 0;  // center on the ground
  double hx = 1, hy = 1;  // half extents
  double height = 1;      // from the ground up
};

struct Cylinder {
  double cx = 0, cy = 0;
  double radius = 1;
  double height = 1;
};

/** Ground plane at z=0 plus obstacles, all placement derived from the seed. */
struct SyntheticWorld {
  uint64_t seed = 0;
  double extent = 0;  // world spans [-extent, extent] in x and y
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
};

SyntheticWorld generate_world(uint64_t seed, double extent, std::size_t obstacle_count);

/**
 * Casts one ray per range-image pixel center from the sensor pose and keeps
 * the nearest hit (ground or obstacle) within [0.5, 120] m, with Gaussian
 * range noise drawn from scan_seed. Rays that escape produce no point. The
 * cloud is in the sensor frame, so projecting it fills exactly the pixels
 * whose rays hit something.
 */
PointCloud simulate_scan(const SyntheticWorld& world, const Pose& pose, const SensorModel& sensor,
                         double noise_sigma, uint64_t scan_seed);

// ---------------------------------------------------------------------------
// Manifests

struct WorldParams {
  uint64_t seed = 0;
  double extent = 60.0;
  std::size_t obstacles = 40;
  double noise_sigma = 0.02;
};

struct ScanEntry {
  uint64_t id = 0;
  Pose pose;
  std::string split;   // "database" or "query"
  bool reversed = false;  // driven against the database direction
  std::string cloud;   // file path relative to the manifest; empty = synthetic
};

/** Ordered scan list with sensor model and, for synthetic data, world parameters. */
struct DatasetManifest {
  SensorModel sensor;
  std::optional<WorldParams> world;
  std::vector<ScanEntry> scans;

  void validate() const;  // ids strictly increasing, known splits, clouds resolvable
  std::vector<std::size_t> split_indices(const std::string& split) const;  // "" = all
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

/** World regenerated from the manifest parameters, or nullopt for file-backed data. */
std::optional<SyntheticWorld> manifest_world(const DatasetManifest& manifest);

/**
 * Cloud for one scan entry: simulated (with the per-scan noise stream) when
 * synthetic, loaded relative to base_dir otherwise.
 */
PointCloud manifest_cloud(const DatasetManifest& manifest, const SyntheticWorld* world,
                          std::size_t index, const std::string& base_dir);

/**
 * The desk-scale benchmark: one loop of radius 30 m through a seeded world.
 * Scans 0..299 are the database pass around the full circle; scans 300..599
 * are the query pass with pose jitter, driving forward over the first 250
 * degrees and then back in the opposite direction to 110 degrees (those
 * scans are flagged reversed).
 */
DatasetManifest make_benchmark(uint64_t seed);

}  // namespace seqplace
