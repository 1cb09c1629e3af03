#include "seqplace/datasets.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"

namespace seqplace {

PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  if (size == 0) throw DataError(path + ": empty cloud file");
  if (size % 16 != 0) {
    throw DataError(path + ": truncated point record at byte offset " +
                    std::to_string(size - size % 16) + " (file size " + std::to_string(size) +
                    " is not a multiple of 16)");
  }
  const std::size_t count = static_cast<std::size_t>(size) / 16;
  std::vector<float> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()), size);
  if (!in) throw DataError(path + ": short read");
  PointCloud cloud;
  cloud.points.reserve(count);
  cloud.intensity.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    cloud.points.push_back({static_cast<double>(raw[4 * i]), static_cast<double>(raw[4 * i + 1]),
                            static_cast<double>(raw[4 * i + 2])});
    cloud.intensity.push_back(raw[4 * i + 3]);
  }
  return cloud;
}

void save_cloud(const std::string& path, const PointCloud& cloud) {
  io::Writer w(path);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    w.pod<float>(static_cast<float>(cloud.points[i].x));
    w.pod<float>(static_cast<float>(cloud.points[i].y));
    w.pod<float>(static_cast<float>(cloud.points[i].z));
    w.pod<float>(i < cloud.intensity.size() ? cloud.intensity[i] : 0.0f);
  }
  w.finish();
}

std::vector<Pose> load_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (vals.empty()) continue;  // blank line
    if (vals.size() != 12) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 12 values, got " +
                      std::to_string(vals.size()));
    }
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) p.m(r, c) = vals[r * 4 + c];
    }
    p.m.row(3) << 0, 0, 0, 1;
    poses.push_back(p);
  }
  return poses;
}

void save_poses(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open for writing");
  out.precision(17);
  for (const Pose& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        out << p.m(r, c) << (r == 2 && c == 3 ? "" : " ");
      }
    }
    out << "\n";
  }
  if (!out) throw DataError(path + ": write failed");
}

// ---------------------------------------------------------------------------
// Synthetic world

SyntheticWorld generate_world(uint64_t seed, double extent, std::size_t obstacle_count) {
  if (!(extent > 0.0)) throw ConfigError("world extent must be positive");
  SyntheticWorld world;
  world.seed = seed;
  world.extent = extent;
  Rng rng(mix_seed(seed, 0x77));
  const double margin = std::min(6.0, extent * 0.1);
  for (std::size_t i = 0; i < obstacle_count; ++i) {
    // keep the driving annulus around radius 30 clear
    double x = 0.0, y = 0.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      x = rng.uniform(-extent + margin, extent - margin);
      y = rng.uniform(-extent + margin, extent - margin);
      const double r = std::hypot(x, y);
      if (r < 23.0 || r > 37.0) break;
      if (attempt == 199) {
        const double s = 20.0 / std::max(r, 1e-9);
        x *= s;
        y *= s;
      }
    }
    if (rng.uniform() < 0.55) {
      Box b;
      b.cx = x;
      b.cy = y;
      b.hx = rng.uniform(1.0, 4.0);
      b.hy = rng.uniform(1.0, 4.0);
      b.height = rng.uniform(2.0, 10.0);
      world.boxes.push_back(b);
    } else {
      Cylinder c;
      c.cx = x;
      c.cy = y;
      c.radius = rng.uniform(0.4, 1.8);
      c.height = rng.uniform(3.0, 12.0);
      world.cylinders.push_back(c);
    }
  }
  return world;
}

namespace {

constexpr double kRayMin = 0.5;
constexpr double kRayMax = 120.0;

double ground_hit(const SyntheticWorld& world, const Eigen::Vector3d& o,
                  const Eigen::Vector3d& d) {
  if (d.z() >= -1e-12) return std::numeric_limits<double>::infinity();
  const double t = -o.z() / d.z();
  if (t < kRayMin || t > kRayMax) return std::numeric_limits<double>::infinity();
  const double x = o.x() + t * d.x();
  const double y = o.y() + t * d.y();
  if (std::abs(x) > world.extent || std::abs(y) > world.extent) {
    return std::numeric_limits<double>::infinity();
  }
  return t;
}

double box_hit(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  double t0 = kRayMin, t1 = kRayMax;
  const double lo[3] = {b.cx - b.hx, b.cy - b.hy, 0.0};
  const double hi[3] = {b.cx + b.hx, b.cy + b.hy, b.height};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a];
    double tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}

double cylinder_hit(const Cylinder& c, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const double ox = o.x() - c.cx, oy = o.y() - c.cy;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-12) return std::numeric_limits<double>::infinity();
  const double b = 2.0 * (ox * d.x() + oy * d.y());
  const double c0 = ox * ox + oy * oy - c.radius * c.radius;
  const double disc = b * b - 4.0 * a * c0;
  if (disc < 0.0) return std::numeric_limits<double>::infinity();
  const double sq = std::sqrt(disc);
  for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
    if (t < kRayMin || t > kRayMax) continue;
    const double z = o.z() + t * d.z();
    if (z >= 0.0 && z <= c.height) return t;
  }
  return std::numeric_limits<double>::infinity();
}

double nearest_hit(const SyntheticWorld& world, const Eigen::Vector3d& o,
                   const Eigen::Vector3d& d) {
  double best = ground_hit(world, o, d);
  for (const Box& b : world.boxes) best = std::min(best, box_hit(b, o, d));
  for (const Cylinder& c : world.cylinders) best = std::min(best, cylinder_hit(c, o, d));
  return best;
}

}  // namespace

PointCloud simulate_scan(const SyntheticWorld& world, const Pose& pose, const SensorModel& sensor,
                         double noise_sigma, uint64_t scan_seed) {
  sensor.validate();
  pose.validate();
  if (noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  Rng rng(scan_seed);
  const Eigen::Matrix3d rot = pose.rotation();
  const Eigen::Vector3d origin = pose.translation();
  const double fov = sensor.fov();
  const double w = static_cast<double>(sensor.width);
  const double h = static_cast<double>(sensor.height);
  PointCloud cloud;
  for (std::size_t v = 0; v < sensor.height; ++v) {
    const double pitch = fov * (1.0 - (static_cast<double>(v) + 0.5) / h) - sensor.fov_up;
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    for (std::size_t u = 0; u < sensor.width; ++u) {
      const double yaw = M_PI * (1.0 - 2.0 * (static_cast<double>(u) + 0.5) / w);
      const Eigen::Vector3d dir_sensor(cp * std::cos(yaw), cp * std::sin(yaw), sp);
      const double t = nearest_hit(world, origin, rot * dir_sensor);
      if (!std::isfinite(t)) continue;
      double r = t;
      if (noise_sigma > 0.0) r += noise_sigma * rng.normal();
      r = std::max(r, 0.1);
      cloud.points.push_back({dir_sensor.x() * r, dir_sensor.y() * r, dir_sensor.z() * r});
      cloud.intensity.push_back(0.5f);
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Manifests

void DatasetManifest::validate() const {
  sensor.validate();
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const ScanEntry& e = scans[i];
    if (i > 0 && e.id <= scans[i - 1].id) {
      throw DataError("manifest scan ids must be strictly increasing (entry " + std::to_string(i) +
                      ")");
    }
    if (e.split != "database" && e.split != "query") {
      throw DataError("scan " + std::to_string(e.id) + " has unknown split '" + e.split + "'");
    }
    if (e.cloud.empty() && !world.has_value()) {
      throw DataError("scan " + std::to_string(e.id) +
                      " has no cloud file and the manifest has no synthetic world");
    }
  }
}

std::vector<std::size_t> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    if (split.empty() || scans[i].split == split) out.push_back(i);
  }
  return out;
}

namespace {

constexpr double kDeg = M_PI / 180.0;

void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw DataError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  try {
    reject_unknown_keys(j, {"sensor", "world", "scans"}, "manifest");
    DatasetManifest m;
    const auto& s = j.at("sensor");
    reject_unknown_keys(s, {"width", "height", "fov_up_deg", "fov_down_deg"}, "sensor");
    m.sensor.width = s.at("width").get<std::size_t>();
    m.sensor.height = s.at("height").get<std::size_t>();
    m.sensor.fov_up = s.at("fov_up_deg").get<double>() * kDeg;
    m.sensor.fov_down = s.at("fov_down_deg").get<double>() * kDeg;
    if (j.contains("world")) {
      const auto& w = j.at("world");
      reject_unknown_keys(w, {"seed", "extent", "obstacles", "noise_sigma"}, "world");
      WorldParams wp;
      wp.seed = w.at("seed").get<uint64_t>();
      wp.extent = w.at("extent").get<double>();
      wp.obstacles = w.at("obstacles").get<std::size_t>();
      wp.noise_sigma = w.at("noise_sigma").get<double>();
      m.world = wp;
    }
    for (const auto& e : j.at("scans")) {
      reject_unknown_keys(e, {"id", "split", "reversed", "pose", "cloud"}, "scan entry");
      ScanEntry entry;
      entry.id = e.at("id").get<uint64_t>();
      entry.split = e.at("split").get<std::string>();
      entry.reversed = e.value("reversed", false);
      entry.cloud = e.value("cloud", std::string());
      const auto& pose = e.at("pose");
      if (!pose.is_array() || pose.size() != 12) {
        throw DataError("scan " + std::to_string(entry.id) + ": pose must be 12 numbers");
      }
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) entry.pose.m(r, c) = pose[r * 4 + c].get<double>();
      }
      entry.pose.m.row(3) << 0, 0, 0, 1;
      m.scans.push_back(entry);
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  manifest.validate();
  nlohmann::ordered_json j;
  j["sensor"] = {{"width", manifest.sensor.width},
                 {"height", manifest.sensor.height},
                 {"fov_up_deg", manifest.sensor.fov_up / kDeg},
                 {"fov_down_deg", manifest.sensor.fov_down / kDeg}};
  if (manifest.world) {
    j["world"] = {{"seed", manifest.world->seed},
                  {"extent", manifest.world->extent},
                  {"obstacles", manifest.world->obstacles},
                  {"noise_sigma", manifest.world->noise_sigma}};
  }
  auto scans = nlohmann::ordered_json::array();
  for (const ScanEntry& e : manifest.scans) {
    nlohmann::ordered_json entry;
    entry["id"] = e.id;
    entry["split"] = e.split;
    entry["reversed"] = e.reversed;
    auto pose = nlohmann::ordered_json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) pose.push_back(e.pose.m(r, c));
    }
    entry["pose"] = pose;
    if (!e.cloud.empty()) entry["cloud"] = e.cloud;
    scans.push_back(entry);
  }
  j["scans"] = scans;
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw DataError(path + ": write failed");
}

std::optional<SyntheticWorld> manifest_world(const DatasetManifest& manifest) {
  if (!manifest.world) return std::nullopt;
  return generate_world(manifest.world->seed, manifest.world->extent, manifest.world->obstacles);
}

PointCloud manifest_cloud(const DatasetManifest& manifest, const SyntheticWorld* world,
                          std::size_t index, const std::string& base_dir) {
  const ScanEntry& e = manifest.scans.at(index);
  if (e.cloud.empty()) {
    if (world == nullptr) {
      throw ConfigError("scan " + std::to_string(e.id) + " is synthetic but no world was provided");
    }
    return simulate_scan(*world, e.pose, manifest.sensor, manifest.world->noise_sigma,
                         mix_seed(manifest.world->seed, 0x5CA9, e.id));
  }
  std::string path = e.cloud;
  if (!base_dir.empty() && !path.empty() && path.front() != '/') {
    path = base_dir + "/" + path;
  }
  return load_cloud(path);
}

DatasetManifest make_benchmark(uint64_t seed) {
  DatasetManifest m;
  m.sensor.width = 180;
  m.sensor.height = 32;
  m.sensor.fov_up = 15.0 * kDeg;
  m.sensor.fov_down = 15.0 * kDeg;
  m.world = WorldParams{seed, 60.0, 40, 0.02};

  const double radius = 30.0;
  const double z0 = 1.6;
  for (std::size_t i = 0; i < 300; ++i) {
    const double theta = 2.0 * M_PI * static_cast<double>(i) / 300.0;
    ScanEntry e;
    e.id = i;
    e.split = "database";
    e.pose = Pose::from_rt(Pose::yaw_about_z(theta + M_PI / 2.0).rotation(),
                           {radius * std::cos(theta), radius * std::sin(theta), z0});
    m.scans.push_back(e);
  }

  // query pass: forward to 250 degrees, then back down to 110 the other way
  const double fwd_end = 250.0 * kDeg;
  const double back_end = 110.0 * kDeg;
  for (std::size_t k = 0; k < 300; ++k) {
    const bool reversed = k >= 208;
    const double theta = !reversed
                             ? fwd_end * static_cast<double>(k) / 207.0
                             : fwd_end - (fwd_end - back_end) * static_cast<double>(k - 208) / 91.0;
    Rng jitter(mix_seed(seed, 0xA11CE, k));
    const double r = radius + std::clamp(jitter.normal(0.0, 0.3), -0.8, 0.8);
    const double z = z0 + jitter.normal(0.0, 0.05);
    const double heading = theta + (reversed ? -M_PI / 2.0 : M_PI / 2.0) + jitter.normal(0.0, 0.05);
    ScanEntry e;
    e.id = 300 + k;
    e.split = "query";
    e.reversed = reversed;
    e.pose = Pose::from_rt(Pose::yaw_about_z(heading).rotation(),
                           {r * std::cos(theta), r * std::sin(theta), z});
    m.scans.push_back(e);
  }
  return m;
}

}  // namespace seqplace
