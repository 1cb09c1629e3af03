#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "seqplace/datasets.hpp"

using namespace seqplace;

namespace {

SensorModel odd_sensor() {
  SensorModel s;
  s.width = 9;
  s.height = 5;
  s.fov_up = 0.3;
  s.fov_down = 0.3;
  return s;
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("cloud files hold 16-byte point records") {
  const TempFile tmp("cloud_pin.bin");
  {
    std::ofstream out(tmp.path, std::ios::binary);
    const float record[4] = {1.0f, 2.0f, 3.0f, 0.5f};
    out.write(reinterpret_cast<const char*>(record), 16);
  }
  const PointCloud cloud = load_cloud(tmp.path);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.points[0].x == 1.0);
  CHECK(cloud.points[0].y == 2.0);
  CHECK(cloud.points[0].z == 3.0);
  REQUIRE(cloud.intensity.size() == 1);
  CHECK(cloud.intensity[0] == 0.5f);
}

TEST_CASE("cloud loading reports empty and truncated files precisely") {
  const TempFile empty("cloud_empty.bin");
  { std::ofstream out(empty.path, std::ios::binary); }
  CHECK_THROWS_WITH_AS(load_cloud(empty.path), doctest::Contains("empty"), DataError);

  const TempFile cut("cloud_cut.bin");
  {
    std::ofstream out(cut.path, std::ios::binary);
    const char junk[22] = {0};
    out.write(junk, 22);  // one full record plus 6 stray bytes
  }
  CHECK_THROWS_WITH_AS(load_cloud(cut.path), doctest::Contains("byte offset 16"), DataError);
  CHECK_THROWS_AS(load_cloud("no_such_cloud.bin"), DataError);
}

TEST_CASE("clouds round trip through their binary format") {
  Rng rng(3);
  PointCloud cloud;
  for (int i = 0; i < 1000; ++i) {
    cloud.points.push_back({rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0),
                            rng.uniform(-2.0, 8.0)});
    cloud.intensity.push_back(static_cast<float>(rng.uniform(0.0, 1.0)));
  }
  const TempFile tmp("cloud_rt.bin");
  save_cloud(tmp.path, cloud);
  const PointCloud back = load_cloud(tmp.path);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back.points[i].x == static_cast<double>(static_cast<float>(cloud.points[i].x)));
    CHECK(back.points[i].y == static_cast<double>(static_cast<float>(cloud.points[i].y)));
    CHECK(back.points[i].z == static_cast<double>(static_cast<float>(cloud.points[i].z)));
    CHECK(back.intensity[i] == cloud.intensity[i]);
  }
}

TEST_CASE("pose files parse 12-value lines and flag bad ones by line number") {
  const TempFile tmp("poses.txt");
  {
    std::ofstream out(tmp.path);
    out << "1 0 0 10 0 1 0 -4 0 0 1 2\n";
    out << "\n";  // blank lines are skipped
    out << "1 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  const auto poses = load_poses(tmp.path);
  REQUIRE(poses.size() == 2);
  CHECK(poses[0].m(0, 3) == 10.0);
  CHECK(poses[0].m(1, 3) == -4.0);
  CHECK(poses[0].m(2, 3) == 2.0);
  CHECK(poses[0].m(3, 3) == 1.0);  // completed homogeneous row
  CHECK_NOTHROW(poses[0].validate());

  {
    std::ofstream out(tmp.path);
    out << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    out << "1 2 3\n";
  }
  CHECK_THROWS_WITH_AS(load_poses(tmp.path), doctest::Contains(":2:"), DataError);
  CHECK_THROWS_AS(load_poses("no_such_poses.txt"), DataError);
}

TEST_CASE("poses round trip exactly at full precision") {
  std::vector<Pose> poses;
  for (int i = 0; i < 5; ++i) {
    Pose p = Pose::yaw_about_z(0.17 * i - 0.3);
    p.m(0, 3) = 1.0 / 3.0 + i;
    p.m(1, 3) = -2.0 / 7.0;
    p.m(2, 3) = 1.6;
    poses.push_back(p);
  }
  const TempFile tmp("poses_rt.txt");
  save_poses(tmp.path, poses);
  const auto back = load_poses(tmp.path);
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK((back[i].m - poses[i].m).cwiseAbs().maxCoeff() == 0.0);
    CHECK_NOTHROW(back[i].validate());
  }
}

TEST_CASE("world generation is seed-deterministic and keeps the loop clear") {
  const auto a = generate_world(5, 60.0, 40);
  const auto b = generate_world(5, 60.0, 40);
  CHECK(a.boxes.size() == b.boxes.size());
  CHECK(a.cylinders.size() == b.cylinders.size());
  CHECK(a.boxes.size() + a.cylinders.size() == 40);
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    CHECK(a.boxes[i].cx == b.boxes[i].cx);
    CHECK(a.boxes[i].height == b.boxes[i].height);
  }
  const auto c = generate_world(6, 60.0, 40);
  bool differs = a.boxes.size() != c.boxes.size();
  for (std::size_t i = 0; !differs && i < a.boxes.size(); ++i) {
    differs = a.boxes[i].cx != c.boxes[i].cx;
  }
  CHECK(differs);

  // obstacle centers stay off the driving annulus
  for (const auto& box : a.boxes) {
    const double r = std::hypot(box.cx, box.cy);
    CHECK((r < 23.0 || r > 37.0));
  }
  for (const auto& cyl : a.cylinders) {
    const double r = std::hypot(cyl.cx, cyl.cy);
    CHECK((r < 23.0 || r > 37.0));
  }
  CHECK_THROWS_AS(generate_world(1, 0.0, 4), ConfigError);
}

TEST_CASE("a ray down the +x axis hits a cylinder at its near surface") {
  SyntheticWorld world;
  world.extent = 60.0;
  world.cylinders.push_back({10.0, 0.0, 1.0, 5.0});

  // center pixel of a 9x5 image points exactly along +x from the origin
  const auto sensor = odd_sensor();
  const PointCloud cloud = simulate_scan(world, Pose::identity(), sensor, 0.0, 1);
  const RangeImage img = project(cloud, sensor);
  REQUIRE(img.valid(2, 4));
  CHECK(img.at(2, 4) == 9.0f);  // 10 - radius 1, exact intersection
}

TEST_CASE("downward rays measure the ground plane at z0 / sin(pitch)") {
  SyntheticWorld world;
  world.extent = 200.0;
  const double z0 = 2.0;
  const auto sensor = odd_sensor();
  const Pose pose = Pose::from_rt(Eigen::Matrix3d::Identity(), {0.0, 0.0, z0});
  const PointCloud cloud = simulate_scan(world, pose, sensor, 0.0, 1);
  const RangeImage img = project(cloud, sensor);

  // bottom row pixel centers look down by fov*(0.5/h) - ... below horizontal
  const double pitch =
      sensor.fov() * (1.0 - (4.0 + 0.5) / 5.0) - sensor.fov_up;  // negative: below horizon
  REQUIRE(pitch < 0.0);
  const double expected = z0 / std::sin(-pitch);
  for (std::size_t u = 0; u < sensor.width; ++u) {
    REQUIRE(img.valid(4, u));
    CHECK(img.at(4, u) == doctest::Approx(expected).epsilon(1e-5));
  }
  // horizontal and upward rays see empty sky
  CHECK(img.valid_count() < sensor.width * sensor.height);
  CHECK_FALSE(img.valid(0, 0));
}

TEST_CASE("noiseless scans fill exactly their hit pixels; noise keeps direction") {
  SyntheticWorld world = generate_world(9, 60.0, 25);
  const auto sensor = odd_sensor();
  const Pose pose = Pose::from_rt(Pose::yaw_about_z(0.4).rotation(), {25.0, 3.0, 1.5});

  const PointCloud clean = simulate_scan(world, pose, sensor, 0.0, 7);
  const RangeImage img = project(clean, sensor);
  CHECK(img.valid_count() == clean.size());

  const PointCloud noisy = simulate_scan(world, pose, sensor, 0.05, 7);
  CHECK(noisy.size() == clean.size());
  const RangeImage nimg = project(noisy, sensor);
  CHECK(nimg.valid_count() == noisy.size());

  // same seed reproduces the noise stream; a different seed does not
  const PointCloud again = simulate_scan(world, pose, sensor, 0.05, 7);
  REQUIRE(again.size() == noisy.size());
  bool identical = true;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (noisy.points[i].x != again.points[i].x) identical = false;
  }
  CHECK(identical);
  const PointCloud other = simulate_scan(world, pose, sensor, 0.05, 8);
  bool same_as_other = true;
  for (std::size_t i = 0; i < std::min(noisy.size(), other.size()); ++i) {
    if (noisy.points[i].x != other.points[i].x) same_as_other = false;
  }
  CHECK_FALSE(same_as_other);

  CHECK_THROWS_AS(simulate_scan(world, pose, sensor, -0.1, 1), ConfigError);
}

TEST_CASE("a yawed sensor sees the world shifted by whole columns") {
  SyntheticWorld world = generate_world(11, 60.0, 25);
  SensorModel sensor;
  sensor.width = 36;
  sensor.height = 8;
  sensor.fov_up = 0.3;
  sensor.fov_down = 0.3;
  const Eigen::Vector3d spot(25.0, 0.0, 1.5);
  const double cell = 2.0 * M_PI / static_cast<double>(sensor.width);

  const Pose base = Pose::from_rt(Eigen::Matrix3d::Identity(), spot);
  const Pose turned = Pose::from_rt(Pose::yaw_about_z(3.0 * cell).rotation(), spot);
  const RangeImage a = project(simulate_scan(world, base, sensor, 0.0, 1), sensor);
  const RangeImage b = project(simulate_scan(world, turned, sensor, 0.0, 1), sensor);
  // turning the sensor left by k cells drags the image the opposite way from
  // rotating the cloud, hence the negative shift
  const RangeImage shifted = column_shift(a, -3);
  REQUIRE(b.mask == shifted.mask);
  for (std::size_t i = 0; i < b.range.size(); ++i) {
    if (b.mask[i]) CHECK(b.range[i] == doctest::Approx(shifted.range[i]).epsilon(1e-6));
  }
}

TEST_CASE("manifests round trip and reject unknown keys") {
  DatasetManifest m;
  m.sensor = odd_sensor();
  m.world = WorldParams{4, 50.0, 12, 0.01};
  for (uint64_t i = 0; i < 4; ++i) {
    ScanEntry e;
    e.id = i * 3;  // increasing, not contiguous
    e.split = i < 2 ? "database" : "query";
    e.reversed = (i == 3);
    e.pose = Pose::from_rt(Pose::yaw_about_z(0.2 * i).rotation(), {1.0 * i, 0.5, 1.5});
    m.scans.push_back(e);
  }
  const TempFile tmp("manifest_rt.json");
  save_manifest(tmp.path, m);
  const auto back = load_manifest(tmp.path);
  CHECK(back.sensor.width == m.sensor.width);
  CHECK(back.sensor.fov_up == doctest::Approx(m.sensor.fov_up).epsilon(1e-12));
  REQUIRE(back.world.has_value());
  CHECK(back.world->seed == 4);
  CHECK(back.world->obstacles == 12);
  REQUIRE(back.scans.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.scans[i].id == m.scans[i].id);
    CHECK(back.scans[i].split == m.scans[i].split);
    CHECK(back.scans[i].reversed == m.scans[i].reversed);
    CHECK((back.scans[i].pose.m - m.scans[i].pose.m).cwiseAbs().maxCoeff() < 1e-15);
  }

  const TempFile bad("manifest_bad.json");
  {
    std::ofstream out(bad.path);
    out << R"({"sensor": {"width": 4, "height": 2, "fov_up_deg": 15, "fov_down_deg": 15,)"
        << R"( "bogus": 1}, "scans": []})";
  }
  CHECK_THROWS_WITH_AS(load_manifest(bad.path), doctest::Contains("unknown key"), DataError);

  const TempFile garbled("manifest_garbled.json");
  {
    std::ofstream out(garbled.path);
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_manifest(garbled.path), DataError);
  CHECK_THROWS_AS(load_manifest("no_such_manifest.json"), DataError);
}

TEST_CASE("manifest validation enforces id order, splits, and cloud sources") {
  DatasetManifest m;
  m.sensor = odd_sensor();
  m.world = WorldParams{};
  ScanEntry a;
  a.id = 5;
  a.split = "database";
  ScanEntry b = a;
  b.id = 5;  // duplicate
  m.scans = {a, b};
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("strictly increasing"), DataError);

  m.scans[1].id = 6;
  m.scans[1].split = "tuesday";
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("unknown split"), DataError);

  m.scans[1].split = "query";
  CHECK_NOTHROW(m.validate());

  m.world.reset();  // synthetic scans now have no cloud source
  CHECK_THROWS_AS(m.validate(), DataError);

  DatasetManifest files = m;
  files.scans[0].cloud = "a.bin";
  files.scans[1].cloud = "b.bin";
  CHECK_NOTHROW(files.validate());

  CHECK(files.split_indices("database") == std::vector<std::size_t>{0});
  CHECK(files.split_indices("query") == std::vector<std::size_t>{1});
  CHECK(files.split_indices("") == std::vector<std::size_t>{0, 1});
}

TEST_CASE("manifest clouds come from simulation or from files") {
  DatasetManifest m;
  m.sensor = odd_sensor();
  m.world = WorldParams{21, 60.0, 10, 0.0};
  ScanEntry e;
  e.id = 0;
  e.split = "database";
  e.pose = Pose::from_rt(Eigen::Matrix3d::Identity(), {20.0, 0.0, 1.5});
  m.scans.push_back(e);

  const auto world = manifest_world(m);
  REQUIRE(world.has_value());
  const PointCloud synthetic = manifest_cloud(m, &*world, 0, "");
  CHECK(synthetic.size() > 0);
  const PointCloud repeat = manifest_cloud(m, &*world, 0, "");
  CHECK(synthetic.size() == repeat.size());
  CHECK_THROWS_AS(manifest_cloud(m, nullptr, 0, ""), ConfigError);

  // file-backed entries resolve relative to the base directory
  const TempFile cloud_file("mc_scan.bin");
  save_cloud(cloud_file.path, synthetic);
  DatasetManifest files = m;
  files.world.reset();
  files.scans[0].cloud = cloud_file.path;
  const PointCloud loaded = manifest_cloud(files, nullptr, 0, ".");
  CHECK(loaded.size() == synthetic.size());
  CHECK(manifest_world(files) == std::nullopt);
}

TEST_CASE("the benchmark manifest lays out one loop and a partial return") {
  const auto m = make_benchmark(17);
  CHECK_NOTHROW(m.validate());
  REQUIRE(m.scans.size() == 600);
  CHECK(m.sensor.width == 180);
  CHECK(m.sensor.height == 32);
  CHECK(m.sensor.fov_up == doctest::Approx(15.0 * M_PI / 180.0));
  CHECK(m.sensor.fov_up == m.sensor.fov_down);
  REQUIRE(m.world.has_value());
  CHECK(m.world->seed == 17);

  std::size_t database = 0, query = 0, reversed = 0;
  for (std::size_t i = 0; i < m.scans.size(); ++i) {
    CHECK(m.scans[i].id == i);
    if (m.scans[i].split == "database") {
      ++database;
      CHECK_FALSE(m.scans[i].reversed);
      CHECK(i < 300);
    } else {
      ++query;
    }
    if (m.scans[i].reversed) {
      ++reversed;
      CHECK(i >= 508);  // query pass turns around at k = 208
    }
    CHECK_NOTHROW(m.scans[i].pose.validate());
    const double r = std::hypot(m.scans[i].pose.m(0, 3), m.scans[i].pose.m(1, 3));
    CHECK(r > 28.0);
    CHECK(r < 32.0);
  }
  CHECK(database == 300);
  CHECK(query == 300);
  CHECK(reversed == 92);

  // deterministic in the seed
  const auto again = make_benchmark(17);
  for (std::size_t i = 0; i < 600; ++i) {
    CHECK((again.scans[i].pose.m - m.scans[i].pose.m).cwiseAbs().maxCoeff() == 0.0);
  }
  const auto other = make_benchmark(18);
  bool moved = false;
  for (std::size_t i = 300; i < 600 && !moved; ++i) {
    moved = (other.scans[i].pose.m - m.scans[i].pose.m).cwiseAbs().maxCoeff() > 0.0;
  }
  CHECK(moved);
}
