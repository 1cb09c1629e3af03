#include <cmath>
#include <cstdio>
#include <numbers>

#include "doctest.h"
#include "seqplace/range_projection.hpp"

using namespace seqplace;

namespace {

constexpr double kPi = std::numbers::pi;

SensorModel quarter_sensor() {
  SensorModel s;
  s.width = 4;
  s.height = 2;
  s.fov_up = kPi / 4;
  s.fov_down = kPi / 4;
  return s;
}

PointCloud ring_cloud(uint64_t seed, std::size_t n, const SensorModel& sensor,
                      double boundary_margin = 1e-3) {
  Rng rng(seed);
  PointCloud cloud;
  const double cell = 2.0 * kPi / static_cast<double>(sensor.width);
  for (std::size_t i = 0; i < n; ++i) {
    // Keep azimuths away from pixel boundaries so rotation/shift stay exact.
    const auto u = rng.uniform_index(sensor.width);
    const double frac = boundary_margin + (1.0 - 2.0 * boundary_margin) * rng.uniform();
    const double yaw = kPi - (static_cast<double>(u) + frac) * cell;
    const double pitch = rng.uniform(-0.95 * sensor.fov_down, 0.95 * sensor.fov_up);
    const double r = rng.uniform(2.0, 50.0);
    cloud.points.push_back({r * std::cos(pitch) * std::cos(yaw),
                            r * std::cos(pitch) * std::sin(yaw), r * std::sin(pitch)});
  }
  return cloud;
}

}  // namespace

TEST_CASE("project pins the axis points to their pixels") {
  const SensorModel s = quarter_sensor();

  PointCloud cloud;
  cloud.points.push_back({1.0, 0.0, 0.0});
  RangeImage img = project(cloud, s);
  CHECK(img.height == 2);
  CHECK(img.width == 4);
  CHECK(img.valid_count() == 1);
  REQUIRE(img.valid(1, 2));
  CHECK(img.at(1, 2) == doctest::Approx(1.0).epsilon(1e-6));

  PointCloud up;
  up.points.push_back({0.0, 1.0, 0.0});
  RangeImage img2 = project(up, s);
  REQUIRE(img2.valid(1, 1));
  CHECK(img2.at(1, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("project keeps the configured shape and drops bad points") {
  SensorModel s;
  s.width = 900;
  s.height = 32;
  const PointCloud cloud = ring_cloud(1, 500, s);
  const RangeImage img = project(cloud, s);
  CHECK(img.height == 32);
  CHECK(img.width == 900);
  CHECK(img.valid_count() > 0);
  CHECK(img.valid_count() <= 500);

  PointCloud degenerate;
  degenerate.points.push_back({0.0, 0.0, 0.0});          // below the range floor
  degenerate.points.push_back({1.0, 0.0, 10.0});         // far above the FOV
  const RangeImage empty_img = project(degenerate, quarter_sensor());
  CHECK(empty_img.valid_count() == 0);

  CHECK_THROWS_AS(project(PointCloud{}, s), DataError);
  SensorModel bad = s;
  bad.fov_up = 0.0;
  bad.fov_down = 0.0;
  CHECK_THROWS_AS(project(cloud, bad), ConfigError);
}

TEST_CASE("valid cells carry the range of some input point") {
  SensorModel s;
  s.width = 64;
  s.height = 16;
  const PointCloud cloud = ring_cloud(2, 300, s);
  std::vector<double> norms;
  for (const Point3& p : cloud.points) {
    norms.push_back(std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z));
  }
  const RangeImage img = project(cloud, s);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      if (!img.valid(r, c)) {
        CHECK(img.at(r, c) == RangeImage::kInvalid);
        continue;
      }
      bool matched = false;
      for (double n : norms) {
        if (std::abs(n - img.at(r, c)) <= 1e-5 * n) {
          matched = true;
          break;
        }
      }
      CHECK(matched);
    }
  }
}

TEST_CASE("nearest range wins on pixel collisions") {
  const SensorModel s = quarter_sensor();
  PointCloud cloud;
  cloud.points.push_back({3.0, 0.0, 0.0});
  cloud.points.push_back({1.5, 0.0, 0.0});
  cloud.points.push_back({2.0, 0.0, 0.0});
  const RangeImage img = project(cloud, s);
  CHECK(img.valid_count() == 1);
  CHECK(img.at(1, 2) == doctest::Approx(1.5).epsilon(1e-6));
}

TEST_CASE("yaw_rotate is a z-rotation preserving norms") {
  PointCloud axis;
  axis.points.push_back({1.0, 0.0, 0.0});
  const PointCloud turned = yaw_rotate(axis, kPi / 2);
  CHECK(turned.points[0].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(turned.points[0].y == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(turned.points[0].z == doctest::Approx(0.0).epsilon(1e-12));

  SensorModel s;
  const PointCloud cloud = ring_cloud(3, 100, s);
  const PointCloud same = yaw_rotate(cloud, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(same.points[i].x == cloud.points[i].x);
    CHECK(same.points[i].y == cloud.points[i].y);
    CHECK(same.points[i].z == cloud.points[i].z);
  }
  const PointCloud rot = yaw_rotate(cloud, 1.234);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& a = cloud.points[i];
    const auto& b = rot.points[i];
    const double ra = std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z);
    const double rb = std::sqrt(b.x * b.x + b.y * b.y + b.z * b.z);
    CHECK(rb == doctest::Approx(ra).epsilon(1e-12));
  }
}

TEST_CASE("column_shift wraps modulo the width") {
  SensorModel s;
  s.width = 32;
  s.height = 8;
  const RangeImage img = project(ring_cloud(4, 200, s), s);
  CHECK(column_shift(img, 0) == img);
  CHECK(column_shift(img, 32) == img);
  CHECK(column_shift(img, -32) == img);
  CHECK(column_shift(column_shift(img, 11), -11) == img);
  const RangeImage shifted = column_shift(img, 5);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      CHECK(shifted.at(r, c) == img.at(r, (c + 5) % img.width));
    }
  }
}

TEST_CASE("projection commutes with rotation as a column shift, cell-exact") {
  SensorModel s;
  s.width = 48;
  s.height = 12;
  for (uint64_t trial = 0; trial < 25; ++trial) {
    const PointCloud cloud = ring_cloud(100 + trial, 300, s);
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>((trial * 7) % s.width);
    const double yaw = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(s.width);
    CHECK(project(yaw_rotate(cloud, yaw), s) == column_shift(project(cloud, s), k));
  }
}

TEST_CASE("reproject matches the direct projection for equal poses") {
  SensorModel s;
  s.width = 64;
  s.height = 16;
  const PointCloud cloud = ring_cloud(5, 400, s);
  const Pose pose = Pose::from_rt(Eigen::Matrix3d::Identity(), Eigen::Vector3d(3.0, -2.0, 0.5));
  CHECK(reproject(cloud, pose, pose, s) == project(cloud, s));
}

TEST_CASE("reproject turns a pure yaw offset into a column shift") {
  SensorModel s;
  s.width = 36;
  s.height = 8;
  const PointCloud cloud = ring_cloud(6, 300, s);
  const double step = 2.0 * kPi / static_cast<double>(s.width);
  const Pose pose_j = Pose::identity();
  // Frame i is rotated by -step relative to j, so points gain +step of yaw.
  const Pose pose_i = Pose::yaw_about_z(-step);
  CHECK(reproject(cloud, pose_j, pose_i, s) == column_shift(project(cloud, s), 1));
}

TEST_CASE("large translations move every point away from its cell") {
  SensorModel s;
  s.width = 36;
  s.height = 8;
  const PointCloud cloud = ring_cloud(7, 300, s);
  const Pose pose_j = Pose::identity();
  const Pose pose_i = Pose::from_rt(Eigen::Matrix3d::Identity(), Eigen::Vector3d(500.0, 0.0, 0.0));
  const RangeImage moved = reproject(cloud, pose_j, pose_i, s);
  const RangeImage base = project(cloud, s);
  std::size_t agreeing = 0;
  for (std::size_t i = 0; i < base.range.size(); ++i) {
    if (base.mask[i] && moved.mask[i] && std::abs(base.range[i] - moved.range[i]) <= 1.0f) {
      ++agreeing;
    }
  }
  CHECK(agreeing < base.valid_count() / 10);
}

TEST_CASE("pose validation rejects a sheared matrix") {
  Pose bad;
  bad.m(0, 1) = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(Pose::yaw_about_z(0.7).validate());
}

TEST_CASE("range image file round trip is bit-exact") {
  SensorModel s;
  s.width = 40;
  s.height = 10;
  const RangeImage img = project(ring_cloud(8, 200, s), s);
  const std::string path = "roundtrip_test.sqri";
  save_range_image(path, img);
  const RangeImage back = load_range_image(path);
  CHECK(back == img);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_range_image("missing_file.sqri"), DataError);
}
