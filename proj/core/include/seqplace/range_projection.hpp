#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "seqplace/common.hpp"

namespace seqplace {

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

/** Unordered LiDAR scan in the sensor frame. Intensity is optional. */
struct PointCloud {
  std::vector<Point3> points;
  std::vector<float> intensity;  // empty, or one value per point

  std::size_t size() const { return points.size(); }
};

/** Rigid sensor pose as a 4x4 homogeneous transform (sensor -> world). */
struct Pose {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();

  static Pose identity() { return {}; }
  static Pose from_rt(const Eigen::Matrix3d& r, const Eigen::Vector3d& t);
  static Pose yaw_about_z(double yaw);

  Eigen::Matrix3d rotation() const { return m.block<3, 3>(0, 0); }
  Eigen::Vector3d translation() const { return m.block<3, 1>(0, 3); }

  Pose inverse() const;
  Pose operator*(const Pose& o) const;
  Point3 apply(const Point3& p) const;

  /** Throws ConfigError unless the rotation block is orthonormal within tol
      and the last row is (0 0 0 1). */
  void validate(double tol = 1e-6) const;
};

/** Spherical projection geometry: image size and vertical field of view. */
struct SensorModel {
  std::size_t width = 900;
  std::size_t height = 32;
  double fov_up = 0.261799;    // radians above the horizon
  double fov_down = 0.261799;  // radians below the horizon

  double fov() const { return fov_up + fov_down; }
  void validate() const;
};

/**
 * Range image: h x w grid of ranges in meters. Cells nothing projected into
 * hold kInvalid and a false mask bit; the two representations are kept in
 * lockstep.
 */
struct RangeImage {
  static constexpr float kInvalid = -1.0f;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> range;   // h*w, row-major
  std::vector<uint8_t> mask;  // h*w, 1 = valid

  RangeImage() = default;
  RangeImage(std::size_t h, std::size_t w)
      : height(h), width(w), range(h * w, kInvalid), mask(h * w, 0) {}

  float at(std::size_t r, std::size_t c) const { return range[r * width + c]; }
  bool valid(std::size_t r, std::size_t c) const { return mask[r * width + c] != 0; }

  void set(std::size_t r, std::size_t c, float value) {
    range[r * width + c] = value;
    mask[r * width + c] = 1;
  }

  std::size_t valid_count() const;
  bool operator==(const RangeImage& o) const = default;
};

/**
 * Projects a cloud to a range image:
 *   u = floor(0.5 * (1 - atan2(y, x) / pi) * w)
 *   v = floor((1 - (asin(z / r) + fov_up) / fov) * h)
 * Points with range under 1e-6 m or falling outside the grid are dropped;
 * when several points land in one cell the nearest range wins.
 */
RangeImage project(const PointCloud& cloud, const SensorModel& sensor);

/** Rotates every point about +z by yaw radians. */
PointCloud yaw_rotate(const PointCloud& cloud, double yaw);

/**
 * Circularly shifts image columns: output column u holds input column
 * (u + shift) mod w, matching a yaw rotation by +shift * 2pi / w.
 */
RangeImage column_shift(const RangeImage& image, std::ptrdiff_t shift);

/** Transforms cloud from pose_from into the frame of pose_to, then projects. */
RangeImage reproject(const PointCloud& cloud, const Pose& pose_from, const Pose& pose_to,
                     const SensorModel& sensor);

/**
 * Range image container, little-endian:
 *   "SQRI" magic, u8 version=1, u32 height, u32 width, h*w f32 row-major
 *   with invalid cells stored as -1.0.
 */
void save_range_image(const std::string& path, const RangeImage& image);
RangeImage load_range_image(const std::string& path);

}  // namespace seqplace
