#include "seqplace/range_projection.hpp"

#include <cmath>

#include "binary_io.hpp"

namespace seqplace {

Pose Pose::from_rt(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Pose p;
  p.m.block<3, 3>(0, 0) = r;
  p.m.block<3, 1>(0, 3) = t;
  return p;
}

Pose Pose::yaw_about_z(double yaw) {
  Pose p;
  const double c = std::cos(yaw), s = std::sin(yaw);
  p.m(0, 0) = c;
  p.m(0, 1) = -s;
  p.m(1, 0) = s;
  p.m(1, 1) = c;
  return p;
}

Pose Pose::inverse() const {
  const Eigen::Matrix3d rt = rotation().transpose();
  Pose p;
  p.m.block<3, 3>(0, 0) = rt;
  p.m.block<3, 1>(0, 3) = -rt * translation();
  return p;
}

Pose Pose::operator*(const Pose& o) const {
  Pose p;
  p.m = m * o.m;
  return p;
}

Point3 Pose::apply(const Point3& p) const {
  const Eigen::Vector3d v = rotation() * Eigen::Vector3d(p.x, p.y, p.z) + translation();
  return {v.x(), v.y(), v.z()};
}

void Pose::validate(double tol) const {
  const Eigen::Matrix3d r = rotation();
  const double ortho = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > tol) {
    throw ConfigError("pose rotation block is not orthonormal (deviation " + std::to_string(ortho) + ")");
  }
  const Eigen::RowVector4d bottom = m.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tol) {
    throw ConfigError("pose bottom row must be [0 0 0 1]");
  }
}

void SensorModel::validate() const {
  if (width == 0 || height == 0) {
    throw ConfigError("sensor image size must be positive");
  }
  if (!(fov() > 0.0)) {
    throw ConfigError("invalid field of view: fov_up + fov_down must be positive");
  }
}

std::size_t RangeImage::valid_count() const {
  std::size_t n = 0;
  for (uint8_t b : mask) n += b;
  return n;
}

RangeImage project(const PointCloud& cloud, const SensorModel& sensor) {
  sensor.validate();
  if (cloud.size() == 0) {
    throw DataError("empty point cloud");
  }
  const double w = static_cast<double>(sensor.width);
  const double h = static_cast<double>(sensor.height);
  const double fov = sensor.fov();
  RangeImage img(sensor.height, sensor.width);
  for (const Point3& p : cloud.points) {
    const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (r < 1e-6) continue;
    const double u_f = 0.5 * (1.0 - std::atan2(p.y, p.x) / M_PI) * w;
    const double v_f = (1.0 - (std::asin(p.z / r) + sensor.fov_up) / fov) * h;
    const auto u = static_cast<std::ptrdiff_t>(std::floor(u_f));
    const auto v = static_cast<std::ptrdiff_t>(std::floor(v_f));
    if (u < 0 || u >= static_cast<std::ptrdiff_t>(sensor.width)) continue;
    if (v < 0 || v >= static_cast<std::ptrdiff_t>(sensor.height)) continue;
    const auto uu = static_cast<std::size_t>(u);
    const auto vv = static_cast<std::size_t>(v);
    const float range = static_cast<float>(r);
    if (!img.valid(vv, uu) || range < img.at(vv, uu)) {
      img.set(vv, uu, range);
    }
  }
  return img;
}

PointCloud yaw_rotate(const PointCloud& cloud, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  PointCloud out;
  out.points.reserve(cloud.size());
  out.intensity = cloud.intensity;
  for (const Point3& p : cloud.points) {
    out.points.push_back({c * p.x - s * p.y, s * p.x + c * p.y, p.z});
  }
  return out;
}

RangeImage column_shift(const RangeImage& image, std::ptrdiff_t shift) {
  const auto w = static_cast<std::ptrdiff_t>(image.width);
  if (w == 0) return image;
  RangeImage out(image.height, image.width);
  const std::ptrdiff_t s = ((shift % w) + w) % w;
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      const std::size_t src = (c + static_cast<std::size_t>(s)) % image.width;
      out.range[r * image.width + c] = image.range[r * image.width + src];
      out.mask[r * image.width + c] = image.mask[r * image.width + src];
    }
  }
  return out;
}

RangeImage reproject(const PointCloud& cloud, const Pose& pose_from, const Pose& pose_to,
                     const SensorModel& sensor) {
  pose_from.validate();
  pose_to.validate();
  const Pose rel = pose_to.inverse() * pose_from;
  PointCloud moved;
  moved.points.reserve(cloud.size());
  for (const Point3& p : cloud.points) {
    moved.points.push_back(rel.apply(p));
  }
  return project(moved, sensor);
}

void save_range_image(const std::string& path, const RangeImage& image) {
  io::Writer w(path);
  w.magic("SQRI");
  w.pod<uint8_t>(1);
  w.pod<uint32_t>(static_cast<uint32_t>(image.height));
  w.pod<uint32_t>(static_cast<uint32_t>(image.width));
  // The mask is implicit: invalid cells are exactly kInvalid.
  std::vector<float> payload(image.range);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (image.mask[i] == 0) payload[i] = RangeImage::kInvalid;
  }
  w.bytes(payload.data(), payload.size() * sizeof(float));
  w.finish();
}

RangeImage load_range_image(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("SQRI", "range image");
  r.expect_version(1, "range image");
  const uint32_t h = r.pod<uint32_t>();
  const uint32_t w = r.pod<uint32_t>();
  RangeImage img(h, w);
  r.bytes(img.range.data(), img.range.size() * sizeof(float));
  if (!r.at_eof()) {
    throw DataError(path + ": trailing bytes after range image payload at offset " +
                    std::to_string(r.offset()));
  }
  for (std::size_t i = 0; i < img.range.size(); ++i) {
    img.mask[i] = img.range[i] == RangeImage::kInvalid ? 0 : 1;
  }
  return img;
}

}  // namespace seqplace
