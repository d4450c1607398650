#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lcps/errors.hpp"

namespace lcps {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline bool finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// 4x4 homogeneous rigid transform, row-major. The rotation block must be
/// orthonormal (checked to 1e-6) and the last row exactly [0,0,0,1], which
/// keeps the inverse closed-form and numerically benign.
struct Transform4 {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  double at(int r, int c) const { return m[static_cast<std::size_t>(r * 4 + c)]; }
  double& at(int r, int c) { return m[static_cast<std::size_t>(r * 4 + c)]; }

  static Transform4 identity() { return Transform4{}; }

  static Transform4 translation(double x, double y, double z) {
    Transform4 t;
    t.at(0, 3) = x;
    t.at(1, 3) = y;
    t.at(2, 3) = z;
    return t;
  }

  static Transform4 rotation_z(double yaw) {
    Transform4 t;
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    t.at(0, 0) = c;
    t.at(0, 1) = -s;
    t.at(1, 0) = s;
    t.at(1, 1) = c;
    return t;
  }

  bool is_identity() const {
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        if (at(r, c) != (r == c ? 1.0 : 0.0)) return false;
    return true;
  }

  /// Max-norm orthonormality defect of the rotation block, ||R^T R - I||_inf.
  double rotation_defect() const {
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += at(k, i) * at(k, j);
        worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
      }
    }
    return worst;
  }

  /// Throws degenerate_transform_error unless this is a valid rigid transform.
  void validate(const char* what = "transform") const {
    for (double v : m)
      if (!std::isfinite(v))
        throw degenerate_transform_error(std::string(what) + ": non-finite entry");
    if (at(3, 0) != 0.0 || at(3, 1) != 0.0 || at(3, 2) != 0.0 || at(3, 3) != 1.0)
      throw degenerate_transform_error(std::string(what) +
                                       ": last row must be [0,0,0,1]");
    if (rotation_defect() > 1e-6)
      throw degenerate_transform_error(std::string(what) +
                                       ": rotation block not orthonormal");
  }

  /// Rigid inverse: [R|t]^-1 = [R^T | -R^T t]. Valid because the rotation
  /// block is orthonormal; callers must validate() untrusted matrices first.
  Transform4 inverse() const {
    Transform4 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.at(r, c) = at(c, r);
    for (int r = 0; r < 3; ++r) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k) v += at(k, r) * at(k, 3);
      out.at(r, 3) = -v;
    }
    return out;
  }

  Vec3 apply(const Vec3& p) const {
    return Vec3{
        at(0, 0) * p.x + at(0, 1) * p.y + at(0, 2) * p.z + at(0, 3),
        at(1, 0) * p.x + at(1, 1) * p.y + at(1, 2) * p.z + at(1, 3),
        at(2, 0) * p.x + at(2, 1) * p.y + at(2, 2) * p.z + at(2, 3),
    };
  }

  friend Transform4 operator*(const Transform4& a, const Transform4& b) {
    Transform4 out;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        double v = 0.0;
        for (int k = 0; k < 4; ++k) v += a.at(r, k) * b.at(k, c);
        out.at(r, c) = v;
      }
    }
    // Keep the homogeneous row exact regardless of rounding in the product.
    out.at(3, 0) = 0.0;
    out.at(3, 1) = 0.0;
    out.at(3, 2) = 0.0;
    out.at(3, 3) = 1.0;
    return out;
  }

  friend bool operator==(const Transform4& a, const Transform4& b) {
    return a.m == b.m;
  }
};

/// Pinhole camera: 3x3 intrinsics (pixels), ego->camera extrinsics, image
/// bounds and capture timestamp.
struct CameraModel {
  std::array<double, 9> intrinsic{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Transform4 extrinsic;                                        // ego -> camera
  int width = 0;
  int height = 0;
  double capture_time = 0.0;

  double k(int r, int c) const { return intrinsic[static_cast<std::size_t>(r * 3 + c)]; }
  double& k(int r, int c) { return intrinsic[static_cast<std::size_t>(r * 3 + c)]; }

  void validate() const {
    for (double v : intrinsic)
      if (!std::isfinite(v)) throw config_error("camera: non-finite intrinsic");
    if (k(2, 2) != 1.0) throw config_error("camera: intrinsic[2][2] must be 1");
    if (k(0, 0) <= 0.0 || k(1, 1) <= 0.0)
      throw config_error("camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw config_error("camera: empty image");
    if (k(0, 2) < 0.0 || k(0, 2) >= width || k(1, 2) < 0.0 || k(1, 2) >= height)
      throw config_error("camera: principal point outside image");
    extrinsic.validate("camera extrinsic");
  }
};

/// One LiDAR sweep: positions and per-point features in the world frame,
/// plus the two poses needed to move its points to another timestamp
/// (world -> ego at capture time, and ego at capture time -> ego at the
/// sequence's first frame).
struct LidarFrame {
  std::vector<Vec3> positions;      // N x 3, world coordinates
  std::vector<float> features;      // N x C, row-major
  std::size_t feature_width = 0;    // C
  double capture_time = 0.0;        // t1
  Transform4 pose_to_first;         // ego@t1 -> ego@t0
  Transform4 world_to_ego;          // world -> ego@t1

  std::size_t size() const { return positions.size(); }

  const float* feature_row(std::size_t i) const {
    return features.data() + i * feature_width;
  }

  void validate() const {
    if (features.size() != positions.size() * feature_width)
      throw dimension_error("lidar frame: positions/features size mismatch");
    for (const Vec3& p : positions)
      if (!finite(p)) throw data_error("lidar frame: non-finite position");
    pose_to_first.validate("pose_to_first");
    world_to_ego.validate("world_to_ego");
  }
};

/// One surviving point -> pixel correspondence.
struct PixelEntry {
  std::uint32_t point_index = 0;
  std::uint32_t camera_index = 0;
  double px = 0.0;  // column, in [0, width)
  double py = 0.0;  // row, in [0, height)
  double depth = 0.0;
};

/// Union of per-camera projections. A point may appear under several
/// cameras; (point_index, camera_index) pairs are unique.
struct PointPixelMap {
  std::vector<PixelEntry> entries;
  std::vector<std::size_t> culled_per_camera;

  std::size_t size() const { return entries.size(); }
};

/// Camera-frame depths at or below this are culled before the perspective
/// division so near-plane points cannot blow up the pixel coordinates.
inline constexpr double kMinProjectionDepth = 1e-6;

/// Moves frame points into the ego frame at the camera timestamp:
///   out = inverse(pose_t2_to_first) * pose_to_first * world_to_ego * p.
/// When pose_t2_to_first equals pose_to_first entry-for-entry (synchronous
/// capture) the two pose factors cancel algebraically; that case applies
/// world_to_ego alone so the reduction is also exact in floating point.
inline std::vector<Vec3> ego_compensate(const LidarFrame& frame,
                                        const Transform4& pose_t2_to_first) {
  frame.validate();
  pose_t2_to_first.validate("pose_t2_to_first");

  Transform4 chain = frame.world_to_ego;
  if (!(pose_t2_to_first == frame.pose_to_first)) {
    chain = pose_t2_to_first.inverse() * frame.pose_to_first * frame.world_to_ego;
  }
  if (chain.is_identity()) return frame.positions;

  std::vector<Vec3> out;
  out.reserve(frame.size());
  for (const Vec3& p : frame.positions) out.push_back(chain.apply(p));
  return out;
}

struct ProjectedPoint {
  std::uint32_t point_index = 0;
  double px = 0.0;
  double py = 0.0;
  double depth = 0.0;
};

struct ProjectionResult {
  std::vector<ProjectedPoint> entries;
  std::size_t culled = 0;
};

/// Projects ego-frame points through one camera. Points behind the camera
/// (depth <= kMinProjectionDepth) or landing outside the half-open pixel box
/// [0,width) x [0,height) are culled silently; the cull count is returned.
inline ProjectionResult project_to_image(const std::vector<Vec3>& positions,
                                         const CameraModel& cam) {
  cam.validate();
  ProjectionResult out;
  out.entries.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Vec3 c = cam.extrinsic.apply(positions[i]);
    if (!(c.z > kMinProjectionDepth)) {
      ++out.culled;
      continue;
    }
    const double u = cam.k(0, 0) * c.x + cam.k(0, 1) * c.y + cam.k(0, 2) * c.z;
    const double v = cam.k(1, 0) * c.x + cam.k(1, 1) * c.y + cam.k(1, 2) * c.z;
    const double px = u / c.z;
    const double py = v / c.z;
    if (!(px >= 0.0 && px < cam.width && py >= 0.0 && py < cam.height)) {
      ++out.culled;
      continue;
    }
    out.entries.push_back(
        ProjectedPoint{static_cast<std::uint32_t>(i), px, py, c.z});
  }
  return out;
}

/// Full alignment: per camera, compensate the sweep to the camera timestamp
/// and project. poses_t2_to_first[k] is the ego@t2 -> ego@t0 pose for camera k.
inline PointPixelMap build_point_pixel_map(
    const LidarFrame& frame, const std::vector<CameraModel>& rig,
    const std::vector<Transform4>& poses_t2_to_first) {
  if (rig.empty()) throw config_error("build_point_pixel_map: empty camera rig");
  if (rig.size() != poses_t2_to_first.size())
    throw config_error("build_point_pixel_map: rig and pose lists differ in length");

  PointPixelMap map;
  map.culled_per_camera.resize(rig.size(), 0);
  for (std::size_t k = 0; k < rig.size(); ++k) {
    const std::vector<Vec3> moved = ego_compensate(frame, poses_t2_to_first[k]);
    ProjectionResult proj = project_to_image(moved, rig[k]);
    map.culled_per_camera[k] = proj.culled;
    for (const ProjectedPoint& e : proj.entries) {
      map.entries.push_back(PixelEntry{e.point_index,
                                       static_cast<std::uint32_t>(k), e.px,
                                       e.py, e.depth});
    }
  }
  return map;
}

}  // namespace lcps
