#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <string>
#include <vector>

namespace mocap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Radial-tangential distortion, OpenCV ordering (k1, k2, p1, p2, k3).
using Distortion = std::array<double, 5>;

/// Pinhole camera with radial-tangential distortion. World units are mm,
/// image units are pixels. `rotation` and `translation` map world points
/// into the camera frame: X_cam = R * X_world + t.
struct Camera {
  int id = 0;
  Mat3 K = Mat3::Identity();
  Distortion dist{};
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  int width = 0;
  int height = 0;

  /// Throws Error(InvalidArgument) when an invariant is broken.
  void validate() const;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -(rotation.conjugate() * translation); }

  bool in_image(const Vec2& px, double slack = 0.0) const {
    return px.x() >= -slack && px.y() >= -slack && px.x() <= width + slack &&
           px.y() <= height + slack;
  }
};

struct CameraRig {
  std::vector<Camera> cameras;

  const Camera& by_id(int id) const;
  int index_of(int id) const;  // -1 when absent
  void validate() const;
};

/// Applies the distortion polynomial to normalized coordinates.
Vec2 distort_normalized(const Distortion& d, const Vec2& xy);

/// Inverts distort_normalized by fixed-point + Newton refinement.
Vec2 undistort_normalized(const Distortion& d, const Vec2& xy_distorted);

/// Pixel -> undistorted normalized image coordinates.
Vec2 pixel_to_normalized(const Camera& cam, const Vec2& px);

/// f^k: world point (mm) to distorted pixel. Throws NonPositiveDepth.
Vec2 project(const Camera& cam, const Vec3& point);

/// Same as project and fills the 2x3 derivative d(pixel)/d(point).
Vec2 project(const Camera& cam, const Vec3& point, Eigen::Matrix<double, 2, 3>& jacobian);

/// ||f^k(p) - c||_2
double reprojection_error(const Camera& cam, const Vec3& point, const Vec2& observation);

/// Projective 2D transform. Stored with H(2,2) = 1 when that entry is
/// nonzero, otherwise with unit Frobenius norm.
struct Homography {
  Mat3 H = Mat3::Identity();

  static Homography normalized(const Mat3& m);
};

/// DLT on Hartley-normalized points. Throws DegenerateQuad when three of
/// the source or target points are collinear.
Homography homography_from_4pts(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst);

/// Throws PointAtInfinity when the homogeneous denominator vanishes.
Vec2 warp_point(const Homography& h, const Vec2& p);

/// Calibration file I/O: JSON array of {id, K[9], dist[5], q[w,x,y,z], t[3], size[w,h]}.
CameraRig parse_calibration(const std::string& json_text);
CameraRig load_calibration(const std::string& path);
std::string serialize_calibration(const CameraRig& rig);

}  // namespace mocap
