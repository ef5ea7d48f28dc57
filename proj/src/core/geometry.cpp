#include "core/geometry.hpp"

#include "core/error.hpp"
#include "core/io_util.hpp"

#include <Eigen/SVD>
#include <json.hpp>

#include <cmath>
#include <sstream>

namespace mocap {

namespace {

constexpr double kQuatNormTol = 1e-9;

void check_triple_collinearity(const std::array<Vec2, 4>& pts, const char* which) {
  Vec2 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double scale = (hi - lo).norm();
  if (!(scale > 0.0)) {
    throw Error(ErrorCode::DegenerateQuad, std::string(which) + " points coincide");
  }
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      for (int c = b + 1; c < 4; ++c) {
        const Vec2 u = pts[b] - pts[a];
        const Vec2 v = pts[c] - pts[a];
        const double cross = u.x() * v.y() - u.y() * v.x();
        if (std::abs(cross) < 1e-12 * scale * scale) {
          throw Error(ErrorCode::DegenerateQuad,
                      std::string("three collinear ") + which + " points");
        }
      }
    }
  }
}

// Similarity moving the centroid to the origin with RMS distance sqrt(2).
Mat3 hartley_transform(const std::array<Vec2, 4>& pts) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pts) mean += p;
  mean /= 4.0;
  double ms = 0.0;
  for (const auto& p : pts) ms += (p - mean).squaredNorm();
  const double s = std::sqrt(2.0) / std::sqrt(ms / 4.0);
  Mat3 T;
  T << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return T;
}

}  // namespace

void Camera::validate() const {
  if (std::abs(rotation.norm() - 1.0) > kQuatNormTol) {
    throw Error(ErrorCode::InvalidArgument, "camera " + std::to_string(id) + ": quaternion not unit");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0) || K(1, 0) != 0.0 || K(2, 0) != 0.0 ||
      K(2, 1) != 0.0 || K(2, 2) != 1.0) {
    throw Error(ErrorCode::InvalidArgument,
                "camera " + std::to_string(id) + ": K must be upper-triangular with positive focal lengths");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "camera " + std::to_string(id) + ": bad image size");
  }
}

const Camera& CameraRig::by_id(int id) const {
  const int idx = index_of(id);
  if (idx < 0) throw Error(ErrorCode::InvalidArgument, "unknown camera id " + std::to_string(id));
  return cameras[static_cast<size_t>(idx)];
}

int CameraRig::index_of(int id) const {
  for (size_t i = 0; i < cameras.size(); ++i) {
    if (cameras[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

void CameraRig::validate() const {
  for (size_t i = 0; i < cameras.size(); ++i) {
    cameras[i].validate();
    for (size_t j = i + 1; j < cameras.size(); ++j) {
      if (cameras[i].id == cameras[j].id) {
        throw Error(ErrorCode::InvalidArgument, "duplicate camera id " + std::to_string(cameras[i].id));
      }
    }
  }
}

Vec2 distort_normalized(const Distortion& d, const Vec2& xy) {
  const double x = xy.x(), y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]));
  return {x * radial + 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x),
          y * radial + d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y};
}

namespace {

Eigen::Matrix2d distortion_jacobian(const Distortion& d, const Vec2& xy) {
  const double x = xy.x(), y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]));
  const double dradial = d[0] + r2 * (2.0 * d[1] + 3.0 * d[4] * r2);
  const double p1 = d[2], p2 = d[3];
  Eigen::Matrix2d J;
  J(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x;
  J(0, 1) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 0) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x;
  return J;
}

}  // namespace

Vec2 undistort_normalized(const Distortion& d, const Vec2& xy_distorted) {
  Vec2 xy = xy_distorted;
  for (int it = 0; it < 50; ++it) {
    const Vec2 r = distort_normalized(d, xy) - xy_distorted;
    const Vec2 step = distortion_jacobian(d, xy).partialPivLu().solve(r);
    xy -= step;
    if (step.norm() < 1e-16 * (1.0 + xy.norm())) break;
  }
  return xy;
}

Vec2 pixel_to_normalized(const Camera& cam, const Vec2& px) {
  const Mat3& K = cam.K;
  const double yd = (px.y() - K(1, 2)) / K(1, 1);
  const double xd = (px.x() - K(0, 2) - K(0, 1) * yd) / K(0, 0);
  return undistort_normalized(cam.dist, {xd, yd});
}

Vec2 project(const Camera& cam, const Vec3& point) {
  const Vec3 pc = cam.to_camera(point);
  if (!(pc.z() > 0.0)) {
    throw Error(ErrorCode::NonPositiveDepth, "point at or behind camera " + std::to_string(cam.id));
  }
  const Vec2 xd = distort_normalized(cam.dist, {pc.x() / pc.z(), pc.y() / pc.z()});
  const Mat3& K = cam.K;
  return {K(0, 0) * xd.x() + K(0, 1) * xd.y() + K(0, 2), K(1, 1) * xd.y() + K(1, 2)};
}

Vec2 project(const Camera& cam, const Vec3& point, Eigen::Matrix<double, 2, 3>& jacobian) {
  const Vec3 pc = cam.to_camera(point);
  if (!(pc.z() > 0.0)) {
    throw Error(ErrorCode::NonPositiveDepth, "point at or behind camera " + std::to_string(cam.id));
  }
  const double iz = 1.0 / pc.z();
  const Vec2 xy(pc.x() * iz, pc.y() * iz);
  const Vec2 xd = distort_normalized(cam.dist, xy);
  const Mat3& K = cam.K;

  Eigen::Matrix<double, 2, 3> dn;
  dn << iz, 0.0, -pc.x() * iz * iz, 0.0, iz, -pc.y() * iz * iz;
  Eigen::Matrix2d kk;
  kk << K(0, 0), K(0, 1), 0.0, K(1, 1);
  jacobian = kk * distortion_jacobian(cam.dist, xy) * dn * cam.rotation.toRotationMatrix();
  return {K(0, 0) * xd.x() + K(0, 1) * xd.y() + K(0, 2), K(1, 1) * xd.y() + K(1, 2)};
}

double reprojection_error(const Camera& cam, const Vec3& point, const Vec2& observation) {
  return (project(cam, point) - observation).norm();
}

Homography Homography::normalized(const Mat3& m) {
  Homography h;
  if (std::abs(m(2, 2)) > 0.0) {
    h.H = m / m(2, 2);
  } else {
    h.H = m / m.norm();
  }
  return h;
}

Homography homography_from_4pts(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst) {
  check_triple_collinearity(src, "source");
  check_triple_collinearity(dst, "target");
  const Mat3 Ts = hartley_transform(src);
  const Mat3 Td = hartley_transform(dst);

  Eigen::Matrix<double, 8, 9> A;
  for (int i = 0; i < 4; ++i) {
    const Vec3 s = Ts * src[static_cast<size_t>(i)].homogeneous();
    const Vec3 d = Td * dst[static_cast<size_t>(i)].homogeneous();
    const double x = s.x(), y = s.y();
    const double u = d.x(), v = d.y();
    A.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    A.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography::normalized(Td.inverse() * Hn * Ts);
}

Vec2 warp_point(const Homography& h, const Vec2& p) {
  const Vec3 q = h.H * p.homogeneous();
  if (std::abs(q.z()) <= 1e-12) {
    throw Error(ErrorCode::PointAtInfinity, "homography maps point to infinity");
  }
  return q.hnormalized();
}

CameraRig parse_calibration(const std::string& json_text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Calibration, std::string("calibration is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::Calibration, "calibration must be a JSON array");
  CameraRig rig;
  try {
    for (const auto& jc : doc) {
      Camera cam;
      cam.id = jc.at("id").get<int>();
      const auto k = jc.at("K").get<std::vector<double>>();
      const auto dist = jc.at("dist").get<std::vector<double>>();
      const auto q = jc.at("q").get<std::vector<double>>();
      const auto t = jc.at("t").get<std::vector<double>>();
      const auto size = jc.at("size").get<std::vector<int>>();
      if (k.size() != 9 || q.size() != 4 || t.size() != 3 || size.size() != 2) {
        throw Error(ErrorCode::Calibration, "camera " + std::to_string(cam.id) + ": wrong array length");
      }
      if (dist.size() != 5) {
        throw Error(ErrorCode::Calibration, "camera " + std::to_string(cam.id) +
                                                ": distortion must have exactly 5 coefficients, got " +
                                                std::to_string(dist.size()));
      }
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cam.K(r, c) = k[static_cast<size_t>(3 * r + c)];
      std::copy(dist.begin(), dist.end(), cam.dist.begin());
      cam.rotation = Quat(q[0], q[1], q[2], q[3]);
      const double qn = cam.rotation.norm();
      // Hand-edited calibrations carry a few decimals only.
      if (std::abs(qn - 1.0) > 1e-6) {
        throw Error(ErrorCode::Calibration, "camera " + std::to_string(cam.id) + ": quaternion not unit");
      }
      if (std::abs(qn - 1.0) > kQuatNormTol) cam.rotation.normalize();
      cam.translation = Vec3(t[0], t[1], t[2]);
      cam.width = size[0];
      cam.height = size[1];
      rig.cameras.push_back(cam);
    }
    rig.validate();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Calibration, std::string("malformed calibration: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Calibration) throw;
    throw Error(ErrorCode::Calibration, e.what());
  }
  return rig;
}

CameraRig load_calibration(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::Calibration, e.what());
  }
  return parse_calibration(text);
}

std::string serialize_calibration(const CameraRig& rig) {
  using nlohmann::json;
  json doc = json::array();
  for (const auto& cam : rig.cameras) {
    std::vector<double> k(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) k[static_cast<size_t>(3 * r + c)] = cam.K(r, c);
    doc.push_back({{"id", cam.id},
                   {"K", k},
                   {"dist", std::vector<double>(cam.dist.begin(), cam.dist.end())},
                   {"q", {cam.rotation.w(), cam.rotation.x(), cam.rotation.y(), cam.rotation.z()}},
                   {"t", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
                   {"size", {cam.width, cam.height}}});
  }
  return doc.dump(1) + "\n";
}

}  // namespace mocap
