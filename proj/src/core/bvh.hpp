#pragma once

#include "core/geometry.hpp"

#include <array>
#include <functional>
#include <vector>

namespace mocap {

struct ClosestHit {
  int triangle = -1;
  Vec3 point = Vec3::Zero();
  Vec3 barycentric = Vec3::Zero();
  double distance = 0.0;
};

/// Closest point on triangle abc to p, with barycentric coordinates
/// (Ericson's region test).
ClosestHit closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Moller-Trumbore on the closed segment [p0, p1].
bool segment_hits_triangle(const Vec3& p0, const Vec3& p1, const Vec3& a, const Vec3& b, const Vec3& c);

/// Static AABB tree over a triangle soup.
class TriangleBvh {
 public:
  TriangleBvh() = default;
  TriangleBvh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles);

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  bool empty() const { return triangles_.empty(); }

  /// Ties go to the lower triangle index.
  ClosestHit closest(const Vec3& p) const;

  /// True if the segment meets any triangle for which skip(t) is false.
  bool segment_blocked(const Vec3& p0, const Vec3& p1, const std::function<bool(int)>& skip = {}) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;  // children, or -1 for a leaf
    int first = 0, count = 0;   // leaf range in order_
  };

  int build(int first, int count);

  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace mocap
