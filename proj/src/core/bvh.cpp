#include "core/bvh.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace mocap {

ClosestHit closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  ClosestHit h;
  auto finish = [&](double u, double v, double w) {
    h.barycentric = Vec3(u, v, w);
    h.point = u * a + v * b + w * c;
    h.distance = (h.point - p).norm();
    return h;
  };
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return finish(1, 0, 0);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return finish(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return finish(1 - v, v, 0);
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return finish(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return finish(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(0, 1 - w, w);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return finish(1 - v - w, v, w);
}

bool segment_hits_triangle(const Vec3& p0, const Vec3& p1, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 dir = p1 - p0;
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  const double scale = e1.norm() * e2.norm() * dir.norm();
  if (std::abs(det) <= 1e-14 * scale) return false;  // parallel
  const double inv = 1.0 / det;
  const Vec3 tv = p0 - a;
  const double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  const double t = e2.dot(qv) * inv;
  return t >= 0.0 && t <= 1.0;
}

TriangleBvh::TriangleBvh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  order_.resize(triangles_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!triangles_.empty()) {
    nodes_.reserve(2 * triangles_.size());
    build(0, static_cast<int>(triangles_.size()));
  }
}

int TriangleBvh::build(int first, int count) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  Vec3 clo = node.lo, chi = node.hi;
  auto centroid = [&](int t) {
    const auto& tri = triangles_[static_cast<size_t>(t)];
    return (vertices_[static_cast<size_t>(tri[0])] + vertices_[static_cast<size_t>(tri[1])] +
            vertices_[static_cast<size_t>(tri[2])]) / 3.0;
  };
  for (int i = first; i < first + count; ++i) {
    const int t = order_[static_cast<size_t>(i)];
    for (int v : triangles_[static_cast<size_t>(t)]) {
      node.lo = node.lo.cwiseMin(vertices_[static_cast<size_t>(v)]);
      node.hi = node.hi.cwiseMax(vertices_[static_cast<size_t>(v)]);
    }
    const Vec3 c = centroid(t);
    clo = clo.cwiseMin(c);
    chi = chi.cwiseMax(c);
  }
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (count <= 4) {
    nodes_[static_cast<size_t>(index)].first = first;
    nodes_[static_cast<size_t>(index)].count = count;
    return index;
  }
  int axis = 0;
  (chi - clo).maxCoeff(&axis);
  const int mid = first + count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](int a, int b) {
                     const double ca = centroid(a)[axis], cb = centroid(b)[axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const int left = build(first, mid - first);
  const int right = build(mid, first + count - mid);
  nodes_[static_cast<size_t>(index)].left = left;
  nodes_[static_cast<size_t>(index)].right = right;
  return index;
}

namespace {

double box_distance2(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
  return d.squaredNorm();
}

bool segment_hits_box(const Vec3& p0, const Vec3& p1, const Vec3& lo, const Vec3& hi) {
  double t0 = 0.0, t1 = 1.0;
  const Vec3 d = p1 - p0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (p0[a] < lo[a] || p0[a] > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - p0[a]) / d[a];
    double tb = (hi[a] - p0[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

ClosestHit TriangleBvh::closest(const Vec3& p) const {
  ClosestHit best;
  best.distance = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) return best;
  double best2 = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<size_t>(stack.back())];
    stack.pop_back();
    if (box_distance2(p, n.lo, n.hi) > best2) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const int t = order_[static_cast<size_t>(i)];
        const auto& tri = triangles_[static_cast<size_t>(t)];
        ClosestHit h = closest_point_on_triangle(p, vertices_[static_cast<size_t>(tri[0])],
                                                 vertices_[static_cast<size_t>(tri[1])],
                                                 vertices_[static_cast<size_t>(tri[2])]);
        const double d2 = (h.point - p).squaredNorm();
        if (d2 < best2 || (d2 == best2 && t < best.triangle)) {
          best2 = d2;
          h.triangle = t;
          best = h;
        }
      }
      continue;
    }
    const Node& l = nodes_[static_cast<size_t>(n.left)];
    const Node& r = nodes_[static_cast<size_t>(n.right)];
    // Visit the nearer child first.
    if (box_distance2(p, l.lo, l.hi) <= box_distance2(p, r.lo, r.hi)) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return best;
}

bool TriangleBvh::segment_blocked(const Vec3& p0, const Vec3& p1, const std::function<bool(int)>& skip) const {
  if (nodes_.empty()) return false;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<size_t>(stack.back())];
    stack.pop_back();
    if (!segment_hits_box(p0, p1, n.lo, n.hi)) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const int t = order_[static_cast<size_t>(i)];
        if (skip && skip(t)) continue;
        const auto& tri = triangles_[static_cast<size_t>(t)];
        if (segment_hits_triangle(p0, p1, vertices_[static_cast<size_t>(tri[0])],
                                  vertices_[static_cast<size_t>(tri[1])],
                                  vertices_[static_cast<size_t>(tri[2])])) {
          return true;
        }
      }
      continue;
    }
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  return false;
}

}  // namespace mocap
