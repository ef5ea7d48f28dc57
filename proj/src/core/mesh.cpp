#include "core/mesh.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cstdio>

namespace mocap {

std::vector<Triangle> triangulate_faces(const std::vector<std::vector<int>>& faces,
                                        const std::vector<Vec3>& positions) {
  std::vector<Triangle> tris;
  tris.reserve(faces.size() * 2);
  for (const auto& f : faces) {
    for (int v : f) {
      if (v < 0 || static_cast<size_t>(v) >= positions.size()) {
        throw Error(ErrorCode::InvalidArgument, "face references vertex " + std::to_string(v));
      }
    }
    if (f.size() < 3) continue;
    if (f.size() == 4) {
      const auto P = [&](int k) { return positions[static_cast<size_t>(f[static_cast<size_t>(k)])]; };
      const double d02 = (P(0) - P(2)).squaredNorm();
      const double d13 = (P(1) - P(3)).squaredNorm();
      if (d13 < d02) {
        tris.push_back({f[1], f[2], f[3]});
        tris.push_back({f[1], f[3], f[0]});
      } else {
        tris.push_back({f[0], f[1], f[2]});
        tris.push_back({f[0], f[2], f[3]});
      }
      continue;
    }
    for (size_t k = 1; k + 1 < f.size(); ++k) tris.push_back({f[0], f[k], f[k + 1]});
  }
  return tris;
}

std::vector<std::pair<int, int>> face_edges(const std::vector<std::vector<int>>& faces) {
  std::vector<std::pair<int, int>> edges;
  for (const auto& f : faces) {
    for (size_t k = 0; k < f.size(); ++k) {
      const int a = f[k], b = f[(k + 1) % f.size()];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

std::vector<Vec3> vertex_normals(const std::vector<Vec3>& positions, const std::vector<Triangle>& triangles) {
  std::vector<Vec3> n(positions.size(), Vec3::Zero());
  for (const auto& t : triangles) {
    const Vec3& a = positions[static_cast<size_t>(t[0])];
    const Vec3 fn = (positions[static_cast<size_t>(t[1])] - a).cross(positions[static_cast<size_t>(t[2])] - a);
    for (int v : t) n[static_cast<size_t>(v)] += fn;
  }
  for (auto& v : n) {
    const double len = v.norm();
    if (len > 0.0) v /= len;
  }
  return n;
}

double signed_volume(const std::vector<Vec3>& positions, const std::vector<Triangle>& triangles) {
  double vol = 0.0;
  for (const auto& t : triangles) {
    vol += positions[static_cast<size_t>(t[0])].dot(
        positions[static_cast<size_t>(t[1])].cross(positions[static_cast<size_t>(t[2])]));
  }
  return vol / 6.0;
}

std::string to_obj(const std::vector<Vec3>& positions, const std::vector<std::vector<int>>& faces) {
  std::string out;
  out.reserve(positions.size() * 40 + faces.size() * 24);
  char buf[128];
  for (const auto& p : positions) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out += buf;
  }
  for (const auto& f : faces) {
    out += 'f';
    for (int v : f) out += ' ' + std::to_string(v + 1);
    out += '\n';
  }
  return out;
}

}  // namespace mocap
