#pragma once

#include "core/geometry.hpp"

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace mocap {

using Triangle = std::array<int, 3>;

/// Splits polygons into triangles. Quads are cut along their shorter
/// diagonal in `positions` (v0-v2 on a tie); larger polygons are fanned
/// from their first vertex. Winding is preserved.
std::vector<Triangle> triangulate_faces(const std::vector<std::vector<int>>& faces,
                                        const std::vector<Vec3>& positions);

/// Unique undirected polygon edges (a < b), sorted.
std::vector<std::pair<int, int>> face_edges(const std::vector<std::vector<int>>& faces);

/// Area-weighted vertex normals (zero for isolated vertices).
std::vector<Vec3> vertex_normals(const std::vector<Vec3>& positions, const std::vector<Triangle>& triangles);

/// Signed volume enclosed by a triangle soup (positive for outward winding
/// of a closed surface).
double signed_volume(const std::vector<Vec3>& positions, const std::vector<Triangle>& triangles);

/// Wavefront OBJ with the polygons as given (1-based indices).
std::string to_obj(const std::vector<Vec3>& positions, const std::vector<std::vector<int>>& faces);

}  // namespace mocap
