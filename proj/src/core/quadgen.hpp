#pragma once

#include "core/geometry.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mocap {

struct Corner2D {
  Vec2 position = Vec2::Zero();
  double confidence = 1.0;
  std::optional<int> provisional_id;
};

/// Standardized square: 64x64 inner target inside a 104x104 crop.
inline constexpr double kStdMargin = 20.0;
inline constexpr double kStdInner = 64.0;
inline constexpr double kStdSize = 104.0;

/// Target corners TL, TR, BR, BL of the standardized square.
std::array<Vec2, 4> standardized_square();

struct QuadFilterConfig {
  double bbox_radius = 60.0;
  double min_area = 50.0;
  double max_area = 10000.0;
  double min_edge = 5.0;
  double max_edge = 150.0;
  double min_angle = 20.0;  // degrees
  double max_angle = 160.0;

  void validate() const;
};

struct CandidateQuad {
  std::array<int, 4> corner_indices{};
  int orientation = 0;
  Homography homography;
};

/// Optional pixel-statistics veto (mean intensity / deviation checks
/// live on the detector side). Returns false to reject.
using QuadImageFilter = std::function<bool(const std::array<Vec2, 4>&)>;

/// Standard shoelace area; positive for a quad that is clockwise on screen
/// (image y axis pointing down).
double shoelace_area(const std::array<Vec2, 4>& q);

bool is_convex(const std::array<Vec2, 4>& q);

/// Interior angles in degrees, one per vertex.
std::array<double, 4> interior_angles(const std::array<Vec2, 4>& q);

/// Convex, clockwise and inside every bound of cfg.
bool geometric_filter(const std::array<Vec2, 4>& q, const QuadFilterConfig& cfg);

/// All convex clockwise 4-sets of corners where every corner lies in the
/// bounding box around the seed corner, passing the geometric filter.
/// Output sorted by the sorted index tuple; orientation 0 starts at the
/// corner with the smallest index.
std::vector<CandidateQuad> enumerate_candidates(const std::vector<Corner2D>& corners,
                                                const QuadFilterConfig& cfg,
                                                const QuadImageFilter& image_filter = {});

/// The four cyclic rotations; rotation r maps corner_indices[r] to the
/// standardized square's top-left inner corner (20, 20).
std::array<CandidateQuad, 4> orientations(const CandidateQuad& q, const std::vector<Corner2D>& corners);

/// Ground-truth quad geometry statistics -> filter bounds with +-50% slack.
QuadFilterConfig derive_filter_config(const std::vector<std::array<Vec2, 4>>& truth_quads);

/// One JSON object per candidate.
std::string dump_candidates_jsonl(const std::vector<CandidateQuad>& quads);

}  // namespace mocap
