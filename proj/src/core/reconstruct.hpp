#pragma once

#include "core/detection.hpp"
#include "core/geometry.hpp"
#include "core/suit_layout.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace mocap {

struct LabeledObservation {
  int corner_id = -1;
  int camera_id = -1;
  Vec2 pixel = Vec2::Zero();
  int source = 1;  // number of codes that agreed on the label
  int detection_index = -1;  // corner index inside its DetectionFrame
};

struct LabelConflict {
  int camera_id = -1;
  int detection_index = -1;   // -1 when the conflict is a label claimed twice
  std::vector<int> labels;    // competing corner ids
};

struct Consolidation {
  std::vector<LabeledObservation> observations;  // sorted by corner id
  std::vector<LabelConflict> conflicts;
};

/// Labels detected corners through l(code, i_q). A corner labeled
/// differently by two readings, or a label claimed by two detected
/// corners, is dropped from this camera and recorded as a conflict.
Consolidation consolidate_labels(const DetectionFrame& frame, const SuitLayout& layout);

struct TriangulationResult {
  Vec3 point = Vec3::Zero();
  std::vector<double> residuals;  // per observation, pixels
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;  // sum of squared pixel residuals
};

struct TriangulationOptions {
  double min_ray_angle_deg = 0.1;
  double gradient_tol = 1e-10;
  int max_iterations = 100;
};

/// Linear-LS (inhomogeneous DLT on undistorted normalized coordinates).
/// Throws ParallelRays.
Vec3 triangulate_linear(std::span<const LabeledObservation> obs, const CameraRig& rig,
                        const TriangulationOptions& opts = {});

/// Linear-LS initialization refined by Levenberg-Marquardt on the summed
/// squared reprojection error. A result with converged == false is the best
/// iterate after max_iterations (NoConvergence).
TriangulationResult triangulate(std::span<const LabeledObservation> obs, const CameraRig& rig,
                                const TriangulationOptions& opts = {});

enum class DiscardReason { MislabelSuspect, HighResidual, TooFewCameras };
const char* to_string(DiscardReason r);
DiscardReason discard_reason_from_string(const std::string& s);

struct ReconstructedPoint {
  Vec3 position = Vec3::Zero();
  std::vector<int> cameras;        // ascending camera id
  std::vector<double> residuals;   // aligned with cameras
  double mean_reproj_err = 0.0;
};

struct RejectedObservation {
  int corner_id = -1;
  int camera_id = -1;
  DiscardReason reason = DiscardReason::MislabelSuspect;
};

struct LabeledPointCloud {
  int frame_index = 0;
  std::map<int, ReconstructedPoint> points;
  std::map<int, DiscardReason> discarded;
  std::vector<RejectedObservation> rejected;  // camera-level removals
  std::vector<std::string> errors;
  int label_conflicts = 0;
};

struct FilterConfig {
  double max_mean_error = 1.5;  // px
  double iqr_factor = 1.5;
  // Errors at or below this never count as outliers. The fence scales with
  // the noise, so on its own it trims a fixed share (~2.6%) of correct
  // cameras under any Gaussian noise, and rounding noise on exact data.
  // Mislabels land tens of pixels off, far above this floor.
  double min_outlier_error = 1.5;  // px
  TriangulationOptions triangulation;
};

/// Per-corner trace of the outlier filter.
struct CornerFilterResult {
  bool kept = false;
  DiscardReason reason = DiscardReason::TooFewCameras;
  ReconstructedPoint point;
  std::vector<int> outlier_cameras;
  std::pair<int, int> best_pair{-1, -1};
  std::vector<double> pair_errors;  // per input camera, at the best-pair point
};

/// Type-7 (linear interpolation) quantile of unsorted values.
double quantile_type7(std::vector<double> values, double p);

/// Best camera pair -> 1.5xIQR outlier cameras (3+ cameras only) ->
/// re-triangulation -> absolute mean-error test.
CornerFilterResult filter_corner(std::span<const LabeledObservation> obs, const CameraRig& rig,
                                 const FilterConfig& cfg = {});

/// Runs filter_corner over every corner of one frame.
LabeledPointCloud filter_mislabels(int frame_index,
                                   const std::map<int, std::vector<LabeledObservation>>& candidates,
                                   const CameraRig& rig, const FilterConfig& cfg = {});

struct ReconstructOptions {
  FilterConfig filter;
  double cluster_radius = 3.0;
  int workers = 1;
};

/// One frame from all of its camera detections.
LabeledPointCloud reconstruct_frame(int frame_index, std::span<const DetectionFrame> cameras,
                                    const CameraRig& rig, const SuitLayout& layout,
                                    const ReconstructOptions& opts = {});

/// Frames are independent; the result is ordered by frame index.
std::vector<LabeledPointCloud> reconstruct_sequence(const std::vector<DetectionFrame>& detections,
                                                    const CameraRig& rig, const SuitLayout& layout,
                                                    const ReconstructOptions& opts = {});

/// Point-cloud file: one JSON object per frame,
/// {frame, points:[{id, p:[3], cams:[...], err, res:[...]}], discarded:[{id, reason}], rejected:[{id, cam}]}.
std::string serialize_cloud(const LabeledPointCloud& cloud, bool truth = false);
LabeledPointCloud parse_cloud(const std::string& line);
std::vector<LabeledPointCloud> load_clouds(const std::string& path);

}  // namespace mocap
