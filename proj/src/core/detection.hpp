#pragma once

#include "core/geometry.hpp"
#include "core/quadgen.hpp"
#include "core/suit_layout.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mocap {

/// A recognized code on an oriented quad: idx[0] is the top-left corner of
/// the upright code, proceeding clockwise.
struct CodeReading {
  std::array<int, 4> idx{};
  std::string code;
  double confidence = 1.0;
};

struct DetectionFrame {
  int frame_index = 0;
  int camera_id = 0;
  std::vector<Corner2D> corners;
  std::vector<CodeReading> readings;

  /// Throws InvalidArgument on out-of-range reading indices.
  void validate(const CodeAlphabet& alphabet = {}) const;
};

/// Ground truth of one simulated frame, as consumed by the oracle detector.
struct FrameTruth {
  int frame_index = 0;
  std::vector<Vec3> positions;                   // per layout vertex, world mm
  std::vector<std::vector<int>> visible_corners;  // per rig camera index
  std::vector<std::vector<int>> visible_quads;    // per rig camera index, layout quad indices
};

struct OracleNoiseConfig {
  double pixel_sigma = 0.0;
  double dropout_prob = 0.0;
  double mislabel_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct OracleDetection {
  DetectionFrame frame;
  std::vector<int> truth_ids;            // per emitted corner
  std::vector<bool> reading_mislabeled;  // per emitted reading
};

/// Keeps the higher-confidence corner of any pair closer than `radius`
/// (lower index wins ties). Survivors keep their input order.
std::vector<Corner2D> cluster_duplicates(const std::vector<Corner2D>& corners, double radius = 3.0);

/// Survivor index for every input corner (itself when kept, else the
/// corner that suppressed it).
std::vector<int> cluster_assignment(const std::vector<Corner2D>& corners, double radius = 3.0);

/// Applies cluster_duplicates to a frame and remaps its readings.
DetectionFrame cluster_frame(const DetectionFrame& frame, double radius = 3.0);

/// Synthetic detector over simulator ground truth. `camera_index` selects
/// the visibility lists in `truth`. Deterministic in (seed, frame, camera).
OracleDetection oracle_detect(const FrameTruth& truth, const Camera& camera, int camera_index,
                              const SuitLayout& layout, const OracleNoiseConfig& noise);

/// Detection file: one JSON object per line,
/// {frame, cam, corners:[{x,y,conf}], readings:[{idx:[4], code, conf}]}.
std::string serialize_detection(const DetectionFrame& frame);
DetectionFrame parse_detection(const std::string& line);
std::vector<DetectionFrame> load_detections(const std::string& path);

/// splitmix64 finalizer, used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mocap
