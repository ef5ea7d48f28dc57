#pragma once

#include "core/bodymodel.hpp"
#include "core/detection.hpp"
#include "core/geometry.hpp"
#include "core/mesh.hpp"
#include "core/suit_layout.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mocap {

struct JointSpec {
  std::string name;
  int parent = -1;
  Vec3 position = Vec3::Zero();
  Vec3 amplitude_deg = Vec3::Zero();  // sinusoid amplitude per local axis
};

/// One suit panel wrapped around a limb segment, rigidly driven by `joint`
/// and blended with the joint's parent near its start.
struct TubeSpec {
  int joint = 0;
  Vec3 start = Vec3::Zero();
  Vec3 end = Vec3::Zero();
  double radius_start = 50.0;
  double radius_end = 50.0;
  int strips = 4;
  int codes_per_strip = 4;
  bool breathing = false;
};

struct AnimationSpec {
  double period_frames = 120.0;  // shortest joint period; others up to 2x
  double root_path_mm = 150.0;   // planar wander of the root
};

struct BreathingSpec {
  double amplitude_mm = 0.0;
  double period_frames = 60.0;
};

struct RigSpec {
  int cameras = 16;
  double radius_mm = 3500.0;
  double height_mm = 1300.0;
  double focal_px = 2400.0;
  int width = 4000;
  int height = 2160;
  Distortion distortion{-0.02, 0.004, 0.0002, -0.0001, 0.0};
  Vec3 target = Vec3(0.0, 0.0, 1000.0);
};

struct SceneSpec {
  std::uint64_t seed = 1;
  std::vector<JointSpec> joints;
  std::vector<TubeSpec> tubes;
  AnimationSpec animation;
  BreathingSpec breathing;
  RigSpec rig;
  OracleNoiseConfig noise;
  double blend_span = 0.3;  // fraction of a tube blended with the parent joint

  /// 16-joint humanoid, about 1500 corners / 600 codes.
  static SceneSpec default_humanoid();
  void validate() const;
};

SceneSpec parse_scene_spec(const std::string& json_text);
std::string serialize_scene_spec(const SceneSpec& spec);

struct SyntheticScene {
  SceneSpec spec;
  SuitLayout layout;
  SkinnedBodyModel model;  // ground truth; poses left empty
  CameraRig rig;
  std::vector<Triangle> triangles;   // rest-mesh triangulation
  std::vector<Vec3> breathing_axis;  // per vertex, unit rest normal scaled by the profile (0 when off)
  std::vector<int> vertex_tube;      // per vertex
  std::vector<double> vertex_u;      // axial parameter in [0,1]
  std::vector<double> joint_periods;   // per joint
  std::vector<Vec3> joint_phases;      // per joint
};

SyntheticScene build_scene(const SceneSpec& spec);

/// Cameras evenly spaced on a horizontal circle, all aimed at `target`.
CameraRig build_default_rig(const RigSpec& spec);

Pose animation_pose(const SyntheticScene& scene, int frame);
std::vector<Vec3> breathing_displacement(const SyntheticScene& scene, int frame);

/// Ground-truth positions of every layout vertex at frame k.
std::vector<Vec3> animate_and_sample(const SyntheticScene& scene, int frame);

struct VisibilityRecord {
  std::vector<std::vector<int>> corners;  // per camera index
  std::vector<std::vector<int>> quads;    // per camera index, layout quad indices
};

VisibilityRecord compute_visibility(const SyntheticScene& scene, const std::vector<Vec3>& positions);

/// Positions plus visibility, ready for oracle_detect.
FrameTruth simulate_frame(const SyntheticScene& scene, int frame);

/// Denser tessellation of the same tubes, with the same joint tree and
/// weighting scheme, for template registration.
TemplateModel make_template(const SyntheticScene& scene, int refine = 2);

/// `count` corners spread over the body, each pinned to its closest point on
/// the template rest surface.
std::vector<IcpSeed> make_seeds(const SyntheticScene& scene, const TemplateModel& templ, int count);

}  // namespace mocap
