#pragma once

#include "core/geometry.hpp"
#include "core/mesh.hpp"
#include "core/reconstruct.hpp"
#include "core/suit_layout.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace mocap {

/// x -> A x + b
struct RigidTransform {
  Mat3 A = Mat3::Identity();
  Vec3 b = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return A * x + b; }
};

/// Per-joint local rotations plus a free root translation.
struct Pose {
  std::vector<Quat> rotations;
  Vec3 translation = Vec3::Zero();

  static Pose identity(int n_joints);
};

/// Right-perturbs every rotation by exp(delta_j) and renormalizes; the last
/// three entries of `delta` (when present) add to the translation.
void apply_pose_increment(Pose& pose, const Eigen::VectorXd& delta);

struct SkinnedBodyModel {
  std::vector<Vec3> rest;     // N rest-pose vertices, mm
  std::vector<Vec3> joints;   // M joint centers, mm
  std::vector<int> parents;   // root = -1
  Eigen::MatrixXd weights;    // N x M, rows on the simplex
  std::vector<Pose> poses;    // per frame

  int n_vertices() const { return static_cast<int>(rest.size()); }
  int n_joints() const { return static_cast<int>(joints.size()); }

  /// Parents before children. Throws InvalidArgument on a cycle.
  std::vector<int> joint_order() const;

  /// Throws InvalidArgument when a shape or weight invariant is broken.
  void validate(double weight_tol = 1e-9) const;
};

/// Global joint transforms G_j for one pose.
std::vector<RigidTransform> joint_transforms(const SkinnedBodyModel& model, const Pose& pose);

Vec3 blend_point(const std::vector<RigidTransform>& G, const Eigen::Ref<const Eigen::RowVectorXd>& w, const Vec3& x);

/// Blended affine map M_i = sum_j w_ij G_j.
RigidTransform blended_transform(const std::vector<RigidTransform>& G, const Eigen::Ref<const Eigen::RowVectorXd>& w);

/// Deformed vertex of frame k; `displacement` is added in rest space first.
Vec3 skin(const SkinnedBodyModel& model, int frame, int vertex, const Vec3& displacement = Vec3::Zero());

/// Whole mesh in one pose, optional per-vertex rest displacements.
std::vector<Vec3> skin_all(const SkinnedBodyModel& model, const Pose& pose,
                           const std::vector<Vec3>* displacements = nullptr);

/// Rest-space point mapped to p by vertex i's blended transform.
/// Throws SingularBlend when |det| <= 1e-9.
Vec3 unskin(const SkinnedBodyModel& model, int frame, int vertex, const Vec3& point);
Vec3 unskin(const std::vector<RigidTransform>& G, const Eigen::Ref<const Eigen::RowVectorXd>& w, const Vec3& point);

/// One observed vertex position.
struct Observation {
  int vertex = -1;
  Vec3 position = Vec3::Zero();
};
using FrameObservations = std::vector<Observation>;  // ascending vertex

FrameObservations observations_from_cloud(const LabeledPointCloud& cloud);

/// Fitting term: sum over frames and observed vertices of squared distance.
double fitting_sse(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames);
/// sqrt(fitting_sse / number of observations); 0 when nothing is observed.
double fitting_rms(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames);

/// Stacked residuals (posed - observed) and their derivative with respect to
/// [delta_0 .. delta_{M-1}, translation] at delta = 0.
void pose_residuals(const SkinnedBodyModel& model, const Pose& pose, const FrameObservations& obs,
                    Eigen::VectorXd& residuals, Eigen::MatrixXd* jacobian);

/// Levenberg-Marquardt over one frame's pose with shape fixed. Only
/// cost-decreasing steps are taken. Returns the final squared error.
double fit_pose(const SkinnedBodyModel& model, Pose& pose, const FrameObservations& obs, int max_iterations);

/// Pose fit for every frame of `frames` (model.poses resized if needed).
void fit_poses(SkinnedBodyModel& model, const std::vector<FrameObservations>& frames, int max_iterations,
               int workers = 1);

/// g_ij: shortest-path distance along mesh edges from vertex i to the
/// nearest vertex with initial weight for joint j above 1e-6. Unreachable
/// entries are +inf.
Eigen::MatrixXd geodesic_weights(const std::vector<std::vector<int>>& faces, const std::vector<Vec3>& rest,
                                 const Eigen::MatrixXd& initial_weights);

struct RefineConfig {
  double lambda_g = 1000.0;
  double lambda_j = 1.0;
  int outer_iterations = 100;
  double convergence_tol = 1e-5;
  int pose_iterations = 3;  // LM steps per frame per outer iteration
  int max_influences = 4;   // 0 disables pruning
  int workers = 1;

  void validate() const;
};

struct RefineReport {
  std::vector<double> loss_trace;  // L_A after each outer iteration, [0] = start
  std::vector<double> rms_trace;   // fitting RMS alongside
  int iterations = 0;
  bool converged = false;
  std::vector<int> unobserved_vertices;  // kept their initial rest position and weights
  double final_loss = 0.0;               // after pruning
  double final_rms = 0.0;
};

/// L_A = fitting_sse + lambda_g sum g_ij w_ij^2 + lambda_j ||J - J0||^2.
double refine_loss(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames,
                   const Eigen::MatrixXd& g, const std::vector<Vec3>& joints0, const RefineConfig& cfg);

/// Alternating minimization: poses, weights, joints, rest vertices.
/// model.poses is resized to frames.size(); existing entries warm-start.
RefineReport refine(SkinnedBodyModel& model, const std::vector<FrameObservations>& frames, const Eigen::MatrixXd& g,
                    const RefineConfig& cfg = {});

/// Keeps the `k` largest entries per row and renormalizes.
void prune_weights(Eigen::MatrixXd& weights, int k);

/// Per-vertex simplex-constrained QP: min 0.5 w'Hw + f'w, w >= 0, sum w = 1,
/// w_j = 0 where `fixed_zero`. Primal active set from a feasible start.
Eigen::VectorXd simplex_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& f, const Eigen::VectorXd& start,
                           const std::vector<bool>& fixed_zero);

struct TemplateModel {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::vector<Vec3> joints;
  std::vector<int> parents;
  Eigen::MatrixXd weights;  // vertices x joints

  void validate() const;
};

/// Corner pinned to a template surface point.
struct IcpSeed {
  int corner = -1;
  int triangle = -1;
  Vec3 barycentric = Vec3::Zero();
};

struct IcpOptions {
  int max_iterations = 50;
  int fit_iterations = 10;     // LM steps per ICP iteration
  int divergence_patience = 5;
  int min_seeds = 10;
};

struct IcpResult {
  SkinnedBodyModel model;           // rest, joints, parents, weights; poses per input cloud
  std::vector<bool> registered;     // per layout vertex
  std::vector<int> triangle;        // per layout vertex, -1 when unregistered
  std::vector<Vec3> barycentric;
  Eigen::VectorXd scales;           // per-joint shape proxy
  std::vector<double> mean_distance_trace;
  double mean_residual = 0.0;       // mean corner-to-surface distance at the end
  int iterations = 0;
};

/// Non-rigid ICP of reconstructed clouds against a template. The first
/// cloud drives registration; later clouds register corners the earlier
/// ones missed. Hole-closing vertices get the mean of their neighbors.
/// Throws InsufficientSeeds, DivergedIcp.
IcpResult register_icp(const std::vector<FrameObservations>& clouds, const TemplateModel& templ,
                       const std::vector<IcpSeed>& seeds, const SuitLayout& layout, const IcpOptions& opts = {});

/// Model file: {rest, joints, parents, weights:[[i,j,w]...], poses:[[M*4 quaternion (w,x,y,z) + 3]]}.
std::string serialize_model(const SkinnedBodyModel& model);
SkinnedBodyModel parse_model(const std::string& json_text);
SkinnedBodyModel load_model(const std::string& path);

}  // namespace mocap
