#pragma once

#include "core/bodymodel.hpp"
#include "core/suit_layout.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <string>
#include <vector>

namespace mocap {

/// Rest-pose displacements, (frames * vertices) x 3, frame-major.
struct DisplacementField {
  int frames = 0;
  int vertices = 0;
  Eigen::MatrixXd X;

  Vec3 at(int frame, int vertex) const {
    return X.row(static_cast<Eigen::Index>(frame) * vertices + vertex).transpose();
  }
};

struct DisplacementConstraint {
  int frame = 0;
  int vertex = 0;
  Vec3 target = Vec3::Zero();
};

struct InpaintConstraints {
  int frames = 0;
  int vertices = 0;
  std::vector<DisplacementConstraint> entries;  // sorted by (frame, vertex), unique
  std::vector<std::string> skipped;             // observations dropped while unposing
};

/// d = unskin(p) - rest for every observation. Hole-closing vertices of
/// `layout` (when given) are never constrained.
InpaintConstraints unpose_observations(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames,
                                       const SuitLayout* layout = nullptr);

/// Sorts and validates hand-built constraints.
InpaintConstraints make_constraints(int frames, int vertices, std::vector<DisplacementConstraint> entries);

/// Cotangent Laplacian (x'Lx >= 0, L*1 = 0). Cotangents are clamped to
/// +-1e4; `clamped` receives how many were.
Eigen::SparseMatrix<double> build_spatial_laplacian(const std::vector<Vec3>& rest,
                                                    const std::vector<std::vector<int>>& faces,
                                                    int* clamped = nullptr);

/// Second differences over interior frames, D'D (frames x frames).
Eigen::SparseMatrix<double> temporal_operator(int frames);

struct WindowPlan {
  int window_length = 150;
  int overlap = 50;

  void validate() const;
  int stride() const { return window_length - overlap; }
  /// [first, end) frame ranges covering [0, frames).
  std::vector<std::pair<int, int>> windows(int frames) const;
  /// Weight of the later window at overlap position t in [0, n).
  static double blend(int t, int n);
};

struct InpaintOptions {
  double temporal_weight = 100.0;
  int workers = 1;
};

struct WindowReport {
  int first_frame = 0;
  int frames = 0;
  int free_variables = 0;
  int zeroed_components = 0;     // no constraint anywhere in the window
  int regularized_components = 0;  // constrained in a single frame only
};

struct InpaintReport {
  std::vector<WindowReport> windows;
  bool blended = false;
  bool singular = false;  // some component was zeroed
};

/// Minimizes tr(X'(I(x)L + w_T T(x)I)X) over frames [first, first + count)
/// subject to the constrained rows. Throws SingularKkt if the reduced
/// system cannot be factored.
DisplacementField solve_window(const Eigen::SparseMatrix<double>& L, const std::vector<std::vector<int>>& faces,
                               const InpaintConstraints& constraints, int first_frame, int frame_count,
                               const InpaintOptions& opts, WindowReport* report = nullptr);

/// Overlapping windows blended with smoothstep weights; a sequence that fits
/// in one window is a single solve_window call.
DisplacementField solve_sequence(const Eigen::SparseMatrix<double>& L, const std::vector<std::vector<int>>& faces,
                                 const InpaintConstraints& constraints, const WindowPlan& plan,
                                 const InpaintOptions& opts, InpaintReport* report = nullptr);

/// tr(X'QX) of a full field.
double inpaint_objective(const Eigen::SparseMatrix<double>& L, const DisplacementField& field, double temporal_weight);

/// Forward skinning of rest + displacement for frame k.
std::vector<Vec3> complete_mesh(const SkinnedBodyModel& model, const DisplacementField& field, int frame);

/// Binary animation: one JSON header line then frames*vertices*3 float32 (little endian).
void write_animation(const std::string& path, const std::vector<std::vector<Vec3>>& frames);

}  // namespace mocap
