#include "core/bodymodel.hpp"

#include "core/bvh.hpp"
#include "core/error.hpp"
#include "core/io_util.hpp"
#include "core/parallel.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace mocap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Quat exp_quat(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) return Quat(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z()).normalized();
  const Vec3 axis = w / theta;
  return Quat(Eigen::AngleAxisd(theta, axis));
}

// Skinned point plus the nonzero 3x3 blocks of d(point)/d(delta_a).
struct SkinScratch {
  std::vector<Vec3> S;
  std::vector<double> W;
  std::vector<int> active;
  std::vector<Mat3> blocks;
  Vec3 point = Vec3::Zero();
  double translation_gain = 0.0;  // d(point)/d(t) = gain * I
};

struct Kinematics {
  std::vector<int> order;
  std::vector<int> parents;
  std::vector<RigidTransform> G;
  std::vector<Vec3> centers;  // posed joint centers c_a = G_a(J_a)
};

Kinematics kinematics(const SkinnedBodyModel& model, const Pose& pose) {
  Kinematics k;
  k.order = model.joint_order();
  k.parents = model.parents;
  k.G = joint_transforms(model, pose);
  k.centers.resize(model.joints.size());
  for (size_t a = 0; a < model.joints.size(); ++a) k.centers[a] = k.G[a].apply(model.joints[a]);
  return k;
}

void skin_with_jacobian(const Kinematics& kin, const Eigen::Ref<const Eigen::RowVectorXd>& w, const Vec3& x,
                        bool want_jacobian, SkinScratch& s) {
  const size_t M = kin.G.size();
  s.S.assign(M, Vec3::Zero());
  s.W.assign(M, 0.0);
  for (size_t j = 0; j < M; ++j) {
    const double wj = w(static_cast<Eigen::Index>(j));
    if (wj == 0.0) continue;
    s.S[j] = wj * kin.G[j].apply(x);
    s.W[j] = wj;
  }
  s.point.setZero();
  s.translation_gain = 0.0;
  for (size_t j = 0; j < M; ++j) s.point += s.S[j];
  if (!want_jacobian) return;
  for (auto it = kin.order.rbegin(); it != kin.order.rend(); ++it) {
    const int j = *it;
    const int p = kin.parents[static_cast<size_t>(j)];
    if (p >= 0) {
      s.S[static_cast<size_t>(p)] += s.S[static_cast<size_t>(j)];
      s.W[static_cast<size_t>(p)] += s.W[static_cast<size_t>(j)];
    } else {
      s.translation_gain += s.W[static_cast<size_t>(j)];
    }
  }
  s.active.clear();
  s.blocks.clear();
  for (size_t a = 0; a < M; ++a) {
    if (s.W[a] == 0.0) continue;
    s.active.push_back(static_cast<int>(a));
    s.blocks.push_back(-skew(s.S[a] - s.W[a] * kin.centers[a]) * kin.G[a].A);
  }
}

// Normal equations of one frame's pose problem; columns [delta_0..delta_{M-1}, t].
double pose_normal_equations(const SkinnedBodyModel& model, const Kinematics& kin, const FrameObservations& obs,
                             Eigen::MatrixXd* H, Eigen::VectorXd* g) {
  const int M = model.n_joints();
  const int nt = 3 * M;
  if (H) {
    H->setZero(nt + 3, nt + 3);
    g->setZero(nt + 3);
  }
  SkinScratch s;
  double cost = 0.0;
  for (const auto& o : obs) {
    const auto w = model.weights.row(o.vertex);
    skin_with_jacobian(kin, w, model.rest[static_cast<size_t>(o.vertex)], H != nullptr, s);
    const Vec3 r = s.point - o.position;
    cost += r.squaredNorm();
    if (!H) continue;
    const size_t na = s.active.size();
    for (size_t u = 0; u < na; ++u) {
      const int a = s.active[u];
      const Mat3& Ja = s.blocks[u];
      g->segment<3>(3 * a) += Ja.transpose() * r;
      for (size_t v = u; v < na; ++v) {
        const int b = s.active[v];
        const Mat3 blk = Ja.transpose() * s.blocks[v];
        H->block<3, 3>(3 * a, 3 * b) += blk;
        if (b != a) H->block<3, 3>(3 * b, 3 * a) += blk.transpose();
      }
      const Mat3 bt = s.translation_gain * Ja.transpose();
      H->block<3, 3>(3 * a, nt) += bt;
      H->block<3, 3>(nt, 3 * a) += bt.transpose();
    }
    g->segment<3>(nt) += s.translation_gain * r;
    H->block<3, 3>(nt, nt) += s.translation_gain * s.translation_gain * Mat3::Identity();
  }
  return cost;
}

}  // namespace

Pose Pose::identity(int n_joints) {
  Pose p;
  p.rotations.assign(static_cast<size_t>(n_joints), Quat::Identity());
  return p;
}

void apply_pose_increment(Pose& pose, const Eigen::VectorXd& delta) {
  const size_t M = pose.rotations.size();
  for (size_t j = 0; j < M; ++j) {
    const Vec3 d = delta.segment<3>(static_cast<Eigen::Index>(3 * j));
    pose.rotations[j] = (pose.rotations[j] * exp_quat(d)).normalized();
  }
  if (delta.size() >= static_cast<Eigen::Index>(3 * M + 3)) {
    pose.translation += delta.segment<3>(static_cast<Eigen::Index>(3 * M));
  }
}

std::vector<int> SkinnedBodyModel::joint_order() const {
  const int M = n_joints();
  if (static_cast<int>(parents.size()) != M) {
    throw Error(ErrorCode::InvalidArgument, "parents must have one entry per joint");
  }
  std::vector<std::vector<int>> children(static_cast<size_t>(M));
  std::vector<int> order;
  for (int j = 0; j < M; ++j) {
    const int p = parents[static_cast<size_t>(j)];
    if (p < -1 || p >= M || p == j) throw Error(ErrorCode::InvalidArgument, "invalid parent index");
    if (p < 0) {
      order.push_back(j);
    } else {
      children[static_cast<size_t>(p)].push_back(j);
    }
  }
  for (size_t head = 0; head < order.size(); ++head) {
    for (int c : children[static_cast<size_t>(order[head])]) order.push_back(c);
  }
  if (static_cast<int>(order.size()) != M) throw Error(ErrorCode::InvalidArgument, "joint tree has a cycle");
  return order;
}

void SkinnedBodyModel::validate(double weight_tol) const {
  joint_order();
  if (weights.rows() != n_vertices() || weights.cols() != n_joints()) {
    throw Error(ErrorCode::InvalidArgument, "weights must be N x M");
  }
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    if (weights.row(i).minCoeff() < 0.0 || std::abs(weights.row(i).sum() - 1.0) > weight_tol) {
      throw Error(ErrorCode::InvalidArgument, "weight row " + std::to_string(i) + " is not on the simplex");
    }
  }
  for (const auto& p : poses) {
    if (static_cast<int>(p.rotations.size()) != n_joints()) {
      throw Error(ErrorCode::InvalidArgument, "pose joint count mismatch");
    }
    for (const auto& q : p.rotations) {
      if (std::abs(q.norm() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "pose quaternion not unit");
    }
  }
}

std::vector<RigidTransform> joint_transforms(const SkinnedBodyModel& model, const Pose& pose) {
  const auto order = model.joint_order();
  std::vector<RigidTransform> G(model.joints.size());
  for (int j : order) {
    const Mat3 R = pose.rotations[static_cast<size_t>(j)].toRotationMatrix();
    const Vec3& J = model.joints[static_cast<size_t>(j)];
    RigidTransform L{R, J - R * J};
    const int p = model.parents[static_cast<size_t>(j)];
    if (p < 0) {
      L.b += pose.translation;
      G[static_cast<size_t>(j)] = L;
    } else {
      const RigidTransform& P = G[static_cast<size_t>(p)];
      G[static_cast<size_t>(j)] = RigidTransform{P.A * L.A, P.A * L.b + P.b};
    }
  }
  return G;
}

Vec3 blend_point(const std::vector<RigidTransform>& G, const Eigen::Ref<const Eigen::RowVectorXd>& w, const Vec3& x) {
  Vec3 v = Vec3::Zero();
  for (size_t j = 0; j < G.size(); ++j) {
    const double wj = w(static_cast<Eigen::Index>(j));
    if (wj != 0.0) v += wj * G[j].apply(x);
  }
  return v;
}

RigidTransform blended_transform(const std::vector<RigidTransform>& G, const Eigen::Ref<const Eigen::RowVectorXd>& w) {
  RigidTransform m{Mat3::Zero(), Vec3::Zero()};
  for (size_t j = 0; j < G.size(); ++j) {
    const double wj = w(static_cast<Eigen::Index>(j));
    if (wj == 0.0) continue;
    m.A += wj * G[j].A;
    m.b += wj * G[j].b;
  }
  return m;
}

Vec3 skin(const SkinnedBodyModel& model, int frame, int vertex, const Vec3& displacement) {
  const auto G = joint_transforms(model, model.poses.at(static_cast<size_t>(frame)));
  return blend_point(G, model.weights.row(vertex), model.rest.at(static_cast<size_t>(vertex)) + displacement);
}

std::vector<Vec3> skin_all(const SkinnedBodyModel& model, const Pose& pose, const std::vector<Vec3>* displacements) {
  const auto G = joint_transforms(model, pose);
  std::vector<Vec3> out(model.rest.size());
  for (size_t i = 0; i < model.rest.size(); ++i) {
    Vec3 x = model.rest[i];
    if (displacements) x += (*displacements)[i];
    out[i] = blend_point(G, model.weights.row(static_cast<Eigen::Index>(i)), x);
  }
  return out;
}

Vec3 unskin(const std::vector<RigidTransform>& G, const Eigen::Ref<const Eigen::RowVectorXd>& w, const Vec3& point) {
  const RigidTransform m = blended_transform(G, w);
  const double det = m.A.determinant();
  if (!(std::abs(det) > 1e-9)) throw Error(ErrorCode::SingularBlend, "blended skinning transform is singular");
  return m.A.partialPivLu().solve(point - m.b);
}

Vec3 unskin(const SkinnedBodyModel& model, int frame, int vertex, const Vec3& point) {
  const auto G = joint_transforms(model, model.poses.at(static_cast<size_t>(frame)));
  return unskin(G, model.weights.row(vertex), point);
}

FrameObservations observations_from_cloud(const LabeledPointCloud& cloud) {
  FrameObservations out;
  out.reserve(cloud.points.size());
  for (const auto& [id, p] : cloud.points) out.push_back({id, p.position});
  return out;
}

double fitting_sse(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames) {
  double sse = 0.0;
  for (size_t k = 0; k < frames.size(); ++k) {
    const auto G = joint_transforms(model, model.poses.at(k));
    for (const auto& o : frames[k]) {
      sse += (blend_point(G, model.weights.row(o.vertex), model.rest[static_cast<size_t>(o.vertex)]) - o.position)
                 .squaredNorm();
    }
  }
  return sse;
}

double fitting_rms(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames) {
  size_t n = 0;
  for (const auto& f : frames) n += f.size();
  if (n == 0) return 0.0;
  return std::sqrt(fitting_sse(model, frames) / static_cast<double>(n));
}

void pose_residuals(const SkinnedBodyModel& model, const Pose& pose, const FrameObservations& obs,
                    Eigen::VectorXd& residuals, Eigen::MatrixXd* jacobian) {
  const Kinematics kin = kinematics(model, pose);
  const int M = model.n_joints();
  residuals.resize(static_cast<Eigen::Index>(3 * obs.size()));
  if (jacobian) jacobian->setZero(static_cast<Eigen::Index>(3 * obs.size()), 3 * M + 3);
  SkinScratch s;
  for (size_t i = 0; i < obs.size(); ++i) {
    const auto& o = obs[i];
    skin_with_jacobian(kin, model.weights.row(o.vertex), model.rest[static_cast<size_t>(o.vertex)],
                       jacobian != nullptr, s);
    const auto row = static_cast<Eigen::Index>(3 * i);
    residuals.segment<3>(row) = s.point - o.position;
    if (!jacobian) continue;
    for (size_t u = 0; u < s.active.size(); ++u) {
      jacobian->block<3, 3>(row, 3 * s.active[u]) = s.blocks[u];
    }
    jacobian->block<3, 3>(row, 3 * M) = s.translation_gain * Mat3::Identity();
  }
}

double fit_pose(const SkinnedBodyModel& model, Pose& pose, const FrameObservations& obs, int max_iterations) {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double cost = pose_normal_equations(model, kinematics(model, pose), obs, &H, &g);
  double lambda = -1.0;
  for (int it = 0; it < max_iterations; ++it) {
    if (g.norm() <= 1e-12 * (1.0 + cost)) break;
    if (lambda < 0.0) lambda = 1e-4;
    bool accepted = false;
    for (int tries = 0; tries < 12 && !accepted; ++tries) {
      Eigen::MatrixXd Hd = H;
      for (Eigen::Index d = 0; d < Hd.rows(); ++d) Hd(d, d) += lambda * std::max(H(d, d), 1e-6);
      const Eigen::VectorXd step = -Hd.ldlt().solve(g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      Pose trial = pose;
      apply_pose_increment(trial, step);
      const double trial_cost = pose_normal_equations(model, kinematics(model, trial), obs, nullptr, nullptr);
      if (trial_cost < cost) {
        pose = trial;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
    cost = pose_normal_equations(model, kinematics(model, pose), obs, &H, &g);
  }
  return cost;
}

void fit_poses(SkinnedBodyModel& model, const std::vector<FrameObservations>& frames, int max_iterations,
               int workers) {
  if (model.poses.size() < frames.size()) model.poses.resize(frames.size(), Pose::identity(model.n_joints()));
  parallel_for(frames.size(), workers, [&](size_t k) { fit_pose(model, model.poses[k], frames[k], max_iterations); });
}

Eigen::MatrixXd geodesic_weights(const std::vector<std::vector<int>>& faces, const std::vector<Vec3>& rest,
                                 const Eigen::MatrixXd& initial_weights) {
  const auto N = static_cast<Eigen::Index>(rest.size());
  if (initial_weights.rows() != N) throw Error(ErrorCode::InvalidArgument, "weights/vertices mismatch");
  std::vector<std::vector<std::pair<int, double>>> adj(rest.size());
  for (const auto& [a, b] : face_edges(faces)) {
    if (a < 0 || b >= static_cast<int>(rest.size())) throw Error(ErrorCode::InvalidArgument, "edge out of range");
    const double len = (rest[static_cast<size_t>(a)] - rest[static_cast<size_t>(b)]).norm();
    adj[static_cast<size_t>(a)].emplace_back(b, len);
    adj[static_cast<size_t>(b)].emplace_back(a, len);
  }
  Eigen::MatrixXd g(N, initial_weights.cols());
  using Item = std::pair<double, int>;
  for (Eigen::Index j = 0; j < initial_weights.cols(); ++j) {
    std::vector<double> dist(rest.size(), kInf);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (Eigen::Index i = 0; i < N; ++i) {
      if (initial_weights(i, j) > 1e-6) {
        dist[static_cast<size_t>(i)] = 0.0;
        pq.emplace(0.0, static_cast<int>(i));
      }
    }
    while (!pq.empty()) {
      const auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[static_cast<size_t>(u)]) continue;
      for (const auto& [v, len] : adj[static_cast<size_t>(u)]) {
        if (d + len < dist[static_cast<size_t>(v)]) {
          dist[static_cast<size_t>(v)] = d + len;
          pq.emplace(d + len, v);
        }
      }
    }
    for (Eigen::Index i = 0; i < N; ++i) g(i, j) = dist[static_cast<size_t>(i)];
  }
  return g;
}

void RefineConfig::validate() const {
  if (!(lambda_g >= 0.0) || !(lambda_j > 0.0) || outer_iterations < 1 || !(convergence_tol >= 0.0) ||
      pose_iterations < 1 || max_influences < 0) {
    throw Error(ErrorCode::Config, "refine config: lambda_j > 0, lambda_g >= 0, iterations >= 1 required");
  }
}

namespace {

double weight_penalty(const Eigen::MatrixXd& W, const Eigen::MatrixXd& g) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
      const double w = W(i, j);
      if (w == 0.0) continue;
      s += g(i, j) * w * w;
    }
  }
  return s;
}

double joint_prior(const std::vector<Vec3>& J, const std::vector<Vec3>& J0) {
  double s = 0.0;
  for (size_t a = 0; a < J.size(); ++a) s += (J[a] - J0[a]).squaredNorm();
  return s;
}

// Per-vertex observation lists: (frame, position).
std::vector<std::vector<std::pair<int, Vec3>>> by_vertex(int n_vertices, const std::vector<FrameObservations>& frames) {
  std::vector<std::vector<std::pair<int, Vec3>>> out(static_cast<size_t>(n_vertices));
  for (size_t k = 0; k < frames.size(); ++k) {
    for (const auto& o : frames[k]) {
      if (o.vertex < 0 || o.vertex >= n_vertices) {
        throw Error(ErrorCode::InvalidArgument, "observation of unknown vertex " + std::to_string(o.vertex));
      }
      out[static_cast<size_t>(o.vertex)].emplace_back(static_cast<int>(k), o.position);
    }
  }
  return out;
}

// Weight block for one vertex. Returns true when the row changed.
bool weight_step(SkinnedBodyModel& model, int i, const std::vector<std::pair<int, Vec3>>& obs,
                 const std::vector<std::vector<RigidTransform>>& G, const Eigen::MatrixXd& g, double lambda_g) {
  const int M = model.n_joints();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(M, M);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(M);
  double c0 = 0.0;
  Eigen::Matrix<double, 3, Eigen::Dynamic> X(3, M);
  const Vec3& x = model.rest[static_cast<size_t>(i)];
  for (const auto& [k, p] : obs) {
    for (int j = 0; j < M; ++j) X.col(j) = G[static_cast<size_t>(k)][static_cast<size_t>(j)].apply(x);
    H.noalias() += X.transpose() * X;
    f.noalias() -= X.transpose() * p;
    c0 += p.squaredNorm();
  }
  std::vector<bool> fixed(static_cast<size_t>(M), false);
  for (int j = 0; j < M; ++j) {
    if (std::isinf(g(i, j))) {
      fixed[static_cast<size_t>(j)] = true;
    } else {
      H(j, j) += lambda_g * g(i, j);
    }
  }
  const Eigen::VectorXd w0 = model.weights.row(i).transpose();
  auto objective = [&](const Eigen::VectorXd& w) {
    for (int j = 0; j < M; ++j) {
      if (fixed[static_cast<size_t>(j)] && w(j) != 0.0) return kInf;
    }
    return 0.5 * w.dot(H * w) + f.dot(w);
  };
  // Feasible start: zero the forced entries.
  Eigen::VectorXd start = w0;
  for (int j = 0; j < M; ++j) {
    if (fixed[static_cast<size_t>(j)]) start(j) = 0.0;
  }
  if (start.sum() <= 0.0) {
    for (int j = 0; j < M; ++j) start(j) = fixed[static_cast<size_t>(j)] ? 0.0 : 1.0;
    if (start.sum() <= 0.0) return false;
  }
  start /= start.sum();
  const Eigen::VectorXd w = simplex_qp(H, f, start, fixed);
  if (objective(w) <= objective(w0) || std::isinf(objective(w0))) {
    model.weights.row(i) = w.transpose();
    return true;
  }
  return false;
}

// Joint block with the rest vertices eliminated; the back-substitution is
// the rest-vertex block. Returns the trial (J, V).
void joint_rest_step(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames,
                     const std::vector<std::vector<std::pair<int, Vec3>>>& obs_by_vertex,
                     const std::vector<Vec3>& joints0, double lambda_j, std::vector<Vec3>& J_out,
                     std::vector<Vec3>& V_out) {
  const int M = model.n_joints();
  const int N = model.n_vertices();
  const int nj = 3 * M;
  const auto order = model.joint_order();

  struct FrameData {
    std::vector<RigidTransform> G;
    std::vector<Mat3> D;  // d b_j / d J_a factor per joint a
    Vec3 t;
  };
  std::vector<FrameData> fd(frames.size());
  for (size_t k = 0; k < frames.size(); ++k) {
    const Pose& pose = model.poses[k];
    fd[k].G = joint_transforms(model, pose);
    fd[k].D.resize(static_cast<size_t>(M));
    for (int a = 0; a < M; ++a) {
      const int p = model.parents[static_cast<size_t>(a)];
      const Mat3 Ap = p < 0 ? Mat3::Identity() : fd[k].G[static_cast<size_t>(p)].A;
      fd[k].D[static_cast<size_t>(a)] = Ap * (Mat3::Identity() - pose.rotations[static_cast<size_t>(a)].toRotationMatrix());
    }
    fd[k].t = pose.translation;
  }

  // Subtree weight sums s_ia.
  auto subtree_sums = [&](int i, Eigen::VectorXd& s, double& root_gain) {
    s = model.weights.row(i).transpose();
    root_gain = 0.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int p = model.parents[static_cast<size_t>(*it)];
      if (p >= 0) {
        s(p) += s(*it);
      } else {
        root_gain += s(*it);
      }
    }
  };

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(nj, nj);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nj);
  std::vector<Eigen::MatrixXd> per_frame_ss(frames.size(), Eigen::MatrixXd::Zero(M, M));
  std::vector<Mat3> Hvv_inv(static_cast<size_t>(N), Mat3::Zero());
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> HvJ(static_cast<size_t>(N));
  std::vector<Vec3> gv(static_cast<size_t>(N), Vec3::Zero());
  std::vector<bool> eliminated(static_cast<size_t>(N), false);

  Eigen::VectorXd s;
  double root_gain = 0.0;
  for (int i = 0; i < N; ++i) {
    const auto& obs = obs_by_vertex[static_cast<size_t>(i)];
    if (obs.empty()) continue;
    subtree_sums(i, s, root_gain);
    Mat3 Hvv = Mat3::Zero();
    Eigen::Matrix<double, 3, Eigen::Dynamic> Hvj = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, nj);
    Vec3 g_v = Vec3::Zero();
    const auto w = model.weights.row(i);
    for (const auto& [k, p] : obs) {
      const auto& F = fd[static_cast<size_t>(k)];
      const RigidTransform B = blended_transform(F.G, w);
      // Constant part: p - root_gain * t (the b terms are what J explains).
      const Vec3 y = p - root_gain * F.t;
      Hvv += B.A.transpose() * B.A;
      g_v += B.A.transpose() * y;
      for (int a = 0; a < M; ++a) {
        if (s(a) == 0.0) continue;
        const Mat3 Ea = s(a) * F.D[static_cast<size_t>(a)];
        Hvj.block<3, 3>(0, 3 * a) += B.A.transpose() * Ea;
        rhs.segment<3>(3 * a) += Ea.transpose() * y;
      }
      per_frame_ss[static_cast<size_t>(k)].noalias() += s * s.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(Hvv);
    if (es.eigenvalues()(0) > 1e-9 * std::max(1.0, es.eigenvalues()(2))) {
      eliminated[static_cast<size_t>(i)] = true;
      const Mat3 inv = Hvv.inverse();
      Hvv_inv[static_cast<size_t>(i)] = inv;
      HvJ[static_cast<size_t>(i)] = Hvj;
      gv[static_cast<size_t>(i)] = g_v;
      S.noalias() -= Hvj.transpose() * inv * Hvj;
      rhs.noalias() -= Hvj.transpose() * (inv * g_v);
    } else {
      // Rest vertex held fixed: move its contribution to the right side.
      rhs.noalias() -= Hvj.transpose() * model.rest[static_cast<size_t>(i)];
    }
  }
  for (size_t k = 0; k < frames.size(); ++k) {
    const auto& ss = per_frame_ss[k];
    for (int a = 0; a < M; ++a) {
      for (int b = 0; b < M; ++b) {
        if (ss(a, b) == 0.0) continue;
        S.block<3, 3>(3 * a, 3 * b) += ss(a, b) * fd[k].D[static_cast<size_t>(a)].transpose() * fd[k].D[static_cast<size_t>(b)];
      }
    }
  }
  for (int a = 0; a < M; ++a) {
    S.block<3, 3>(3 * a, 3 * a) += lambda_j * Mat3::Identity();
    rhs.segment<3>(3 * a) += lambda_j * joints0[static_cast<size_t>(a)];
  }
  const Eigen::VectorXd J = S.ldlt().solve(rhs);
  J_out.resize(static_cast<size_t>(M));
  for (int a = 0; a < M; ++a) J_out[static_cast<size_t>(a)] = J.segment<3>(3 * a);
  V_out = model.rest;
  for (int i = 0; i < N; ++i) {
    if (!eliminated[static_cast<size_t>(i)]) continue;
    V_out[static_cast<size_t>(i)] =
        Hvv_inv[static_cast<size_t>(i)] * (gv[static_cast<size_t>(i)] - HvJ[static_cast<size_t>(i)] * J);
  }
}

// Per-vertex rest LS with everything else fixed.
void rest_step(SkinnedBodyModel& model, const std::vector<std::vector<std::pair<int, Vec3>>>& obs_by_vertex,
               const std::vector<std::vector<RigidTransform>>& G, int workers) {
  parallel_for(obs_by_vertex.size(), workers, [&](size_t i) {
    const auto& obs = obs_by_vertex[i];
    if (obs.empty()) return;
    const auto w = model.weights.row(static_cast<Eigen::Index>(i));
    Mat3 H = Mat3::Zero();
    Vec3 r = Vec3::Zero();
    double before = 0.0;
    for (const auto& [k, p] : obs) {
      const RigidTransform B = blended_transform(G[static_cast<size_t>(k)], w);
      H += B.A.transpose() * B.A;
      r += B.A.transpose() * (p - B.b);
      before += (B.apply(model.rest[i]) - p).squaredNorm();
    }
    const Vec3 v = H.ldlt().solve(r);
    if (!v.allFinite()) return;
    double after = 0.0;
    for (const auto& [k, p] : obs) {
      after += (blended_transform(G[static_cast<size_t>(k)], w).apply(v) - p).squaredNorm();
    }
    if (after <= before) model.rest[i] = v;
  });
}

std::vector<std::vector<RigidTransform>> all_transforms(const SkinnedBodyModel& model, size_t K) {
  std::vector<std::vector<RigidTransform>> G(K);
  for (size_t k = 0; k < K; ++k) G[k] = joint_transforms(model, model.poses[k]);
  return G;
}

}  // namespace

double refine_loss(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames,
                   const Eigen::MatrixXd& g, const std::vector<Vec3>& joints0, const RefineConfig& cfg) {
  return fitting_sse(model, frames) + cfg.lambda_g * weight_penalty(model.weights, g) +
         cfg.lambda_j * joint_prior(model.joints, joints0);
}

Eigen::VectorXd simplex_qp(const Eigen::MatrixXd& H_in, const Eigen::VectorXd& f, const Eigen::VectorXd& start,
                           const std::vector<bool>& fixed_zero) {
  const auto n = H_in.rows();
  Eigen::MatrixXd H = H_in;
  const double ridge = 1e-12 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
  H.diagonal().array() += ridge;
  Eigen::VectorXd w = start;
  std::vector<bool> free(static_cast<size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) free[static_cast<size_t>(j)] = w(j) > 0.0 && !fixed_zero[static_cast<size_t>(j)];

  for (int iter = 0; iter < 200; ++iter) {
    std::vector<Eigen::Index> F;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (free[static_cast<size_t>(j)]) F.push_back(j);
    }
    const auto nf = static_cast<Eigen::Index>(F.size());
    // Equality-constrained minimizer on the free set.
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nf + 1, nf + 1);
    Eigen::VectorXd rhs(nf + 1);
    for (Eigen::Index a = 0; a < nf; ++a) {
      for (Eigen::Index b = 0; b < nf; ++b) K(a, b) = H(F[static_cast<size_t>(a)], F[static_cast<size_t>(b)]);
      K(a, nf) = K(nf, a) = 1.0;
      rhs(a) = -f(F[static_cast<size_t>(a)]);
    }
    rhs(nf) = 1.0;
    const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
    Eigen::VectorXd target = Eigen::VectorXd::Zero(n);
    for (Eigen::Index a = 0; a < nf; ++a) target(F[static_cast<size_t>(a)]) = sol(a);
    const Eigen::VectorXd p = target - w;

    if (p.cwiseAbs().maxCoeff() <= 1e-14) {
      // Multipliers of the inactive bounds.
      const Eigen::VectorXd grad = H * w + f;
      const double nu = nf > 0 ? grad(F.front()) : 0.0;
      Eigen::Index enter = -1;
      double most_negative = -1e-12 * (1.0 + grad.cwiseAbs().maxCoeff());
      for (Eigen::Index j = 0; j < n; ++j) {
        if (free[static_cast<size_t>(j)] || fixed_zero[static_cast<size_t>(j)]) continue;
        const double lam = grad(j) - nu;
        if (lam < most_negative) {
          most_negative = lam;
          enter = j;
        }
      }
      if (enter < 0) break;
      free[static_cast<size_t>(enter)] = true;
      continue;
    }
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index a = 0; a < nf; ++a) {
      const Eigen::Index j = F[static_cast<size_t>(a)];
      if (p(j) < 0.0) {
        const double step = -w(j) / p(j);
        if (step < alpha) {
          alpha = step;
          blocking = j;
        }
      }
    }
    w += alpha * p;
    if (blocking >= 0) {
      w(blocking) = 0.0;
      free[static_cast<size_t>(blocking)] = false;
    }
  }
  w = w.cwiseMax(0.0);
  const double sum = w.sum();
  if (sum > 0.0) w /= sum;
  return w;
}

void prune_weights(Eigen::MatrixXd& weights, int k) {
  if (k <= 0 || k >= weights.cols()) return;
  std::vector<int> idx(static_cast<size_t>(weights.cols()));
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return weights(i, a) > weights(i, b); });
    for (size_t r = static_cast<size_t>(k); r < idx.size(); ++r) weights(i, idx[r]) = 0.0;
    const double s = weights.row(i).sum();
    if (s > 0.0) weights.row(i) /= s;
  }
}

RefineReport refine(SkinnedBodyModel& model, const std::vector<FrameObservations>& frames, const Eigen::MatrixXd& g,
                    const RefineConfig& cfg) {
  cfg.validate();
  model.validate(1e-6);
  if (g.rows() != model.weights.rows() || g.cols() != model.weights.cols()) {
    throw Error(ErrorCode::InvalidArgument, "geodesic matrix must be N x M");
  }
  const size_t K = frames.size();
  if (model.poses.size() != K) model.poses.resize(K, Pose::identity(model.n_joints()));
  const std::vector<Vec3> joints0 = model.joints;
  const auto obs = by_vertex(model.n_vertices(), frames);

  RefineReport report;
  for (int i = 0; i < model.n_vertices(); ++i) {
    if (obs[static_cast<size_t>(i)].empty()) report.unobserved_vertices.push_back(i);
  }
  auto loss = [&] { return refine_loss(model, frames, g, joints0, cfg); };
  double current = loss();
  report.loss_trace.push_back(current);
  report.rms_trace.push_back(fitting_rms(model, frames));

  for (int it = 1; it <= cfg.outer_iterations; ++it) {
    // Poses.
    fit_poses(model, frames, cfg.pose_iterations, cfg.workers);
    // Weights.
    {
      const auto G = all_transforms(model, K);
      const Eigen::MatrixXd W_before = model.weights;
      const double before = loss();
      parallel_for(obs.size(), cfg.workers, [&](size_t i) {
        if (!obs[i].empty()) weight_step(model, static_cast<int>(i), obs[i], G, g, cfg.lambda_g);
      });
      if (loss() > before) model.weights = W_before;
    }
    // Joints, with the rest vertices solved alongside.
    {
      const double before = loss();
      const auto J_prev = model.joints;
      const auto V_prev = model.rest;
      std::vector<Vec3> J_new, V_new;
      joint_rest_step(model, frames, obs, joints0, cfg.lambda_j, J_new, V_new);
      model.joints = J_new;
      model.rest = V_new;
      if (!(loss() <= before)) {
        model.joints = J_prev;
        model.rest = V_prev;
      }
    }
    // Rest vertices.
    rest_step(model, obs, all_transforms(model, K), cfg.workers);

    const double next = loss();
    report.loss_trace.push_back(next);
    report.rms_trace.push_back(fitting_rms(model, frames));
    report.iterations = it;
    const double decrease = current - next;
    current = next;
    if (decrease <= cfg.convergence_tol * std::max(next, 1e-300)) {
      report.converged = true;
      break;
    }
  }

  if (cfg.max_influences > 0) {
    prune_weights(model.weights, cfg.max_influences);
    rest_step(model, obs, all_transforms(model, K), cfg.workers);
  }
  report.final_loss = loss();
  report.final_rms = fitting_rms(model, frames);
  return report;
}

void TemplateModel::validate() const {
  SkinnedBodyModel m;
  m.rest = vertices;
  m.joints = joints;
  m.parents = parents;
  m.weights = weights;
  m.validate(1e-6);
  for (const auto& t : triangles) {
    for (int v : t) {
      if (v < 0 || static_cast<size_t>(v) >= vertices.size()) {
        throw Error(ErrorCode::InvalidArgument, "template triangle out of range");
      }
    }
  }
}

namespace {

// Template deformed by per-joint scale about the joints, then posed.
struct TemplateState {
  Pose pose;
  Eigen::VectorXd scales;
};

std::vector<Vec3> scaled_rest(const TemplateModel& t, const Eigen::VectorXd& scales) {
  std::vector<Vec3> out(t.vertices.size());
  for (size_t v = 0; v < t.vertices.size(); ++v) {
    Vec3 x = t.vertices[v];
    for (Eigen::Index j = 0; j < t.weights.cols(); ++j) {
      const double w = t.weights(static_cast<Eigen::Index>(v), j);
      if (w != 0.0) x += w * (scales(j) - 1.0) * (t.vertices[v] - t.joints[static_cast<size_t>(j)]);
    }
    out[v] = x;
  }
  return out;
}

SkinnedBodyModel template_as_model(const TemplateModel& t) {
  SkinnedBodyModel m;
  m.rest = t.vertices;
  m.joints = t.joints;
  m.parents = t.parents;
  m.weights = t.weights;
  return m;
}

struct Correspondence {
  int corner;
  int triangle;
  Vec3 bary;
  Vec3 target;
  Vec3 normal = Vec3::Zero();  // set for closest-point matches: point-to-plane
};

// Closest-point matches slide along the surface under point-to-point
// ICP; weighting the normal direction fully and the tangent plane lightly
// lets them converge in a few iterations instead of dozens.
constexpr double kTangentWeight = 0.01;
constexpr double kIcpGrowth = 0.01;

Mat3 match_metric(const Correspondence& c) {
  if (c.normal.isZero()) return Mat3::Identity();
  return c.normal * c.normal.transpose() + kTangentWeight * Mat3::Identity();
}

constexpr double kScalePrior = 10.0;

// Squared error (plus scale prior) and optional normal equations over
// [delta (3M), t (3), scales (M)].
double icp_normal_equations(const TemplateModel& t, SkinnedBodyModel& proxy, const TemplateState& st,
                            const std::vector<Correspondence>& corr, bool fit_scale, Eigen::MatrixXd* H,
                            Eigen::VectorXd* g) {
  const int M = static_cast<int>(t.joints.size());
  const int np = 3 * M + 3 + (fit_scale ? M : 0);
  proxy.rest = scaled_rest(t, st.scales);
  const Kinematics kin = kinematics(proxy, st.pose);
  if (H) {
    H->setZero(np, np);
    g->setZero(np);
  }
  double cost = 0.0;
  SkinScratch s;
  Eigen::Matrix<double, 3, Eigen::Dynamic> Jc(3, np);
  for (const auto& c : corr) {
    const auto& tri = t.triangles[static_cast<size_t>(c.triangle)];
    Vec3 surf = Vec3::Zero();
    if (H) Jc.setZero();
    for (int k = 0; k < 3; ++k) {
      const int v = tri[static_cast<size_t>(k)];
      const double b = c.bary(k);
      skin_with_jacobian(kin, proxy.weights.row(v), proxy.rest[static_cast<size_t>(v)], H != nullptr, s);
      surf += b * s.point;
      if (!H) continue;
      for (size_t u = 0; u < s.active.size(); ++u) Jc.block<3, 3>(0, 3 * s.active[u]) += b * s.blocks[u];
      Jc.block<3, 3>(0, 3 * M) += b * s.translation_gain * Mat3::Identity();
      if (fit_scale) {
        const Mat3 B = blended_transform(kin.G, proxy.weights.row(v)).A;
        for (int j = 0; j < M; ++j) {
          const double w = t.weights(v, j);
          if (w == 0.0) continue;
          Jc.col(3 * M + 3 + j) += b * w * (B * (t.vertices[static_cast<size_t>(v)] - t.joints[static_cast<size_t>(j)]));
        }
      }
    }
    const Vec3 r = surf - c.target;
    const Mat3 Q = match_metric(c);
    cost += r.dot(Q * r);
    if (H) {
      H->noalias() += Jc.transpose() * Q * Jc;
      g->noalias() += Jc.transpose() * (Q * r);
    }
  }
  if (fit_scale) {
    for (int j = 0; j < M; ++j) {
      const double r = kScalePrior * (st.scales(j) - 1.0);
      cost += r * r;
      if (H) {
        (*H)(3 * M + 3 + j, 3 * M + 3 + j) += kScalePrior * kScalePrior;
        (*g)(3 * M + 3 + j) += kScalePrior * r;
      }
    }
  }
  return cost;
}

void icp_fit(const TemplateModel& t, SkinnedBodyModel& proxy, TemplateState& st, const std::vector<Correspondence>& corr,
             bool fit_scale, int iterations) {
  const int M = static_cast<int>(t.joints.size());
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double cost = icp_normal_equations(t, proxy, st, corr, fit_scale, &H, &g);
  double lambda = 1e-4;
  for (int it = 0; it < iterations; ++it) {
    if (g.norm() <= 1e-12 * (1.0 + cost)) break;
    bool accepted = false;
    for (int tries = 0; tries < 12 && !accepted; ++tries) {
      Eigen::MatrixXd Hd = H;
      for (Eigen::Index d = 0; d < Hd.rows(); ++d) Hd(d, d) += lambda * std::max(H(d, d), 1e-6);
      const Eigen::VectorXd step = -Hd.ldlt().solve(g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      TemplateState trial = st;
      apply_pose_increment(trial.pose, step.head(3 * M + 3));
      if (fit_scale) trial.scales += step.tail(M);
      const double c = icp_normal_equations(t, proxy, trial, corr, fit_scale, nullptr, nullptr);
      if (c < cost) {
        st = trial;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
    cost = icp_normal_equations(t, proxy, st, corr, fit_scale, &H, &g);
  }
  proxy.rest = scaled_rest(t, st.scales);
}

Eigen::RowVectorXd bary_weights(const TemplateModel& t, int tri, const Vec3& bary) {
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(t.weights.cols());
  for (int k = 0; k < 3; ++k) w += bary(k) * t.weights.row(t.triangles[static_cast<size_t>(tri)][static_cast<size_t>(k)]);
  w = w.cwiseMax(0.0);
  return w / w.sum();
}

}  // namespace

IcpResult register_icp(const std::vector<FrameObservations>& clouds, const TemplateModel& templ,
                       const std::vector<IcpSeed>& seeds, const SuitLayout& layout, const IcpOptions& opts) {
  templ.validate();
  if (static_cast<int>(seeds.size()) < opts.min_seeds) {
    throw Error(ErrorCode::InsufficientSeeds,
                "non-rigid ICP needs at least " + std::to_string(opts.min_seeds) + " seed correspondences");
  }
  if (clouds.empty()) throw Error(ErrorCode::NoObservations, "no point clouds to register");
  const int M = static_cast<int>(templ.joints.size());
  const int N = layout.n_vertices();
  for (const auto& s : seeds) {
    if (s.corner < 0 || s.corner >= layout.n_corners() || s.triangle < 0 ||
        static_cast<size_t>(s.triangle) >= templ.triangles.size()) {
      throw Error(ErrorCode::InvalidArgument, "seed out of range");
    }
  }

  IcpResult res;
  res.registered.assign(static_cast<size_t>(N), false);
  res.triangle.assign(static_cast<size_t>(N), -1);
  res.barycentric.assign(static_cast<size_t>(N), Vec3::Zero());
  SkinnedBodyModel proxy = template_as_model(templ);
  TemplateState st{Pose::identity(M), Eigen::VectorXd::Ones(M)};

  std::map<int, IcpSeed> seed_of;
  for (const auto& s : seeds) seed_of[s.corner] = s;

  const FrameObservations& first = clouds.front();
  std::vector<Correspondence> corr;
  for (const auto& o : first) {
    const auto it = seed_of.find(o.vertex);
    if (it != seed_of.end()) corr.push_back({o.vertex, it->second.triangle, it->second.barycentric, o.position});
  }
  if (static_cast<int>(corr.size()) < opts.min_seeds) {
    throw Error(ErrorCode::InsufficientSeeds, "fewer than the required seeds are observed in the first cloud");
  }

  std::vector<int> assignment;
  int growing = 0;
  bool fit_scale = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    // A handful of seeds cannot pin a per-joint scale (a lone seed on a
    // hand is matched just as well by a mirrored one), so scales stay at 1
    // until the pose-only matching settles.
    icp_fit(templ, proxy, st, corr, fit_scale, opts.fit_iterations);
    const auto posed = skin_all(proxy, st.pose);
    const TriangleBvh bvh(posed, templ.triangles);
    std::vector<Correspondence> next;
    std::vector<int> next_assignment;
    double total = 0.0;
    for (const auto& o : first) {
      const auto s = seed_of.find(o.vertex);
      Correspondence c{o.vertex, -1, Vec3::Zero(), o.position};
      if (s != seed_of.end()) {
        c.triangle = s->second.triangle;
        c.bary = s->second.barycentric;
      }
      const ClosestHit h = bvh.closest(o.position);
      if (s == seed_of.end()) {
        c.triangle = h.triangle;
        c.bary = h.barycentric;
        const auto& tri = templ.triangles[static_cast<size_t>(c.triangle)];
        const Vec3 n = (posed[static_cast<size_t>(tri[1])] - posed[static_cast<size_t>(tri[0])])
                           .cross(posed[static_cast<size_t>(tri[2])] - posed[static_cast<size_t>(tri[0])]);
        if (n.norm() > 0.0) c.normal = n.normalized();
      }
      total += h.distance;
      next.push_back(c);
      next_assignment.push_back(c.triangle);
    }
    const double mean = total / static_cast<double>(first.size());
    // Under noise the assignments flicker and the mean jitters by a few
    // parts per thousand; only growth beyond 1% counts toward divergence.
    if (!res.mean_distance_trace.empty() && mean > res.mean_distance_trace.back() * (1.0 + kIcpGrowth)) {
      if (++growing >= opts.divergence_patience) {
        throw Error(ErrorCode::DivergedIcp, "ICP mean correspondence distance grew " +
                                                std::to_string(opts.divergence_patience) + " iterations in a row");
      }
    } else {
      growing = 0;
    }
    res.mean_distance_trace.push_back(mean);
    res.iterations = it + 1;
    const bool unchanged = next_assignment == assignment;
    corr = std::move(next);
    assignment = std::move(next_assignment);
    if (unchanged) {
      if (fit_scale) break;
      fit_scale = true;
      assignment.clear();
    }
  }
  icp_fit(templ, proxy, st, corr, true, opts.fit_iterations);

  SkinnedBodyModel& model = res.model;
  model.joints = templ.joints;
  model.parents = templ.parents;
  model.rest.assign(static_cast<size_t>(N), Vec3::Zero());
  model.weights = Eigen::MatrixXd::Zero(N, M);
  model.poses.assign(clouds.size(), Pose::identity(M));
  res.scales = st.scales;

  auto settle = [&](const Correspondence& c, const std::vector<RigidTransform>& G) {
    const Eigen::RowVectorXd w = bary_weights(templ, c.triangle, c.bary);
    model.weights.row(c.corner) = w;
    model.rest[static_cast<size_t>(c.corner)] = unskin(G, w, c.target);
    res.registered[static_cast<size_t>(c.corner)] = true;
    res.triangle[static_cast<size_t>(c.corner)] = c.triangle;
    res.barycentric[static_cast<size_t>(c.corner)] = c.bary;
  };
  {
    const auto G = joint_transforms(proxy, st.pose);
    for (const auto& c : corr) settle(c, G);
    model.poses[0] = st.pose;
    const auto posed = skin_all(proxy, st.pose);
    double total = 0.0;
    for (const auto& c : corr) {
      const auto& tri = templ.triangles[static_cast<size_t>(c.triangle)];
      const Vec3 surf = c.bary(0) * posed[static_cast<size_t>(tri[0])] + c.bary(1) * posed[static_cast<size_t>(tri[1])] +
                        c.bary(2) * posed[static_cast<size_t>(tri[2])];
      total += (surf - c.target).norm();
    }
    res.mean_residual = corr.empty() ? 0.0 : total / static_cast<double>(corr.size());
  }

  // Later clouds: pose from registered corners, then place the new ones.
  for (size_t f = 1; f < clouds.size(); ++f) {
    std::vector<Correspondence> known;
    for (const auto& o : clouds[f]) {
      if (o.vertex < N && res.registered[static_cast<size_t>(o.vertex)]) {
        known.push_back({o.vertex, res.triangle[static_cast<size_t>(o.vertex)],
                         res.barycentric[static_cast<size_t>(o.vertex)], o.position});
      }
    }
    TemplateState sf{st.pose, st.scales};
    if (!known.empty()) icp_fit(templ, proxy, sf, known, false, opts.fit_iterations * 2);
    model.poses[f] = sf.pose;
    const auto posed = skin_all(proxy, sf.pose);
    const TriangleBvh bvh(posed, templ.triangles);
    const auto G = joint_transforms(proxy, sf.pose);
    for (const auto& o : clouds[f]) {
      if (o.vertex >= N || res.registered[static_cast<size_t>(o.vertex)]) continue;
      const ClosestHit h = bvh.closest(o.position);
      settle({o.vertex, h.triangle, h.barycentric, o.position}, G);
    }
  }

  // Unregistered vertices (hole-closing ones included) take neighbor means.
  std::vector<std::vector<int>> nbr(static_cast<size_t>(N));
  for (const auto& [a, b] : face_edges(layout.faces())) {
    nbr[static_cast<size_t>(a)].push_back(b);
    nbr[static_cast<size_t>(b)].push_back(a);
  }
  std::vector<bool> placed = res.registered;
  for (bool progress = true; progress;) {
    progress = false;
    std::vector<int> fill;
    for (int v = 0; v < N; ++v) {
      if (placed[static_cast<size_t>(v)]) continue;
      for (int u : nbr[static_cast<size_t>(v)]) {
        if (placed[static_cast<size_t>(u)]) {
          fill.push_back(v);
          break;
        }
      }
    }
    for (int v : fill) {
      Vec3 p = Vec3::Zero();
      Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(M);
      int n = 0;
      for (int u : nbr[static_cast<size_t>(v)]) {
        if (!placed[static_cast<size_t>(u)]) continue;
        p += model.rest[static_cast<size_t>(u)];
        w += model.weights.row(u);
        ++n;
      }
      model.rest[static_cast<size_t>(v)] = p / n;
      model.weights.row(v) = w / w.sum();
      progress = true;
    }
    for (int v : fill) placed[static_cast<size_t>(v)] = true;
  }
  for (int v = 0; v < N; ++v) {
    if (placed[static_cast<size_t>(v)]) continue;
    model.rest[static_cast<size_t>(v)] = templ.joints.front();
    model.weights(v, model.joint_order().front()) = 1.0;
  }
  return res;
}

std::string serialize_model(const SkinnedBodyModel& model) {
  using nlohmann::json;
  json rest = json::array(), joints = json::array(), weights = json::array(), poses = json::array();
  for (const auto& v : model.rest) rest.push_back({v.x(), v.y(), v.z()});
  for (const auto& v : model.joints) joints.push_back({v.x(), v.y(), v.z()});
  for (Eigen::Index i = 0; i < model.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < model.weights.cols(); ++j) {
      if (model.weights(i, j) != 0.0) weights.push_back({i, j, model.weights(i, j)});
    }
  }
  for (const auto& p : model.poses) {
    json row = json::array();
    for (const auto& q : p.rotations) {
      row.push_back(q.w());
      row.push_back(q.x());
      row.push_back(q.y());
      row.push_back(q.z());
    }
    row.push_back(p.translation.x());
    row.push_back(p.translation.y());
    row.push_back(p.translation.z());
    poses.push_back(std::move(row));
  }
  const json j = {{"rest", std::move(rest)},
                  {"joints", std::move(joints)},
                  {"parents", model.parents},
                  {"weights", std::move(weights)},
                  {"poses", std::move(poses)}};
  return j.dump();
}

SkinnedBodyModel parse_model(const std::string& json_text) {
  using nlohmann::json;
  try {
    const json j = json::parse(json_text);
    SkinnedBodyModel m;
    auto vec3 = [](const json& a) {
      const auto v = a.get<std::vector<double>>();
      if (v.size() != 3) throw Error(ErrorCode::Config, "expected a 3-vector");
      return Vec3(v[0], v[1], v[2]);
    };
    for (const auto& v : j.at("rest")) m.rest.push_back(vec3(v));
    for (const auto& v : j.at("joints")) m.joints.push_back(vec3(v));
    m.parents = j.at("parents").get<std::vector<int>>();
    const int N = m.n_vertices(), M = m.n_joints();
    m.weights = Eigen::MatrixXd::Zero(N, M);
    for (const auto& t : j.at("weights")) {
      const int i = t.at(0).get<int>(), jj = t.at(1).get<int>();
      if (i < 0 || i >= N || jj < 0 || jj >= M) throw Error(ErrorCode::Config, "weight triplet out of range");
      m.weights(i, jj) = t.at(2).get<double>();
    }
    for (const auto& row : j.value("poses", json::array())) {
      const auto v = row.get<std::vector<double>>();
      if (v.size() != static_cast<size_t>(4 * M + 3)) throw Error(ErrorCode::Config, "pose row length must be 4M+3");
      Pose p;
      for (int a = 0; a < M; ++a) {
        Quat q(v[static_cast<size_t>(4 * a)], v[static_cast<size_t>(4 * a + 1)], v[static_cast<size_t>(4 * a + 2)],
               v[static_cast<size_t>(4 * a + 3)]);
        if (std::abs(q.norm() - 1.0) > 1e-6) throw Error(ErrorCode::Config, "pose quaternion is not unit");
        p.rotations.push_back(q.normalized());
      }
      p.translation = Vec3(v[static_cast<size_t>(4 * M)], v[static_cast<size_t>(4 * M + 1)], v[static_cast<size_t>(4 * M + 2)]);
      m.poses.push_back(std::move(p));
    }
    m.validate(1e-6);
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed model file: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    throw Error(ErrorCode::Config, e.what());
  }
}

SkinnedBodyModel load_model(const std::string& path) { return parse_model(read_text_file(path)); }

}  // namespace mocap
