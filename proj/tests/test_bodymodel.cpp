#include "core/bodymodel.hpp"
#include "core/bvh.hpp"
#include "core/error.hpp"
#include "core/simulator.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

using namespace mocap;

namespace {

Quat random_rotation(std::mt19937_64& rng, double max_deg) {
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
  return Quat(Eigen::AngleAxisd(u(rng) * max_deg * std::numbers::pi / 180.0, axis));
}

Pose random_pose(std::mt19937_64& rng, int M, double max_deg) {
  std::uniform_real_distribution<double> u(-50, 50);
  Pose p = Pose::identity(M);
  for (auto& q : p.rotations) q = random_rotation(rng, max_deg);
  p.translation = Vec3(u(rng), u(rng), u(rng));
  return p;
}

// Chain of `M` joints along z with a cylinder of rings x segs vertices.
struct Toy {
  SkinnedBodyModel model;
  std::vector<std::vector<int>> faces;
};

Toy make_toy(int M, int rings, int segs, double blend = 0.35) {
  Toy t;
  const double len = 100.0;
  for (int j = 0; j < M; ++j) {
    t.model.joints.push_back(Vec3(0, 0, j * len));
    t.model.parents.push_back(j - 1);
  }
  const double total = M * len;
  t.model.weights = Eigen::MatrixXd::Zero(rings * segs, M);
  for (int r = 0; r < rings; ++r) {
    const double z = total * (r + 0.5) / rings;
    for (int s = 0; s < segs; ++s) {
      const double a = 2 * std::numbers::pi * s / segs;
      const int i = r * segs + s;
      t.model.rest.push_back(Vec3(40 * std::cos(a), 40 * std::sin(a), z));
      // Linear blend between the two nearest joints within `blend` of a boundary.
      const double f = z / len;
      const int j = std::min(static_cast<int>(f), M - 1);
      const double u = f - j;
      if (j > 0 && u < blend) {
        const double w = 0.5 + 0.5 * u / blend;
        t.model.weights(i, j) = w;
        t.model.weights(i, j - 1) = 1 - w;
      } else {
        t.model.weights(i, j) = 1;
      }
    }
  }
  for (int r = 0; r + 1 < rings; ++r)
    for (int s = 0; s < segs; ++s) {
      const int a = r * segs + s, b = r * segs + (s + 1) % segs;
      t.faces.push_back({a, b, b + segs, a + segs});
    }
  return t;
}

Eigen::Matrix4d h4(const Mat3& A, const Vec3& b) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = A;
  m.topRightCorner<3, 1>() = b;
  return m;
}

// Recursive 4x4 composition: T_j = T_parent * Tr(J) * R_j * Tr(-J), root with Tr(t).
Eigen::Matrix4d chain(const SkinnedBodyModel& m, const Pose& p, int j) {
  const Vec3& J = m.joints[static_cast<size_t>(j)];
  const Eigen::Matrix4d local = h4(Mat3::Identity(), J) * h4(p.rotations[static_cast<size_t>(j)].toRotationMatrix(), Vec3::Zero()) *
                                h4(Mat3::Identity(), -J);
  const int parent = m.parents[static_cast<size_t>(j)];
  if (parent < 0) return h4(Mat3::Identity(), p.translation) * local;
  return chain(m, p, parent) * local;
}

Vec3 skin_oracle(const SkinnedBodyModel& m, const Pose& p, int i) {
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  const Eigen::Vector4d x(m.rest[static_cast<size_t>(i)].x(), m.rest[static_cast<size_t>(i)].y(), m.rest[static_cast<size_t>(i)].z(), 1);
  for (int j = 0; j < m.n_joints(); ++j) acc += m.weights(i, j) * (chain(m, p, j) * x);
  return acc.head<3>();
}

std::vector<FrameObservations> observe_all(const SkinnedBodyModel& m, const std::vector<Pose>& poses, double keep,
                                           std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<FrameObservations> out;
  for (const auto& p : poses) {
    const auto v = skin_all(m, p);
    FrameObservations f;
    for (int i = 0; i < m.n_vertices(); ++i)
      if (u(rng) < keep) f.push_back({i, v[static_cast<size_t>(i)]});
    out.push_back(f);
  }
  return out;
}

// Diffuses each weight row toward its ring neighbours.
Eigen::MatrixXd blur(const Toy& t, const Eigen::MatrixXd& w, int iters) {
  Eigen::MatrixXd cur = w;
  const auto edges = face_edges(t.faces);
  for (int k = 0; k < iters; ++k) {
    Eigen::MatrixXd acc = cur;
    Eigen::VectorXd cnt = Eigen::VectorXd::Ones(cur.rows());
    for (auto [a, b] : edges) {
      acc.row(a) += cur.row(b);
      acc.row(b) += cur.row(a);
      cnt(a) += 1;
      cnt(b) += 1;
    }
    for (Eigen::Index i = 0; i < cur.rows(); ++i) cur.row(i) = acc.row(i) / cnt(i);
  }
  return cur;
}

}  // namespace

TEST_CASE("identity pose leaves the mesh alone") {
  const Toy t = make_toy(3, 6, 8);
  const auto v = skin_all(t.model, Pose::identity(3));
  for (int i = 0; i < t.model.n_vertices(); ++i) CHECK(v[static_cast<size_t>(i)] == t.model.rest[static_cast<size_t>(i)]);
  auto m = t.model;
  m.poses = {Pose::identity(3)};
  CHECK(unskin(m, 0, 4, Vec3(1, 2, 3)) == Vec3(1, 2, 3));
}

TEST_CASE("single joint quarter turn is a rigid rotation about the joint") {
  SkinnedBodyModel m;
  m.joints = {Vec3(10, 0, 0)};
  m.parents = {-1};
  m.rest = {Vec3(20, 0, 0), Vec3(10, 5, 3)};
  m.weights = Eigen::MatrixXd::Ones(2, 1);
  Pose p = Pose::identity(1);
  p.rotations[0] = Quat(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()));
  m.poses = {p};
  CHECK((skin(m, 0, 0) - Vec3(10, 10, 0)).norm() < 1e-12);
  CHECK((skin(m, 0, 1) - Vec3(5, 0, 3)).norm() < 1e-12);
}

TEST_CASE("skinning matches explicit 4x4 chains") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    Toy toy = make_toy(4, 8, 6);
    std::uniform_real_distribution<double> u(0, 1);
    // Random rows on the simplex, random (acyclic) tree.
    for (Eigen::Index i = 0; i < toy.model.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < 4; ++j) toy.model.weights(i, j) = u(rng) < 0.5 ? 0.0 : u(rng);
      if (toy.model.weights.row(i).sum() == 0) toy.model.weights(i, 0) = 1;
      toy.model.weights.row(i) /= toy.model.weights.row(i).sum();
    }
    toy.model.parents = {-1, 0, 0, static_cast<int>(u(rng) * 3)};
    const Pose p = random_pose(rng, 4, 120);
    toy.model.poses = {p};
    const auto v = skin_all(toy.model, p);
    for (int i = 0; i < toy.model.n_vertices(); ++i) {
      const Vec3 o = skin_oracle(toy.model, p, i);
      CHECK((v[static_cast<size_t>(i)] - o).norm() < 1e-9);
      CHECK((skin(toy.model, 0, i) - o).norm() < 1e-9);
    }
  }
}

TEST_CASE("unskin inverts skin") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-500, 500);
  Toy toy = make_toy(3, 10, 10);
  int samples = 0;
  for (int f = 0; f < 10; ++f) toy.model.poses.push_back(random_pose(rng, 3, 60));
  for (int f = 0; f < 10; ++f) {
    const auto G = joint_transforms(toy.model, toy.model.poses[static_cast<size_t>(f)]);
    for (int i = 0; i < toy.model.n_vertices(); ++i) {
      CHECK((unskin(toy.model, f, i, skin(toy.model, f, i)) - toy.model.rest[static_cast<size_t>(i)]).norm() < 1e-9);
      for (int s = 0; s < 10; ++s, ++samples) {
        const Vec3 p(u(rng), u(rng), u(rng));
        const Vec3 x = unskin(toy.model, f, i, p);
        CHECK((blend_point(G, toy.model.weights.row(i), x) - p).norm() < 1e-9);
        // The same point through the displacement path.
        CHECK((skin(toy.model, f, i, x - toy.model.rest[static_cast<size_t>(i)]) - p).norm() < 1e-9);
      }
    }
  }
  CHECK(samples == 10000);
}

TEST_CASE("opposed half-blend is singular") {
  SkinnedBodyModel m;
  m.joints = {Vec3::Zero(), Vec3::Zero()};
  m.parents = {-1, 0};
  m.rest = {Vec3(1, 0, 0)};
  m.weights = Eigen::MatrixXd::Constant(1, 2, 0.5);
  Pose p = Pose::identity(2);
  p.rotations[1] = Quat(Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitZ()));
  m.poses = {p};
  try {
    unskin(m, 0, 0, Vec3(1, 0, 0));
    FAIL("expected SingularBlend");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularBlend);
  }
}

TEST_CASE("pose Jacobian matches central differences") {
  std::mt19937_64 rng(3);
  const Toy toy = make_toy(4, 8, 6);
  for (int t = 0; t < 20; ++t) {
    const Pose pose = random_pose(rng, 4, 90);
    FrameObservations obs;
    for (int i = 0; i < toy.model.n_vertices(); i += 3) obs.push_back({i, Vec3::Random() * 100});
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    pose_residuals(toy.model, pose, obs, r, &J);
    REQUIRE(J.cols() == 3 * 4 + 3);
    const double h = 1e-6;
    for (Eigen::Index c = 0; c < J.cols(); ++c) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(J.cols());
      d(c) = h;
      Pose plus = pose, minus = pose;
      apply_pose_increment(plus, d);
      apply_pose_increment(minus, -d);
      Eigen::VectorXd rp, rm;
      pose_residuals(toy.model, plus, obs, rp, nullptr);
      pose_residuals(toy.model, minus, obs, rm, nullptr);
      const Eigen::VectorXd fd = (rp - rm) / (2 * h);
      CHECK((fd - J.col(c)).norm() <= 1e-4 * std::max(1.0, fd.norm()));
    }
  }
}

TEST_CASE("pose fitting recovers a generating pose") {
  std::mt19937_64 rng(4);
  const Toy toy = make_toy(3, 8, 8);
  for (int t = 0; t < 10; ++t) {
    const Pose truth = random_pose(rng, 3, 30);
    const auto v = skin_all(toy.model, truth);
    FrameObservations obs;
    for (int i = 0; i < toy.model.n_vertices(); ++i) obs.push_back({i, v[static_cast<size_t>(i)]});
    Pose p = Pose::identity(3);
    const double sse = fit_pose(toy.model, p, obs, 50);
    CHECK(sse < 1e-12);
    const auto w = skin_all(toy.model, p);
    for (size_t i = 0; i < w.size(); ++i) CHECK((w[i] - v[i]).norm() < 1e-6);
  }
}

TEST_CASE("geodesic distances") {
  // Path graph with unit edges as degenerate quads along x.
  std::vector<Vec3> rest;
  std::vector<std::vector<int>> faces;
  for (int i = 0; i < 6; ++i) rest.push_back(Vec3(i, 0, 0));
  for (int i = 0; i + 1 < 6; ++i) faces.push_back({i, i + 1});
  Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(6, 2);
  w0(0, 0) = 1;
  w0.col(1).setConstant(1);
  w0(0, 1) = 0;
  const auto g = geodesic_weights(faces, rest, w0);
  for (int i = 0; i < 6; ++i) CHECK(g(i, 0) == doctest::Approx(i));
  for (int i = 1; i < 6; ++i) CHECK(g(i, 1) == 0);
  CHECK(g(0, 1) == doctest::Approx(1));

  // Disconnected vertex cannot reach the joint.
  rest.push_back(Vec3(10, 0, 0));
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(7, 1);
  w1(0, 0) = 1;
  const auto g1 = geodesic_weights(faces, rest, w1);
  CHECK(std::isinf(g1(6, 0)));
}

TEST_CASE("geodesic distances match Floyd-Warshall") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    const int n = 10 + static_cast<int>(u(rng) * 40);
    std::vector<Vec3> rest;
    for (int i = 0; i < n; ++i) rest.push_back(Vec3(u(rng), u(rng), u(rng)) * 100);
    std::vector<std::vector<int>> faces;
    for (int k = 0; k < n; ++k) {
      const int a = static_cast<int>(u(rng) * n), b = static_cast<int>(u(rng) * n), c = static_cast<int>(u(rng) * n);
      if (a != b && b != c && a != c) faces.push_back({a, b, c});
    }
    const int M = 3;
    Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(n, M);
    for (int i = 0; i < n; ++i) w0(i, static_cast<int>(u(rng) * M)) = 1;

    const double inf = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd D = Eigen::MatrixXd::Constant(n, n, inf);
    for (int i = 0; i < n; ++i) D(i, i) = 0;
    for (const auto& f : faces)
      for (size_t k = 0; k < f.size(); ++k) {
        const int a = f[k], b = f[(k + 1) % f.size()];
        const double d = (rest[static_cast<size_t>(a)] - rest[static_cast<size_t>(b)]).norm();
        D(a, b) = std::min(D(a, b), d);
        D(b, a) = D(a, b);
      }
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) D(i, j) = std::min(D(i, j), D(i, k) + D(k, j));

    const auto g = geodesic_weights(faces, rest, w0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < M; ++j) {
        double best = inf;
        for (int s = 0; s < n; ++s)
          if (w0(s, j) > 1e-6) best = std::min(best, D(i, s));
        if (std::isinf(best)) {
          CHECK(std::isinf(g(i, j)));
        } else {
          CHECK(g(i, j) == doctest::Approx(best).epsilon(1e-12));
        }
      }
  }
}

TEST_CASE("simplex QP matches support enumeration") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 500; ++t) {
    const int M = 2 + t % 4;
    Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(M + 2, M, [&] { return u(rng); });
    const Eigen::MatrixXd H = A.transpose() * A + 1e-3 * Eigen::MatrixXd::Identity(M, M);
    const Eigen::VectorXd f = Eigen::VectorXd::NullaryExpr(M, [&] { return 2 * u(rng); });
    std::vector<bool> zero(static_cast<size_t>(M), false);
    if (t % 3 == 0) zero[static_cast<size_t>(M - 1)] = true;
    Eigen::VectorXd start = Eigen::VectorXd::Zero(M);
    start(0) = 1;

    // Every support S: equality-constrained minimum, keep feasible ones.
    double best = std::numeric_limits<double>::infinity();
    for (int mask = 1; mask < (1 << M); ++mask) {
      std::vector<int> S;
      for (int j = 0; j < M; ++j)
        if ((mask >> j) & 1 && !zero[static_cast<size_t>(j)]) S.push_back(j);
      if (S.empty()) continue;
      const int s = static_cast<int>(S.size());
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(s + 1, s + 1);
      Eigen::VectorXd rhs(s + 1);
      for (int a = 0; a < s; ++a) {
        for (int b = 0; b < s; ++b) K(a, b) = H(S[static_cast<size_t>(a)], S[static_cast<size_t>(b)]);
        K(a, s) = K(s, a) = 1;
        rhs(a) = -f(S[static_cast<size_t>(a)]);
      }
      rhs(s) = 1;
      const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
      if ((sol.head(s).array() < -1e-12).any()) continue;
      Eigen::VectorXd w = Eigen::VectorXd::Zero(M);
      for (int a = 0; a < s; ++a) w(S[static_cast<size_t>(a)]) = sol(a);
      best = std::min(best, 0.5 * w.dot(H * w) + f.dot(w));
    }
    const Eigen::VectorXd w = simplex_qp(H, f, start, zero);
    CHECK(w.sum() == doctest::Approx(1).epsilon(1e-12));
    CHECK(w.minCoeff() >= 0);
    if (zero[static_cast<size_t>(M - 1)]) CHECK(w(M - 1) == 0);
    CHECK(0.5 * w.dot(H * w) + f.dot(w) <= best + 1e-9);
  }
}

TEST_CASE("sparsity penalty on a two-joint vertex follows the closed form") {
  // Vertex seen in K frames; joint 0 has g = 0, joint 1 has g > 0. With
  // w = (1 - t, t) the loss is sum |a + t(b - a) - p|^2 + lambda g t^2.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-10, 10);
  const int K = 6;
  std::vector<Vec3> a(K), b(K), p(K);
  for (int k = 0; k < K; ++k) {
    a[static_cast<size_t>(k)] = Vec3(u(rng), u(rng), u(rng));
    b[static_cast<size_t>(k)] = a[static_cast<size_t>(k)] + Vec3(u(rng), u(rng), u(rng));
    p[static_cast<size_t>(k)] = a[static_cast<size_t>(k)] + 0.4 * (b[static_cast<size_t>(k)] - a[static_cast<size_t>(k)]) + 0.1 * Vec3(u(rng), u(rng), u(rng));
  }
  const double g = 2.5;
  for (double lambda : {0.0, 1.0, 10.0, 1e3, 1e6, 1e12}) {
    Eigen::Matrix2d H = Eigen::Matrix2d::Zero();
    Eigen::Vector2d f = Eigen::Vector2d::Zero();
    double num = 0, den = lambda * g;
    for (size_t k = 0; k < static_cast<size_t>(K); ++k) {
      H(0, 0) += 2 * a[k].dot(a[k]);
      H(0, 1) += 2 * a[k].dot(b[k]);
      H(1, 1) += 2 * b[k].dot(b[k]);
      f(0) -= 2 * a[k].dot(p[k]);
      f(1) -= 2 * b[k].dot(p[k]);
      num += (b[k] - a[k]).dot(p[k] - a[k]);
      den += (b[k] - a[k]).squaredNorm();
    }
    H(1, 0) = H(0, 1);
    H(1, 1) += 2 * lambda * g;
    const double t = std::clamp(num / den, 0.0, 1.0);
    const Eigen::VectorXd w = simplex_qp(H, f, Eigen::Vector2d(1, 0), {false, false});
    CHECK(w(1) == doctest::Approx(t).epsilon(1e-6));
    if (lambda >= 1e12) CHECK(w(1) < 1e-9);
  }
}

TEST_CASE("weight pruning keeps the largest entries") {
  Eigen::MatrixXd w(2, 5);
  w << 0.1, 0.2, 0.3, 0.25, 0.15, 1, 0, 0, 0, 0;
  prune_weights(w, 2);
  CHECK(w(0, 2) == doctest::Approx(0.3 / 0.55));
  CHECK(w(0, 3) == doctest::Approx(0.25 / 0.55));
  CHECK(w(0, 0) == 0);
  CHECK(w.row(1).sum() == 1);
}

TEST_CASE("refinement recovers blurred weights on a toy chain") {
  std::mt19937_64 rng(8);
  const Toy toy = make_toy(3, 12, 8);
  std::vector<Pose> poses;
  for (int f = 0; f < 12; ++f) poses.push_back(random_pose(rng, 3, 35));
  const auto frames = observe_all(toy.model, poses, 0.9, rng);

  SkinnedBodyModel init = toy.model;
  init.weights = blur(toy, toy.model.weights, 3);
  const auto g = geodesic_weights(toy.faces, init.rest, init.weights);
  RefineConfig cfg;
  cfg.outer_iterations = 60;
  cfg.lambda_g = 1.0;
  cfg.pose_iterations = 5;
  SkinnedBodyModel fit = init;
  fit.poses.assign(frames.size(), Pose::identity(3));
  fit_poses(fit, frames, 30);
  const double before = fitting_rms(fit, frames);
  const auto rep = refine(fit, frames, g, cfg);

  CHECK(rep.loss_trace.size() == static_cast<size_t>(rep.iterations + 1));
  for (size_t k = 1; k < rep.loss_trace.size(); ++k) CHECK(rep.loss_trace[k] <= rep.loss_trace[k - 1] + 1e-9);
  CHECK(rep.final_rms < 0.25 * before);
  CHECK_NOTHROW(fit.validate());
  for (Eigen::Index i = 0; i < fit.weights.rows(); ++i) {
    CHECK((fit.weights.row(i).array() > 0).count() <= cfg.max_influences);
  }
  CHECK(rep.final_loss == doctest::Approx(refine_loss(fit, frames, g, init.joints, cfg)).epsilon(1e-9));
}

TEST_CASE("unobserved vertices keep their initial state") {
  std::mt19937_64 rng(9);
  const Toy toy = make_toy(2, 6, 6);
  std::vector<Pose> poses;
  for (int f = 0; f < 4; ++f) poses.push_back(random_pose(rng, 2, 20));
  auto frames = observe_all(toy.model, poses, 1.0, rng);
  for (auto& f : frames) f.erase(f.begin());  // vertex 0 never seen
  SkinnedBodyModel m = toy.model;
  m.rest[0] += Vec3(1, 1, 1);
  const Vec3 rest0 = m.rest[0];
  const Eigen::RowVectorXd w0 = m.weights.row(0);
  RefineConfig cfg;
  cfg.outer_iterations = 5;
  const auto rep = refine(m, frames, geodesic_weights(toy.faces, m.rest, m.weights), cfg);
  CHECK(rep.unobserved_vertices == std::vector<int>{0});
  CHECK(m.rest[0] == rest0);
  CHECK(m.weights.row(0) == w0);
}

TEST_CASE("model validation and file round trip") {
  std::mt19937_64 rng(10);
  Toy toy = make_toy(3, 4, 5);
  toy.model.poses = {random_pose(rng, 3, 40), random_pose(rng, 3, 40)};
  CHECK_NOTHROW(toy.model.validate());
  const std::string text = serialize_model(toy.model);
  const auto back = parse_model(text);
  CHECK(serialize_model(back) == text);
  CHECK(back.rest == toy.model.rest);
  CHECK(back.parents == toy.model.parents);
  CHECK((back.weights - toy.model.weights).cwiseAbs().maxCoeff() == 0);
  REQUIRE(back.poses.size() == 2);
  CHECK(back.poses[1].translation == toy.model.poses[1].translation);

  auto bad = toy.model;
  bad.weights(0, 0) += 0.1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = toy.model;
  bad.parents = {1, 2, 0};
  CHECK_THROWS_AS(bad.joint_order(), Error);
  bad = toy.model;
  bad.weights(1, 0) = -0.5;
  bad.weights(1, 1) = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(parse_model("{}"), Error);
  CHECK_THROWS_AS(load_model("/nonexistent/model.json"), Error);
}

TEST_CASE("children may precede parents in the joint list") {
  SkinnedBodyModel m;
  m.joints = {Vec3(0, 0, 100), Vec3(0, 0, 0)};
  m.parents = {1, -1};
  m.rest = {Vec3(10, 0, 150)};
  m.weights = Eigen::MatrixXd::Zero(1, 2);
  m.weights(0, 0) = 1;
  CHECK(m.joint_order() == std::vector<int>{1, 0});
  Pose p = Pose::identity(2);
  p.rotations[1] = Quat(Eigen::AngleAxisd(0.3, Vec3::UnitX()));
  p.rotations[0] = Quat(Eigen::AngleAxisd(-0.2, Vec3::UnitY()));
  CHECK((skin_all(m, p)[0] - skin_oracle(m, p, 0)).norm() < 1e-9);
}

namespace {

// Clouds are drawn from the template itself: each corner is pinned to its
// closest template rest point and posed with the template's own weights.
struct IcpFixture {
  SyntheticScene scene = build_scene(SceneSpec::default_humanoid());
  TemplateModel templ = make_template(scene, 2);
  std::vector<IcpSeed> seeds = make_seeds(scene, templ, 40);
  std::vector<ClosestHit> pins;

  IcpFixture() {
    const TriangleBvh bvh(templ.vertices, templ.triangles);
    for (int i = 0; i < scene.layout.n_corners(); ++i) pins.push_back(bvh.closest(scene.model.rest[static_cast<size_t>(i)]));
  }

  FrameObservations corners_at(int frame, double normal_noise, std::mt19937_64& rng) const {
    SkinnedBodyModel t;
    t.joints = templ.joints;
    t.parents = templ.parents;
    const auto G = joint_transforms(t, animation_pose(scene, frame));
    std::normal_distribution<double> g(0, normal_noise);
    FrameObservations f;
    for (int i = 0; i < scene.layout.n_corners(); ++i) {
      const auto& h = pins[static_cast<size_t>(i)];
      const auto& tri = templ.triangles[static_cast<size_t>(h.triangle)];
      Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(templ.weights.cols());
      Vec3 x = Vec3::Zero();
      for (int k = 0; k < 3; ++k) {
        w += h.barycentric(k) * templ.weights.row(tri[static_cast<size_t>(k)]);
        x += h.barycentric(k) * templ.vertices[static_cast<size_t>(tri[static_cast<size_t>(k)])];
      }
      Vec3 p = blend_point(G, w, x);
      if (normal_noise > 0) {
        const Vec3 a = blend_point(G, w, templ.vertices[static_cast<size_t>(tri[0])]);
        const Vec3 b = blend_point(G, w, templ.vertices[static_cast<size_t>(tri[1])]);
        const Vec3 c = blend_point(G, w, templ.vertices[static_cast<size_t>(tri[2])]);
        p += g(rng) * (b - a).cross(c - a).normalized();
      }
      f.push_back({i, p});
    }
    return f;
  }
};

const IcpFixture& icp_fixture() {
  static const IcpFixture f;
  return f;
}

}  // namespace

TEST_CASE("ICP self-registration is exact") {
  const auto& fx = icp_fixture();
  std::mt19937_64 rng(11);
  const auto res = register_icp({fx.corners_at(0, 0, rng)}, fx.templ, fx.seeds, fx.scene.layout);
  CHECK(res.mean_residual < 1e-6);
  for (int i = 0; i < fx.scene.layout.n_corners(); ++i) CHECK(res.registered[static_cast<size_t>(i)]);
  CHECK_NOTHROW(res.model.validate());
  CHECK(res.model.n_vertices() == fx.scene.layout.n_vertices());
}

TEST_CASE("ICP tolerates normal noise") {
  const auto& fx = icp_fixture();
  std::mt19937_64 rng(12);
  const auto res = register_icp({fx.corners_at(0, 1.0, rng)}, fx.templ, fx.seeds, fx.scene.layout);
  CHECK(res.mean_residual <= 1.5);
}

TEST_CASE("ICP picks up corners from later frames") {
  const auto& fx = icp_fixture();
  std::mt19937_64 rng(13);
  std::vector<FrameObservations> clouds;
  auto first = fx.corners_at(0, 0, rng);
  std::uniform_real_distribution<double> u(0, 1);
  std::set<int> seeded;
  for (const auto& s : fx.seeds) seeded.insert(s.corner);
  FrameObservations kept;
  int hidden = 0;
  for (const auto& o : first) {
    if (!seeded.count(o.vertex) && u(rng) < 0.1) {
      ++hidden;
      continue;
    }
    kept.push_back(o);
  }
  CHECK(hidden > 50);
  clouds.push_back(kept);
  for (int f = 1; f <= 5; ++f) clouds.push_back(fx.corners_at(f * 7, 0, rng));
  const auto res = register_icp(clouds, fx.templ, fx.seeds, fx.scene.layout);
  for (int i = 0; i < fx.scene.layout.n_corners(); ++i) CHECK(res.registered[static_cast<size_t>(i)]);
}

TEST_CASE("ICP refuses too few seeds") {
  const auto& fx = icp_fixture();
  std::mt19937_64 rng(14);
  const std::vector<IcpSeed> few(fx.seeds.begin(), fx.seeds.begin() + 9);
  try {
    register_icp({fx.corners_at(0, 0, rng)}, fx.templ, few, fx.scene.layout);
    FAIL("expected InsufficientSeeds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientSeeds);
  }
}
