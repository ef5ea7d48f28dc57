#include "core/simulator.hpp"

#include "core/bvh.hpp"
#include "core/error.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <random>

namespace mocap {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Orthonormal ring basis for a tube axis.
void ring_basis(const Vec3& axis, Vec3& e1, Vec3& e2) {
  const Vec3 ref = std::abs(axis.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  e1 = axis.cross(ref).normalized();
  e2 = axis.cross(e1);
}

struct TubeSample {
  Vec3 position;
  Vec3 normal;
};

TubeSample tube_point(const TubeSpec& t, double u, double phi) {
  const Vec3 axis = (t.end - t.start).normalized();
  Vec3 e1, e2;
  ring_basis(axis, e1, e2);
  const Vec3 radial = std::cos(phi) * e1 + std::sin(phi) * e2;
  const double r = t.radius_start + (t.radius_end - t.radius_start) * u;
  return {t.start + u * (t.end - t.start) + r * radial, radial};
}

Eigen::RowVectorXd tube_weights(const SceneSpec& spec, const TubeSpec& t, double u) {
  const auto M = static_cast<Eigen::Index>(spec.joints.size());
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(M);
  const int parent = spec.joints[static_cast<size_t>(t.joint)].parent;
  double wp = 0.0;
  if (parent >= 0 && spec.blend_span > 0.0) wp = 0.5 * (1.0 - smoothstep(u / spec.blend_span));
  w(t.joint) = 1.0 - wp;
  if (wp > 0.0) w(parent) += wp;
  return w;
}

Vec3 vec3_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::Config, "expected a 3-vector");
  return Vec3(v[0], v[1], v[2]);
}

nlohmann::json to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

}  // namespace

SceneSpec SceneSpec::default_humanoid() {
  SceneSpec s;
  const Vec3 arm_l = Vec3(1.0, 0.0, -1.0).normalized();
  const Vec3 arm_r = Vec3(-1.0, 0.0, -1.0).normalized();
  const Vec3 sh_l(190, 0, 1430), sh_r(-190, 0, 1430);
  const Vec3 el_l = sh_l + 280 * arm_l, el_r = sh_r + 280 * arm_r;
  const Vec3 wr_l = el_l + 250 * arm_l, wr_r = el_r + 250 * arm_r;
  s.joints = {
      {"pelvis", -1, Vec3(0, 0, 1000), Vec3(4, 4, 20)},
      {"spine", 0, Vec3(0, 0, 1130), Vec3(6, 6, 8)},
      {"chest", 1, Vec3(0, 0, 1280), Vec3(6, 6, 8)},
      {"L_shoulder", 2, sh_l, Vec3(25, 15, 25)},
      {"L_elbow", 3, el_l, Vec3(30, 10, 15)},
      {"L_wrist", 4, wr_l, Vec3(15, 15, 15)},
      {"R_shoulder", 2, sh_r, Vec3(25, 15, 25)},
      {"R_elbow", 6, el_r, Vec3(30, 10, 15)},
      {"R_wrist", 7, wr_r, Vec3(15, 15, 15)},
      {"L_hip", 0, Vec3(95, 0, 950), Vec3(25, 10, 10)},
      {"L_knee", 9, Vec3(95, 0, 520), Vec3(30, 5, 5)},
      {"L_ankle", 10, Vec3(95, 0, 100), Vec3(15, 10, 10)},
      {"R_hip", 0, Vec3(-95, 0, 950), Vec3(25, 10, 10)},
      {"R_knee", 12, Vec3(-95, 0, 520), Vec3(30, 5, 5)},
      {"R_ankle", 13, Vec3(-95, 0, 100), Vec3(15, 10, 10)},
      {"head", 2, Vec3(0, 0, 1480), Vec3(10, 10, 15)},
  };
  s.tubes = {
      {0, Vec3(0, 0, 870), Vec3(0, 0, 1130), 145, 135, 6, 10, false},
      {1, Vec3(0, 0, 1130), Vec3(0, 0, 1280), 130, 135, 5, 10, true},
      {2, Vec3(0, 0, 1280), Vec3(0, 0, 1450), 140, 120, 6, 10, true},
      {15, Vec3(0, 0, 1500), Vec3(0, 0, 1720), 90, 80, 5, 8, false},
      {3, sh_l + 40 * arm_l, el_l, 48, 42, 7, 5, false},
      {4, el_l, wr_l, 40, 32, 7, 5, false},
      {5, wr_l, wr_l + 150 * arm_l, 30, 25, 3, 4, false},
      {6, sh_r + 40 * arm_r, el_r, 48, 42, 7, 5, false},
      {7, el_r, wr_r, 40, 32, 7, 5, false},
      {8, wr_r, wr_r + 150 * arm_r, 30, 25, 3, 4, false},
      {9, Vec3(95, 0, 860), Vec3(95, 0, 520), 75, 55, 8, 7, false},
      {10, Vec3(95, 0, 520), Vec3(95, 0, 100), 52, 40, 8, 6, false},
      {11, Vec3(95, -20, 80), Vec3(95, 160, 40), 40, 35, 3, 6, false},
      {12, Vec3(-95, 0, 860), Vec3(-95, 0, 520), 75, 55, 8, 7, false},
      {13, Vec3(-95, 0, 520), Vec3(-95, 0, 100), 52, 40, 8, 6, false},
      {14, Vec3(-95, -20, 80), Vec3(-95, 160, 40), 40, 35, 3, 6, false},
  };
  s.noise.pixel_sigma = 0.2;
  return s;
}

void SceneSpec::validate() const {
  if (joints.empty()) throw Error(ErrorCode::Config, "scene needs at least one joint");
  SkinnedBodyModel probe;
  for (const auto& j : joints) {
    probe.joints.push_back(j.position);
    probe.parents.push_back(j.parent);
  }
  try {
    probe.joint_order();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, std::string("scene joint tree: ") + e.what());
  }
  if (tubes.empty()) throw Error(ErrorCode::Config, "scene needs at least one tube");
  for (const auto& t : tubes) {
    if (t.joint < 0 || t.joint >= static_cast<int>(joints.size())) throw Error(ErrorCode::Config, "tube joint out of range");
    if ((t.end - t.start).norm() <= 0.0 || !(t.radius_start > 0.0) || !(t.radius_end > 0.0)) {
      throw Error(ErrorCode::Config, "tube needs a positive length and radii");
    }
    if (t.strips < 1 || t.codes_per_strip < 2) throw Error(ErrorCode::Config, "tube needs >= 1 strip and >= 2 codes per strip");
  }
  if (!(animation.period_frames > 0.0) || !(breathing.period_frames > 0.0)) {
    throw Error(ErrorCode::Config, "animation and breathing periods must be positive");
  }
  if (!(breathing.amplitude_mm >= 0.0 && breathing.amplitude_mm < 10.0)) {
    throw Error(ErrorCode::Config, "breathing amplitude must be in [0, 10) mm");
  }
  // Per-frame joint rotation stays below 10 degrees.
  for (const auto& j : joints) {
    const double rate = j.amplitude_deg.norm() * 2.0 * std::numbers::pi / animation.period_frames;
    if (rate >= 10.0) throw Error(ErrorCode::Config, "animation too fast for joint " + j.name);
  }
  if (rig.cameras < 2 || !(rig.radius_mm > 0.0) || !(rig.focal_px > 0.0) || rig.width <= 0 || rig.height <= 0) {
    throw Error(ErrorCode::Config, "rig needs >= 2 cameras and positive geometry");
  }
  if (!(blend_span >= 0.0 && blend_span <= 1.0)) throw Error(ErrorCode::Config, "blend_span must be in [0,1]");
  noise.validate();
}

SceneSpec parse_scene_spec(const std::string& json_text) {
  using nlohmann::json;
  try {
    const json j = json::parse(json_text);
    SceneSpec s = SceneSpec::default_humanoid();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("joints")) {
      s.joints.clear();
      for (const auto& jj : j.at("joints")) {
        JointSpec js;
        js.name = jj.value("name", std::string());
        js.parent = jj.at("parent").get<int>();
        js.position = vec3_from(jj.at("position"));
        if (jj.contains("amplitude_deg")) js.amplitude_deg = vec3_from(jj.at("amplitude_deg"));
        s.joints.push_back(js);
      }
    }
    if (j.contains("tubes")) {
      s.tubes.clear();
      for (const auto& jt : j.at("tubes")) {
        TubeSpec t;
        t.joint = jt.at("joint").get<int>();
        t.start = vec3_from(jt.at("start"));
        t.end = vec3_from(jt.at("end"));
        const auto r = jt.at("radius").get<std::vector<double>>();
        if (r.size() != 2) throw Error(ErrorCode::Config, "tube radius must be [start, end]");
        t.radius_start = r[0];
        t.radius_end = r[1];
        t.strips = jt.at("strips").get<int>();
        t.codes_per_strip = jt.at("codes_per_strip").get<int>();
        t.breathing = jt.value("breathing", false);
        s.tubes.push_back(t);
      }
    }
    if (j.contains("animation")) {
      const auto& a = j.at("animation");
      s.animation.period_frames = a.value("period_frames", s.animation.period_frames);
      s.animation.root_path_mm = a.value("root_path_mm", s.animation.root_path_mm);
      if (a.value("identity", false)) {
        for (auto& jt : s.joints) jt.amplitude_deg = Vec3::Zero();
        s.animation.root_path_mm = 0.0;
      }
    }
    if (j.contains("breathing")) {
      const auto& b = j.at("breathing");
      s.breathing.amplitude_mm = b.value("amplitude_mm", s.breathing.amplitude_mm);
      s.breathing.period_frames = b.value("period_frames", s.breathing.period_frames);
    }
    if (j.contains("rig")) {
      const auto& r = j.at("rig");
      s.rig.cameras = r.value("cameras", s.rig.cameras);
      s.rig.radius_mm = r.value("radius_mm", s.rig.radius_mm);
      s.rig.height_mm = r.value("height_mm", s.rig.height_mm);
      s.rig.focal_px = r.value("focal_px", s.rig.focal_px);
      s.rig.width = r.value("width", s.rig.width);
      s.rig.height = r.value("height", s.rig.height);
      if (r.contains("distortion")) {
        const auto d = r.at("distortion").get<std::vector<double>>();
        if (d.size() != 5) throw Error(ErrorCode::Config, "rig distortion must have 5 coefficients");
        std::copy(d.begin(), d.end(), s.rig.distortion.begin());
      }
      if (r.contains("target")) s.rig.target = vec3_from(r.at("target"));
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      s.noise.pixel_sigma = n.value("sigma", s.noise.pixel_sigma);
      s.noise.dropout_prob = n.value("dropout", s.noise.dropout_prob);
      s.noise.mislabel_prob = n.value("mislabel", s.noise.mislabel_prob);
    }
    s.blend_span = j.value("blend_span", s.blend_span);
    s.noise.seed = s.seed;
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed scene spec: ") + e.what());
  }
}

std::string serialize_scene_spec(const SceneSpec& s) {
  using nlohmann::json;
  json joints = json::array(), tubes = json::array();
  for (const auto& j : s.joints) {
    joints.push_back({{"name", j.name}, {"parent", j.parent}, {"position", to_json(j.position)},
                      {"amplitude_deg", to_json(j.amplitude_deg)}});
  }
  for (const auto& t : s.tubes) {
    tubes.push_back({{"joint", t.joint}, {"start", to_json(t.start)}, {"end", to_json(t.end)},
                     {"radius", {t.radius_start, t.radius_end}}, {"strips", t.strips},
                     {"codes_per_strip", t.codes_per_strip}, {"breathing", t.breathing}});
  }
  const json j = {
      {"seed", s.seed},
      {"joints", std::move(joints)},
      {"tubes", std::move(tubes)},
      {"animation",
       {{"period_frames", s.animation.period_frames}, {"root_path_mm", s.animation.root_path_mm}, {"identity", false}}},
      {"breathing", {{"amplitude_mm", s.breathing.amplitude_mm}, {"period_frames", s.breathing.period_frames}}},
      {"rig",
       {{"cameras", s.rig.cameras}, {"radius_mm", s.rig.radius_mm}, {"height_mm", s.rig.height_mm},
        {"focal_px", s.rig.focal_px}, {"width", s.rig.width}, {"height", s.rig.height},
        {"distortion", s.rig.distortion}, {"target", to_json(s.rig.target)}}},
      {"noise", {{"sigma", s.noise.pixel_sigma}, {"dropout", s.noise.dropout_prob}, {"mislabel", s.noise.mislabel_prob}}},
      {"blend_span", s.blend_span}};
  return j.dump(2) + "\n";
}

CameraRig build_default_rig(const RigSpec& spec) {
  if (spec.cameras < 2) throw Error(ErrorCode::Config, "rig needs at least 2 cameras");
  CameraRig rig;
  for (int c = 0; c < spec.cameras; ++c) {
    const double az = 2.0 * std::numbers::pi * c / spec.cameras;
    const Vec3 center(spec.radius_mm * std::cos(az), spec.radius_mm * std::sin(az), spec.height_mm);
    const Vec3 z = (spec.target - center).normalized();
    const Vec3 x = z.cross(Vec3::UnitZ()).normalized();
    const Vec3 y = z.cross(x);
    Mat3 R;
    R.row(0) = x.transpose();
    R.row(1) = y.transpose();
    R.row(2) = z.transpose();
    Camera cam;
    cam.id = c;
    cam.K << spec.focal_px, 0, 0.5 * spec.width, 0, spec.focal_px, 0.5 * spec.height, 0, 0, 1;
    cam.dist = spec.distortion;
    cam.rotation = Quat(R).normalized();
    cam.translation = -(cam.rotation * center);
    cam.width = spec.width;
    cam.height = spec.height;
    rig.cameras.push_back(cam);
  }
  rig.validate();
  return rig;
}

SyntheticScene build_scene(const SceneSpec& spec) {
  spec.validate();
  SyntheticScene sc;
  sc.spec = spec;
  std::vector<TubeGrid> grids;
  for (const auto& t : spec.tubes) grids.push_back({t.strips, t.codes_per_strip});
  sc.layout = generate_tube_layout(grids, CodeAlphabet{}, spec.seed, true);
  const int N = sc.layout.n_vertices();
  const auto M = static_cast<Eigen::Index>(spec.joints.size());

  SkinnedBodyModel& m = sc.model;
  m.rest.assign(static_cast<size_t>(N), Vec3::Zero());
  m.weights = Eigen::MatrixXd::Zero(N, M);
  for (const auto& j : spec.joints) {
    m.joints.push_back(j.position);
    m.parents.push_back(j.parent);
  }
  sc.breathing_axis.assign(static_cast<size_t>(N), Vec3::Zero());
  sc.vertex_tube.assign(static_cast<size_t>(N), -1);
  sc.vertex_u.assign(static_cast<size_t>(N), 0.0);

  for (size_t ti = 0; ti < spec.tubes.size(); ++ti) {
    const TubeSpec& t = spec.tubes[ti];
    const LayoutPatch& p = sc.layout.patches()[ti];
    for (int r = 0; r < p.rows; ++r) {
      const double u = static_cast<double>(r) / (p.rows - 1);
      const Eigen::RowVectorXd w = tube_weights(spec, t, u);
      for (int c = 0; c < p.cols; ++c) {
        const double phi = -2.0 * std::numbers::pi * c / p.cols;
        const TubeSample s = tube_point(t, u, phi);
        const int v = p.corner(r, c);
        m.rest[static_cast<size_t>(v)] = s.position;
        m.weights.row(v) = w;
        sc.vertex_tube[static_cast<size_t>(v)] = static_cast<int>(ti);
        sc.vertex_u[static_cast<size_t>(v)] = u;
        if (t.breathing) sc.breathing_axis[static_cast<size_t>(v)] = std::sin(std::numbers::pi * u) * s.normal;
      }
    }
    const Vec3 axis = (t.end - t.start).normalized();
    if (p.cap_start >= 0) {
      m.rest[static_cast<size_t>(p.cap_start)] = t.start - 0.5 * t.radius_start * axis;
      m.weights.row(p.cap_start) = tube_weights(spec, t, 0.0);
      sc.vertex_tube[static_cast<size_t>(p.cap_start)] = static_cast<int>(ti);
    }
    if (p.cap_end >= 0) {
      m.rest[static_cast<size_t>(p.cap_end)] = t.end + 0.5 * t.radius_end * axis;
      m.weights.row(p.cap_end) = tube_weights(spec, t, 1.0);
      sc.vertex_tube[static_cast<size_t>(p.cap_end)] = static_cast<int>(ti);
      sc.vertex_u[static_cast<size_t>(p.cap_end)] = 1.0;
    }
  }
  m.validate();
  sc.triangles = triangulate_faces(sc.layout.faces(), m.rest);
  sc.rig = build_default_rig(spec.rig);

  std::mt19937_64 rng(mix_seed(spec.seed, 0xA11CEULL));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (size_t j = 0; j < spec.joints.size(); ++j) {
    sc.joint_periods.push_back(spec.animation.period_frames * (1.0 + uni(rng)));
    const double a = 2.0 * std::numbers::pi * uni(rng);
    const double b = 2.0 * std::numbers::pi * uni(rng);
    const double c = 2.0 * std::numbers::pi * uni(rng);
    sc.joint_phases.emplace_back(a, b, c);
  }
  return sc;
}

Pose animation_pose(const SyntheticScene& scene, int frame) {
  const auto& spec = scene.spec;
  Pose pose = Pose::identity(static_cast<int>(spec.joints.size()));
  for (size_t j = 0; j < spec.joints.size(); ++j) {
    const double w = 2.0 * std::numbers::pi * frame / scene.joint_periods[j];
    const Vec3& ph = scene.joint_phases[j];
    const Vec3 theta = kDeg * spec.joints[j].amplitude_deg.cwiseProduct(
                                  Vec3(std::sin(w + ph.x()), std::sin(w + ph.y()), std::sin(w + ph.z())));
    const double angle = theta.norm();
    if (angle > 0.0) pose.rotations[j] = Quat(Eigen::AngleAxisd(angle, theta / angle));
  }
  const double P = 3.0 * spec.animation.period_frames;
  const double a = 2.0 * std::numbers::pi * frame / P;
  pose.translation = spec.animation.root_path_mm * Vec3(std::sin(a), 0.5 * std::sin(2.0 * a), 0.0);
  return pose;
}

std::vector<Vec3> breathing_displacement(const SyntheticScene& scene, int frame) {
  const double s = scene.spec.breathing.amplitude_mm *
                   std::sin(2.0 * std::numbers::pi * frame / scene.spec.breathing.period_frames);
  std::vector<Vec3> d(scene.breathing_axis.size());
  for (size_t i = 0; i < d.size(); ++i) d[i] = s * scene.breathing_axis[i];
  return d;
}

std::vector<Vec3> animate_and_sample(const SyntheticScene& scene, int frame) {
  const auto d = breathing_displacement(scene, frame);
  return skin_all(scene.model, animation_pose(scene, frame), &d);
}

VisibilityRecord compute_visibility(const SyntheticScene& scene, const std::vector<Vec3>& positions) {
  const auto& layout = scene.layout;
  const TriangleBvh bvh(positions, scene.triangles);
  const auto normals = vertex_normals(positions, scene.triangles);
  const int n_corners = layout.n_corners();
  VisibilityRecord rec;
  rec.corners.resize(scene.rig.cameras.size());
  rec.quads.resize(scene.rig.cameras.size());
  std::vector<char> visible(static_cast<size_t>(n_corners));
  for (size_t c = 0; c < scene.rig.cameras.size(); ++c) {
    const Camera& cam = scene.rig.cameras[c];
    const Vec3 center = cam.center();
    std::fill(visible.begin(), visible.end(), 0);
    for (int i = 0; i < n_corners; ++i) {
      const Vec3& p = positions[static_cast<size_t>(i)];
      if (!(cam.to_camera(p).z() > 0.0)) continue;
      if (!cam.in_image(project(cam, p))) continue;
      if (!(normals[static_cast<size_t>(i)].dot(center - p) > 0.0)) continue;
      const Vec3 from = p + 1e-6 * (center - p);
      const auto& tris = scene.triangles;
      const bool blocked = bvh.segment_blocked(from, center, [&](int t) {
        const auto& tri = tris[static_cast<size_t>(t)];
        return tri[0] == i || tri[1] == i || tri[2] == i;
      });
      if (blocked) continue;
      visible[static_cast<size_t>(i)] = 1;
      rec.corners[c].push_back(i);
    }
    for (size_t q = 0; q < layout.quads().size(); ++q) {
      const auto& corners = layout.quads()[q].corners;
      if (std::all_of(corners.begin(), corners.end(), [&](int v) { return visible[static_cast<size_t>(v)] != 0; })) {
        rec.quads[c].push_back(static_cast<int>(q));
      }
    }
  }
  return rec;
}

FrameTruth simulate_frame(const SyntheticScene& scene, int frame) {
  FrameTruth t;
  t.frame_index = frame;
  t.positions = animate_and_sample(scene, frame);
  VisibilityRecord v = compute_visibility(scene, t.positions);
  t.visible_corners = std::move(v.corners);
  t.visible_quads = std::move(v.quads);
  return t;
}

TemplateModel make_template(const SyntheticScene& scene, int refine) {
  if (refine < 1) throw Error(ErrorCode::InvalidArgument, "template refinement must be >= 1");
  const auto& spec = scene.spec;
  TemplateModel t;
  t.joints = scene.model.joints;
  t.parents = scene.model.parents;
  std::vector<Eigen::RowVectorXd> rows;
  for (const auto& tube : spec.tubes) {
    const int R = refine * tube.strips + 1;
    const int C = refine * 2 * tube.codes_per_strip;
    const int base = static_cast<int>(t.vertices.size());
    for (int r = 0; r < R; ++r) {
      const double u = static_cast<double>(r) / (R - 1);
      const Eigen::RowVectorXd w = tube_weights(spec, tube, u);
      for (int c = 0; c < C; ++c) {
        t.vertices.push_back(tube_point(tube, u, -2.0 * std::numbers::pi * c / C).position);
        rows.push_back(w);
      }
    }
    auto id = [&](int r, int c) { return base + r * C + (c % C); };
    for (int r = 0; r + 1 < R; ++r) {
      for (int c = 0; c < C; ++c) {
        const int tl = id(r, c), bl = id(r + 1, c), br = id(r + 1, c + 1), tr = id(r, c + 1);
        t.triangles.push_back({tl, bl, br});
        t.triangles.push_back({tl, br, tr});
      }
    }
    const Vec3 axis = (tube.end - tube.start).normalized();
    const int cs = static_cast<int>(t.vertices.size());
    t.vertices.push_back(tube.start - 0.5 * tube.radius_start * axis);
    rows.push_back(tube_weights(spec, tube, 0.0));
    const int ce = static_cast<int>(t.vertices.size());
    t.vertices.push_back(tube.end + 0.5 * tube.radius_end * axis);
    rows.push_back(tube_weights(spec, tube, 1.0));
    for (int c = 0; c < C; ++c) {
      t.triangles.push_back({cs, id(0, c), id(0, c + 1)});
      t.triangles.push_back({ce, id(R - 1, c + 1), id(R - 1, c)});
    }
  }
  t.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.joints.size()));
  for (size_t i = 0; i < rows.size(); ++i) t.weights.row(static_cast<Eigen::Index>(i)) = rows[i];
  t.validate();
  return t;
}

std::vector<IcpSeed> make_seeds(const SyntheticScene& scene, const TemplateModel& templ, int count) {
  const int n = scene.layout.n_corners();
  if (count < 1 || count > n) throw Error(ErrorCode::InvalidArgument, "seed count out of range");
  const TriangleBvh bvh(templ.vertices, templ.triangles);
  const auto& patches = scene.layout.patches();
  const int T = static_cast<int>(patches.size());

  // Like a person clicking points: every limb gets its share (at least two
  // when the budget allows, so a segment's rotation is pinned), spread along
  // the tube and around it.
  std::vector<int> corners;
  if (count >= 2 * T) {
    std::vector<int> share(static_cast<size_t>(T), 2);
    int left = count - 2 * T;
    for (int t = 0; left > 0; t = (t + 1) % T) {
      const auto& p = patches[static_cast<size_t>(t)];
      if (p.rows * p.cols > share[static_cast<size_t>(t)]) {
        ++share[static_cast<size_t>(t)];
        --left;
      }
    }
    for (int t = 0; t < T; ++t) {
      const auto& p = patches[static_cast<size_t>(t)];
      const int k_total = share[static_cast<size_t>(t)];
      for (int k = 0; k < k_total; ++k) {
        const int r = std::min(p.rows - 1, (2 * k + 1) * p.rows / (2 * k_total));
        const int c = (k * (p.cols / 3 + 1)) % p.cols;
        corners.push_back(p.corner(r, c));
      }
    }
  } else {
    for (int s = 0; s < count; ++s) corners.push_back(static_cast<int>((static_cast<long long>(s) * n + n / 2) / count));
  }
  std::vector<IcpSeed> seeds;
  for (int corner : corners) {
    const ClosestHit h = bvh.closest(scene.model.rest[static_cast<size_t>(corner)]);
    seeds.push_back({corner, h.triangle, h.barycentric});
  }
  return seeds;
}

}  // namespace mocap
