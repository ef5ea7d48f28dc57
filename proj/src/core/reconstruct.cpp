#include "core/reconstruct.hpp"

#include "core/error.hpp"
#include "core/io_util.hpp"
#include "core/parallel.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mocap {

namespace {

// Stand-in for an unusable reprojection (point behind the camera).
constexpr double kBehindCameraError = 1e12;

std::vector<const Camera*> lookup_cameras(std::span<const LabeledObservation> obs, const CameraRig& rig) {
  std::vector<const Camera*> cams;
  cams.reserve(obs.size());
  for (const auto& o : obs) cams.push_back(&rig.by_id(o.camera_id));
  return cams;
}

double safe_error(const Camera& cam, const Vec3& p, const Vec2& px) {
  if (!(cam.to_camera(p).z() > 0.0)) return kBehindCameraError;
  return reprojection_error(cam, p, px);
}

}  // namespace

Consolidation consolidate_labels(const DetectionFrame& frame, const SuitLayout& layout) {
  Consolidation out;
  const size_t n = frame.corners.size();
  // Per detected corner: (label, supporting readings).
  std::vector<std::vector<std::pair<int, int>>> labels(n);
  for (const auto& r : frame.readings) {
    const int q = layout.code_index(r.code);
    if (q < 0) {
      out.conflicts.push_back({frame.camera_id, -1, {}});
      continue;
    }
    const auto& quad = layout.quads()[static_cast<size_t>(q)];
    for (size_t k = 0; k < 4; ++k) {
      auto& slot = labels[static_cast<size_t>(r.idx[k])];
      const int id = quad.corners[k];
      auto it = std::find_if(slot.begin(), slot.end(), [id](const auto& e) { return e.first == id; });
      if (it == slot.end()) {
        slot.emplace_back(id, 1);
      } else {
        ++it->second;
      }
    }
  }

  std::map<int, std::vector<int>> claims;  // corner id -> detected indices
  for (size_t d = 0; d < n; ++d) {
    const auto& slot = labels[d];
    if (slot.empty()) continue;
    if (slot.size() > 1) {
      LabelConflict c{frame.camera_id, static_cast<int>(d), {}};
      for (const auto& e : slot) c.labels.push_back(e.first);
      out.conflicts.push_back(std::move(c));
      continue;
    }
    claims[slot.front().first].push_back(static_cast<int>(d));
  }
  for (const auto& [id, dets] : claims) {
    if (dets.size() > 1) {
      out.conflicts.push_back({frame.camera_id, -1, {id}});
      continue;
    }
    const int d = dets.front();
    LabeledObservation o;
    o.corner_id = id;
    o.camera_id = frame.camera_id;
    o.pixel = frame.corners[static_cast<size_t>(d)].position;
    o.source = std::min(labels[static_cast<size_t>(d)].front().second, 2);
    o.detection_index = d;
    out.observations.push_back(o);
  }
  return out;
}

namespace {

// Per-observation quantities reused across every triangulation of a corner.
struct RayObs {
  const Camera* cam = nullptr;
  Mat3 R;
  Vec2 xy;  // undistorted normalized coordinates
  Vec3 ray;
  Vec2 pixel;
};

RayObs prepare(const LabeledObservation& o, const CameraRig& rig) {
  RayObs r;
  r.cam = &rig.by_id(o.camera_id);
  r.R = r.cam->rotation.toRotationMatrix();
  r.xy = pixel_to_normalized(*r.cam, o.pixel);
  r.ray = (r.R.transpose() * Vec3(r.xy.x(), r.xy.y(), 1.0)).normalized();
  r.pixel = o.pixel;
  return r;
}

std::vector<RayObs> prepare_all(std::span<const LabeledObservation> obs, const CameraRig& rig) {
  std::vector<RayObs> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(prepare(o, rig));
  return out;
}

Vec3 linear_solve(std::span<const RayObs> obs, const TriangulationOptions& opts) {
  if (obs.size() < 2) throw Error(ErrorCode::InvalidArgument, "triangulation needs at least 2 observations");
  double min_cos = 1.0;
  for (size_t i = 0; i < obs.size(); ++i) {
    for (size_t j = i + 1; j < obs.size(); ++j) min_cos = std::min(min_cos, obs[i].ray.dot(obs[j].ray));
  }
  const double max_angle = std::acos(std::clamp(min_cos, -1.0, 1.0));
  if (max_angle * 180.0 / std::numbers::pi <= opts.min_ray_angle_deg) {
    throw Error(ErrorCode::ParallelRays, "viewing rays are (nearly) parallel");
  }
  // Normal equations of the stacked rows x * P3 - P1, y * P3 - P2 with
  // P = [R | t]; LM polishes whatever precision this loses.
  Mat3 M = Mat3::Zero();
  Vec3 v = Vec3::Zero();
  for (const auto& o : obs) {
    const Mat3& R = o.R;
    const Vec3& t = o.cam->translation;
    const Vec3 ax = o.xy.x() * R.row(2).transpose() - R.row(0).transpose();
    const Vec3 ay = o.xy.y() * R.row(2).transpose() - R.row(1).transpose();
    M += ax * ax.transpose() + ay * ay.transpose();
    v += ax * (t.x() - o.xy.x() * t.z()) + ay * (t.y() - o.xy.y() * t.z());
  }
  return M.colPivHouseholderQr().solve(v);
}

TriangulationResult lm_solve(std::span<const RayObs> obs, const TriangulationOptions& opts) {
  const size_t n = obs.size();
  auto evaluate = [&](const Vec3& p, Eigen::VectorXd* r, Eigen::MatrixXd* J) -> bool {
    for (size_t i = 0; i < n; ++i) {
      if (!(obs[i].cam->to_camera(p).z() > 0.0)) return false;
      if (J) {
        Eigen::Matrix<double, 2, 3> Ji;
        r->segment<2>(static_cast<Eigen::Index>(2 * i)) = project(*obs[i].cam, p, Ji) - obs[i].pixel;
        J->block<2, 3>(static_cast<Eigen::Index>(2 * i), 0) = Ji;
      } else {
        r->segment<2>(static_cast<Eigen::Index>(2 * i)) = project(*obs[i].cam, p) - obs[i].pixel;
      }
    }
    return true;
  };

  TriangulationResult res;
  Vec3 p = linear_solve(obs, opts);
  Eigen::VectorXd r(2 * n), r_try(2 * n);
  Eigen::MatrixXd J(2 * n, 3);
  if (!evaluate(p, &r, &J)) {
    throw Error(ErrorCode::NonPositiveDepth, "linear triangulation landed behind a camera");
  }
  double cost = r.squaredNorm();
  double lambda = -1.0;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    const Mat3 H = J.transpose() * J;
    const Vec3 g = J.transpose() * r;
    if (g.norm() < opts.gradient_tol) {
      res.converged = true;
      break;
    }
    if (lambda < 0.0) lambda = 1e-3 * H.diagonal().maxCoeff();
    bool accepted = false;
    while (!accepted) {
      Mat3 Hd = H;
      Hd.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
      const Vec3 step = -Hd.ldlt().solve(g);
      const Vec3 p_try = p + step;
      if (evaluate(p_try, &r_try, nullptr) && r_try.squaredNorm() < cost) {
        p = p_try;
        lambda = std::max(lambda * 0.1, 1e-15);
        accepted = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e16 || step.norm() <= 1e-15 * (1.0 + p.norm())) break;
      }
    }
    if (!accepted) {
      // No representable step lowers the cost: numerical minimum.
      res.converged = true;
      break;
    }
    evaluate(p, &r, &J);
    cost = r.squaredNorm();
  }
  res.point = p;
  res.iterations = it;
  res.objective = cost;
  res.residuals.resize(n);
  for (size_t i = 0; i < n; ++i) res.residuals[i] = r.segment<2>(static_cast<Eigen::Index>(2 * i)).norm();
  return res;
}

}  // namespace

Vec3 triangulate_linear(std::span<const LabeledObservation> obs, const CameraRig& rig,
                        const TriangulationOptions& opts) {
  if (obs.size() < 2) throw Error(ErrorCode::InvalidArgument, "triangulation needs at least 2 observations");
  return linear_solve(prepare_all(obs, rig), opts);
}

TriangulationResult triangulate(std::span<const LabeledObservation> obs, const CameraRig& rig,
                                const TriangulationOptions& opts) {
  if (obs.size() < 2) throw Error(ErrorCode::InvalidArgument, "triangulation needs at least 2 observations");
  return lm_solve(prepare_all(obs, rig), opts);
}

const char* to_string(DiscardReason r) {
  switch (r) {
    case DiscardReason::MislabelSuspect: return "MislabelSuspect";
    case DiscardReason::HighResidual: return "HighResidual";
    case DiscardReason::TooFewCameras: return "TooFewCameras";
  }
  return "Unknown";
}

DiscardReason discard_reason_from_string(const std::string& s) {
  if (s == "MislabelSuspect") return DiscardReason::MislabelSuspect;
  if (s == "HighResidual") return DiscardReason::HighResidual;
  if (s == "TooFewCameras") return DiscardReason::TooFewCameras;
  throw Error(ErrorCode::Config, "unknown discard reason '" + s + "'");
}

double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of empty set");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

CornerFilterResult filter_corner(std::span<const LabeledObservation> obs_in, const CameraRig& rig,
                                 const FilterConfig& cfg) {
  CornerFilterResult out;
  std::vector<LabeledObservation> obs(obs_in.begin(), obs_in.end());
  std::sort(obs.begin(), obs.end(),
            [](const auto& a, const auto& b) { return a.camera_id < b.camera_id; });
  const size_t n = obs.size();
  if (n < 2) {
    out.reason = DiscardReason::TooFewCameras;
    return out;
  }
  const auto cams = lookup_cameras(obs, rig);
  const auto rays = prepare_all(obs, rig);

  // (a) exhaustive pair search, lexicographic in camera id. Pairs are scored
  // from the closed-form point; only the winner gets the LM polish.
  double best = std::numeric_limits<double>::infinity();
  Vec3 best_point = Vec3::Zero();
  size_t best_j = 0, best_k = 0;
  std::vector<double> errors(n);
  for (size_t j = 0; j < n; ++j) {
    for (size_t k = j + 1; k < n; ++k) {
      const RayObs pair[2] = {rays[j], rays[k]};
      Vec3 p;
      try {
        p = linear_solve(pair, cfg.triangulation);
      } catch (const Error&) {
        continue;  // parallel rays
      }
      if (!(cams[j]->to_camera(p).z() > 0.0) || !(cams[k]->to_camera(p).z() > 0.0)) continue;
      double mean = 0.0;
      for (size_t i = 0; i < n; ++i) mean += safe_error(*cams[i], p, obs[i].pixel);
      mean /= static_cast<double>(n);
      if (mean < best - 1e-12) {
        best = mean;
        best_point = p;
        best_j = j;
        best_k = k;
        out.best_pair = {obs[j].camera_id, obs[k].camera_id};
      }
    }
  }
  if (out.best_pair.first < 0) {
    out.reason = DiscardReason::TooFewCameras;
    return out;
  }
  try {
    const RayObs pair[2] = {rays[best_j], rays[best_k]};
    best_point = lm_solve(pair, cfg.triangulation).point;
  } catch (const Error&) {
    // keep the linear point
  }
  for (size_t i = 0; i < n; ++i) errors[i] = safe_error(*cams[i], best_point, obs[i].pixel);
  out.pair_errors = errors;

  // (b) 1.5 x IQR rule; meaningless for two cameras.
  std::vector<LabeledObservation> kept;
  if (n >= 3) {
    const double q1 = quantile_type7(errors, 0.25);
    const double q3 = quantile_type7(errors, 0.75);
    const double fence = q3 + cfg.iqr_factor * (q3 - q1);
    for (size_t i = 0; i < n; ++i) {
      if (errors[i] > fence && errors[i] > cfg.min_outlier_error) {
        out.outlier_cameras.push_back(obs[i].camera_id);
      } else {
        kept.push_back(obs[i]);
      }
    }
  } else {
    kept = obs;
  }
  if (kept.size() < 2) {
    out.reason = DiscardReason::TooFewCameras;
    return out;
  }

  // (c) re-triangulate over the survivors.
  std::vector<RayObs> kept_rays;
  for (const auto& o : kept) {
    const auto it = std::find_if(obs.begin(), obs.end(), [&](const auto& x) { return x.camera_id == o.camera_id; });
    kept_rays.push_back(rays[static_cast<size_t>(it - obs.begin())]);
  }
  TriangulationResult tri;
  try {
    tri = lm_solve(kept_rays, cfg.triangulation);
  } catch (const Error&) {
    out.reason = DiscardReason::TooFewCameras;
    return out;
  }
  ReconstructedPoint& pt = out.point;
  pt.position = tri.point;
  for (size_t i = 0; i < kept.size(); ++i) {
    pt.cameras.push_back(kept[i].camera_id);
    pt.residuals.push_back(tri.residuals[i]);
  }
  double mean = 0.0;
  for (double e : pt.residuals) mean += e;
  pt.mean_reproj_err = mean / static_cast<double>(pt.residuals.size());

  // (d) absolute test.
  if (!(pt.mean_reproj_err <= cfg.max_mean_error)) {
    out.reason = DiscardReason::HighResidual;
    return out;
  }
  out.kept = true;
  return out;
}

LabeledPointCloud filter_mislabels(int frame_index,
                                   const std::map<int, std::vector<LabeledObservation>>& candidates,
                                   const CameraRig& rig, const FilterConfig& cfg) {
  LabeledPointCloud cloud;
  cloud.frame_index = frame_index;
  for (const auto& [id, obs] : candidates) {
    const auto r = filter_corner(obs, rig, cfg);
    for (int cam : r.outlier_cameras) cloud.rejected.push_back({id, cam, DiscardReason::MislabelSuspect});
    if (r.kept) {
      cloud.points.emplace(id, r.point);
    } else {
      cloud.discarded.emplace(id, r.reason);
    }
  }
  return cloud;
}

LabeledPointCloud reconstruct_frame(int frame_index, std::span<const DetectionFrame> cameras,
                                    const CameraRig& rig, const SuitLayout& layout,
                                    const ReconstructOptions& opts) {
  std::map<int, std::vector<LabeledObservation>> per_corner;
  int conflicts = 0;
  std::vector<std::string> errors;
  for (const auto& det : cameras) {
    try {
      if (rig.index_of(det.camera_id) < 0) {
        throw Error(ErrorCode::InvalidArgument, "detections reference unknown camera " +
                                                    std::to_string(det.camera_id));
      }
      const auto cons = consolidate_labels(cluster_frame(det, opts.cluster_radius), layout);
      conflicts += static_cast<int>(cons.conflicts.size());
      for (const auto& o : cons.observations) per_corner[o.corner_id].push_back(o);
    } catch (const Error& e) {
      errors.push_back("camera " + std::to_string(det.camera_id) + ": " + e.what());
    }
  }
  LabeledPointCloud cloud = filter_mislabels(frame_index, per_corner, rig, opts.filter);
  cloud.label_conflicts = conflicts;
  cloud.errors = std::move(errors);
  return cloud;
}

std::vector<LabeledPointCloud> reconstruct_sequence(const std::vector<DetectionFrame>& detections,
                                                    const CameraRig& rig, const SuitLayout& layout,
                                                    const ReconstructOptions& opts) {
  std::map<int, std::vector<DetectionFrame>> by_frame;
  for (const auto& d : detections) by_frame[d.frame_index].push_back(d);
  std::vector<std::pair<int, const std::vector<DetectionFrame>*>> frames;
  for (const auto& [f, dets] : by_frame) frames.emplace_back(f, &dets);

  std::vector<LabeledPointCloud> out(frames.size());
  parallel_for(frames.size(), opts.workers, [&](size_t i) {
    const auto& [f, dets] = frames[i];
    try {
      out[i] = reconstruct_frame(f, *dets, rig, layout, opts);
    } catch (const std::exception& e) {
      out[i] = LabeledPointCloud{};
      out[i].frame_index = f;
      out[i].errors.push_back(e.what());
    }
  });
  return out;
}

std::string serialize_cloud(const LabeledPointCloud& cloud, bool truth) {
  using nlohmann::json;
  json points = json::array();
  for (const auto& [id, p] : cloud.points) {
    points.push_back({{"id", id},
                      {"p", {p.position.x(), p.position.y(), p.position.z()}},
                      {"cams", p.cameras},
                      {"err", p.mean_reproj_err},
                      {"res", p.residuals}});
  }
  json discarded = json::array();
  for (const auto& [id, reason] : cloud.discarded) discarded.push_back({{"id", id}, {"reason", to_string(reason)}});
  json rejected = json::array();
  for (const auto& r : cloud.rejected) rejected.push_back({{"id", r.corner_id}, {"cam", r.camera_id}});
  json j = {{"frame", cloud.frame_index},
            {"points", std::move(points)},
            {"discarded", std::move(discarded)},
            {"rejected", std::move(rejected)}};
  if (truth) j["truth"] = true;
  if (!cloud.errors.empty()) j["errors"] = cloud.errors;
  return j.dump();
}

LabeledPointCloud parse_cloud(const std::string& line) {
  using nlohmann::json;
  try {
    const json j = json::parse(line);
    LabeledPointCloud c;
    c.frame_index = j.at("frame").get<int>();
    for (const auto& jp : j.at("points")) {
      ReconstructedPoint p;
      const auto pos = jp.at("p").get<std::vector<double>>();
      if (pos.size() != 3) throw Error(ErrorCode::Config, "point position must have 3 entries");
      p.position = Vec3(pos[0], pos[1], pos[2]);
      p.cameras = jp.value("cams", std::vector<int>{});
      p.mean_reproj_err = jp.value("err", 0.0);
      p.residuals = jp.value("res", std::vector<double>{});
      c.points.emplace(jp.at("id").get<int>(), std::move(p));
    }
    if (j.contains("discarded")) {
      for (const auto& jd : j.at("discarded")) {
        c.discarded.emplace(jd.at("id").get<int>(), discard_reason_from_string(jd.at("reason").get<std::string>()));
      }
    }
    if (j.contains("rejected")) {
      for (const auto& jr : j.at("rejected")) {
        c.rejected.push_back({jr.at("id").get<int>(), jr.at("cam").get<int>(), DiscardReason::MislabelSuspect});
      }
    }
    if (j.contains("errors")) c.errors = j.at("errors").get<std::vector<std::string>>();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed point-cloud line: ") + e.what());
  }
}

std::vector<LabeledPointCloud> load_clouds(const std::string& path) {
  std::vector<LabeledPointCloud> out;
  for (const auto& line : read_lines(path)) out.push_back(parse_cloud(line));
  return out;
}

}  // namespace mocap
