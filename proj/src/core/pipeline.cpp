#include "core/pipeline.hpp"

#include "core/detection.hpp"
#include "core/error.hpp"
#include "core/io_util.hpp"
#include "core/mesh.hpp"
#include "core/metrics.hpp"
#include "core/parallel.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

namespace mocap {

using nlohmann::json;

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::Config, "expected a 3-vector");
  return {v[0], v[1], v[2]};
}

json to_json(const PipelineConfig& c) {
  json scene = json::parse(serialize_scene_spec(c.simulate.scene));
  scene.erase("seed");  // the top-level seed drives the scene
  const auto& r = c.fit.refine;
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"paths",
       {{"output_dir", c.paths.output_dir}, {"calibration", c.paths.calibration}, {"layout", c.paths.layout},
        {"detections", c.paths.detections}, {"truth", c.paths.truth}, {"oracle", c.paths.oracle},
        {"clouds", c.paths.clouds}, {"model", c.paths.model}, {"init_model", c.paths.init_model},
        {"template", c.paths.template_mesh}, {"seeds", c.paths.seeds}}},
      {"quad_filter",
       {{"bbox_radius", c.quad_filter.bbox_radius}, {"min_area", c.quad_filter.min_area},
        {"max_area", c.quad_filter.max_area}, {"min_edge", c.quad_filter.min_edge},
        {"max_edge", c.quad_filter.max_edge}, {"min_angle", c.quad_filter.min_angle},
        {"max_angle", c.quad_filter.max_angle}}},
      {"simulate", {{"frames", c.simulate.frames}, {"scene", scene}}},
      {"reconstruct",
       {{"max_mean_error", c.reconstruct.filter.max_mean_error}, {"iqr_factor", c.reconstruct.filter.iqr_factor},
        {"min_outlier_error", c.reconstruct.filter.min_outlier_error},
        {"cluster_radius", c.reconstruct.cluster_radius}}},
      {"fit",
       {{"init", c.fit.init}, {"train_frames", c.fit.train_frames}, {"frame_stride", c.fit.frame_stride},
        {"heldout_frames", c.fit.heldout_frames}, {"seeds", c.fit.seeds}, {"template_refine", c.fit.template_refine},
        {"pose_iterations", c.fit.pose_iterations}, {"perturb_joints_mm", c.fit.perturb_joints_mm},
        {"blur_iterations", c.fit.blur_iterations},
        {"refine",
         {{"lambda_g", r.lambda_g}, {"lambda_j", r.lambda_j}, {"outer_iterations", r.outer_iterations},
          {"convergence_tol", r.convergence_tol}, {"pose_iterations", r.pose_iterations},
          {"max_influences", r.max_influences}}},
        {"icp",
         {{"max_iterations", c.fit.icp.max_iterations}, {"fit_iterations", c.fit.icp.fit_iterations},
          {"divergence_patience", c.fit.icp.divergence_patience}, {"min_seeds", c.fit.icp.min_seeds}}}}},
      {"inpaint",
       {{"window_length", c.inpaint.plan.window_length}, {"overlap", c.inpaint.plan.overlap},
        {"temporal_weight", c.inpaint.temporal_weight}, {"pose_iterations", c.inpaint.pose_iterations},
        {"hide_fraction", c.inpaint.hide_fraction}, {"format", c.inpaint.format}}},
      {"eval",
       {{"hist_lo", c.eval.hist_lo}, {"hist_hi", c.eval.hist_hi}, {"bins_per_decade", c.eval.bins_per_decade}}},
      {"export_mesh", {{"frame", c.export_mesh.frame}}},
  };
}

PipelineConfig from_json(const json& j) {
  PipelineConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.workers = j.at("workers").get<int>();
  const auto& p = j.at("paths");
  c.paths.output_dir = p.at("output_dir").get<std::string>();
  c.paths.calibration = p.at("calibration").get<std::string>();
  c.paths.layout = p.at("layout").get<std::string>();
  c.paths.detections = p.at("detections").get<std::string>();
  c.paths.truth = p.at("truth").get<std::string>();
  c.paths.oracle = p.at("oracle").get<std::string>();
  c.paths.clouds = p.at("clouds").get<std::string>();
  c.paths.model = p.at("model").get<std::string>();
  c.paths.init_model = p.at("init_model").get<std::string>();
  c.paths.template_mesh = p.at("template").get<std::string>();
  c.paths.seeds = p.at("seeds").get<std::string>();
  const auto& q = j.at("quad_filter");
  c.quad_filter.bbox_radius = q.at("bbox_radius").get<double>();
  c.quad_filter.min_area = q.at("min_area").get<double>();
  c.quad_filter.max_area = q.at("max_area").get<double>();
  c.quad_filter.min_edge = q.at("min_edge").get<double>();
  c.quad_filter.max_edge = q.at("max_edge").get<double>();
  c.quad_filter.min_angle = q.at("min_angle").get<double>();
  c.quad_filter.max_angle = q.at("max_angle").get<double>();
  const auto& s = j.at("simulate");
  c.simulate.frames = s.at("frames").get<int>();
  json scene = s.at("scene");
  scene["seed"] = c.seed;
  c.simulate.scene = parse_scene_spec(scene.dump());
  const auto& r = j.at("reconstruct");
  c.reconstruct.filter.max_mean_error = r.at("max_mean_error").get<double>();
  c.reconstruct.filter.iqr_factor = r.at("iqr_factor").get<double>();
  c.reconstruct.filter.min_outlier_error = r.at("min_outlier_error").get<double>();
  c.reconstruct.cluster_radius = r.at("cluster_radius").get<double>();
  const auto& f = j.at("fit");
  c.fit.init = f.at("init").get<std::string>();
  c.fit.train_frames = f.at("train_frames").get<int>();
  c.fit.frame_stride = f.at("frame_stride").get<int>();
  c.fit.heldout_frames = f.at("heldout_frames").get<int>();
  c.fit.seeds = f.at("seeds").get<int>();
  c.fit.template_refine = f.at("template_refine").get<int>();
  c.fit.pose_iterations = f.at("pose_iterations").get<int>();
  c.fit.perturb_joints_mm = f.at("perturb_joints_mm").get<double>();
  c.fit.blur_iterations = f.at("blur_iterations").get<int>();
  const auto& fr = f.at("refine");
  c.fit.refine.lambda_g = fr.at("lambda_g").get<double>();
  c.fit.refine.lambda_j = fr.at("lambda_j").get<double>();
  c.fit.refine.outer_iterations = fr.at("outer_iterations").get<int>();
  c.fit.refine.convergence_tol = fr.at("convergence_tol").get<double>();
  c.fit.refine.pose_iterations = fr.at("pose_iterations").get<int>();
  c.fit.refine.max_influences = fr.at("max_influences").get<int>();
  const auto& fi = f.at("icp");
  c.fit.icp.max_iterations = fi.at("max_iterations").get<int>();
  c.fit.icp.fit_iterations = fi.at("fit_iterations").get<int>();
  c.fit.icp.divergence_patience = fi.at("divergence_patience").get<int>();
  c.fit.icp.min_seeds = fi.at("min_seeds").get<int>();
  const auto& in = j.at("inpaint");
  c.inpaint.plan.window_length = in.at("window_length").get<int>();
  c.inpaint.plan.overlap = in.at("overlap").get<int>();
  c.inpaint.temporal_weight = in.at("temporal_weight").get<double>();
  c.inpaint.pose_iterations = in.at("pose_iterations").get<int>();
  c.inpaint.hide_fraction = in.at("hide_fraction").get<double>();
  c.inpaint.format = in.at("format").get<std::string>();
  const auto& e = j.at("eval");
  c.eval.hist_lo = e.at("hist_lo").get<double>();
  c.eval.hist_hi = e.at("hist_hi").get<double>();
  c.eval.bins_per_decade = e.at("bins_per_decade").get<int>();
  c.export_mesh.frame = j.at("export_mesh").at("frame").get<int>();
  c.validate();
  return c;
}

// Arrays (scene joints and tubes) are replaced wholesale, so only object
// keys are checked.
void check_keys(const json& defaults, const json& user, const std::string& where) {
  if (!user.is_object()) {
    if (defaults.is_object()) throw Error(ErrorCode::Config, "config: '" + where + "' must be an object");
    return;
  }
  if (!defaults.is_object()) throw Error(ErrorCode::Config, "config: '" + where + "' must not be an object");
  for (const auto& [k, v] : user.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!defaults.contains(k)) throw Error(ErrorCode::Config, "config: unknown key '" + path + "'");
    check_keys(defaults.at(k), v, path);
  }
}

struct Outputs {
  std::vector<std::string> files;

  void text(const std::string& path, const std::string& contents) {
    write_text_file(path, contents);
    files.push_back(path);
  }
};

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

bool file_exists(const std::string& path) { return std::filesystem::is_regular_file(path); }

std::vector<double> all_residuals(const std::vector<LabeledPointCloud>& clouds) {
  std::vector<double> r;
  for (const auto& c : clouds) {
    for (const auto& [id, p] : c.points) r.insert(r.end(), p.residuals.begin(), p.residuals.end());
  }
  return r;
}

json percentile_json(const std::vector<double>& values) {
  json rows = json::array();
  for (const auto& row : percentile_table(values)) rows.push_back({{"percent", row.percent}, {"value", row.value}});
  return rows;
}

std::string percentile_csv(const std::vector<double>& values, const char* column) {
  std::ostringstream out;
  out << "percentile," << column << '\n';
  for (const auto& row : percentile_table(values)) out << row.percent << ',' << format_double(row.value) << '\n';
  return out.str();
}

json stats_json(const std::vector<double>& values) {
  const SummaryStats s = summarize(values);
  return {{"count", s.count}, {"mean", s.mean}, {"rms", s.rms}, {"max", s.max}};
}

// ---------------------------------------------------------------- simulate

CommandResult cmd_simulate(const PipelineConfig& cfg) {
  const auto& P = cfg.paths;
  ensure_directory(P.output_dir);
  SceneSpec spec = cfg.simulate.scene;
  spec.seed = cfg.seed;
  spec.noise.seed = cfg.seed;
  const SyntheticScene scene = build_scene(spec);
  const int F = cfg.simulate.frames;
  const size_t C = scene.rig.cameras.size();

  std::vector<FrameTruth> truths(static_cast<size_t>(F));
  std::vector<std::vector<OracleDetection>> dets(static_cast<size_t>(F));
  parallel_for(static_cast<size_t>(F), cfg.workers, [&](size_t k) {
    truths[k] = simulate_frame(scene, static_cast<int>(k));
    for (size_t c = 0; c < C; ++c) {
      dets[k].push_back(oracle_detect(truths[k], scene.rig.cameras[c], static_cast<int>(c), scene.layout, spec.noise));
    }
  });

  std::vector<std::string> det_lines, oracle_lines, truth_lines;
  double visible_corners = 0.0, visible_quads = 0.0;
  for (int k = 0; k < F; ++k) {
    const auto& t = truths[static_cast<size_t>(k)];
    for (size_t c = 0; c < C; ++c) {
      const auto& d = dets[static_cast<size_t>(k)][c];
      det_lines.push_back(serialize_detection(d.frame));
      json mis = json::array();
      for (size_t r = 0; r < d.reading_mislabeled.size(); ++r) {
        if (d.reading_mislabeled[r]) mis.push_back(r);
      }
      oracle_lines.push_back(json{{"frame", k}, {"cam", d.frame.camera_id}, {"ids", d.truth_ids}, {"mislabeled", mis}}.dump());
      visible_corners += static_cast<double>(t.visible_corners[c].size());
      visible_quads += static_cast<double>(t.visible_quads[c].size());
    }
    LabeledPointCloud truth;
    truth.frame_index = k;
    for (int i = 0; i < scene.layout.n_corners(); ++i) truth.points[i].position = t.positions[static_cast<size_t>(i)];
    for (size_t c = 0; c < C; ++c) {
      for (int i : t.visible_corners[c]) truth.points[i].cameras.push_back(scene.rig.cameras[c].id);
    }
    truth_lines.push_back(serialize_cloud(truth, true));
  }

  SkinnedBodyModel gt = scene.model;
  for (int k = 0; k < F; ++k) gt.poses.push_back(animation_pose(scene, k));
  const TemplateModel templ = make_template(scene, cfg.fit.template_refine);
  const auto seeds = make_seeds(scene, templ, std::min(cfg.fit.seeds, scene.layout.n_corners()));

  Outputs out;
  out.text(P.resolve(P.calibration, "calibration.json"), serialize_calibration(scene.rig));
  out.text(P.resolve(P.layout, "layout.json"), serialize_layout(scene.layout));
  out.text(P.resolve("", "scene.json"), serialize_scene_spec(spec));
  out.text(P.resolve(P.detections, "detections.jsonl"), join_lines(det_lines));
  out.text(P.resolve(P.oracle, "oracle.jsonl"), join_lines(oracle_lines));
  out.text(P.resolve(P.truth, "truth.jsonl"), join_lines(truth_lines));
  out.text(P.resolve("", "model_gt.json"), serialize_model(gt));
  out.text(P.resolve(P.template_mesh, "template.json"), serialize_template(templ));
  out.text(P.resolve(P.seeds, "seeds.json"), serialize_seeds(seeds));

  const double views = std::max(1.0, static_cast<double>(F) * static_cast<double>(C));
  const json summary = {{"command", "simulate"},
                        {"frames", F},
                        {"cameras", C},
                        {"corners", scene.layout.n_corners()},
                        {"codes", scene.layout.quads().size()},
                        {"vertices", scene.layout.n_vertices()},
                        {"detection_lines", det_lines.size()},
                        {"mean_visible_corners", visible_corners / views},
                        {"mean_visible_quads", visible_quads / views}};
  return {summary.dump(), out.files};
}

// ------------------------------------------------------------- reconstruct

CommandResult cmd_reconstruct(const PipelineConfig& cfg) {
  const auto& P = cfg.paths;
  const CameraRig rig = load_calibration(P.resolve(P.calibration, "calibration.json"));
  const SuitLayout layout = load_layout(P.resolve(P.layout, "layout.json"));
  const auto detections = load_detections(P.resolve(P.detections, "detections.jsonl"));
  ensure_directory(P.output_dir);

  ReconstructOptions opts;
  opts.filter = cfg.reconstruct.filter;
  opts.cluster_radius = cfg.reconstruct.cluster_radius;
  opts.workers = cfg.workers;
  const auto clouds = reconstruct_sequence(detections, rig, layout, opts);

  std::vector<std::string> lines;
  long long points = 0, rejected = 0, errors = 0;
  std::map<std::string, long long> discards = {{"MislabelSuspect", 0}, {"HighResidual", 0}, {"TooFewCameras", 0}};
  for (const auto& c : clouds) {
    lines.push_back(serialize_cloud(c));
    points += static_cast<long long>(c.points.size());
    rejected += static_cast<long long>(c.rejected.size());
    errors += static_cast<long long>(c.errors.size());
    for (const auto& [id, reason] : c.discarded) ++discards[to_string(reason)];
  }
  const auto residuals = all_residuals(clouds);

  Outputs out;
  out.text(P.resolve(P.clouds, "clouds.jsonl"), join_lines(lines));
  std::ostringstream csv;
  csv << percentile_csv(residuals, "reprojection_error_px");
  csv << "\ndiscard_reason,corners\n";
  for (const auto& [k, v] : discards) csv << k << ',' << v << '\n';
  csv << "RejectedObservation," << rejected << '\n';
  out.text(P.resolve("", "reconstruct_report.csv"), csv.str());
  const json report = {{"command", "reconstruct"},
                       {"frames", clouds.size()},
                       {"points", points},
                       {"observations", residuals.size()},
                       {"percentiles", percentile_json(residuals)},
                       {"discarded", discards},
                       {"rejected_observations", rejected},
                       {"frame_errors", errors}};
  out.text(P.resolve("", "reconstruct_report.json"), report.dump(2) + "\n");
  return {report.dump(), out.files};
}

// -------------------------------------------------------------------- eval

CommandResult cmd_eval(const PipelineConfig& cfg) {
  const auto& P = cfg.paths;
  const auto clouds = load_clouds(P.resolve(P.clouds, "clouds.jsonl"));
  ensure_directory(P.output_dir);
  const auto residuals = all_residuals(clouds);
  const auto& E = cfg.eval;
  const LogHistogram hist = log_histogram(residuals, E.hist_lo, E.hist_hi, E.bins_per_decade);

  json report = {{"command", "eval"},
                 {"frames", clouds.size()},
                 {"observations", residuals.size()},
                 {"reprojection", stats_json(residuals)},
                 {"percentiles", percentile_json(residuals)},
                 {"histogram_total", hist.total()}};

  const std::string truth_path = P.resolve(P.truth, "truth.jsonl");
  if (file_exists(truth_path)) {
    const auto truth = load_clouds(truth_path);
    std::map<int, const LabeledPointCloud*> by_frame;
    for (const auto& t : truth) by_frame[t.frame_index] = &t;
    std::vector<double> err3d;
    long long reconstructible = 0, reconstructed = 0;
    for (const auto& c : clouds) {
      const auto it = by_frame.find(c.frame_index);
      if (it == by_frame.end()) continue;
      for (const auto& [id, p] : c.points) {
        const auto t = it->second->points.find(id);
        if (t != it->second->points.end()) err3d.push_back((p.position - t->second.position).norm());
      }
      for (const auto& [id, t] : it->second->points) {
        if (t.cameras.size() < 2) continue;
        ++reconstructible;
        reconstructed += c.points.count(id) ? 1 : 0;
      }
    }
    report["truth"] = {{"error_3d_mm", stats_json(err3d)},
                       {"percentiles_3d_mm", percentile_json(err3d)},
                       {"reconstructible", reconstructible},
                       {"reconstructed", reconstructed}};
  } else {
    report["truth"] = nullptr;
  }

  // Mislabel confusion needs the oracle's per-corner identities.
  const std::string oracle_path = P.resolve(P.oracle, "oracle.jsonl");
  const std::string det_path = P.resolve(P.detections, "detections.jsonl");
  const std::string layout_path = P.resolve(P.layout, "layout.json");
  if (file_exists(oracle_path) && file_exists(det_path) && file_exists(layout_path)) {
    const SuitLayout layout = load_layout(layout_path);
    const auto dets = load_detections(det_path);
    std::map<std::pair<int, int>, std::vector<int>> ids;
    for (const auto& line : read_lines(oracle_path)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      ids[{j.at("frame").get<int>(), j.at("cam").get<int>()}] = j.at("ids").get<std::vector<int>>();
    }
    std::map<int, const LabeledPointCloud*> by_frame;
    for (const auto& c : clouds) by_frame[c.frame_index] = &c;
    // Observations grouped per (frame, label); labels read by a single camera
    // never reach the filter and are left out of the confusion counts.
    struct Seen {
      int camera;
      bool wrong;
    };
    std::map<std::pair<int, int>, std::vector<Seen>> by_label;
    for (const auto& d : dets) {
      const auto idit = ids.find({d.frame_index, d.camera_id});
      if (idit == ids.end() || !by_frame.count(d.frame_index)) continue;
      const auto owner = cluster_assignment(d.corners, cfg.reconstruct.cluster_radius);
      std::vector<int> survivors;
      for (size_t i = 0; i < owner.size(); ++i) {
        if (owner[i] == static_cast<int>(i)) survivors.push_back(static_cast<int>(i));
      }
      const auto cons = consolidate_labels(cluster_frame(d, cfg.reconstruct.cluster_radius), layout);
      for (const auto& o : cons.observations) {
        const int original = survivors[static_cast<size_t>(o.detection_index)];
        by_label[{d.frame_index, o.corner_id}].push_back(
            {d.camera_id, idit->second[static_cast<size_t>(original)] != o.corner_id});
      }
    }
    long long injected = 0, caught = 0, correct = 0, false_removed = 0;
    for (const auto& [key, list] : by_label) {
      if (list.size() < 2) continue;
      const auto& points = by_frame.at(key.first)->points;
      const auto p = points.find(key.second);
      for (const auto& o : list) {
        const bool kept = p != points.end() &&
                          std::find(p->second.cameras.begin(), p->second.cameras.end(), o.camera) !=
                              p->second.cameras.end();
        if (o.wrong) {
          ++injected;
          caught += kept ? 0 : 1;
        } else {
          ++correct;
          false_removed += kept ? 0 : 1;
        }
      }
    }
    report["mislabels"] = {
        {"mislabeled_observations", injected},
        {"removed", caught},
        {"removal_rate", injected ? json(static_cast<double>(caught) / static_cast<double>(injected)) : json(nullptr)},
        {"correct_observations", correct},
        {"false_removals", false_removed},
        {"false_removal_rate", correct ? static_cast<double>(false_removed) / static_cast<double>(correct) : 0.0}};
  } else {
    report["mislabels"] = nullptr;
  }

  Outputs out;
  out.text(P.resolve("", "eval.json"), report.dump(2) + "\n");
  out.text(P.resolve("", "eval.csv"), percentile_csv(residuals, "reprojection_error_px"));
  const HistogramSeries series = {{"reprojection", hist}};
  out.text(P.resolve("", "eval_hist.csv"), histogram_csv(series));
  out.text(P.resolve("", "eval_hist.svg"), histogram_svg(series, "Reprojection error", "pixels"));
  return {report.dump(), out.files};
}

// --------------------------------------------------------------------- fit

void blur_weights(Eigen::MatrixXd& W, const std::vector<std::pair<int, int>>& edges, int iterations) {
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(W.rows(), W.cols());
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(W.rows());
    for (const auto& [a, b] : edges) {
      acc.row(a) += W.row(b);
      acc.row(b) += W.row(a);
      cnt(a) += 1.0;
      cnt(b) += 1.0;
    }
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      if (cnt(i) > 0.0) W.row(i) = 0.5 * W.row(i) + 0.5 * acc.row(i) / cnt(i);
    }
  }
}

std::vector<double> residual_distances(const SkinnedBodyModel& m, const std::vector<FrameObservations>& frames) {
  std::vector<double> d;
  for (size_t k = 0; k < frames.size(); ++k) {
    for (const auto& o : frames[k]) d.push_back((skin(m, static_cast<int>(k), o.vertex) - o.position).norm());
  }
  return d;
}

CommandResult cmd_fit(const PipelineConfig& cfg) {
  const auto& P = cfg.paths;
  const auto& F = cfg.fit;
  const SuitLayout layout = load_layout(P.resolve(P.layout, "layout.json"));
  const auto clouds = load_clouds(P.resolve(P.clouds, "clouds.jsonl"));
  ensure_directory(P.output_dir);

  std::vector<FrameObservations> all;
  for (const auto& c : clouds) all.push_back(observations_from_cloud(c));
  const int K = static_cast<int>(all.size());
  if (F.heldout_frames >= K) throw Error(ErrorCode::Config, "fit: held-out frames leave nothing to train on");
  std::vector<FrameObservations> train, heldout(all.end() - F.heldout_frames, all.end());
  for (int k = 0; k < K - F.heldout_frames; k += F.frame_stride) {
    if (F.train_frames > 0 && static_cast<int>(train.size()) >= F.train_frames) break;
    train.push_back(all[static_cast<size_t>(k)]);
  }

  SkinnedBodyModel model;
  json init = {{"mode", F.init}};
  if (F.init == "template") {
    const TemplateModel templ = parse_template(read_text_file(P.resolve(P.template_mesh, "template.json")));
    const auto seeds = parse_seeds(read_text_file(P.resolve(P.seeds, "seeds.json")));
    const IcpResult icp = register_icp(train, templ, seeds, layout, F.icp);
    model = icp.model;
    init["icp_iterations"] = icp.iterations;
    init["icp_mean_residual"] = icp.mean_residual;
  } else {
    model = load_model(P.resolve(P.init_model, "model_gt.json"));
    model.poses.clear();
    if (F.perturb_joints_mm > 0.0) {
      std::mt19937_64 rng(mix_seed(cfg.seed, 0x301A7ULL));
      std::normal_distribution<double> g(0.0, 1.0);
      for (auto& j : model.joints) {
        Vec3 d(g(rng), g(rng), g(rng));
        j += F.perturb_joints_mm * d.normalized();
      }
    }
    blur_weights(model.weights, face_edges(layout.faces()), F.blur_iterations);
  }
  if (model.n_vertices() != layout.n_vertices()) {
    throw Error(ErrorCode::Config, "fit: model vertex count does not match the layout");
  }
  const Eigen::MatrixXd G = geodesic_weights(layout.faces(), model.rest, model.weights);

  // Before: the initial model with its poses fit to the same data.
  SkinnedBodyModel before = model;
  fit_poses(before, train, F.pose_iterations, cfg.workers);
  const auto err_before = residual_distances(before, train);
  double heldout_before = 0.0, heldout_after = 0.0;
  if (!heldout.empty()) {
    SkinnedBodyModel h = model;
    h.poses.clear();
    fit_poses(h, heldout, F.pose_iterations, cfg.workers);
    heldout_before = fitting_rms(h, heldout);
  }

  model.poses = before.poses;
  RefineConfig rc = F.refine;
  rc.workers = cfg.workers;
  const RefineReport rep = refine(model, train, G, rc);
  const auto err_after = residual_distances(model, train);
  if (!heldout.empty()) {
    SkinnedBodyModel h = model;
    h.poses.clear();
    fit_poses(h, heldout, F.pose_iterations, cfg.workers);
    heldout_after = fitting_rms(h, heldout);
  }

  double max_increase = 0.0;
  for (size_t i = 1; i < rep.loss_trace.size(); ++i) {
    max_increase = std::max(max_increase, rep.loss_trace[i] - rep.loss_trace[i - 1]);
  }
  Outputs out;
  out.text(P.resolve(P.model, "model.json"), serialize_model(model));
  std::ostringstream trace;
  trace << "iteration,loss,rms\n";
  for (size_t i = 0; i < rep.loss_trace.size(); ++i) {
    trace << i << ',' << format_double(rep.loss_trace[i]) << ',' << format_double(rep.rms_trace[i]) << '\n';
  }
  out.text(P.resolve("", "fit_loss.csv"), trace.str());
  const HistogramSeries series = {{"before", log_histogram(err_before, 1e-4, 1e3, cfg.eval.bins_per_decade)},
                                  {"after", log_histogram(err_after, 1e-4, 1e3, cfg.eval.bins_per_decade)}};
  out.text(P.resolve("", "fit_histogram.csv"), histogram_csv(series));
  out.text(P.resolve("", "fit_histogram.svg"), histogram_svg(series, "Fitting error", "mm"));
  json report = {{"command", "fit"},
                 {"init", init},
                 {"train_frames", train.size()},
                 {"heldout_frames", heldout.size()},
                 {"train_rms_before", summarize(err_before).rms},
                 {"train_rms_after", summarize(err_after).rms},
                 {"iterations", rep.iterations},
                 {"converged", rep.converged},
                 {"final_loss", rep.final_loss},
                 {"loss_max_increase", max_increase},
                 {"unobserved_vertices", rep.unobserved_vertices.size()}};
  if (!heldout.empty()) {
    report["heldout_rms_before"] = heldout_before;
    report["heldout_rms_after"] = heldout_after;
    report["heldout_reduction"] = heldout_before > 0.0 ? 1.0 - heldout_after / heldout_before : 0.0;
  }
  out.text(P.resolve("", "fit_report.json"), report.dump(2) + "\n");
  return {report.dump(), out.files};
}

// ----------------------------------------------------------------- inpaint

CommandResult cmd_inpaint(const PipelineConfig& cfg) {
  const auto& P = cfg.paths;
  const auto& I = cfg.inpaint;
  SkinnedBodyModel model = load_model(P.resolve(P.model, "model.json"));
  const SuitLayout layout = load_layout(P.resolve(P.layout, "layout.json"));
  const auto clouds = load_clouds(P.resolve(P.clouds, "clouds.jsonl"));
  if (model.n_vertices() != layout.n_vertices()) {
    throw Error(ErrorCode::Config, "inpaint: model vertex count does not match the layout");
  }
  ensure_directory(P.output_dir);
  const int K = static_cast<int>(clouds.size());

  std::vector<FrameObservations> visible(static_cast<size_t>(K)), hidden(static_cast<size_t>(K));
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x1D3ULL));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < K; ++k) {
    for (const auto& o : observations_from_cloud(clouds[static_cast<size_t>(k)])) {
      (I.hide_fraction > 0.0 && uni(rng) < I.hide_fraction ? hidden : visible)[static_cast<size_t>(k)].push_back(o);
    }
  }

  if (static_cast<int>(model.poses.size()) != K) model.poses.clear();
  fit_poses(model, visible, I.pose_iterations, cfg.workers);
  const InpaintConstraints cons = unpose_observations(model, visible, &layout);
  int clamped = 0;
  const auto L = build_spatial_laplacian(model.rest, layout.faces(), &clamped);
  InpaintReport rep;
  const DisplacementField field =
      solve_sequence(L, layout.faces(), cons, I.plan, {I.temporal_weight, cfg.workers}, &rep);

  std::vector<std::vector<Vec3>> meshes(static_cast<size_t>(K));
  parallel_for(static_cast<size_t>(K), cfg.workers,
               [&](size_t k) { meshes[k] = complete_mesh(model, field, static_cast<int>(k)); });

  Outputs out;
  if (I.format == "obj") {
    const std::string dir = P.resolve("", "animation_obj");
    ensure_directory(dir);
    for (int k = 0; k < K; ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "/frame_%05d.obj", k);
      out.text(dir + name, to_obj(meshes[static_cast<size_t>(k)], layout.faces()));
    }
  } else {
    const std::string path = P.resolve("", "animation.bin");
    write_animation(path, meshes);
    out.files.push_back(path);
  }

  std::vector<int> observed(static_cast<size_t>(K), 0);
  for (const auto& e : cons.entries) ++observed[static_cast<size_t>(e.frame)];
  std::ostringstream holes;
  holes << "frame,observed,filled,hidden\n";
  for (int k = 0; k < K; ++k) {
    holes << clouds[static_cast<size_t>(k)].frame_index << ',' << observed[static_cast<size_t>(k)] << ','
          << layout.n_vertices() - observed[static_cast<size_t>(k)] << ',' << hidden[static_cast<size_t>(k)].size()
          << '\n';
  }
  out.text(P.resolve("", "holes.csv"), holes.str());

  json windows = json::array();
  for (const auto& w : rep.windows) {
    windows.push_back({{"first_frame", w.first_frame},
                       {"frames", w.frames},
                       {"free_variables", w.free_variables},
                       {"zeroed_components", w.zeroed_components},
                       {"regularized_components", w.regularized_components}});
  }
  json report = {{"command", "inpaint"},
                 {"frames", K},
                 {"constraints", cons.entries.size()},
                 {"skipped_observations", cons.skipped.size()},
                 {"clamped_cotangents", clamped},
                 {"blended", rep.blended},
                 {"singular", rep.singular},
                 {"windows", windows}};
  // Fill quality against the observations that were withheld.
  std::vector<double> hidden_err;
  for (int k = 0; k < K; ++k) {
    for (const auto& o : hidden[static_cast<size_t>(k)]) {
      hidden_err.push_back((meshes[static_cast<size_t>(k)][static_cast<size_t>(o.vertex)] - o.position).norm());
    }
  }
  report["hidden"] = stats_json(hidden_err);
  out.text(P.resolve("", "inpaint_report.json"), report.dump(2) + "\n");
  return {report.dump(), out.files};
}

// ------------------------------------------------------------- export-mesh

CommandResult cmd_export_mesh(const PipelineConfig& cfg) {
  const auto& P = cfg.paths;
  const SkinnedBodyModel model = load_model(P.resolve(P.model, "model.json"));
  const SuitLayout layout = load_layout(P.resolve(P.layout, "layout.json"));
  if (model.n_vertices() != layout.n_vertices()) {
    throw Error(ErrorCode::Config, "export-mesh: model vertex count does not match the layout");
  }
  const int f = cfg.export_mesh.frame;
  if (f < -1 || f >= static_cast<int>(model.poses.size())) {
    throw Error(ErrorCode::Config, "export-mesh: frame " + std::to_string(f) + " out of range");
  }
  ensure_directory(P.output_dir);
  const auto positions = f < 0 ? model.rest : skin_all(model, model.poses[static_cast<size_t>(f)]);
  Outputs out;
  const std::string path = P.resolve("", f < 0 ? "mesh_rest.obj" : ("mesh_" + std::to_string(f) + ".obj").c_str());
  out.text(path, to_obj(positions, layout.faces()));
  const json report = {{"command", "export-mesh"}, {"frame", f}, {"vertices", positions.size()},
                       {"faces", layout.faces().size()}};
  return {report.dump(), out.files};
}

}  // namespace

std::string PipelinePaths::resolve(const std::string& path, const char* default_name) const {
  if (!path.empty()) return path;
  return (std::filesystem::path(output_dir) / default_name).string();
}

void PipelineConfig::validate() const {
  if (workers < 0) throw Error(ErrorCode::Config, "workers must be >= 0");
  if (paths.output_dir.empty()) throw Error(ErrorCode::Config, "paths.output_dir must not be empty");
  quad_filter.validate();
  simulate.scene.validate();
  if (simulate.frames < 1) throw Error(ErrorCode::Config, "simulate.frames must be >= 1");
  if (!(reconstruct.filter.max_mean_error > 0.0) || !(reconstruct.filter.iqr_factor > 0.0) ||
      !(reconstruct.filter.min_outlier_error >= 0.0) || !(reconstruct.cluster_radius >= 0.0)) {
    throw Error(ErrorCode::Config, "reconstruct thresholds must be positive");
  }
  if (fit.init != "template" && fit.init != "model") throw Error(ErrorCode::Config, "fit.init must be template or model");
  if (fit.train_frames < 0 || fit.frame_stride < 1 || fit.heldout_frames < 0 || fit.seeds < 1 ||
      fit.template_refine < 1 || fit.pose_iterations < 1 || !(fit.perturb_joints_mm >= 0.0) ||
      fit.blur_iterations < 0) {
    throw Error(ErrorCode::Config, "fit settings out of range");
  }
  fit.refine.validate();
  if (fit.icp.max_iterations < 1 || fit.icp.fit_iterations < 1 || fit.icp.divergence_patience < 1 ||
      fit.icp.min_seeds < 1) {
    throw Error(ErrorCode::Config, "fit.icp settings must be >= 1");
  }
  inpaint.plan.validate();
  if (!(inpaint.temporal_weight >= 0.0) || inpaint.pose_iterations < 1 ||
      !(inpaint.hide_fraction >= 0.0 && inpaint.hide_fraction < 1.0) ||
      (inpaint.format != "bin" && inpaint.format != "obj")) {
    throw Error(ErrorCode::Config, "inpaint settings out of range");
  }
  if (!(eval.hist_lo > 0.0) || !(eval.hist_hi > eval.hist_lo) || eval.bins_per_decade < 1) {
    throw Error(ErrorCode::Config, "eval histogram bounds invalid");
  }
  if (export_mesh.frame < -1) throw Error(ErrorCode::Config, "export_mesh.frame must be >= -1");
}

std::string default_config_json() { return to_json(PipelineConfig{}).dump(2) + "\n"; }

PipelineConfig parse_pipeline_config(const std::string& json_text) {
  try {
    const json user = json_text.empty() ? json::object() : json::parse(json_text);
    json doc = to_json(PipelineConfig{});
    check_keys(doc, user, "");
    doc.merge_patch(user);
    return from_json(doc);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("config: ") + e.what());
  }
}

std::string serialize_pipeline_config(const PipelineConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string apply_config_override(const std::string& json_text, const std::string& key, const std::string& value) {
  if (key.empty()) throw Error(ErrorCode::Config, "empty override key");
  json doc;
  try {
    doc = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("config: ") + e.what());
  }
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw Error(ErrorCode::Config, "malformed override key '" + key + "'");
    if (!node->is_object()) throw Error(ErrorCode::Config, "override '" + key + "' descends into a non-object");
    if (i + 1 == parts.size()) {
      (*node)[parts[i]] = v;
    } else {
      node = &(*node)[parts[i]];
      if (node->is_null()) *node = json::object();
    }
  }
  return doc.dump(2) + "\n";
}

CommandResult run_command(const std::string& verb, const PipelineConfig& cfg) {
  cfg.validate();
  if (verb == "simulate") return cmd_simulate(cfg);
  if (verb == "reconstruct") return cmd_reconstruct(cfg);
  if (verb == "fit") return cmd_fit(cfg);
  if (verb == "inpaint") return cmd_inpaint(cfg);
  if (verb == "eval") return cmd_eval(cfg);
  if (verb == "export-mesh") return cmd_export_mesh(cfg);
  throw Error(ErrorCode::Config, "unknown command '" + verb + "'");
}

std::string serialize_template(const TemplateModel& t) {
  json verts = json::array(), tris = json::array(), joints = json::array(), weights = json::array();
  for (const auto& v : t.vertices) verts.push_back(vec3_json(v));
  for (const auto& tr : t.triangles) tris.push_back({tr[0], tr[1], tr[2]});
  for (const auto& j : t.joints) joints.push_back(vec3_json(j));
  for (Eigen::Index i = 0; i < t.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.weights.cols(); ++j) {
      if (t.weights(i, j) != 0.0) weights.push_back({i, j, t.weights(i, j)});
    }
  }
  const json doc = {{"vertices", verts}, {"triangles", tris}, {"joints", joints}, {"parents", t.parents},
                    {"weights", weights}};
  return doc.dump() + "\n";
}

TemplateModel parse_template(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    TemplateModel t;
    for (const auto& v : j.at("vertices")) t.vertices.push_back(vec3_from(v));
    for (const auto& tr : j.at("triangles")) {
      const auto a = tr.get<std::vector<int>>();
      if (a.size() != 3) throw Error(ErrorCode::Config, "template triangle needs 3 indices");
      t.triangles.push_back({a[0], a[1], a[2]});
    }
    for (const auto& v : j.at("joints")) t.joints.push_back(vec3_from(v));
    t.parents = j.at("parents").get<std::vector<int>>();
    t.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t.vertices.size()),
                                      static_cast<Eigen::Index>(t.joints.size()));
    for (const auto& w : j.at("weights")) {
      const auto i = w.at(0).get<long long>(), c = w.at(1).get<long long>();
      if (i < 0 || i >= t.weights.rows() || c < 0 || c >= t.weights.cols()) {
        throw Error(ErrorCode::Config, "template weight index out of range");
      }
      t.weights(i, c) = w.at(2).get<double>();
    }
    t.validate();
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed template: ") + e.what());
  }
}

std::string serialize_seeds(const std::vector<IcpSeed>& seeds) {
  json doc = json::array();
  for (const auto& s : seeds) {
    doc.push_back({{"corner", s.corner}, {"triangle", s.triangle}, {"barycentric", vec3_json(s.barycentric)}});
  }
  return doc.dump() + "\n";
}

std::vector<IcpSeed> parse_seeds(const std::string& json_text) {
  try {
    std::vector<IcpSeed> seeds;
    for (const auto& s : json::parse(json_text)) {
      seeds.push_back({s.at("corner").get<int>(), s.at("triangle").get<int>(), vec3_from(s.at("barycentric"))});
    }
    return seeds;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed seeds: ") + e.what());
  }
}

}  // namespace mocap
