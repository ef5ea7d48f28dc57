#pragma once

#include "core/bodymodel.hpp"
#include "core/inpaint.hpp"
#include "core/quadgen.hpp"
#include "core/reconstruct.hpp"
#include "core/simulator.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mocap {

/// Empty entries resolve to a fixed file name inside output_dir, so a
/// simulate -> reconstruct -> fit -> inpaint chain needs only output_dir.
struct PipelinePaths {
  std::string output_dir = "out";
  std::string calibration;
  std::string layout;
  std::string detections;
  std::string truth;
  std::string oracle;
  std::string clouds;
  std::string model;
  std::string init_model;
  std::string template_mesh;
  std::string seeds;

  std::string resolve(const std::string& path, const char* default_name) const;
};

struct SimulateSettings {
  int frames = 100;
  SceneSpec scene = SceneSpec::default_humanoid();
};

struct ReconstructSettings {
  FilterConfig filter;
  double cluster_radius = 3.0;
};

struct FitSettings {
  std::string init = "template";  // "template" (ICP) or "model"
  int train_frames = 0;           // 0: every non-held-out frame
  int frame_stride = 1;
  int heldout_frames = 0;         // taken from the end of the sequence
  int seeds = 40;
  int template_refine = 2;
  int pose_iterations = 20;       // before/after pose fits
  double perturb_joints_mm = 0.0; // "model" init only
  int blur_iterations = 0;        // "model" init only
  RefineConfig refine;
  IcpOptions icp;
};

struct InpaintSettings {
  WindowPlan plan;
  double temporal_weight = 100.0;
  int pose_iterations = 20;
  double hide_fraction = 0.0;  // hide observations to measure fill quality
  std::string format = "bin";  // "bin" or "obj"
};

struct EvalSettings {
  double hist_lo = 1e-4;
  double hist_hi = 100.0;
  int bins_per_decade = 4;
};

struct ExportSettings {
  int frame = -1;  // -1: rest pose
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  int workers = 0;  // 0: logical cores
  PipelinePaths paths;
  QuadFilterConfig quad_filter;
  SimulateSettings simulate;
  ReconstructSettings reconstruct;
  FitSettings fit;
  InpaintSettings inpaint;
  EvalSettings eval;
  ExportSettings export_mesh;

  void validate() const;
};

/// Every key with its default value.
std::string default_config_json();

/// Merges a JSON document over the defaults. Unknown keys are Config
/// errors, so typos never pass silently.
PipelineConfig parse_pipeline_config(const std::string& json_text);
std::string serialize_pipeline_config(const PipelineConfig& cfg);

/// Sets a dotted key ("fit.refine.lambda_g") in a config document. The value
/// is read as JSON when it parses, else as a string.
std::string apply_config_override(const std::string& json_text, const std::string& key, const std::string& value);

struct CommandResult {
  std::string summary;  // one JSON object
  std::vector<std::string> outputs;
};

/// simulate | reconstruct | fit | inpaint | eval | export-mesh
CommandResult run_command(const std::string& verb, const PipelineConfig& cfg);

std::string serialize_template(const TemplateModel& templ);
TemplateModel parse_template(const std::string& json_text);
std::string serialize_seeds(const std::vector<IcpSeed>& seeds);
std::vector<IcpSeed> parse_seeds(const std::string& json_text);

}  // namespace mocap
