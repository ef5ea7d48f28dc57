// Batch driver over the C API. Exit codes: 0 ok, 1 generic, 2 config,
// 3 I/O, 4 calibration, 5 ICP divergence, 6 KKT failure.
#include "mocap/mocap.h"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

namespace {

int exit_code(mocap_status st) { return st <= MOCAP_ERR_KKT_SINGULAR ? static_cast<int>(st) : 1; }

int fail(mocap_status st, const char* what) {
  std::fprintf(stderr, "mocap: %s: %s (%s)\n", what, mocap_last_error(), mocap_status_name(st));
  return exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markerless-suit motion capture pipeline"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  int workers = -1;
  bool print_config = false;
  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a config key: key=value (repeatable; wins over the file)")
      ->allow_extra_args(false);
  app.add_option("--workers", workers, "Frame-level worker threads (0 = logical cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--print-config", print_config, "Print the effective config and exit");

  const char* verbs[][2] = {
      {"simulate", "Render a synthetic scene into detections and ground truth"},
      {"reconstruct", "Label, triangulate and filter detections into point clouds"},
      {"fit", "Register a template and refine the skinned body model"},
      {"inpaint", "Fill unobserved vertices and write the animation"},
      {"eval", "Reprojection and 3D error report"},
      {"export-mesh", "Write the model mesh at one frame (or rest) as OBJ"},
  };
  for (const auto& v : verbs) app.add_subcommand(v[0], v[1]);

  CLI11_PARSE(app, argc, argv);

  mocap_session* s = nullptr;
  mocap_status st = config_path.empty() ? mocap_session_create(nullptr, &s) : mocap_session_load(config_path.c_str(), &s);
  if (st != MOCAP_OK) return fail(st, "loading config");

  // Precedence: file < MOCAP_SEED < --set / --workers.
  if (const char* env = std::getenv("MOCAP_SEED"); env && *env) {
    st = mocap_session_set(s, "seed", env);
    if (st != MOCAP_OK) {
      mocap_session_destroy(s);
      return fail(st, "MOCAP_SEED");
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "mocap: --set expects key=value, got '%s'\n", o.c_str());
      mocap_session_destroy(s);
      return 2;
    }
    st = mocap_session_set(s, o.substr(0, eq).c_str(), o.substr(eq + 1).c_str());
    if (st != MOCAP_OK) {
      mocap_session_destroy(s);
      return fail(st, ("--set " + o).c_str());
    }
  }
  if (workers >= 0) {
    st = mocap_session_set(s, "workers", std::to_string(workers).c_str());
    if (st != MOCAP_OK) {
      mocap_session_destroy(s);
      return fail(st, "--workers");
    }
  }

  if (print_config) {
    const char* cfg = mocap_session_config(s);
    if (!cfg) {
      st = MOCAP_ERR_CONFIG;
      mocap_session_destroy(s);
      return fail(st, "config");
    }
    std::fputs(cfg, stdout);
    mocap_session_destroy(s);
    return 0;
  }
  const auto subs = app.get_subcommands();
  if (subs.empty()) {
    std::fputs(app.help().c_str(), stderr);
    mocap_session_destroy(s);
    return 2;
  }

  const std::string verb = subs.front()->get_name();
  st = mocap_session_run(s, verb.c_str());
  if (st != MOCAP_OK) {
    const int code = fail(st, verb.c_str());
    mocap_session_destroy(s);
    return code;
  }
  std::printf("%s\n", mocap_session_summary(s));
  for (size_t i = 0; i < mocap_session_output_count(s); ++i) std::printf("wrote %s\n", mocap_session_output(s, i));
  mocap_session_destroy(s);
  return 0;
}
