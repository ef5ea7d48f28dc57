// Exercises the shared library through its C header only.
#include "mocap/mocap.h"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

// Two pinhole cameras looking down +z, 500 mm apart on x.
const char* kTwoCameras = R"([
  {"id": 3, "K": [1000, 0, 640, 0, 1000, 360, 0, 0, 1], "dist": [0, 0, 0, 0, 0],
   "q": [1, 0, 0, 0], "t": [0, 0, 0], "size": [1280, 720]},
  {"id": 9, "K": [1000, 0, 640, 0, 1000, 360, 0, 0, 1], "dist": [0, 0, 0, 0, 0],
   "q": [1, 0, 0, 0], "t": [-500, 0, 0], "size": [1280, 720]}
])";

void pinhole(double cx_world, const double p[3], double px[2]) {
  const double x = p[0] - cx_world, y = p[1], z = p[2];
  px[0] = 1000 * x / z + 640;
  px[1] = 1000 * y / z + 360;
}

}  // namespace

TEST_CASE("status names and null arguments") {
  CHECK(std::string(mocap_version()) == "1.0.0");
  CHECK(std::string(mocap_status_name(MOCAP_OK)) == "ok");
  CHECK(std::string(mocap_status_name(MOCAP_ERR_CALIBRATION)) == "calibration error");
  CHECK(std::string(mocap_status_name(static_cast<mocap_status>(99))) == "unknown status");

  CHECK(mocap_session_create(nullptr, nullptr) == MOCAP_ERR_INVALID_ARGUMENT);
  CHECK(std::string(mocap_last_error()).find("out") != std::string::npos);
  CHECK(mocap_session_run(nullptr, "simulate") == MOCAP_ERR_INVALID_ARGUMENT);
  CHECK(mocap_rig_parse(nullptr, nullptr) == MOCAP_ERR_INVALID_ARGUMENT);
  CHECK(mocap_session_summary(nullptr) != nullptr);
  CHECK(mocap_session_output(nullptr, 0) == nullptr);
  mocap_session_destroy(nullptr);
  mocap_rig_destroy(nullptr);
  mocap_model_destroy(nullptr);
}

TEST_CASE("session config handling") {
  mocap_session* s = nullptr;
  CHECK(mocap_session_create("{\"bogus\": 1}", &s) == MOCAP_ERR_CONFIG);
  CHECK(s == nullptr);
  CHECK(mocap_session_create("{oops", &s) == MOCAP_ERR_CONFIG);
  CHECK(mocap_session_load("/nonexistent/cfg.json", &s) == MOCAP_ERR_IO);

  REQUIRE(mocap_session_create("{\"seed\": 4}", &s) == MOCAP_OK);
  REQUIRE(s != nullptr);
  CHECK(std::string(mocap_session_config(s)).find("\"seed\": 4") != std::string::npos);
  CHECK(mocap_session_set(s, "seed", "12") == MOCAP_OK);
  CHECK(std::string(mocap_session_config(s)).find("\"seed\": 12") != std::string::npos);

  // A rejected override leaves the document untouched.
  CHECK(mocap_session_set(s, "fit.refine.not_a_key", "1") == MOCAP_ERR_CONFIG);
  CHECK(std::string(mocap_session_last_error(s)).find("not_a_key") != std::string::npos);
  CHECK(mocap_session_set(s, "inpaint.overlap", "1000") == MOCAP_ERR_CONFIG);
  CHECK(std::string(mocap_session_config(s)).find("\"seed\": 12") != std::string::npos);

  CHECK(mocap_session_run(s, "juggle") == MOCAP_ERR_CONFIG);
  CHECK(std::string(mocap_session_summary(s)).empty());
  mocap_session_destroy(s);

  CHECK(std::string(mocap_default_config()).find("\"quad_filter\"") != std::string::npos);
}

TEST_CASE("rig projection and triangulation") {
  mocap_rig* rig = nullptr;
  CHECK(mocap_rig_parse("{}", &rig) == MOCAP_ERR_CALIBRATION);
  CHECK(mocap_rig_parse(R"([{"id": 1, "K": [1,0,0,0,1,0,0,0,1], "dist": [0,0,0], "q": [1,0,0,0],
                            "t": [0,0,0], "size": [10,10]}])",
                        &rig) == MOCAP_ERR_CALIBRATION);
  CHECK(mocap_rig_load("/nonexistent/calib.json", &rig) == MOCAP_ERR_CALIBRATION);
  REQUIRE(mocap_rig_parse(kTwoCameras, &rig) == MOCAP_OK);
  CHECK(mocap_rig_camera_count(rig) == 2);
  int id = -1;
  CHECK(mocap_rig_camera_id(rig, 1, &id) == MOCAP_OK);
  CHECK(id == 9);
  CHECK(mocap_rig_camera_id(rig, 2, &id) == MOCAP_ERR_INVALID_ARGUMENT);

  const double p[3] = {100, 50, 3000};
  double px[2], expect[2];
  REQUIRE(mocap_rig_project(rig, 9, p, px) == MOCAP_OK);
  pinhole(500, p, expect);
  CHECK(px[0] == doctest::Approx(expect[0]).epsilon(1e-12));
  CHECK(px[1] == doctest::Approx(expect[1]).epsilon(1e-12));
  const double behind[3] = {0, 0, -10};
  CHECK(mocap_rig_project(rig, 3, behind, px) == MOCAP_ERR_NUMERIC);
  CHECK(mocap_rig_project(rig, 42, p, px) != MOCAP_OK);

  const int ids[2] = {3, 9};
  double pixels[4];
  pinhole(0, p, pixels);
  pinhole(500, p, pixels + 2);
  double xyz[3], res[2];
  REQUIRE(mocap_triangulate(rig, 2, ids, pixels, xyz, res) == MOCAP_OK);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(xyz[k] - p[k]) < 1e-6);
  CHECK(res[0] < 1e-6);
  CHECK(res[1] < 1e-6);
  CHECK(mocap_triangulate(rig, 1, ids, pixels, xyz, nullptr) != MOCAP_OK);
  mocap_rig_destroy(rig);
}

TEST_CASE("simulate through a session and read the model back") {
  const fs::path dir = fs::temp_directory_path() / "mocap_test_capi";
  fs::remove_all(dir);
  mocap_session* s = nullptr;
  REQUIRE(mocap_session_create(nullptr, &s) == MOCAP_OK);
  REQUIRE(mocap_session_set(s, "paths.output_dir", dir.string().c_str()) == MOCAP_OK);
  REQUIRE(mocap_session_set(s, "simulate.frames", "2") == MOCAP_OK);
  REQUIRE(mocap_session_set(s, "workers", "1") == MOCAP_OK);
  REQUIRE(mocap_session_run(s, "simulate") == MOCAP_OK);
  CHECK(std::string(mocap_session_summary(s)).find("\"simulate\"") != std::string::npos);
  REQUIRE(mocap_session_output_count(s) > 0);
  for (size_t i = 0; i < mocap_session_output_count(s); ++i) CHECK(fs::exists(mocap_session_output(s, i)));
  CHECK(mocap_session_output(s, mocap_session_output_count(s)) == nullptr);
  mocap_session_destroy(s);

  mocap_model* m = nullptr;
  CHECK(mocap_model_load((dir / "missing.json").string().c_str(), &m) == MOCAP_ERR_IO);
  REQUIRE(mocap_model_load((dir / "model_gt.json").string().c_str(), &m) == MOCAP_OK);
  const size_t n = mocap_model_vertex_count(m);
  CHECK(n > 1000);
  CHECK(mocap_model_joint_count(m) > 10);
  CHECK(mocap_model_frame_count(m) == 2);
  std::vector<double> rest(3 * n), posed(3 * n);
  CHECK(mocap_model_vertices(m, -1, rest.data(), rest.size() - 1) == MOCAP_ERR_INVALID_ARGUMENT);
  CHECK(mocap_model_vertices(m, 2, rest.data(), rest.size()) == MOCAP_ERR_INVALID_ARGUMENT);
  REQUIRE(mocap_model_vertices(m, -1, rest.data(), rest.size()) == MOCAP_OK);
  REQUIRE(mocap_model_vertices(m, 1, posed.data(), posed.size()) == MOCAP_OK);
  double moved = 0;
  for (size_t i = 0; i < rest.size(); ++i) {
    CHECK(std::isfinite(posed[i]));
    moved = std::max(moved, std::abs(posed[i] - rest[i]));
  }
  CHECK(moved > 1.0);
  mocap_model_destroy(m);
  fs::remove_all(dir);
}
