#include "mocap/mocap.h"

#include "core/bodymodel.hpp"
#include "core/error.hpp"
#include "core/geometry.hpp"
#include "core/io_util.hpp"
#include "core/pipeline.hpp"
#include "core/reconstruct.hpp"

#include <new>
#include <string>
#include <vector>

struct mocap_session {
  std::string config_doc;  // user document, defaults not merged in
  std::string effective;
  std::string summary;
  std::vector<std::string> outputs;
  std::string last_error;
};

struct mocap_rig {
  mocap::CameraRig rig;
};

struct mocap_model {
  mocap::SkinnedBodyModel model;
};

namespace {

thread_local std::string g_last_error;

mocap_status status_of(mocap::ErrorCode code) {
  using mocap::ErrorCode;
  switch (code) {
    case ErrorCode::Config: return MOCAP_ERR_CONFIG;
    case ErrorCode::Io: return MOCAP_ERR_IO;
    case ErrorCode::Calibration: return MOCAP_ERR_CALIBRATION;
    case ErrorCode::DivergedIcp: return MOCAP_ERR_ICP_DIVERGED;
    case ErrorCode::SingularKkt: return MOCAP_ERR_KKT_SINGULAR;
    case ErrorCode::InvalidArgument:
    case ErrorCode::BadCornerIndex:
    case ErrorCode::UnknownCorner:
    case ErrorCode::UnknownCode: return MOCAP_ERR_INVALID_ARGUMENT;
    case ErrorCode::NonPositiveDepth:
    case ErrorCode::PointAtInfinity:
    case ErrorCode::ParallelRays:
    case ErrorCode::NoConvergence:
    case ErrorCode::SingularBlend:
    case ErrorCode::DegenerateQuad: return MOCAP_ERR_NUMERIC;
    default: return MOCAP_ERR_GENERIC;
  }
}

// Runs f, converting exceptions into a status plus a thread-local message.
template <typename F>
mocap_status guarded(F&& f, std::string* session_error = nullptr) {
  mocap_status st = MOCAP_OK;
  try {
    f();
    return MOCAP_OK;
  } catch (const mocap::Error& e) {
    g_last_error = e.what();
    st = status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    st = MOCAP_ERR_GENERIC;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    st = MOCAP_ERR_GENERIC;
  } catch (...) {
    g_last_error = "unknown failure";
    st = MOCAP_ERR_GENERIC;
  }
  if (session_error) *session_error = g_last_error;
  return st;
}

mocap_status null_arg(const char* what) {
  g_last_error = std::string("null argument: ") + what;
  return MOCAP_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* mocap_version(void) { return "1.0.0"; }

const char* mocap_status_name(mocap_status status) {
  switch (status) {
    case MOCAP_OK: return "ok";
    case MOCAP_ERR_GENERIC: return "generic error";
    case MOCAP_ERR_CONFIG: return "config error";
    case MOCAP_ERR_IO: return "I/O error";
    case MOCAP_ERR_CALIBRATION: return "calibration error";
    case MOCAP_ERR_ICP_DIVERGED: return "ICP diverged";
    case MOCAP_ERR_KKT_SINGULAR: return "KKT system singular";
    case MOCAP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MOCAP_ERR_NUMERIC: return "numerical failure";
  }
  return "unknown status";
}

const char* mocap_last_error(void) { return g_last_error.c_str(); }

mocap_status mocap_session_create(const char* config_json, mocap_session** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    const std::string doc = config_json ? config_json : "";
    mocap::parse_pipeline_config(doc);  // reject bad documents up front
    *out = new mocap_session{doc, {}, {}, {}, {}};
  });
}

mocap_status mocap_session_load(const char* path, mocap_session** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  std::string text;
  const mocap_status st = guarded([&] { text = mocap::read_text_file(path); });
  if (st != MOCAP_OK) return st;
  return mocap_session_create(text.c_str(), out);
}

void mocap_session_destroy(mocap_session* session) { delete session; }

mocap_status mocap_session_set(mocap_session* session, const char* key, const char* value) {
  if (!session) return null_arg("session");
  if (!key) return null_arg("key");
  if (!value) return null_arg("value");
  return guarded(
      [&] {
        std::string doc = mocap::apply_config_override(session->config_doc, key, value);
        mocap::parse_pipeline_config(doc);
        session->config_doc = std::move(doc);
      },
      &session->last_error);
}

const char* mocap_session_config(mocap_session* session) {
  if (!session) {
    null_arg("session");
    return nullptr;
  }
  const mocap_status st = guarded(
      [&] {
        session->effective = mocap::serialize_pipeline_config(mocap::parse_pipeline_config(session->config_doc));
      },
      &session->last_error);
  return st == MOCAP_OK ? session->effective.c_str() : nullptr;
}

mocap_status mocap_session_run(mocap_session* session, const char* verb) {
  if (!session) return null_arg("session");
  if (!verb) return null_arg("verb");
  return guarded(
      [&] {
        const auto cfg = mocap::parse_pipeline_config(session->config_doc);
        auto result = mocap::run_command(verb, cfg);
        session->summary = std::move(result.summary);
        session->outputs = std::move(result.outputs);
        session->last_error.clear();
      },
      &session->last_error);
}

const char* mocap_session_summary(const mocap_session* session) { return session ? session->summary.c_str() : ""; }

size_t mocap_session_output_count(const mocap_session* session) { return session ? session->outputs.size() : 0; }

const char* mocap_session_output(const mocap_session* session, size_t index) {
  if (!session || index >= session->outputs.size()) return nullptr;
  return session->outputs[index].c_str();
}

const char* mocap_session_last_error(const mocap_session* session) {
  return session ? session->last_error.c_str() : "";
}

const char* mocap_default_config(void) {
  static const std::string doc = mocap::default_config_json();
  return doc.c_str();
}

mocap_status mocap_rig_load(const char* path, mocap_rig** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new mocap_rig{mocap::load_calibration(path)}; });
}

mocap_status mocap_rig_parse(const char* json_text, mocap_rig** out) {
  if (!json_text) return null_arg("json_text");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new mocap_rig{mocap::parse_calibration(json_text)}; });
}

void mocap_rig_destroy(mocap_rig* rig) { delete rig; }

size_t mocap_rig_camera_count(const mocap_rig* rig) { return rig ? rig->rig.cameras.size() : 0; }

mocap_status mocap_rig_camera_id(const mocap_rig* rig, size_t index, int* id) {
  if (!rig) return null_arg("rig");
  if (!id) return null_arg("id");
  if (index >= rig->rig.cameras.size()) {
    g_last_error = "camera index out of range";
    return MOCAP_ERR_INVALID_ARGUMENT;
  }
  *id = rig->rig.cameras[index].id;
  return MOCAP_OK;
}

mocap_status mocap_rig_project(const mocap_rig* rig, int camera_id, const double xyz[3], double px[2]) {
  if (!rig) return null_arg("rig");
  if (!xyz || !px) return null_arg("xyz/px");
  return guarded([&] {
    const mocap::Vec2 p = mocap::project(rig->rig.by_id(camera_id), mocap::Vec3(xyz[0], xyz[1], xyz[2]));
    px[0] = p.x();
    px[1] = p.y();
  });
}

mocap_status mocap_triangulate(const mocap_rig* rig, size_t n, const int* camera_ids, const double* pixels,
                               double xyz[3], double* residuals) {
  if (!rig) return null_arg("rig");
  if (!camera_ids || !pixels || !xyz) return null_arg("camera_ids/pixels/xyz");
  return guarded([&] {
    std::vector<mocap::LabeledObservation> obs(n);
    for (size_t i = 0; i < n; ++i) {
      obs[i].camera_id = camera_ids[i];
      obs[i].pixel = mocap::Vec2(pixels[2 * i], pixels[2 * i + 1]);
    }
    const auto res = mocap::triangulate(obs, rig->rig);
    xyz[0] = res.point.x();
    xyz[1] = res.point.y();
    xyz[2] = res.point.z();
    if (residuals) {
      for (size_t i = 0; i < n; ++i) residuals[i] = res.residuals[i];
    }
  });
}

mocap_status mocap_model_load(const char* path, mocap_model** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new mocap_model{mocap::load_model(path)}; });
}

void mocap_model_destroy(mocap_model* model) { delete model; }

size_t mocap_model_vertex_count(const mocap_model* model) { return model ? model->model.rest.size() : 0; }
size_t mocap_model_joint_count(const mocap_model* model) { return model ? model->model.joints.size() : 0; }
size_t mocap_model_frame_count(const mocap_model* model) { return model ? model->model.poses.size() : 0; }

mocap_status mocap_model_vertices(const mocap_model* model, int frame, double* out, size_t out_len) {
  if (!model) return null_arg("model");
  if (!out) return null_arg("out");
  const auto& m = model->model;
  if (out_len < 3 * m.rest.size()) {
    g_last_error = "output buffer too small";
    return MOCAP_ERR_INVALID_ARGUMENT;
  }
  if (frame < -1 || frame >= static_cast<int>(m.poses.size())) {
    g_last_error = "frame out of range";
    return MOCAP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const auto v = frame < 0 ? m.rest : mocap::skin_all(m, m.poses[static_cast<size_t>(frame)]);
    for (size_t i = 0; i < v.size(); ++i) {
      out[3 * i] = v[i].x();
      out[3 * i + 1] = v[i].y();
      out[3 * i + 2] = v[i].z();
    }
  });
}

}  // extern "C"
