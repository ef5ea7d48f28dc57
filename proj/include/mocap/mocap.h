#ifndef MOCAP_MOCAP_H
#define MOCAP_MOCAP_H

#include <stddef.h>

#if defined(_WIN32)
#  if defined(MOCAP_BUILDING_LIBRARY)
#    define MOCAP_API __declspec(dllexport)
#  else
#    define MOCAP_API __declspec(dllimport)
#  endif
#else
#  define MOCAP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes; 0-6 double as CLI exit codes. */
typedef enum mocap_status {
  MOCAP_OK = 0,
  MOCAP_ERR_GENERIC = 1,
  MOCAP_ERR_CONFIG = 2,
  MOCAP_ERR_IO = 3,
  MOCAP_ERR_CALIBRATION = 4,
  MOCAP_ERR_ICP_DIVERGED = 5,
  MOCAP_ERR_KKT_SINGULAR = 6,
  MOCAP_ERR_INVALID_ARGUMENT = 7,
  MOCAP_ERR_NUMERIC = 8 /* non-positive depth, parallel rays, singular blend, ... */
} mocap_status;

typedef struct mocap_session mocap_session;
typedef struct mocap_rig mocap_rig;
typedef struct mocap_model mocap_model;

MOCAP_API const char* mocap_version(void);
MOCAP_API const char* mocap_status_name(mocap_status status);

/* Message of the last failure on the calling thread (never NULL). */
MOCAP_API const char* mocap_last_error(void);

/* ---- pipeline session: a config document plus the last run's summary ---- */

/* config_json may be NULL or "" for all defaults. */
MOCAP_API mocap_status mocap_session_create(const char* config_json, mocap_session** out);
MOCAP_API mocap_status mocap_session_load(const char* path, mocap_session** out);
MOCAP_API void mocap_session_destroy(mocap_session* session);

/* Dotted key, e.g. "fit.refine.lambda_g"; value is parsed as JSON when possible. */
MOCAP_API mocap_status mocap_session_set(mocap_session* session, const char* key, const char* value);

/* Effective config with every default filled in. Owned by the session;
   valid until the next call on it. NULL if the document is invalid. */
MOCAP_API const char* mocap_session_config(mocap_session* session);

/* simulate | reconstruct | fit | inpaint | eval | export-mesh */
MOCAP_API mocap_status mocap_session_run(mocap_session* session, const char* verb);

/* JSON summary of the last successful run ("" before any). Owned by the session. */
MOCAP_API const char* mocap_session_summary(const mocap_session* session);
MOCAP_API size_t mocap_session_output_count(const mocap_session* session);
MOCAP_API const char* mocap_session_output(const mocap_session* session, size_t index);
MOCAP_API const char* mocap_session_last_error(const mocap_session* session);

/* The built-in default config document. */
MOCAP_API const char* mocap_default_config(void);

/* ---- camera rig ---- */

MOCAP_API mocap_status mocap_rig_load(const char* path, mocap_rig** out);
MOCAP_API mocap_status mocap_rig_parse(const char* json_text, mocap_rig** out);
MOCAP_API void mocap_rig_destroy(mocap_rig* rig);
MOCAP_API size_t mocap_rig_camera_count(const mocap_rig* rig);
MOCAP_API mocap_status mocap_rig_camera_id(const mocap_rig* rig, size_t index, int* id);

/* World point (mm) to distorted pixel. */
MOCAP_API mocap_status mocap_rig_project(const mocap_rig* rig, int camera_id, const double xyz[3], double px[2]);

/* Linear-LS + Levenberg-Marquardt from n >= 2 views. pixels holds n (x, y)
   pairs; residuals (may be NULL) receives n pixel errors. */
MOCAP_API mocap_status mocap_triangulate(const mocap_rig* rig, size_t n, const int* camera_ids, const double* pixels,
                                         double xyz[3], double* residuals);

/* ---- skinned body model ---- */

MOCAP_API mocap_status mocap_model_load(const char* path, mocap_model** out);
MOCAP_API void mocap_model_destroy(mocap_model* model);
MOCAP_API size_t mocap_model_vertex_count(const mocap_model* model);
MOCAP_API size_t mocap_model_joint_count(const mocap_model* model);
MOCAP_API size_t mocap_model_frame_count(const mocap_model* model);

/* 3 * vertex_count doubles; frame -1 gives the rest pose. */
MOCAP_API mocap_status mocap_model_vertices(const mocap_model* model, int frame, double* out, size_t out_len);

#ifdef __cplusplus
}
#endif

#endif
