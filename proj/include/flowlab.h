/* C interface to the stochastic-flow toolkit: coefficient fields, Euler
 * paths, the drift-removing coordinate change, and the experiment runner.
 * Handles are opaque; every call returns a status code and leaves a
 * thread-local message readable through fl_last_error(). Buffers are plain
 * double arrays, column-major where a matrix is involved. */

#ifndef FLOWLAB_H
#define FLOWLAB_H

#include <stdint.h>

#if defined(_WIN32)
#define FL_API __declspec(dllexport)
#else
#define FL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Mirrors the tool exit codes. */
typedef enum fl_status {
  FL_OK = 0,
  FL_ERR_CONFIG = 2,
  FL_ERR_NUMERIC = 3,
  FL_ERR_ACCEPTANCE = 4,
  FL_ERR_INTERNAL = 5
} fl_status;

FL_API const char* fl_version(void);

/* Message from the last failing call on this thread; never NULL. */
FL_API const char* fl_last_error(void);

typedef struct fl_drift fl_drift;
typedef struct fl_sigma fl_sigma;
typedef struct fl_transform fl_transform;

/* Drift presets: "zero", "const:c=<v>", "linear:a=<a>",
 * "holder:theta=<t>,scale=<c>". dim in [1, 3]. */
FL_API fl_status fl_drift_create(const char* preset, int dim, fl_drift** out);
/* Smoothed copy at mollification level n (kernel scale 1/n). */
FL_API fl_status fl_drift_mollify(const fl_drift* b, int level, int quad_points,
                                  fl_drift** out);
FL_API fl_status fl_drift_eval(const fl_drift* b, const double* x, double* out /* dim */);
FL_API int fl_drift_dim(const fl_drift* b);
FL_API void fl_drift_destroy(fl_drift* b);

/* Diffusion presets: "identity", "zero", "const:c=<v>", "sin-perturbed:eps=<e>". */
FL_API fl_status fl_sigma_create(const char* preset, int dim, fl_sigma** out);
FL_API fl_status fl_sigma_eval(const fl_sigma* s, const double* x,
                               double* out /* dim x dim_noise */);
FL_API int fl_sigma_dim(const fl_sigma* s);
FL_API int fl_sigma_dim_noise(const fl_sigma* s);
FL_API void fl_sigma_destroy(fl_sigma* s);

/* Euler path on [0, t]; t must be an integer multiple of dt. states receives
 * (steps+1) * dim doubles: the state after step j starts at states[j*dim]. */
FL_API fl_status fl_simulate(const fl_drift* b, const fl_sigma* s, const double* x0,
                             double t, double dt, uint64_t seed, int64_t path_index,
                             double* states);

/* Knobs for fitting the transform. Zeroed fields fall back to the defaults
 * noted; ladder NULL means {2, 5, 10, 20, 40}. */
typedef struct fl_transform_params {
  const double* ladder;
  int n_ladder;
  double gamma;           /* <= 0: 0.5 */
  double lattice_spacing; /* <= 0: 0.25 */
  double span_limit;      /* <= 0: 12 */
  double dt;              /* <= 0: 1e-3 */
  int64_t n_paths;        /* <= 0: 10000 */
  uint64_t seed;
  int workers; /* <= 0: 1 */
} fl_transform_params;

/* Certifies a lambda from the ladder and fits y = x + psi(x); fails with
 * FL_ERR_NUMERIC when no rung reaches the gamma target. */
FL_API fl_status fl_transform_build(const fl_drift* b, const fl_sigma* s,
                                    const fl_transform_params* params, fl_transform** out);
FL_API fl_status fl_transform_info(const fl_transform* t, double* lambda,
                                   double* gamma_cert);
FL_API fl_status fl_transform_psi(const fl_transform* t, const double* x,
                                  double* psi /* dim, may be NULL */,
                                  double* grad /* dim x dim, may be NULL */);
FL_API fl_status fl_transform_forward(const fl_transform* t, const double* x, double* y);
FL_API fl_status fl_transform_invert(const fl_transform* t, const double* y, double* x);
/* Euler path of the conjugated equation mapped back to the original
 * coordinates; endpoint receives dim doubles. */
FL_API fl_status fl_transform_flow(const fl_transform* t, const double* x0, double tt,
                                   double dt, uint64_t seed, int64_t path_index,
                                   double* endpoint);
FL_API void fl_transform_destroy(fl_transform* t);

/* Runs one experiment described by a JSON config (see the tool docs for the
 * schema) and writes CSV data plus run_manifest.json under out_dir. Returns
 * the run status; on any outcome *manifest_json (optional) receives the
 * manifest text, to release with fl_string_free. */
FL_API fl_status fl_run(const char* config_json, const char* out_dir,
                        char** manifest_json);
FL_API void fl_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* FLOWLAB_H */
