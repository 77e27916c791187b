/* rmflow C API: Riemannian flow-map library behind a stable extern "C"
 * surface. Opaque handles, status codes, caller-owned buffers. All
 * vector arguments are ambient coordinates of length
 * rmf_manifold_ambient_dim(); output buffers must not alias inputs.
 */
#ifndef RMFLOW_H
#define RMFLOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RMF_API __declspec(dllexport)
#else
#define RMF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rmf_status {
  RMF_OK = 0,
  RMF_ERR_VERIFY_FAILED = 1,
  RMF_ERR_CONFIG = 2,        /* bad config / mismatched request */
  RMF_ERR_DIVERGED = 3,      /* training produced non-finite losses */
  RMF_ERR_INVALID_ARGUMENT = 4,
  RMF_ERR_DOMAIN = 5,        /* cut locus or degenerate geometry */
  RMF_ERR_IO = 6,
  RMF_ERR_INTERNAL = 7
} rmf_status;

typedef struct rmf_manifold rmf_manifold;
typedef struct rmf_rng rmf_rng;
typedef struct rmf_model rmf_model;

RMF_API const char* rmf_version(void);
RMF_API const char* rmf_status_name(rmf_status status);
/* Detail for the most recent error on this thread ("" when none). */
RMF_API const char* rmf_last_error(void);
RMF_API void rmf_string_free(char* s);

/* ---- manifolds ------------------------------------------------------ */

RMF_API rmf_status rmf_manifold_euclidean(int dim, rmf_manifold** out);
RMF_API rmf_status rmf_manifold_sphere(int ambient_dim, rmf_manifold** out);
RMF_API rmf_status rmf_manifold_so3(rmf_manifold** out);
RMF_API rmf_status rmf_manifold_product(rmf_manifold* const* factors,
                                        int count, rmf_manifold** out);
RMF_API void rmf_manifold_free(rmf_manifold* m);
RMF_API int rmf_manifold_ambient_dim(const rmf_manifold* m);
RMF_API int rmf_manifold_intrinsic_dim(const rmf_manifold* m);

/* ---- geometry ------------------------------------------------------- */

RMF_API rmf_status rmf_proj_tangent(const rmf_manifold* m, const double* x,
                                    const double* v, double* out);
RMF_API rmf_status rmf_exp(const rmf_manifold* m, const double* x,
                           const double* v, double* out);
RMF_API rmf_status rmf_log(const rmf_manifold* m, const double* x,
                           const double* y, double* out);
RMF_API rmf_status rmf_geodesic_distance(const rmf_manifold* m,
                                         const double* x, const double* y,
                                         double* out);
RMF_API rmf_status rmf_geodesic_interpolate(const rmf_manifold* m,
                                            const double* x0, const double* x1,
                                            double t, double* out);
RMF_API rmf_status rmf_parallel_transport(const rmf_manifold* m,
                                          const double* x, const double* y,
                                          const double* v, double* out);
RMF_API rmf_status rmf_dlog_first_arg(const rmf_manifold* m, const double* x,
                                      const double* y, const double* v,
                                      double* out);
RMF_API rmf_status rmf_dlog_second_arg(const rmf_manifold* m, const double* x,
                                       const double* y, const double* w,
                                       double* out);

/* ---- rng / priors --------------------------------------------------- */

RMF_API rmf_status rmf_rng_create(uint64_t seed, rmf_rng** out);
RMF_API void rmf_rng_free(rmf_rng* rng);
RMF_API rmf_status rmf_random_point(const rmf_manifold* m, rmf_rng* rng,
                                    double* out);

/* ---- models (.rmfckpt checkpoints) ---------------------------------- */

RMF_API rmf_status rmf_model_load(const char* path, rmf_model** out);
RMF_API void rmf_model_free(rmf_model* model);
RMF_API int rmf_model_ambient_dim(const rmf_model* model);
/* Average velocity u_{s,t}(x) as a tangent at x. */
RMF_API rmf_status rmf_model_predict_u(const rmf_model* model, const double* x,
                                       double s, double t, double* u_out);
/* Phi_{s,t}(x) = exp_x((t-s) u_{s,t}(x)). */
RMF_API rmf_status rmf_model_flow_map(const rmf_model* model, const double* x,
                                      double s, double t, double* out);
/* count prior draws pushed through the nfe-step sampler; out has
 * count * ambient_dim doubles, row-major. */
RMF_API rmf_status rmf_model_sample(const rmf_model* model, uint64_t seed,
                                    int nfe, double eta, long count,
                                    double* out);

/* ---- workflows ------------------------------------------------------ */
/* config_text is the TOML config; summaries are heap JSON strings the
 * caller releases with rmf_string_free. seed/out_dir/threads overrides
 * are optional (pass 0 / NULL / 0 to keep the config values). */

RMF_API rmf_status rmf_train_run(const char* config_text,
                                 const char* out_dir_override,
                                 int has_seed_override, uint64_t seed_override,
                                 int threads_override, char** summary_json);
RMF_API rmf_status rmf_sample_run(const char* config_text,
                                  const char* out_dir_override,
                                  int has_seed_override, uint64_t seed_override,
                                  int threads_override, char** summary_json);
RMF_API rmf_status rmf_eval_run(const char* config_text,
                                const char* out_dir_override,
                                int has_seed_override, uint64_t seed_override,
                                int threads_override, char** summary_json);
RMF_API rmf_status rmf_plot_run(const char* config_text,
                                const char* out_dir_override,
                                int has_seed_override, uint64_t seed_override,
                                int threads_override, char** summary_json);
/* Self-contained certification battery; writes verify.json under
 * out_dir when given. */
RMF_API rmf_status rmf_verify_run(const char* out_dir_or_null,
                                  char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* RMFLOW_H */
