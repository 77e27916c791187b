#include "rmflow.h"

#include <cstring>
#include <new>
#include <string>

#include "rmflow/workflows.hpp"

using namespace rmflow;

struct rmf_manifold {
  Manifold m;
};
struct rmf_rng {
  Rng rng;
};
struct rmf_model {
  Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

rmf_status set_error(rmf_status st, const std::string& what) {
  g_last_error = what;
  return st;
}

rmf_status ok() {
  g_last_error.clear();
  return RMF_OK;
}

template <class F>
rmf_status guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    return set_error(RMF_ERR_CONFIG, e.what());
  } catch (const std::domain_error& e) {
    return set_error(RMF_ERR_DOMAIN, e.what());
  } catch (const std::invalid_argument& e) {
    return set_error(RMF_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(RMF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(RMF_ERR_IO, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = new (std::nothrow) char[s.size() + 1];
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

rmf_status from_run_status(RunStatus st, const RunOutcome& o) {
  switch (st) {
    case RunStatus::Ok:
      return ok();
    case RunStatus::VerifyFailed:
      return set_error(RMF_ERR_VERIFY_FAILED, o.message);
    case RunStatus::ConfigError:
      return set_error(RMF_ERR_CONFIG, o.message);
    case RunStatus::Diverged:
      return set_error(RMF_ERR_DIVERGED, o.message);
    case RunStatus::Failure:
      return set_error(RMF_ERR_IO, o.message);
  }
  return set_error(RMF_ERR_INTERNAL, o.message);
}

using WorkflowFn = RunOutcome (*)(const RunConfig&);

rmf_status run_workflow(WorkflowFn fn, const char* config_text,
                        const char* out_dir_override, int has_seed_override,
                        uint64_t seed_override, int threads_override,
                        char** summary_json) {
  if (config_text == nullptr || summary_json == nullptr)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  *summary_json = nullptr;
  return guarded([&] {
    RunOverrides ov;
    if (has_seed_override) ov.seed = seed_override;
    if (out_dir_override != nullptr && out_dir_override[0] != '\0')
      ov.out_dir = std::string(out_dir_override);
    if (threads_override > 0) ov.threads = threads_override;
    const RunConfig cfg =
        apply_overrides(parse_run_config(config_text), ov);
    const RunOutcome o = fn(cfg);
    *summary_json = dup_string(o.summary_json);
    return from_run_status(o.status, o);
  });
}

}  // namespace

extern "C" {

const char* rmf_version(void) { return "0.1.0"; }

const char* rmf_status_name(rmf_status status) {
  switch (status) {
    case RMF_OK:
      return "ok";
    case RMF_ERR_VERIFY_FAILED:
      return "verify_failed";
    case RMF_ERR_CONFIG:
      return "config_error";
    case RMF_ERR_DIVERGED:
      return "diverged";
    case RMF_ERR_INVALID_ARGUMENT:
      return "invalid_argument";
    case RMF_ERR_DOMAIN:
      return "domain_error";
    case RMF_ERR_IO:
      return "io_error";
    case RMF_ERR_INTERNAL:
      return "internal_error";
  }
  return "unknown";
}

const char* rmf_last_error(void) { return g_last_error.c_str(); }

void rmf_string_free(char* s) { delete[] s; }

/* ---- manifolds ------------------------------------------------------ */

rmf_status rmf_manifold_euclidean(int dim, rmf_manifold** out) {
  if (out == nullptr) return set_error(RMF_ERR_INVALID_ARGUMENT, "null out");
  return guarded([&] {
    *out = new rmf_manifold{Manifold::euclidean(dim)};
    return ok();
  });
}

rmf_status rmf_manifold_sphere(int ambient_dim, rmf_manifold** out) {
  if (out == nullptr) return set_error(RMF_ERR_INVALID_ARGUMENT, "null out");
  return guarded([&] {
    *out = new rmf_manifold{Manifold::sphere(ambient_dim)};
    return ok();
  });
}

rmf_status rmf_manifold_so3(rmf_manifold** out) {
  if (out == nullptr) return set_error(RMF_ERR_INVALID_ARGUMENT, "null out");
  *out = new (std::nothrow) rmf_manifold{Manifold::so3()};
  return *out ? ok() : set_error(RMF_ERR_INTERNAL, "out of memory");
}

rmf_status rmf_manifold_product(rmf_manifold* const* factors, int count,
                                rmf_manifold** out) {
  if (out == nullptr || factors == nullptr || count < 1)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "bad product arguments");
  return guarded([&] {
    std::vector<Manifold> fs;
    fs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      if (factors[i] == nullptr)
        return set_error(RMF_ERR_INVALID_ARGUMENT, "null factor");
      fs.push_back(factors[i]->m);
    }
    *out = new rmf_manifold{Manifold::product(std::move(fs))};
    return ok();
  });
}

void rmf_manifold_free(rmf_manifold* m) { delete m; }

int rmf_manifold_ambient_dim(const rmf_manifold* m) {
  return m ? m->m.ambient_dim() : 0;
}

int rmf_manifold_intrinsic_dim(const rmf_manifold* m) {
  return m ? m->m.intrinsic_dim() : 0;
}

/* ---- geometry ------------------------------------------------------- */

namespace {

rmf_status check3(const rmf_manifold* m, const void* a, const void* b,
                  const void* c) {
  if (m == nullptr || a == nullptr || b == nullptr || c == nullptr)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  return RMF_OK;
}

rmf_status from_geo(GeoResult st, const char* op) {
  if (st == GeoResult::Ok) return ok();
  if (st == GeoResult::CutLocus)
    return set_error(RMF_ERR_DOMAIN, std::string(op) + ": cut locus");
  return set_error(RMF_ERR_DOMAIN, std::string(op) + ": degenerate input");
}

}  // namespace

rmf_status rmf_proj_tangent(const rmf_manifold* m, const double* x,
                            const double* v, double* out) {
  const rmf_status st = check3(m, x, v, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  geo::proj<double>(m->m, {x, d}, {v, d}, {out, d});
  return ok();
}

rmf_status rmf_exp(const rmf_manifold* m, const double* x, const double* v,
                   double* out) {
  const rmf_status st = check3(m, x, v, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  geo::exp_map<double>(m->m, {x, d}, {v, d}, {out, d});
  return ok();
}

rmf_status rmf_log(const rmf_manifold* m, const double* x, const double* y,
                   double* out) {
  const rmf_status st = check3(m, x, y, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  return from_geo(geo::log_map<double>(m->m, {x, d}, {y, d}, {out, d}), "log");
}

rmf_status rmf_geodesic_distance(const rmf_manifold* m, const double* x,
                                 const double* y, double* out) {
  const rmf_status st = check3(m, x, y, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  *out = geo::distance<double>(m->m, {x, d}, {y, d});
  return ok();
}

rmf_status rmf_geodesic_interpolate(const rmf_manifold* m, const double* x0,
                                    const double* x1, double t, double* out) {
  const rmf_status st = check3(m, x0, x1, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  return from_geo(
      geo::interpolate<double>(m->m, {x0, d}, {x1, d}, t, {out, d}),
      "geodesic_interpolate");
}

rmf_status rmf_parallel_transport(const rmf_manifold* m, const double* x,
                                  const double* y, const double* v,
                                  double* out) {
  if (v == nullptr) return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  const rmf_status st = check3(m, x, y, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  return from_geo(
      geo::transport<double>(m->m, {x, d}, {y, d}, {v, d}, {out, d}),
      "parallel_transport");
}

rmf_status rmf_dlog_first_arg(const rmf_manifold* m, const double* x,
                              const double* y, const double* v, double* out) {
  if (v == nullptr) return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  const rmf_status st = check3(m, x, y, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  return from_geo(dlog_first_arg_raw(m->m, {x, d}, {y, d}, {v, d}, {out, d}),
                  "dlog_first_arg");
}

rmf_status rmf_dlog_second_arg(const rmf_manifold* m, const double* x,
                               const double* y, const double* w, double* out) {
  if (w == nullptr) return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  const rmf_status st = check3(m, x, y, out);
  if (st != RMF_OK) return st;
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  return from_geo(dlog_second_arg_raw(m->m, {x, d}, {y, d}, {w, d}, {out, d}),
                  "dlog_second_arg");
}

/* ---- rng ------------------------------------------------------------ */

rmf_status rmf_rng_create(uint64_t seed, rmf_rng** out) {
  if (out == nullptr) return set_error(RMF_ERR_INVALID_ARGUMENT, "null out");
  *out = new (std::nothrow) rmf_rng{Rng(seed)};
  return *out ? ok() : set_error(RMF_ERR_INTERNAL, "out of memory");
}

void rmf_rng_free(rmf_rng* rng) { delete rng; }

rmf_status rmf_random_point(const rmf_manifold* m, rmf_rng* rng, double* out) {
  if (m == nullptr || rng == nullptr || out == nullptr)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  const std::size_t d = static_cast<std::size_t>(m->m.ambient_dim());
  random_point(m->m, rng->rng, {out, d});
  return ok();
}

/* ---- models ---------------------------------------------------------- */

rmf_status rmf_model_load(const char* path, rmf_model** out) {
  if (path == nullptr || out == nullptr)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    *out = new rmf_model{load_checkpoint(path)};
    return ok();
  });
}

void rmf_model_free(rmf_model* model) { delete model; }

int rmf_model_ambient_dim(const rmf_model* model) {
  return model ? model->ckpt.manifold.ambient_dim() : 0;
}

rmf_status rmf_model_predict_u(const rmf_model* model, const double* x,
                               double s, double t, double* u_out) {
  if (model == nullptr || x == nullptr || u_out == nullptr)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  const std::size_t d =
      static_cast<std::size_t>(model->ckpt.manifold.ambient_dim());
  return from_geo(
      predict_u_t<double>(model->ckpt.net, model->ckpt.parameterization,
                          model->ckpt.manifold, {x, d}, s, t, {u_out, d}),
      "predict_u");
}

rmf_status rmf_model_flow_map(const rmf_model* model, const double* x, double s,
                              double t, double* out) {
  if (model == nullptr || x == nullptr || out == nullptr)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "null argument");
  const std::size_t d =
      static_cast<std::size_t>(model->ckpt.manifold.ambient_dim());
  return from_geo(
      flow_map_raw(model->ckpt.net, model->ckpt.parameterization,
                   model->ckpt.manifold, {x, d}, s, t, {out, d}),
      "flow_map");
}

rmf_status rmf_model_sample(const rmf_model* model, uint64_t seed, int nfe,
                            double eta, long count, double* out) {
  if (model == nullptr || out == nullptr || count < 1 || nfe < 1)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "bad sample arguments");
  return guarded([&] {
    SamplerConfig sc;
    sc.nfe = nfe;
    sc.eta = eta;
    sc.seed = seed;
    long aborted = 0;
    const std::vector<double> batch =
        sample_batch(model->ckpt.net, model->ckpt.parameterization,
                     model->ckpt.manifold, sc, count, 1, nullptr, &aborted);
    std::memcpy(out, batch.data(), batch.size() * sizeof(double));
    if (aborted > 0)
      return set_error(RMF_ERR_DOMAIN,
                       std::to_string(aborted) + " trajectories aborted");
    return ok();
  });
}

/* ---- workflows ------------------------------------------------------- */

rmf_status rmf_train_run(const char* config_text, const char* out_dir_override,
                         int has_seed_override, uint64_t seed_override,
                         int threads_override, char** summary_json) {
  return run_workflow(&train_run, config_text, out_dir_override,
                      has_seed_override, seed_override, threads_override,
                      summary_json);
}

rmf_status rmf_sample_run(const char* config_text, const char* out_dir_override,
                          int has_seed_override, uint64_t seed_override,
                          int threads_override, char** summary_json) {
  return run_workflow(&sample_run, config_text, out_dir_override,
                      has_seed_override, seed_override, threads_override,
                      summary_json);
}

rmf_status rmf_eval_run(const char* config_text, const char* out_dir_override,
                        int has_seed_override, uint64_t seed_override,
                        int threads_override, char** summary_json) {
  return run_workflow(&eval_run, config_text, out_dir_override,
                      has_seed_override, seed_override, threads_override,
                      summary_json);
}

rmf_status rmf_plot_run(const char* config_text, const char* out_dir_override,
                        int has_seed_override, uint64_t seed_override,
                        int threads_override, char** summary_json) {
  return run_workflow(&plot_run, config_text, out_dir_override,
                      has_seed_override, seed_override, threads_override,
                      summary_json);
}

rmf_status rmf_verify_run(const char* out_dir_or_null, char** report_json) {
  if (report_json == nullptr)
    return set_error(RMF_ERR_INVALID_ARGUMENT, "null report pointer");
  *report_json = nullptr;
  return guarded([&] {
    const RunOutcome o =
        verify_run(out_dir_or_null ? std::string(out_dir_or_null) : "");
    *report_json = dup_string(o.summary_json);
    return from_run_status(o.status, o);
  });
}

}  // extern "C"
