#include "flowlab.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "core/bel.hpp"
#include "core/experiments.hpp"
#include "core/fields.hpp"
#include "core/mollify.hpp"
#include "core/paths.hpp"
#include "core/types.hpp"
#include "core/zvonkin.hpp"

using flowlab::Mat;
using flowlab::Vec;

struct fl_drift {
  flowlab::DriftField f;
};

struct fl_sigma {
  flowlab::DiffusionSpec s;
};

struct fl_transform {
  flowlab::BuildResult built;
  flowlab::DiffusionSpec sigma;
  flowlab::ConjugatedCoeffs cc;
};

namespace {

thread_local std::string g_last_error = "";

fl_status fail(fl_status code, const std::string& what) {
  g_last_error = what;
  return code;
}

template <class Fn>
fl_status guarded(Fn&& fn) {
  try {
    fn();
    return FL_OK;
  } catch (const flowlab::config_error& e) {
    return fail(FL_ERR_CONFIG, e.what());
  } catch (const flowlab::numeric_error& e) {
    return fail(FL_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(FL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FL_ERR_INTERNAL, "unknown error");
  }
}

bool all_nonnull() { return true; }

template <class T, class... Rest>
bool all_nonnull(const T* p, Rest... rest) {
  return p != nullptr && all_nonnull(rest...);
}

flowlab::TimeGrid aligned(double t, double dt) {
  flowlab::require_config(t > 0.0 && dt > 0.0, "t and dt must be positive");
  const auto steps = std::int64_t(std::llround(t / dt));
  flowlab::require_config(
      steps >= 1 && std::abs(double(steps) * dt - t) <= 1e-9 * std::max(1.0, t),
      "t must be an integer multiple of dt");
  return flowlab::TimeGrid(0.0, t, steps);
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* fl_version(void) { return flowlab::kVersion; }

const char* fl_last_error(void) { return g_last_error.c_str(); }

fl_status fl_drift_create(const char* preset, int dim, fl_drift** out) {
  if (!all_nonnull(preset, out)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] { *out = new fl_drift{flowlab::DriftField::preset(preset, dim)}; });
}

fl_status fl_drift_mollify(const fl_drift* b, int level, int quad_points, fl_drift** out) {
  if (!all_nonnull(b, out)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] { *out = new fl_drift{flowlab::mollify(b->f, level, quad_points)}; });
}

fl_status fl_drift_eval(const fl_drift* b, const double* x, double* out) {
  if (!all_nonnull(b, x, out)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    const Vec v = b->f(Eigen::Map<const Vec>(x, b->f.dim));
    std::memcpy(out, v.data(), sizeof(double) * std::size_t(b->f.dim));
  });
}

int fl_drift_dim(const fl_drift* b) { return b ? b->f.dim : 0; }

void fl_drift_destroy(fl_drift* b) { delete b; }

fl_status fl_sigma_create(const char* preset, int dim, fl_sigma** out) {
  if (!all_nonnull(preset, out)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] { *out = new fl_sigma{flowlab::DiffusionSpec::preset(preset, dim)}; });
}

fl_status fl_sigma_eval(const fl_sigma* s, const double* x, double* out) {
  if (!all_nonnull(s, x, out)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    const Mat m = s->s.sigma(Eigen::Map<const Vec>(x, s->s.dim));
    std::memcpy(out, m.data(), sizeof(double) * std::size_t(m.size()));
  });
}

int fl_sigma_dim(const fl_sigma* s) { return s ? s->s.dim : 0; }

int fl_sigma_dim_noise(const fl_sigma* s) { return s ? s->s.dim_noise : 0; }

void fl_sigma_destroy(fl_sigma* s) { delete s; }

fl_status fl_simulate(const fl_drift* b, const fl_sigma* s, const double* x0, double t,
                      double dt, uint64_t seed, int64_t path_index, double* states) {
  if (!all_nonnull(b, s, x0, states)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    const flowlab::TimeGrid grid = aligned(t, dt);
    const flowlab::BrownianDriver drv(seed, path_index, s->s.dim_noise, 0.0, grid.t_end(),
                                      grid.steps);
    const flowlab::PathRecord rec =
        flowlab::simulate(b->f, s->s, Eigen::Map<const Vec>(x0, b->f.dim), drv, grid);
    std::memcpy(states, rec.states.data(), sizeof(double) * std::size_t(rec.states.size()));
  });
}

fl_status fl_transform_build(const fl_drift* b, const fl_sigma* s,
                             const fl_transform_params* params, fl_transform** out) {
  if (!all_nonnull(b, s, out)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    flowlab::ResolventConfig rc;
    flowlab::TransformOptions to;
    if (params) {
      if (params->ladder && params->n_ladder > 0)
        to.ladder.assign(params->ladder, params->ladder + params->n_ladder);
      if (params->gamma > 0.0) to.gamma = params->gamma;
      if (params->lattice_spacing > 0.0) to.lattice_spacing = params->lattice_spacing;
      if (params->span_limit > 0.0) to.span_limit = params->span_limit;
      if (params->dt > 0.0) rc.dt = params->dt;
      if (params->n_paths > 0) rc.n_paths = params->n_paths;
      rc.seed = params->seed;
      if (params->workers > 0) rc.workers = params->workers;
    }
    auto built = flowlab::build_transform(b->f, s->s, rc, to);
    auto cc = flowlab::conjugate(built.transform, s->s);
    *out = new fl_transform{std::move(built), s->s, std::move(cc)};
  });
}

fl_status fl_transform_info(const fl_transform* t, double* lambda, double* gamma_cert) {
  if (!t) return fail(FL_ERR_CONFIG, "null argument");
  if (lambda) *lambda = t->built.transform.lambda();
  if (gamma_cert) *gamma_cert = t->built.transform.gamma_cert();
  return FL_OK;
}

fl_status fl_transform_psi(const fl_transform* t, const double* x, double* psi,
                           double* grad) {
  if (!all_nonnull(t, x)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    const int d = t->built.transform.dim();
    Vec p(d);
    Mat g(d, d);
    t->built.transform.psi(Eigen::Map<const Vec>(x, d), psi ? &p : nullptr,
                           grad ? &g : nullptr);
    if (psi) std::memcpy(psi, p.data(), sizeof(double) * std::size_t(d));
    if (grad) std::memcpy(grad, g.data(), sizeof(double) * std::size_t(d) * std::size_t(d));
  });
}

fl_status fl_transform_forward(const fl_transform* t, const double* x, double* y) {
  if (!all_nonnull(t, x, y)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    const int d = t->built.transform.dim();
    const Vec out = t->built.transform.forward(Eigen::Map<const Vec>(x, d));
    std::memcpy(y, out.data(), sizeof(double) * std::size_t(d));
  });
}

fl_status fl_transform_invert(const fl_transform* t, const double* y, double* x) {
  if (!all_nonnull(t, y, x)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    const int d = t->built.transform.dim();
    const Vec out = t->built.transform.invert(Eigen::Map<const Vec>(y, d));
    std::memcpy(x, out.data(), sizeof(double) * std::size_t(d));
  });
}

fl_status fl_transform_flow(const fl_transform* t, const double* x0, double tt, double dt,
                            uint64_t seed, int64_t path_index, double* endpoint) {
  if (!all_nonnull(t, x0, endpoint)) return fail(FL_ERR_CONFIG, "null argument");
  return guarded([&] {
    const int d = t->built.transform.dim();
    const flowlab::TimeGrid grid = aligned(tt, dt);
    const flowlab::BrownianDriver drv(seed, path_index, t->sigma.dim_noise, 0.0,
                                      grid.t_end(), grid.steps);
    const flowlab::TransformedFlowResult r = flowlab::transformed_flow(
        t->built.transform, t->cc, Eigen::Map<const Vec>(x0, d), drv, grid);
    std::memcpy(endpoint, r.state.data(), sizeof(double) * std::size_t(d));
  });
}

void fl_transform_destroy(fl_transform* t) { delete t; }

fl_status fl_run(const char* config_json, const char* out_dir, char** manifest_json) {
  if (manifest_json) *manifest_json = nullptr;
  if (!config_json) return fail(FL_ERR_CONFIG, "null config");
  const flowlab::RunOutcome out =
      flowlab::run_experiment(config_json, out_dir ? out_dir : "");
  if (!out.message.empty()) g_last_error = out.stage + ": " + out.message;
  if (manifest_json && !out.manifest_path.empty()) {
    std::ifstream in(out.manifest_path, std::ios::binary);
    if (in) {
      std::ostringstream ss;
      ss << in.rdbuf();
      *manifest_json = copy_string(ss.str());
    }
  }
  switch (out.status) {
    case 0:
      return FL_OK;
    case 2:
      return FL_ERR_CONFIG;
    case 3:
      return FL_ERR_NUMERIC;
    case 4:
      return FL_ERR_ACCEPTANCE;
    default:
      return FL_ERR_INTERNAL;
  }
}

void fl_string_free(char* s) { std::free(s); }

}  // extern "C"
