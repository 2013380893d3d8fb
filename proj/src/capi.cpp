#include "bfstar/bfstar.h"

#include "bfstar/driver.hpp"
#include "bfstar/errors.hpp"

#include <algorithm>
#include <cstring>
#include <exception>
#include <new>
#include <string>

struct bfstar_config {
  bfstar::RunConfig cfg;
};

struct bfstar_solution {
  bfstar::RunResult result;
};

struct bfstar_sweep {
  std::vector<bfstar::SweepPoint> points;
};

namespace {

thread_local std::string last_error;

bfstar_status fail(bfstar_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

// Maps exceptions escaping the C++ core onto status codes.
template <class F>
bfstar_status guarded(F&& f) {
  try {
    last_error.clear();
    return f();
  } catch (const bfstar::ConfigError& e) {
    return fail(BFSTAR_ERR_CONFIG, e.what());
  } catch (const bfstar::DomainError& e) {
    return fail(BFSTAR_ERR_CONFIG, e.what());
  } catch (const bfstar::ConvergenceError& e) {
    return fail(BFSTAR_ERR_CONVERGENCE, e.what());
  } catch (const bfstar::IoError& e) {
    return fail(BFSTAR_ERR_IO, e.what());
  } catch (const bfstar::Error& e) {
    return fail(BFSTAR_ERR_INTERNAL, e.what());
  } catch (const std::bad_alloc&) {
    return fail(BFSTAR_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(BFSTAR_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(BFSTAR_ERR_INTERNAL, "unknown error");
  }
}

size_t copy_out(const std::string& s, char* buf, size_t size) {
  if (buf && size > 0) {
    const size_t n = std::min(s.size(), size - 1);
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  return s.size();
}

bfstar_spectral to_c(const bfstar::SpectralTriple& t) { return {t.R_s, t.Omega, t.phi_s}; }

bfstar_observables to_c(const bfstar::Observables& o) { return {o.M, o.M_RB, o.M_RF, o.E_b, o.tail_integrand}; }

const bfstar::HermiteGridFunction* domain_of(const bfstar_solution* sol, int domain) {
  if (!sol || (domain != 0 && domain != 1)) return nullptr;
  const auto& s = sol->result.solution;
  const auto& f = domain == 0 ? s.inner : s.outer;
  return f.dim() == 0 ? nullptr : &f;
}

} // namespace

extern "C" {

const char* bfstar_version(void) { return "1.0.0"; }

const char* bfstar_last_error(void) { return last_error.c_str(); }

bfstar_status bfstar_config_create(bfstar_config** out) {
  if (!out) return fail(BFSTAR_ERR_ARGUMENT, "null output pointer");
  return guarded([&] {
    *out = new bfstar_config();
    return BFSTAR_OK;
  });
}

void bfstar_config_destroy(bfstar_config* cfg) { delete cfg; }

bfstar_status bfstar_config_set(bfstar_config* cfg, const char* key, const char* value, const char* source) {
  if (!cfg || !key || !value) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    cfg->cfg.set(key, value, source ? source : "api");
    return BFSTAR_OK;
  });
}

bfstar_status bfstar_config_load_file(bfstar_config* cfg, const char* path) {
  if (!cfg || !path) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    bfstar::parse_config_file(cfg->cfg, path);
    return BFSTAR_OK;
  });
}

bfstar_status bfstar_config_validate(const bfstar_config* cfg) {
  if (!cfg) return fail(BFSTAR_ERR_ARGUMENT, "null config");
  return guarded([&] {
    cfg->cfg.validate();
    return BFSTAR_OK;
  });
}

size_t bfstar_config_describe(const bfstar_config* cfg, char* buf, size_t size) {
  return cfg ? copy_out(cfg->cfg.describe(), buf, size) : copy_out("", buf, size);
}

size_t bfstar_config_override_count(const bfstar_config* cfg) { return cfg ? cfg->cfg.provenance.size() : 0; }

size_t bfstar_config_override(const bfstar_config* cfg, size_t i, char* buf, size_t size) {
  if (!cfg || i >= cfg->cfg.provenance.size()) return copy_out("", buf, size);
  return copy_out(cfg->cfg.provenance[i], buf, size);
}

size_t bfstar_config_key_count(void) { return bfstar::config_keys().size(); }

const char* bfstar_config_key(size_t i) {
  const auto& k = bfstar::config_keys();
  return i < k.size() ? k[i].c_str() : nullptr;
}

bfstar_status bfstar_run_single(const bfstar_config* cfg, bfstar_solution** out) {
  if (!cfg || !out) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto* sol = new bfstar_solution{bfstar::run_single(cfg->cfg)};
    *out = sol;
    const auto& r = sol->result.solution.report;
    if (!r.converged) return fail(BFSTAR_ERR_CONVERGENCE, r.failure.empty() ? "not converged" : r.failure);
    return BFSTAR_OK;
  });
}

void bfstar_solution_destroy(bfstar_solution* sol) { delete sol; }

bfstar_status bfstar_solution_spectral(const bfstar_solution* sol, bfstar_spectral* out) {
  if (!sol || !out) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  *out = to_c(sol->result.solution.spectral);
  return BFSTAR_OK;
}

bfstar_status bfstar_solution_observables(const bfstar_solution* sol, bfstar_observables* out) {
  if (!sol || !out) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  *out = to_c(sol->result.solution.observables);
  return BFSTAR_OK;
}

bfstar_status bfstar_solution_report(const bfstar_solution* sol, bfstar_report* out) {
  if (!sol || !out) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  const auto& s = sol->result.solution;
  const bool have = s.outer.dim() > 0;
  *out = {s.report.converged ? 1 : 0,
          s.report.iterations,
          s.report.residual,
          s.report.mode_switches,
          s.report.quadratic_constant,
          s.pure_fermion ? 1 : 0,
          s.nu_c,
          have ? s.x_inf() : 0.0,
          have ? s.r_max() : 0.0};
  return BFSTAR_OK;
}

size_t bfstar_solution_failure(const bfstar_solution* sol, char* buf, size_t size) {
  return copy_out(sol ? sol->result.solution.report.failure : std::string(), buf, size);
}

size_t bfstar_solution_log_length(const bfstar_solution* sol) {
  return sol ? sol->result.solution.report.log.size() : 0;
}

bfstar_status bfstar_solution_log_entry(const bfstar_solution* sol, size_t i, bfstar_iteration* out) {
  if (!sol || !out || i >= sol->result.solution.report.log.size())
    return fail(BFSTAR_ERR_ARGUMENT, "bad log index");
  const auto& r = sol->result.solution.report.log[i];
  *out = {r.k, r.delta, r.delta_f, r.tau, r.mode == bfstar::IterationMode::Frozen ? 1 : 0, r.matching_rcond, r.pass};
  return BFSTAR_OK;
}

bfstar_status bfstar_solution_verify(const bfstar_solution* sol, bfstar_verify* out) {
  if (!sol || !out) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  if (!sol->result.verify) return fail(BFSTAR_ERR_ARGUMENT, "verification was not run");
  const auto& v = *sol->result.verify;
  *out = {v.converged ? 1 : 0, to_c(v.spectral), to_c(v.observables), v.rel_R_s,
          v.abs_Omega,         v.rel_M,          v.rel_M_RF,            v.profile_max};
  if (!v.converged) return fail(BFSTAR_ERR_CONVERGENCE, v.failure);
  return BFSTAR_OK;
}

size_t bfstar_solution_node_count(const bfstar_solution* sol, int domain) {
  const auto* f = domain_of(sol, domain);
  return f ? f->mesh().nodes().size() : 0;
}

bfstar_status bfstar_solution_nodes(const bfstar_solution* sol, int domain, double* x) {
  const auto* f = domain_of(sol, domain);
  if (!f || !x) return fail(BFSTAR_ERR_ARGUMENT, "bad domain or null buffer");
  const auto& n = f->mesh().nodes();
  std::copy(n.begin(), n.end(), x);
  return BFSTAR_OK;
}

bfstar_status bfstar_solution_profile(const bfstar_solution* sol, int domain, int component, double* values) {
  const auto* f = domain_of(sol, domain);
  if (!f || !values || component < 0 || static_cast<size_t>(component) >= f->dim())
    return fail(BFSTAR_ERR_ARGUMENT, "bad domain, component or buffer");
  const auto col = f->values().col(component);
  for (Eigen::Index j = 0; j < col.size(); ++j) values[j] = col(j);
  return BFSTAR_OK;
}

bfstar_status bfstar_run_sweep(const bfstar_config* cfg, bfstar_sweep** out) {
  if (!cfg || !out) return fail(BFSTAR_ERR_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto* sw = new bfstar_sweep{bfstar::run_sweep(cfg->cfg)};
    *out = sw;
    std::size_t failed = 0;
    for (const auto& p : sw->points) failed += p.converged ? 0 : 1;
    if (failed)
      return fail(BFSTAR_ERR_CONVERGENCE,
                  std::to_string(failed) + " of " + std::to_string(sw->points.size()) + " points did not converge");
    return BFSTAR_OK;
  });
}

void bfstar_sweep_destroy(bfstar_sweep* sw) { delete sw; }

size_t bfstar_sweep_size(const bfstar_sweep* sw) { return sw ? sw->points.size() : 0; }

bfstar_status bfstar_sweep_point_at(const bfstar_sweep* sw, size_t i, bfstar_sweep_point* out) {
  if (!sw || !out || i >= sw->points.size()) return fail(BFSTAR_ERR_ARGUMENT, "bad sweep index");
  const auto& p = sw->points[i];
  *out = {p.value, p.converged ? 1 : 0, p.iterations, to_c(p.spectral), to_c(p.observables)};
  return BFSTAR_OK;
}

size_t bfstar_sweep_failure(const bfstar_sweep* sw, size_t i, char* buf, size_t size) {
  if (!sw || i >= sw->points.size()) return copy_out("", buf, size);
  return copy_out(sw->points[i].failure, buf, size);
}

} // extern "C"
