#ifndef BFSTAR_H
#define BFSTAR_H

/*
 * C interface to the boson-fermion star solver.
 *
 * Handles are opaque and owned by the caller; every *_create / run call that
 * hands one out has a matching *_destroy. Functions return a bfstar_status;
 * on failure bfstar_last_error() describes the problem (per thread).
 *
 * String getters follow the snprintf convention: they return the full length
 * and copy at most size - 1 characters plus a terminator into buf.
 */

#include <stddef.h>

#if defined(_WIN32)
#define BFSTAR_API __declspec(dllexport)
#elif defined(__GNUC__)
#define BFSTAR_API __attribute__((visibility("default")))
#else
#define BFSTAR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  BFSTAR_OK = 0,
  BFSTAR_ERR_ARGUMENT = 1,    /* null handle, bad index */
  BFSTAR_ERR_CONVERGENCE = 2, /* solve did not converge; results still available */
  BFSTAR_ERR_CONFIG = 3,      /* unknown key, malformed or out-of-range value */
  BFSTAR_ERR_IO = 4,
  BFSTAR_ERR_INTERNAL = 5
} bfstar_status;

typedef struct bfstar_config bfstar_config;
typedef struct bfstar_solution bfstar_solution;
typedef struct bfstar_sweep bfstar_sweep;

typedef struct {
  double R_s;
  double Omega; /* NaN for a pure fermion star */
  double phi_s;
} bfstar_spectral;

typedef struct {
  double M;
  double M_RB;
  double M_RF;
  double E_b;
  double tail_integrand;
} bfstar_observables;

typedef struct {
  int converged;
  int iterations;
  double residual;
  int mode_switches;
  double quadratic_constant;
  int pure_fermion;
  double nu_c;
  double x_inf;
  double r_max;
} bfstar_report;

typedef struct {
  int k;
  double delta;
  double delta_f;
  double tau;
  int frozen;
  double matching_rcond;
  int pass; /* 0 = main solve, then one per truncation re-anchoring */
} bfstar_iteration;

typedef struct {
  int converged;
  bfstar_spectral spectral;
  bfstar_observables observables;
  double rel_R_s;
  double abs_Omega;
  double rel_M;
  double rel_M_RF;
  double profile_max;
} bfstar_verify;

typedef struct {
  double value;
  int converged;
  int iterations;
  bfstar_spectral spectral;
  bfstar_observables observables;
} bfstar_sweep_point;

BFSTAR_API const char* bfstar_version(void);
BFSTAR_API const char* bfstar_last_error(void);

/* --- configuration ------------------------------------------------------ */

BFSTAR_API bfstar_status bfstar_config_create(bfstar_config** out);
BFSTAR_API void bfstar_config_destroy(bfstar_config* cfg);
/* source labels the origin in the override log, e.g. "flag" */
BFSTAR_API bfstar_status bfstar_config_set(bfstar_config* cfg, const char* key, const char* value,
                                           const char* source);
BFSTAR_API bfstar_status bfstar_config_load_file(bfstar_config* cfg, const char* path);
BFSTAR_API bfstar_status bfstar_config_validate(const bfstar_config* cfg);
BFSTAR_API size_t bfstar_config_describe(const bfstar_config* cfg, char* buf, size_t size);
BFSTAR_API size_t bfstar_config_override_count(const bfstar_config* cfg);
BFSTAR_API size_t bfstar_config_override(const bfstar_config* cfg, size_t i, char* buf, size_t size);
BFSTAR_API size_t bfstar_config_key_count(void);
BFSTAR_API const char* bfstar_config_key(size_t i);

/* --- single solves ------------------------------------------------------ */

/* Solves and writes the configured files. On non-convergence *out is still
 * set and BFSTAR_ERR_CONVERGENCE is returned. */
BFSTAR_API bfstar_status bfstar_run_single(const bfstar_config* cfg, bfstar_solution** out);
BFSTAR_API void bfstar_solution_destroy(bfstar_solution* sol);

BFSTAR_API bfstar_status bfstar_solution_spectral(const bfstar_solution* sol, bfstar_spectral* out);
BFSTAR_API bfstar_status bfstar_solution_observables(const bfstar_solution* sol, bfstar_observables* out);
BFSTAR_API bfstar_status bfstar_solution_report(const bfstar_solution* sol, bfstar_report* out);
BFSTAR_API size_t bfstar_solution_failure(const bfstar_solution* sol, char* buf, size_t size);
BFSTAR_API size_t bfstar_solution_log_length(const bfstar_solution* sol);
BFSTAR_API bfstar_status bfstar_solution_log_entry(const bfstar_solution* sol, size_t i, bfstar_iteration* out);
/* BFSTAR_ERR_ARGUMENT when verification was not requested */
BFSTAR_API bfstar_status bfstar_solution_verify(const bfstar_solution* sol, bfstar_verify* out);

/* Profiles at the mesh nodes; domain 0 = inner (7 components), 1 = outer (6).
 * Component order: lambda, nu, phi, xi, sigma, eta, mu. */
BFSTAR_API size_t bfstar_solution_node_count(const bfstar_solution* sol, int domain);
BFSTAR_API bfstar_status bfstar_solution_nodes(const bfstar_solution* sol, int domain, double* x);
BFSTAR_API bfstar_status bfstar_solution_profile(const bfstar_solution* sol, int domain, int component,
                                                 double* values);

/* --- sweeps ------------------------------------------------------------- */

/* Returns BFSTAR_ERR_CONVERGENCE when any point failed; *out is still set. */
BFSTAR_API bfstar_status bfstar_run_sweep(const bfstar_config* cfg, bfstar_sweep** out);
BFSTAR_API void bfstar_sweep_destroy(bfstar_sweep* sw);
BFSTAR_API size_t bfstar_sweep_size(const bfstar_sweep* sw);
BFSTAR_API bfstar_status bfstar_sweep_point_at(const bfstar_sweep* sw, size_t i, bfstar_sweep_point* out);
BFSTAR_API size_t bfstar_sweep_failure(const bfstar_sweep* sw, size_t i, char* buf, size_t size);

#ifdef __cplusplus
}
#endif

#endif
