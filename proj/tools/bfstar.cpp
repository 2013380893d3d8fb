// Command-line front end. Talks to the solver only through the C interface.

#include "bfstar/bfstar.h"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace {

enum Exit { kOk = 0, kFailure = 1, kNotConverged = 2, kConfigError = 3 };

int exit_code(bfstar_status s) {
  switch (s) {
  case BFSTAR_OK: return kOk;
  case BFSTAR_ERR_CONVERGENCE: return kNotConverged;
  case BFSTAR_ERR_CONFIG: return kConfigError;
  default: return kFailure;
  }
}

const std::map<std::string, std::string> kHelp = {
    {"gamma", "dilaton mass gamma"},
    {"lambda-self", "boson self-coupling Lambda"},
    {"b", "fermion EOS scale b"},
    {"sigma-c", "central boson amplitude sigma_c (0 = pure fermion star)"},
    {"mu-c", "central fermion chemical potential mu_c"},
    {"x-inf", "outer truncation point in units of R_s"},
    {"r-max", "outer truncation radius used when x-inf is unset"},
    {"cells-inner", "inner mesh cells"},
    {"cells-outer", "outer mesh cells"},
    {"outer-ratio", "geometric growth of outer cells"},
    {"eps", "convergence tolerance on delta, in [1e-12, 1e-8]"},
    {"max-iter", "iteration cap"},
    {"freeze-threshold", "delta below which the Jacobian is frozen"},
    {"tau-min", "smallest CANM step"},
    {"farfield", "dirichlet or robin"},
    {"r-s0", "initial surface radius"},
    {"omega0", "initial boson frequency"},
    {"phi-s0", "initial surface dilaton value"},
    {"boson-width", "width of the initial sigma profile in r"},
    {"sweep-param", "mu_c or sigma_c"},
    {"sweep-range", "start:stop"},
    {"sweep-count", "number of sweep points"},
    {"warm-start", "continue each sweep point from the previous one"},
    {"verify", "cross-check with the shooting oracle"},
    {"out-dir", "output directory"},
    {"emit", "comma list of csv, json, svg (or none)"},
};

bool is_flag(const std::string& key) { return key == "verify" || key == "warm-start"; }

struct Flags {
  std::string config;
  bool print_config = false;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> toggles;
  std::map<std::string, CLI::Option*> options;
};

void add_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key = value configuration file; flags override it");
  app->add_flag("--print-config", f.print_config, "print the effective configuration");
  for (size_t i = 0; i < bfstar_config_key_count(); ++i) {
    const std::string key = bfstar_config_key(i);
    const auto h = kHelp.find(key);
    const std::string help = h == kHelp.end() ? key : h->second;
    if (is_flag(key))
      f.options[key] = app->add_flag("--" + key + ",!--no-" + key, f.toggles[key], help);
    else
      f.options[key] = app->add_option("--" + key, f.values[key], help);
  }
}

std::string text(size_t (*get)(const bfstar_config*, char*, size_t), const bfstar_config* c) {
  std::string s(get(c, nullptr, 0), '\0');
  get(c, s.data(), s.size() + 1);
  return s;
}

using ConfigPtr = std::unique_ptr<bfstar_config, decltype(&bfstar_config_destroy)>;

// Builds the configuration: file first, then flags. Returns an exit code.
int configure(const Flags& f, ConfigPtr& cfg) {
  bfstar_config* raw = nullptr;
  if (bfstar_config_create(&raw) != BFSTAR_OK) return kFailure;
  cfg.reset(raw);
  bfstar_status s = BFSTAR_OK;
  if (!f.config.empty() && (s = bfstar_config_load_file(raw, f.config.c_str())) != BFSTAR_OK) {
    std::fprintf(stderr, "error: %s\n", bfstar_last_error());
    return exit_code(s);
  }
  for (const auto& [key, opt] : f.options) {
    if (opt->count() == 0) continue;
    const std::string v = is_flag(key) ? (f.toggles.at(key) ? "true" : "false") : f.values.at(key);
    if ((s = bfstar_config_set(raw, key.c_str(), v.c_str(), "flag")) != BFSTAR_OK) {
      std::fprintf(stderr, "error: --%s: %s\n", key.c_str(), bfstar_last_error());
      return exit_code(s);
    }
  }
  for (size_t i = 0; i < bfstar_config_override_count(raw); ++i) {
    std::string line(bfstar_config_override(raw, i, nullptr, 0), '\0');
    bfstar_config_override(raw, i, line.data(), line.size() + 1);
    std::fprintf(stderr, "note: %s\n", line.c_str());
  }
  if ((s = bfstar_config_validate(raw)) != BFSTAR_OK) {
    std::fprintf(stderr, "error: %s\n", bfstar_last_error());
    return exit_code(s);
  }
  if (f.print_config) std::fputs(text(bfstar_config_describe, raw).c_str(), stdout);
  return kOk;
}

void print_number(const char* name, double v) {
  if (std::isnan(v)) std::printf("%-20s n/a\n", name);
  else std::printf("%-20s %.10g\n", name, v);
}

int run_solve(const Flags& f) {
  ConfigPtr cfg(nullptr, bfstar_config_destroy);
  if (const int rc = configure(f, cfg)) return rc;

  bfstar_solution* raw = nullptr;
  const bfstar_status s = bfstar_run_single(cfg.get(), &raw);
  std::unique_ptr<bfstar_solution, decltype(&bfstar_solution_destroy)> sol(raw, bfstar_solution_destroy);
  if (!sol) {
    std::fprintf(stderr, "error: %s\n", bfstar_last_error());
    return exit_code(s);
  }
  bfstar_report rep;
  bfstar_spectral sp;
  bfstar_observables ob;
  bfstar_solution_report(sol.get(), &rep);
  bfstar_solution_spectral(sol.get(), &sp);
  bfstar_solution_observables(sol.get(), &ob);
  for (size_t i = 0; i < bfstar_solution_log_length(sol.get()); ++i) {
    bfstar_iteration it;
    bfstar_solution_log_entry(sol.get(), i, &it);
    std::fprintf(stderr, "iter %3d  delta %.3e  tau %.4f  %s\n", it.k, it.delta, it.tau,
                 it.frozen ? "frozen" : "newton");
  }
  if (!rep.converged) {
    std::string why(bfstar_solution_failure(sol.get(), nullptr, 0), '\0');
    bfstar_solution_failure(sol.get(), why.data(), why.size() + 1);
    std::fprintf(stderr, "not converged after %d iterations: %s\n", rep.iterations, why.c_str());
    return kNotConverged;
  }
  std::printf("%-20s %d\n", "iterations", rep.iterations);
  print_number("residual", rep.residual);
  print_number("R_s", sp.R_s);
  print_number("Omega", sp.Omega);
  print_number("phi_s", sp.phi_s);
  print_number("M", ob.M);
  print_number("M_RB", ob.M_RB);
  print_number("M_RF", ob.M_RF);
  print_number("E_b", ob.E_b);
  print_number("r_max", rep.r_max);

  bfstar_verify v;
  const bfstar_status vs = bfstar_solution_verify(sol.get(), &v);
  if (vs == BFSTAR_OK) {
    std::printf("oracle: rel R_s %.2e  |dOmega| %.2e  rel M %.2e  rel M_RF %.2e  profiles %.2e\n", v.rel_R_s,
                v.abs_Omega, v.rel_M, v.rel_M_RF, v.profile_max);
  } else if (vs == BFSTAR_ERR_CONVERGENCE) {
    std::fprintf(stderr, "oracle did not converge: %s\n", bfstar_last_error());
    return kNotConverged;
  }
  return kOk;
}

int run_sweep(const Flags& f) {
  ConfigPtr cfg(nullptr, bfstar_config_destroy);
  if (const int rc = configure(f, cfg)) return rc;

  bfstar_sweep* raw = nullptr;
  const bfstar_status s = bfstar_run_sweep(cfg.get(), &raw);
  std::unique_ptr<bfstar_sweep, decltype(&bfstar_sweep_destroy)> sw(raw, bfstar_sweep_destroy);
  if (!sw) {
    std::fprintf(stderr, "error: %s\n", bfstar_last_error());
    return exit_code(s);
  }
  std::printf("%-12s %-12s %-12s %-12s %-12s %-12s %s\n", "value", "R_s", "Omega", "M", "M_RF", "E_b", "iter");
  for (size_t i = 0; i < bfstar_sweep_size(sw.get()); ++i) {
    bfstar_sweep_point p;
    bfstar_sweep_point_at(sw.get(), i, &p);
    if (p.converged) {
      std::printf("%-12.6g %-12.8g %-12.8g %-12.8g %-12.8g %-12.5g %d\n", p.value, p.spectral.R_s,
                  p.spectral.Omega, p.observables.M, p.observables.M_RF, p.observables.E_b, p.iterations);
    } else {
      std::string why(bfstar_sweep_failure(sw.get(), i, nullptr, 0), '\0');
      bfstar_sweep_failure(sw.get(), i, why.data(), why.size() + 1);
      std::printf("%-12.6g not converged: %s\n", p.value, why.c_str());
    }
  }
  if (s != BFSTAR_OK) std::fprintf(stderr, "%s\n", bfstar_last_error());
  return exit_code(s);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boson-fermion star solver"};
  app.set_version_flag("--version", std::string(bfstar_version()));
  app.require_subcommand(1);

  Flags solve_flags, sweep_flags;
  CLI::App* solve = app.add_subcommand("solve", "solve one configuration");
  CLI::App* sweep = app.add_subcommand("sweep", "sweep mu_c or sigma_c");
  add_flags(solve, solve_flags);
  add_flags(sweep, sweep_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  if (solve->parsed()) return run_solve(solve_flags);
  return run_sweep(sweep_flags);
}
