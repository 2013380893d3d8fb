#ifndef BFSTAR_ORACLE_HPP
#define BFSTAR_ORACLE_HPP

// Independent check on the collocation solver: adaptive Runge-Kutta shooting
// of the same ODEs in r, from the center outward and from the truncation
// point inward, joined at the fermionic surface r = R_s. Only the model
// right-hand sides are shared with the main solver.
//
// Shooting unknowns:
//   mixed star:     R_s, Omega, phi_s, nu_c, phi_c, lambda_X, xi_X, eta_X
//   pure fermions:  R_s, phi_s, nu_c, phi_c, lambda_X, xi_X
// where the _c values start the inward-regular center expansion and the _X
// values complete the far-field data at r = R_s X_inf. The conditions are
// mu(R_s) = 0, phi_i(R_s) = phi_s and continuity of the six shared fields.

#include "bfstar/model.hpp"
#include "bfstar/solution.hpp"

#include <Eigen/Core>

#include <vector>

namespace bfstar {

struct OracleOptions {
  double tol = 1e-12;      // absolute and relative integrator tolerance
  double r0 = 1e-4;        // first off-center point (second-order start)
  double x_inf = 20.0;     // truncation point in x-units, as in the collocation solver
  FarField farfield = FarField::Dirichlet;
  int max_iter = 50;
  double newton_tol = 1e-10;
};

struct ShootingUnknowns {
  SpectralTriple spectral;
  double nu_c = 0.0;
  double phi_c = 0.0;
  double lambda_X = 0.0;
  double xi_X = 0.0;
  double eta_X = 0.0;
};

struct ShootResult {
  InnerVector inner_end;   // center -> surface
  OuterVector outer_end;   // far field -> surface
  /// Continuity of (nu, xi, eta) at the surface, outer minus inner; the eta
  /// entry is dropped in pure-fermion mode.
  Eigen::VectorXd mismatch;
  /// Every shooting condition, in the order of the header comment.
  Eigen::VectorXd conditions;
  Observables observables; // mass integrals accumulated along the shot
};

struct OracleSolution {
  bool pure_fermion = false;
  bool converged = false;
  ShootingUnknowns unknowns;
  ShootResult shot;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> history;
};

/// Starting unknowns read off a collocation solution (its boundary values).
ShootingUnknowns unknowns_from(const Solution& s);

/// One shot. Throws EvaluationError at the radius where the integration
/// stops producing finite values.
ShootResult shoot(const ModelParams& params, const ShootingUnknowns& trial, const OracleOptions& opts);

/// Damped Newton on the shooting conditions with a finite-difference
/// Jacobian. Throws ConvergenceError on failure.
OracleSolution shoot_solve(const ModelParams& params, const ShootingUnknowns& initial,
                           const OracleOptions& opts);

/// Profiles of a shot sampled at x = r / R_s. Rows follow `x`; the inner
/// table has 7 columns and is valid for x <= 1, the outer one 6 columns for
/// 1 <= x <= x_inf. Outer samples below the domain midpoint continue the
/// inner shot outward, the rest come from the inward shot; x is ascending.
Eigen::MatrixXd sample_inner(const ModelParams& params, const ShootingUnknowns& u,
                             const OracleOptions& opts, const std::vector<double>& x);
Eigen::MatrixXd sample_outer(const ModelParams& params, const ShootingUnknowns& u,
                             const OracleOptions& opts, const std::vector<double>& x);

} // namespace bfstar

#endif
