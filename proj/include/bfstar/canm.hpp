#ifndef BFSTAR_CANM_HPP
#define BFSTAR_CANM_HPP

// Continuous analogue of Newton's method for the two-domain free-boundary
// problem. Each iteration linearizes the inner (x in [0,1]) and outer
// (x in [1, X]) systems, splits the correction into
//   z = s + a_0 u_0 + a_1 u_1 + a_2 u_2
// where s carries the current residual and u_k the sensitivity to the k-th
// scalar unknown, and fixes the a_k from three interface conditions.
//
// Scalar unknowns and interface conditions:
//   mixed star:     (R_s, Omega, phi_s)  from continuity of nu, xi, eta
//   pure fermions:  (R_s, nu_c,  phi_s)  from mu(1) = 0 and continuity of nu, xi

#include "bfstar/collocation.hpp"
#include "bfstar/model.hpp"
#include "bfstar/solution.hpp"

#include <Eigen/Core>

#include <optional>

namespace bfstar {

struct MeshSettings {
  std::size_t inner_cells = 200;
  std::size_t outer_cells = 400;
  double outer_ratio = 1.01; // cell growth away from the interface
};

struct CanmConfig {
  double epsilon = 1e-10;
  int max_iter = 100;
  double freeze_threshold = 1e-3;
  bool allow_freeze = true;
  double tau_min = 1e-3;
  MeshSettings mesh;
  double r_max = 40.0;           // truncation radius R_s X_inf when x_inf is not given
  std::optional<double> x_inf;   // truncation point in x-units
  FarField farfield = FarField::Dirichlet;
  std::optional<double> R_s0;    // default: fermion_star_radius
  double Omega0 = 0.9;
  double phi_s0 = 0.0;
  std::optional<double> boson_width; // sigma ansatz width in r; default 3 / sqrt(1 - Omega0^2)

  /// Throws DomainError naming the offending field.
  void validate() const;
};

struct IterationState {
  ModelParams params;
  bool pure_fermion = false;
  FarField farfield = FarField::Dirichlet;
  HermiteGridFunction inner;
  HermiteGridFunction outer;
  SpectralTriple spectral;
  double nu_c = 0.0; // scalar unknown of the pure-fermion mode
  int k = 0;
  double delta = 0.0;
  IterationMode mode = IterationMode::FullNewton;
};

struct Increments {
  HermiteGridFunction z_inner;
  HermiteGridFunction z_outer;
  double dR = 0.0;
  double dOmega = 0.0;
  double dPhiS = 0.0;
  double dNuC = 0.0; // pure-fermion mode only
};

struct StepResult {
  Increments increments;
  double delta_f = 0.0;        // defect of the state the step started from
  Eigen::Matrix3d matching;    // columns: sensitivities of the three conditions
  Eigen::Vector3d matching_rhs;
  double matching_rcond = 0.0;
};

/// Newtonian polytrope estimate of the radius, 3.65375 / sqrt(b sqrt(mu_c)).
double newtonian_radius(const ModelParams& params);

/// Surface radius of the pure-fermion star with the same mu_c and b, from a
/// quick fixed-step integration outward from the center. The relativistic
/// star is markedly more compact than the Newtonian estimate at mu_c ~ 1,
/// which matters for landing in the nodeless boson basin. Falls back to
/// newtonian_radius if the surface is not reached.
double fermion_star_radius(const ModelParams& params);

/// Default ansatz, or an exact copy of `override`.
IterationState initial_guess(const ModelParams& params, const CanmConfig& cfg,
                             const Solution* override = nullptr);

/// Resamples a solution onto the meshes `cfg` prescribes for its radius, for
/// use as a warm start with different parameters or mesh settings.
IterationState resample(const Solution& source, const ModelParams& params, const CanmConfig& cfg);

/// One full Newton linearization at `state`.
StepResult canm_step(const IterationState& state, const CanmConfig& cfg);

/// Ermakov-Kalitkin step: clamp(delta0 / (delta0 + delta1), tau_min, 1).
double optimal_tau(double delta0, double delta1, double tau_min = 1e-3);

/// Combined defect: inner and outer collocation residuals plus boundary,
/// interface and matching residuals.
double defect(const IterationState& state);

/// max(defect(state + tau z), (tau dR)^2, (tau dOmega)^2, (tau dPhiS)^2);
/// the second entry is the nu_c increment in pure-fermion mode.
double residual_delta(const IterationState& state, const Increments& inc, double tau);

/// state + tau * increments.
IterationState advance(const IterationState& state, const Increments& inc, double tau);

/// Interface mismatches (nu, xi, eta)_outer - (nu, xi, eta)_inner at x = 1.
Eigen::Vector3d interface_mismatch(const IterationState& state);

/// Solves the undecomposed linearized system for given scalar increments.
/// Used to check the decomposition.
std::pair<HermiteGridFunction, HermiteGridFunction> linear_correction(
    const IterationState& state, const Eigen::Vector3d& scalar_increments);

/// Runs CANM to convergence. Throws ConvergenceError on failure.
Solution solve(const ModelParams& params, const CanmConfig& cfg, const Solution* guess = nullptr);

/// Same, but from an explicit starting state.
Solution solve_from(IterationState state, const CanmConfig& cfg);

/// As solve_from, but reports failure in the returned report instead of
/// throwing; the returned profiles are the last iterate. Without an explicit
/// x_inf the converged solution is re-solved on X_inf = r_max / R_s until
/// the truncation radius equals r_max; the report covers all passes.
Solution try_solve_from(IterationState state, const CanmConfig& cfg);

/// sigma_c = 0: boson field removed, Omega absent.
Solution pure_fermion_solve(const ModelParams& params, const CanmConfig& cfg,
                            const Solution* guess = nullptr);

} // namespace bfstar

#endif
