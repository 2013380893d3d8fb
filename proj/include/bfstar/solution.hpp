#ifndef BFSTAR_SOLUTION_HPP
#define BFSTAR_SOLUTION_HPP

#include "bfstar/collocation.hpp"
#include "bfstar/model.hpp"

#include <limits>
#include <string>
#include <vector>

namespace bfstar {

/// Radius of the fermionic surface, boson frequency and interface dilaton value.
struct SpectralTriple {
  double R_s = 0.0;
  double Omega = 0.0;
  double phi_s = 0.0;
};

/// Far-field condition at the outer truncation point.
///   Dirichlet: nu = phi = sigma = 0.
///   Robin:     exp(nu) (1 + r nu') = 1, r phi' + (1 + gamma r) phi = 0, sigma = 0.
/// Both Robin rows are exact for a vacuum Schwarzschild exterior and a free
/// massive dilaton, respectively.
enum class FarField { Dirichlet, Robin };

enum class IterationMode { FullNewton, Frozen };

struct Observables {
  double M = 0.0;    // total mass
  double M_RB = 0.0; // boson rest mass
  double M_RF = 0.0; // fermion rest mass
  double E_b = 0.0;  // binding energy M - M_RB - M_RF
  double tail_integrand = 0.0; // |mass integrand| at the truncation point
};

struct IterationRecord {
  int k = 0;
  double delta = 0.0;   // delta(tau) of the accepted step
  double delta_f = 0.0; // defect part of delta(tau)
  double tau = 0.0;
  IterationMode mode = IterationMode::FullNewton;
  double dR = 0.0;
  double dOmega = 0.0; // nu_c increment in pure-fermion mode
  double dPhiS = 0.0;
  double matching_rcond = 0.0;
  int pass = 0; // 0 = main solve, then one per truncation re-anchoring
};

struct ConvergenceReport {
  bool converged = false;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  std::vector<IterationRecord> log;
  int mode_switches = 0;
  /// Fitted C in delta_{k+1} <= C delta_k^2 over the last full-Newton steps.
  double quadratic_constant = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
  std::string failure;
};

struct Solution {
  ModelParams params;
  bool pure_fermion = false;
  FarField farfield = FarField::Dirichlet;
  SpectralTriple spectral;
  double nu_c = 0.0;
  HermiteGridFunction inner; // 7 components on [0, 1]
  HermiteGridFunction outer; // 6 components on [1, X_inf]
  Observables observables;
  ConvergenceReport report;

  bool has_omega() const noexcept { return !pure_fermion; }
  double x_inf() const { return outer.mesh().b(); }
  double r_max() const { return spectral.R_s * x_inf(); }
};

} // namespace bfstar

#endif
