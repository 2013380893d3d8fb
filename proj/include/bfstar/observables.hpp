#ifndef BFSTAR_OBSERVABLES_HPP
#define BFSTAR_OBSERVABLES_HPP

// Mass integrals over a solution, in r = R_s x:
//   M    = int r^2 (T00_B + T00_F + e^{-lambda} xi^2 + gamma^2 V / 2) dr
//   M_RB = Omega int r^2 A^2 e^{(lambda - nu)/2} sigma^2 dr
//   M_RF = b int_0^{R_s} r^2 A^3 e^{lambda/2} mu^{3/2} dr
// evaluated with per-cell Gauss-Legendre quadrature up to r_max = R_s X_inf.

#include "bfstar/solution.hpp"

#include <cstddef>

namespace bfstar {

/// Gauss points per cell used by default.
inline constexpr std::size_t kQuadraturePoints = 4;

struct MassParts {
  double inner = 0.0;
  double outer = 0.0;
  double total() const { return inner + outer; }
};

MassParts total_mass_parts(const Solution& s, std::size_t points = kQuadraturePoints);
double total_mass(const Solution& s, std::size_t points = kQuadraturePoints);
double boson_rest_mass(const Solution& s, std::size_t points = kQuadraturePoints);
double fermion_rest_mass(const Solution& s, std::size_t points = kQuadraturePoints);

/// E_b = M - M_RB - M_RF with the tail diagnostic left untouched.
Observables binding_energy(Observables o);

/// All of the above plus the tail diagnostic.
Observables compute_observables(const Solution& s, std::size_t points = kQuadraturePoints);

} // namespace bfstar

#endif
