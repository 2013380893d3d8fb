#ifndef BFSTAR_MODEL_HPP
#define BFSTAR_MODEL_HPP

// Static, spherically symmetric boson-fermion star in scalar-tensor gravity
// with a massive dilaton, written in the dimensionless radial coordinate r.
//
// Unknown vector (inner domain, fermionic matter present):
//   y = (lambda, nu, phi, xi, sigma, eta, mu)
// where xi = dphi/dr and eta = dsigma/dr. The outer domain drops mu.
//
// The model functions are fixed to
//   A(phi) = exp(phi / sqrt 3),  V(phi) = 3/2 (1 - A^2)^2,
//   W(s)   = -1/2 (s + Lambda s^2 / 2)   (s = sigma^2),
// and the ideal neutron gas in parametric form f(mu), g(mu), n = mu^{3/2}.

#include <Eigen/Core>

#include <cstddef>
#include <optional>

namespace bfstar {

inline constexpr std::size_t kInnerDim = 7;
inline constexpr std::size_t kOuterDim = 6;

/// Component indices shared by the inner and outer unknown vectors.
enum Component : std::size_t {
  kLambda = 0,
  kNu = 1,
  kPhi = 2,
  kXi = 3,
  kSigma = 4,
  kEta = 5,
  kMu = 6,
};

const char* component_name(std::size_t c);

using InnerVector = Eigen::Matrix<double, 7, 1>;
using OuterVector = Eigen::Matrix<double, 6, 1>;
using InnerMatrix = Eigen::Matrix<double, 7, 7>;
using OuterMatrix = Eigen::Matrix<double, 6, 6>;

struct ModelParams {
  double gamma = 0.1;   // dilaton to boson mass ratio
  double Lambda = 10.0; // boson self-coupling
  double b = 1.0;       // fermion scale
  double sigma_c = 0.4; // central boson amplitude
  double mu_c = 1.2;    // central Fermi momentum

  /// Throws DomainError when an invariant is violated. The free-boundary
  /// solver additionally needs mu_c > 0.
  void validate(bool free_boundary = true) const;
};

struct Coupling {
  double A;
  double alpha;
};

/// A(phi) = exp(phi/sqrt 3) and its logarithmic derivative (constant 1/sqrt 3).
Coupling coupling(double phi);

struct DilatonPotential {
  double V;
  double Vp;
};

DilatonPotential dilaton_potential(double phi);

struct BosonPotential {
  double W;
  double Wp; // dW/ds
};

/// Boson potential as a function of s = sigma^2. Throws for s < 0.
BosonPotential boson_potential(double s, double Lambda);

struct EosValues {
  double f;  // pressure function
  double g;  // energy function
  double fp; // df/dmu
  double n;  // number density mu^{3/2}
};

/// Below this Fermi momentum f and g are evaluated from their series.
inline constexpr double kEosSeriesThreshold = 1e-4;

/// Ideal neutron gas. Throws DomainError for negative or non-finite mu.
EosValues eos(double mu);

/// (g + f) / f', the coefficient of the hydrostatic equation. The apparent
/// 0/0 at mu = 0 is removable; the limit is 2.
double eos_source_ratio(double mu);

struct StressBundle {
  double t00_F = 0.0;
  double t11_F = 0.0;
  double t00_B = 0.0;
  double t11_B = 0.0;
  double trace_F = 0.0;
  double trace_B = 0.0;
};

/// Dimensionless stress-tensor components. Fermion parts are zero when mu is
/// absent. The dilaton gradient xi does not enter the matter stress tensor;
/// it is accepted so that a full point state can be passed through.
StressBundle stress(double phi, double xi, double sigma, double eta, double nu, double lambda,
                    std::optional<double> mu, double Omega, const ModelParams& p);

/// Interior right-hand side F_i in r-units at r = Rs * x. At x = 0 the
/// regular-center limits are returned. Throws EvaluationError on overflow.
InnerVector rhs_inner(double x, const InnerVector& y, double Rs, double Omega,
                      const ModelParams& p);

/// Exterior right-hand side F_e (no fermions) at r = Rs * x, x > 0.
OuterVector rhs_outer(double x, const OuterVector& y, double Rs, double Omega,
                      const ModelParams& p);

/// Regular-center limit of F_i (independent of Rs).
InnerVector rhs_center(const InnerVector& y, double Omega, const ModelParams& p);

template <int N>
struct ModelJacobian {
  Eigen::Matrix<double, N, 1> F;
  Eigen::Matrix<double, N, N> Q;         // dF/dy (unscaled)
  Eigen::Matrix<double, N, 1> dF_dRs;    // x * dF/dr at fixed y
  Eigen::Matrix<double, N, 1> dF_dOmega; // dF/dOmega
};

using InnerJacobian = ModelJacobian<7>;
using OuterJacobian = ModelJacobian<6>;

/// Exact (forward-mode) derivatives of rhs_inner.
InnerJacobian jacobians_inner(double x, const InnerVector& y, double Rs, double Omega,
                              const ModelParams& p);

OuterJacobian jacobians_outer(double x, const OuterVector& y, double Rs, double Omega,
                              const ModelParams& p);

} // namespace bfstar

#endif
