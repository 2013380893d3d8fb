#include "bfstar/observables.hpp"

#include "bfstar/errors.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <functional>

namespace bfstar {

namespace {

using Integrand = std::function<double(double r, const Eigen::VectorXd& y)>;

template <std::size_t P>
double integrate_fixed(const HermiteGridFunction& f, double Rs, const Integrand& g) {
  using Rule = boost::math::quadrature::gauss<double, P>;
  const auto& abscissa = Rule::abscissa();
  const auto& weights = Rule::weights();
  const Mesh& m = f.mesh();
  double total = 0.0;
  for (std::size_t j = 0; j < m.cells(); ++j) {
    const double a = m.nodes()[j];
    const double h = m.width(j);
    double cell = 0.0;
    // Boost stores the nonnegative half of a symmetric rule on [-1, 1].
    for (std::size_t q = 0; q < abscissa.size(); ++q) {
      const double t = abscissa[q];
      const double w = weights[q];
      if (t == 0.0) {
        const double x = a + 0.5 * h;
        cell += w * g(Rs * x, f.evaluate(x).value);
        continue;
      }
      for (double sgn : {-1.0, 1.0}) {
        const double x = a + 0.5 * h * (1.0 + sgn * t);
        cell += w * g(Rs * x, f.evaluate(x).value);
      }
    }
    total += 0.5 * h * cell;
  }
  return Rs * total;
}

double integrate(const HermiteGridFunction& f, double Rs, const Integrand& g, std::size_t points) {
  switch (points) {
  case 2: return integrate_fixed<2>(f, Rs, g);
  case 3: return integrate_fixed<3>(f, Rs, g);
  case 4: return integrate_fixed<4>(f, Rs, g);
  case 5: return integrate_fixed<5>(f, Rs, g);
  case 8: return integrate_fixed<8>(f, Rs, g);
  default: throw DomainError("quadrature supports 2, 3, 4, 5 or 8 points per cell");
  }
}

double omega_of(const Solution& s) { return s.pure_fermion ? 0.0 : s.spectral.Omega; }

double mass_density(const Solution& s, double r, const Eigen::VectorXd& y, bool fermions) {
  std::optional<double> mu;
  if (fermions) mu = std::max(0.0, y(kMu));
  const auto st = stress(y(kPhi), y(kXi), y(kSigma), y(kEta), y(kNu), y(kLambda), mu, omega_of(s),
                         s.params);
  const double V = dilaton_potential(y(kPhi)).V;
  const double xi = y(kXi);
  return r * r *
         (st.t00_B + st.t00_F + std::exp(-y(kLambda)) * xi * xi +
          0.5 * s.params.gamma * s.params.gamma * V);
}

} // namespace

MassParts total_mass_parts(const Solution& s, std::size_t points) {
  const double Rs = s.spectral.R_s;
  MassParts parts;
  parts.inner = integrate(
      s.inner, Rs, [&](double r, const Eigen::VectorXd& y) { return mass_density(s, r, y, true); },
      points);
  parts.outer = integrate(
      s.outer, Rs, [&](double r, const Eigen::VectorXd& y) { return mass_density(s, r, y, false); },
      points);
  return parts;
}

double total_mass(const Solution& s, std::size_t points) { return total_mass_parts(s, points).total(); }

double boson_rest_mass(const Solution& s, std::size_t points) {
  if (s.pure_fermion) return 0.0;
  const double Rs = s.spectral.R_s;
  auto g = [](double r, const Eigen::VectorXd& y) {
    const double A = coupling(y(kPhi)).A;
    return r * r * A * A * std::exp(0.5 * (y(kLambda) - y(kNu))) * y(kSigma) * y(kSigma);
  };
  return s.spectral.Omega * (integrate(s.inner, Rs, g, points) + integrate(s.outer, Rs, g, points));
}

double fermion_rest_mass(const Solution& s, std::size_t points) {
  const double Rs = s.spectral.R_s;
  auto g = [](double r, const Eigen::VectorXd& y) {
    const double A = coupling(y(kPhi)).A;
    const double mu = std::max(0.0, y(kMu));
    return r * r * A * A * A * std::exp(0.5 * y(kLambda)) * mu * std::sqrt(mu);
  };
  return s.params.b * integrate(s.inner, Rs, g, points);
}

Observables binding_energy(Observables o) {
  o.E_b = o.M - o.M_RB - o.M_RF;
  return o;
}

Observables compute_observables(const Solution& s, std::size_t points) {
  Observables o;
  o.M = total_mass(s, points);
  o.M_RB = boson_rest_mass(s, points);
  o.M_RF = fermion_rest_mass(s, points);
  const double X = s.outer.mesh().b();
  o.tail_integrand = std::abs(mass_density(s, s.spectral.R_s * X, s.outer.right_value(), false));
  return binding_energy(o);
}

} // namespace bfstar
