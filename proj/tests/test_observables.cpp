#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bfstar/canm.hpp"
#include "bfstar/errors.hpp"
#include "bfstar/observables.hpp"

#include <cmath>

using namespace bfstar;

namespace {

// Flat, dilaton-free star with constant Fermi momentum on [0, R].
Solution flat_probe(double mu0, double R) {
  Solution s;
  s.params.sigma_c = 0.0;
  s.pure_fermion = true;
  s.spectral = {R, std::numeric_limits<double>::quiet_NaN(), 0.0};
  auto mi = std::make_shared<const Mesh>(build_mesh(0.0, 1.0, 7));
  auto me = std::make_shared<const Mesh>(build_mesh(1.0, 3.0, 5));
  s.inner = HermiteGridFunction(mi, kInnerDim);
  s.inner.values().col(kMu).setConstant(mu0);
  s.outer = HermiteGridFunction(me, kOuterDim);
  return s;
}

const Solution& reference_solution() {
  static const Solution sol = solve(ModelParams{}, CanmConfig{});
  return sol;
}

} // namespace

TEST_CASE("binding energy arithmetic") {
  Observables o;
  o.M = 0.7;
  o.M_RF = 0.7;
  CHECK(binding_energy(o).E_b == 0.0);
  o.M = 1.0;
  o.M_RB = 0.2;
  o.M_RF = 0.9;
  CHECK(binding_energy(o).E_b == doctest::Approx(-0.1).epsilon(1e-15));
}

TEST_CASE("analytic probes") {
  SUBCASE("zero profiles") {
    Solution s = flat_probe(0.0, 2.0);
    CHECK(total_mass(s) == 0.0);
    CHECK(fermion_rest_mass(s) == 0.0);
    CHECK(boson_rest_mass(s) == 0.0);
  }
  SUBCASE("flat constant-mu star") {
    const double mu0 = 0.7, R = 2.3;
    for (double b : {1.0, 2.5}) {
      Solution s = flat_probe(mu0, R);
      s.params.b = b;
      CHECK(fermion_rest_mass(s) == doctest::Approx(b * std::pow(mu0, 1.5) * R * R * R / 3.0).epsilon(1e-13));
    }
  }
  SUBCASE("quadrature orders") {
    Solution s = flat_probe(0.4, 1.5);
    for (std::size_t q : {2u, 3u, 4u, 5u, 8u})
      CHECK(fermion_rest_mass(s, q) == doctest::Approx(std::pow(0.4, 1.5) * 1.5 * 1.5 * 1.5 / 3.0).epsilon(1e-13));
    CHECK_THROWS_AS(fermion_rest_mass(s, 6), DomainError);
  }
}

TEST_CASE("reference observables") {
  const Solution& sol = reference_solution();
  REQUIRE(sol.report.converged);
  const Observables& o = sol.observables;
  CHECK(o.M > 0.0);
  CHECK(o.M_RB > 0.0);
  CHECK(o.M_RF > 0.0);
  CHECK(o.E_b == doctest::Approx(o.M - o.M_RB - o.M_RF).epsilon(1e-12));

  SUBCASE("domain additivity") {
    const MassParts parts = total_mass_parts(sol);
    CHECK(std::abs(parts.inner + parts.outer - o.M) <= 1e-12 * o.M);
    CHECK(parts.outer > 0.0);
  }

  SUBCASE("quadrature refinement") {
    CHECK(std::abs(total_mass(sol, 8) - o.M) < 1e-8);
    CHECK(std::abs(boson_rest_mass(sol, 8) - o.M_RB) < 1e-8);
    CHECK(std::abs(fermion_rest_mass(sol, 8) - o.M_RF) < 1e-8);
  }

  SUBCASE("tail") {
    // sigma is gone well before the truncation point.
    const double X = sol.x_inf();
    const Eigen::VectorXd y = sol.outer.evaluate(X).value;
    CHECK(std::abs(y(kSigma)) < 1e-6);
    CHECK(o.tail_integrand < 1e-4);
  }

  SUBCASE("ADM consistency") {
    // Total mass against the exterior metric: e^{-lambda} = 1 - M / r in
    // these units, up to the slow dilaton tail beyond X.
    const double r = sol.r_max();
    const double lam = sol.outer.right_value()(kLambda);
    CHECK(r * (1.0 - std::exp(-lam)) == doctest::Approx(o.M).epsilon(1e-3));
  }
}

TEST_CASE("pure fermion observables") {
  ModelParams p;
  p.sigma_c = 0.0;
  const Solution sol = solve(p, CanmConfig{});
  REQUIRE(sol.report.converged);
  CHECK(sol.observables.M_RB == 0.0);
  CHECK(sol.observables.M_RF > sol.observables.M); // bound star
  CHECK(sol.observables.E_b < 0.0);
}

TEST_CASE("truncation robustness") {
  CanmConfig cfg;
  cfg.farfield = FarField::Robin;
  const Solution a = solve(ModelParams{}, cfg);
  cfg.x_inf = 2.0 * a.x_inf();
  const Solution b = solve(ModelParams{}, cfg);
  REQUIRE(a.report.converged);
  REQUIRE(b.report.converged);
  CHECK(b.observables.M == doctest::Approx(a.observables.M).epsilon(1e-4));
  CHECK(b.observables.M_RB == doctest::Approx(a.observables.M_RB).epsilon(1e-4));
  CHECK(b.observables.M_RF == doctest::Approx(a.observables.M_RF).epsilon(1e-4));
}
