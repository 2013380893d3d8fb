#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bfstar/canm.hpp"
#include "bfstar/errors.hpp"
#include "bfstar/oracle.hpp"

#include <cmath>

using namespace bfstar;

namespace {

struct Pair {
  Solution canm;
  OracleOptions opts;
  OracleSolution oracle;
};

Pair run(const ModelParams& p, FarField ff = FarField::Dirichlet) {
  CanmConfig cfg;
  cfg.farfield = ff;
  Pair r;
  r.canm = solve(p, cfg);
  r.opts.x_inf = r.canm.x_inf();
  r.opts.farfield = ff;
  r.oracle = shoot_solve(p, unknowns_from(r.canm), r.opts);
  return r;
}

const Pair& reference() {
  static const Pair r = run(ModelParams{});
  return r;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

} // namespace

TEST_CASE("reference cross-validation") {
  const Pair& r = reference();
  REQUIRE(r.oracle.converged);
  CHECK(r.oracle.iterations <= 3);
  CHECK(rel(r.oracle.unknowns.spectral.R_s, r.canm.spectral.R_s) < 1e-5);
  CHECK(rel(r.oracle.unknowns.spectral.Omega, r.canm.spectral.Omega) < 1e-5);
  CHECK(rel(r.oracle.unknowns.spectral.phi_s, r.canm.spectral.phi_s) < 1e-5);
  CHECK(rel(r.oracle.shot.observables.M, r.canm.observables.M) < 1e-5);
  CHECK(rel(r.oracle.shot.observables.M_RB, r.canm.observables.M_RB) < 1e-5);
  CHECK(rel(r.oracle.shot.observables.M_RF, r.canm.observables.M_RF) < 1e-5);
  CHECK(r.oracle.shot.mismatch.size() == 3);
  CHECK(r.oracle.shot.mismatch.norm() < 1e-10);
}

TEST_CASE("profiles agree on the collocation nodes") {
  const Pair& r = reference();
  const auto& xi = r.canm.inner.mesh().nodes();
  const auto& xe = r.canm.outer.mesh().nodes();
  const Eigen::MatrixXd a = sample_inner(r.canm.params, r.oracle.unknowns, r.opts, xi);
  const Eigen::MatrixXd b = sample_outer(r.canm.params, r.oracle.unknowns, r.opts, xe);
  double err = 0.0;
  for (std::size_t c : {kLambda, kNu, kPhi, kSigma}) {
    const auto ci = static_cast<Eigen::Index>(c);
    err = std::max(err, (a.col(ci) - r.canm.inner.values().col(ci)).cwiseAbs().maxCoeff());
    err = std::max(err, (b.col(ci) - r.canm.outer.values().col(ci)).cwiseAbs().maxCoeff());
  }
  CHECK(err < 1e-4);
  CHECK(a(a.rows() - 1, static_cast<Eigen::Index>(kMu)) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("shooting at the collocation answer") {
  const Pair& r = reference();
  // Inward shooting amplifies far-field data by exp(sqrt(1 - Omega^2) r_max);
  // the collocation seeds carry ~1e-14 absolute differences in eta_X, which
  // become ~1e-5 at the surface. The oracle's own root is what matters.
  const ShootResult s = shoot(r.canm.params, unknowns_from(r.canm), r.opts);
  CHECK(s.mismatch.norm() < 1e-4);
  CHECK(std::abs(s.conditions(0)) < 1e-9); // mu(R_s) = 0 is not affected
}

TEST_CASE("mismatch is smooth in the trial") {
  const Pair& r = reference();
  const ModelParams& p = r.canm.params;
  auto dG = [&](double h) {
    ShootingUnknowns a = r.oracle.unknowns, b = r.oracle.unknowns;
    a.spectral.R_s += h;
    b.spectral.R_s -= h;
    return Eigen::VectorXd((shoot(p, a, r.opts).mismatch - shoot(p, b, r.opts).mismatch) / (2.0 * h));
  };
  const Eigen::VectorXd d1 = dG(1e-6), d2 = dG(2e-6);
  for (Eigen::Index i = 0; i < d1.size(); ++i) {
    CHECK(d1(i) * d2(i) > 0.0);
    CHECK(d1(i) == doctest::Approx(d2(i)).epsilon(1e-3));
  }
}

TEST_CASE("integrator convergence") {
  // The raw mismatch moves with the step-size controller's discrete choices,
  // so it is bounded loosely; the converged triple is the quantity that must
  // be insensitive to the tolerance.
  ModelParams p;
  p.sigma_c = 0.0;
  const Pair r = run(p);
  OracleOptions half = r.opts;
  half.tol = 0.5 * r.opts.tol;
  const ShootResult a = shoot(p, r.oracle.unknowns, r.opts);
  const ShootResult b = shoot(p, r.oracle.unknowns, half);
  CHECK((a.mismatch - b.mismatch).norm() < 1e3 * r.opts.tol);

  const Pair& ref = reference();
  half = ref.opts;
  half.tol = 0.5 * ref.opts.tol;
  const OracleSolution o = shoot_solve(ref.canm.params, ref.oracle.unknowns, half);
  CHECK(rel(o.unknowns.spectral.R_s, ref.oracle.unknowns.spectral.R_s) < 1e-8);
  CHECK(rel(o.unknowns.spectral.Omega, ref.oracle.unknowns.spectral.Omega) < 1e-8);
  CHECK(rel(o.shot.observables.M, ref.oracle.shot.observables.M) < 5e-8);
}

TEST_CASE("pure fermion variant") {
  ModelParams p;
  p.sigma_c = 0.0;
  const Pair r = run(p);
  REQUIRE(r.oracle.converged);
  CHECK(r.oracle.pure_fermion);
  CHECK(r.oracle.shot.mismatch.size() == 2);
  CHECK(std::isnan(r.oracle.unknowns.spectral.Omega));
  CHECK(rel(r.oracle.unknowns.spectral.R_s, r.canm.spectral.R_s) < 1e-5);
  CHECK(rel(r.oracle.unknowns.spectral.phi_s, r.canm.spectral.phi_s) < 1e-5);
  CHECK(rel(r.oracle.shot.observables.M, r.canm.observables.M) < 1e-5);
  CHECK(rel(r.oracle.shot.observables.M_RF, r.canm.observables.M_RF) < 1e-5);
  CHECK(r.oracle.shot.observables.M_RB == 0.0);
}

TEST_CASE("Robin far field") {
  const Pair r = run(ModelParams{}, FarField::Robin);
  CHECK(rel(r.oracle.unknowns.spectral.R_s, r.canm.spectral.R_s) < 1e-5);
  CHECK(rel(r.oracle.unknowns.spectral.Omega, r.canm.spectral.Omega) < 1e-5);
}

TEST_CASE("independent start") {
  // A perturbed start away from the collocation answer converges to the same
  // root.
  const Pair& r = reference();
  ShootingUnknowns u = r.oracle.unknowns;
  u.spectral.R_s *= 1.002;
  u.spectral.Omega += 0.002;
  u.phi_c *= 1.01;
  const OracleSolution o = shoot_solve(r.canm.params, u, r.opts);
  CHECK(rel(o.unknowns.spectral.R_s, r.oracle.unknowns.spectral.R_s) < 1e-9);
  CHECK(rel(o.unknowns.spectral.Omega, r.oracle.unknowns.spectral.Omega) < 1e-9);
}

TEST_CASE("errors") {
  const Pair& r = reference();
  ShootingUnknowns u = r.oracle.unknowns;
  u.spectral.R_s = -1.0;
  CHECK_THROWS_AS(shoot(r.canm.params, u, r.opts), DomainError);
  OracleOptions bad = r.opts;
  bad.x_inf = 0.5;
  CHECK_THROWS_AS(shoot(r.canm.params, r.oracle.unknowns, bad), DomainError);
  u = r.oracle.unknowns;
  u.phi_c = 1e3;
  CHECK_THROWS_AS(shoot(r.canm.params, u, r.opts), Error);
  OracleOptions few = r.opts;
  few.max_iter = 0;
  u = r.oracle.unknowns;
  u.spectral.R_s *= 1.01;
  CHECK_THROWS_AS(shoot_solve(r.canm.params, u, few), ConvergenceError);
}
