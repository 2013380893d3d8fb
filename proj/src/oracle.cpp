#include "bfstar/oracle.hpp"

#include "bfstar/errors.hpp"

#include <boost/numeric/odeint/integrate/integrate_adaptive.hpp>
#include <boost/numeric/odeint/integrate/integrate_times.hpp>
#include <boost/numeric/odeint/stepper/generation.hpp>
#include <boost/numeric/odeint/stepper/runge_kutta_fehlberg78.hpp>

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bfstar {

namespace odeint = boost::numeric::odeint;

namespace {

using State = std::vector<double>;
constexpr std::size_t kAccumulators = 3; // M, M_RB, M_RF

bool pure(const ModelParams& p) { return p.sigma_c == 0.0; }

double omega_of(const ModelParams& p, const ShootingUnknowns& u) {
  return pure(p) ? 0.0 : u.spectral.Omega;
}

// r^2 times the three mass densities.
std::array<double, 3> densities(const ModelParams& p, double Om, double r, const double* y, bool fermions) {
  const double lam = y[kLambda], nu = y[kNu], phi = y[kPhi], xi = y[kXi];
  const double sig = y[kSigma], eta = y[kEta];
  std::optional<double> mu;
  if (fermions) mu = std::max(0.0, y[kMu]);
  const auto st = stress(phi, xi, sig, eta, nu, lam, mu, Om, p);
  const double V = dilaton_potential(phi).V;
  const double A = coupling(phi).A;
  const double r2 = r * r;
  std::array<double, 3> d{};
  d[0] = r2 * (st.t00_B + st.t00_F + std::exp(-lam) * xi * xi + 0.5 * p.gamma * p.gamma * V);
  d[1] = r2 * Om * A * A * std::exp(0.5 * (lam - nu)) * sig * sig;
  d[2] = fermions ? r2 * p.b * A * A * A * std::exp(0.5 * lam) * (*mu) * std::sqrt(*mu) : 0.0;
  return d;
}

struct InnerSystem {
  const ModelParams& p;
  double Om;
  void operator()(const State& y, State& dy, double r) const {
    const InnerVector F = rhs_inner(r, Eigen::Map<const InnerVector>(y.data()), 1.0, Om, p);
    for (std::size_t i = 0; i < kInnerDim; ++i) {
      if (!std::isfinite(F(static_cast<Eigen::Index>(i)))) throw EvaluationError(i, r);
      dy[i] = F(static_cast<Eigen::Index>(i));
    }
    const auto d = densities(p, Om, r, y.data(), true);
    std::copy(d.begin(), d.end(), dy.begin() + kInnerDim);
  }
};

struct OuterSystem {
  const ModelParams& p;
  double Om;
  void operator()(const State& y, State& dy, double r) const {
    const OuterVector F = rhs_outer(r, Eigen::Map<const OuterVector>(y.data()), 1.0, Om, p);
    for (std::size_t i = 0; i < kOuterDim; ++i) {
      if (!std::isfinite(F(static_cast<Eigen::Index>(i)))) throw EvaluationError(i, r);
      dy[i] = F(static_cast<Eigen::Index>(i));
    }
    const auto d = densities(p, Om, r, y.data(), false);
    std::copy(d.begin(), d.end(), dy.begin() + kOuterDim);
  }
};

auto make_stepper(double tol) {
  return odeint::make_controlled(tol, tol, odeint::runge_kutta_fehlberg78<State>());
}

// Second-order start off the center: trapezoidal step from the regular
// limits, exact for the even (quadratic) and odd (linear) leading terms.
State center_start(const ModelParams& p, const ShootingUnknowns& u, double r0) {
  const double Om = omega_of(p, u);
  InnerVector yc;
  yc << 0.0, u.nu_c, u.phi_c, 0.0, p.sigma_c, 0.0, p.mu_c;
  const InnerVector F0 = rhs_center(yc, Om, p);
  InnerVector y = yc + r0 * F0;
  for (int it = 0; it < 2; ++it) y = yc + 0.5 * r0 * (F0 + rhs_inner(r0, y, 1.0, Om, p));
  State s(kInnerDim + kAccumulators, 0.0);
  for (std::size_t i = 0; i < kInnerDim; ++i) s[i] = y(static_cast<Eigen::Index>(i));
  // Mass inside r0 from the central densities.
  State yc_state(yc.data(), yc.data() + kInnerDim);
  const auto d = densities(p, Om, 1.0, yc_state.data(), true);
  for (std::size_t k = 0; k < kAccumulators; ++k) s[kInnerDim + k] = d[k] * r0 * r0 * r0 / 3.0;
  return s;
}

State far_start(const ModelParams& p, const ShootingUnknowns& u, const OracleOptions& o) {
  const double rX = u.spectral.R_s * o.x_inf;
  State s(kOuterDim + kAccumulators, 0.0);
  s[kLambda] = u.lambda_X;
  s[kXi] = u.xi_X;
  s[kEta] = pure(p) ? 0.0 : u.eta_X;
  if (o.farfield == FarField::Robin) {
    // r phi' + (1 + gamma r) phi = 0 and exp(nu)(1 + r nu') = 1. With sigma = 0
    // the nu equation does not involve nu itself, so both are explicit.
    s[kPhi] = -rX * u.xi_X / (1.0 + p.gamma * rX);
    const OuterVector F = rhs_outer(rX, Eigen::Map<const OuterVector>(s.data()), 1.0, omega_of(p, u), p);
    s[kNu] = -std::log1p(rX * F(kNu));
  }
  return s;
}

template <class Sys>
void integrate(Sys sys, State& y, double from, double to, double tol) {
  try {
    odeint::integrate_adaptive(make_stepper(tol), sys, y, from, to, 1e-3 * (to - from));
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw EvaluationError(0, std::numeric_limits<double>::quiet_NaN());
  }
}

Eigen::VectorXd pack(bool is_pure, const ShootingUnknowns& u) {
  if (is_pure) {
    Eigen::VectorXd v(6);
    v << u.spectral.R_s, u.spectral.phi_s, u.nu_c, u.phi_c, u.lambda_X, u.xi_X;
    return v;
  }
  Eigen::VectorXd v(8);
  v << u.spectral.R_s, u.spectral.Omega, u.spectral.phi_s, u.nu_c, u.phi_c, u.lambda_X, u.xi_X, u.eta_X;
  return v;
}

ShootingUnknowns unpack(bool is_pure, const Eigen::VectorXd& v) {
  ShootingUnknowns u;
  if (is_pure) {
    u.spectral = {v(0), std::numeric_limits<double>::quiet_NaN(), v(1)};
    u.nu_c = v(2);
    u.phi_c = v(3);
    u.lambda_X = v(4);
    u.xi_X = v(5);
    return u;
  }
  u.spectral = {v(0), v(1), v(2)};
  u.nu_c = v(3);
  u.phi_c = v(4);
  u.lambda_X = v(5);
  u.xi_X = v(6);
  u.eta_X = v(7);
  return u;
}

} // namespace

ShootingUnknowns unknowns_from(const Solution& s) {
  ShootingUnknowns u;
  u.spectral = s.spectral;
  const Eigen::VectorXd c = s.inner.left_value();
  const Eigen::VectorXd e = s.outer.right_value();
  u.nu_c = c(kNu);
  u.phi_c = c(kPhi);
  u.lambda_X = e(kLambda);
  u.xi_X = e(kXi);
  u.eta_X = e(kEta);
  return u;
}

ShootResult shoot(const ModelParams& p, const ShootingUnknowns& u, const OracleOptions& o) {
  const double R = u.spectral.R_s;
  if (!(R > 0.0)) throw DomainError("shooting needs R_s > 0");
  if (!(o.tol > 0.0)) throw DomainError("integrator tolerance must be positive");
  if (!(o.x_inf > 1.0)) throw DomainError("x_inf must be > 1");
  if (!(o.r0 > 0.0 && o.r0 < R)) throw DomainError("r0 must lie inside the star");
  const double Om = omega_of(p, u);

  State yi = center_start(p, u, o.r0);
  integrate(InnerSystem{p, Om}, yi, o.r0, R, o.tol);
  State ye = far_start(p, u, o);
  integrate(OuterSystem{p, Om}, ye, R * o.x_inf, R, o.tol);

  ShootResult res;
  res.inner_end = Eigen::Map<const InnerVector>(yi.data());
  res.outer_end = Eigen::Map<const OuterVector>(ye.data());
  const bool is_pure = pure(p);
  const auto& a = res.inner_end;
  const auto& b = res.outer_end;
  if (is_pure) {
    res.mismatch = Eigen::Vector2d(b(kNu) - a(kNu), b(kXi) - a(kXi));
    res.conditions.resize(6);
    res.conditions << a(kMu), a(kPhi) - u.spectral.phi_s, b(kLambda) - a(kLambda), b(kNu) - a(kNu),
        b(kPhi) - a(kPhi), b(kXi) - a(kXi);
  } else {
    res.mismatch = Eigen::Vector3d(b(kNu) - a(kNu), b(kXi) - a(kXi), b(kEta) - a(kEta));
    res.conditions.resize(8);
    res.conditions << a(kMu), a(kPhi) - u.spectral.phi_s, b(kLambda) - a(kLambda), b(kNu) - a(kNu),
        b(kPhi) - a(kPhi), b(kXi) - a(kXi), b(kSigma) - a(kSigma), b(kEta) - a(kEta);
  }
  // The outer accumulators ran inward.
  Observables& ob = res.observables;
  ob.M = yi[kInnerDim] - ye[kOuterDim];
  ob.M_RB = is_pure ? 0.0 : yi[kInnerDim + 1] - ye[kOuterDim + 1];
  ob.M_RF = yi[kInnerDim + 2];
  ob.E_b = ob.M - ob.M_RB - ob.M_RF;
  return res;
}

OracleSolution shoot_solve(const ModelParams& p, const ShootingUnknowns& initial, const OracleOptions& o) {
  const bool is_pure = pure(p);
  OracleSolution out;
  out.pure_fermion = is_pure;

  // Newton in scaled variables: the far-field seeds can be many orders of
  // magnitude below the O(1) unknowns.
  const Eigen::VectorXd u0 = pack(is_pure, initial);
  const Eigen::Index n = u0.size();
  const Eigen::Index first_seed = is_pure ? 5 : 6; // xi_X (and eta_X)
  Eigen::VectorXd scale(n);
  for (Eigen::Index i = 0; i < n; ++i)
    scale(i) = std::max(std::abs(u0(i)), i >= first_seed ? 1e-14 : 1e-3);

  auto G = [&](const Eigen::VectorXd& v) {
    return shoot(p, unpack(is_pure, v.cwiseProduct(scale)), o).conditions;
  };
  auto safe_norm = [&](const Eigen::VectorXd& v) {
    try {
      const Eigen::VectorXd g = G(v);
      return g.allFinite() ? g.norm() : std::numeric_limits<double>::infinity();
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  Eigen::VectorXd v = u0.cwiseQuotient(scale);
  Eigen::VectorXd g = G(v);
  double norm = g.norm();
  out.history.push_back(norm);
  for (int it = 0; it < o.max_iter && norm >= o.newton_tol; ++it) {
    Eigen::MatrixXd J(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(v(j)));
      Eigen::VectorXd vp = v, vm = v;
      vp(j) += h;
      vm(j) -= h;
      J.col(j) = (G(vp) - G(vm)) / (2.0 * h);
    }
    const Eigen::VectorXd dv = J.fullPivLu().solve(-g);
    double t = 1.0, trial = safe_norm(v + dv);
    while (!(trial < norm) && t > 1.0 / 1024.0) {
      t *= 0.5;
      trial = safe_norm(v + t * dv);
    }
    if (!std::isfinite(trial)) break;
    v += t * dv;
    g = G(v);
    norm = g.norm();
    out.history.push_back(norm);
    out.iterations = it + 1;
  }

  out.unknowns = unpack(is_pure, v.cwiseProduct(scale));
  out.residual = norm;
  out.converged = norm < o.newton_tol;
  if (!out.converged)
    throw ConvergenceError("shooting did not converge (residual " + std::to_string(norm) + ")",
                           out.history);
  out.shot = shoot(p, out.unknowns, o);
  return out;
}

Eigen::MatrixXd sample_inner(const ModelParams& p, const ShootingUnknowns& u, const OracleOptions& o,
                             const std::vector<double>& x) {
  const double R = u.spectral.R_s;
  const double Om = omega_of(p, u);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.size()), kInnerDim);
  std::vector<double> times{o.r0};
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0 || x[i] > 1.0) throw DomainError("inner samples need 0 <= x <= 1");
    const double r = R * x[i];
    if (r <= o.r0) {
      // Inside the starting interval the center value is accurate to O(r0^2).
      out.row(static_cast<Eigen::Index>(i)) << 0.0, u.nu_c, u.phi_c, 0.0, p.sigma_c, 0.0, p.mu_c;
      continue;
    }
    times.push_back(r);
    rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (!std::is_sorted(times.begin(), times.end())) throw DomainError("samples must be ascending");
  State y = center_start(p, u, o.r0);
  std::size_t k = 0;
  auto observe = [&](const State& s, double) {
    if (k > 0)
      for (std::size_t c = 0; c < kInnerDim; ++c) out(rows[k - 1], static_cast<Eigen::Index>(c)) = s[c];
    ++k;
  };
  odeint::integrate_times(make_stepper(o.tol), InnerSystem{p, Om}, y, times.begin(), times.end(), 1e-3, observe);
  return out;
}

Eigen::MatrixXd sample_outer(const ModelParams& p, const ShootingUnknowns& u, const OracleOptions& o,
                             const std::vector<double>& x) {
  const double R = u.spectral.R_s;
  const double Om = omega_of(p, u);
  if (!std::is_sorted(x.begin(), x.end())) throw DomainError("samples must be ascending");
  for (double xi : x)
    if (xi < 1.0 || xi > o.x_inf) throw DomainError("outer samples need 1 <= x <= x_inf");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.size()), kOuterDim);

  // Fitting point at the middle of the outer domain. Integrating the whole
  // way in one direction amplifies tolerance-level errors by
  // exp(sqrt(1 - Omega^2) (r_max - R_s)) through the growing boson mode;
  // splitting takes the square root of that factor.
  const double x_fit = 0.5 * (1.0 + o.x_inf);
  const auto split = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), x_fit) - x.begin());

  auto run = [&](State y, std::vector<double> times, std::vector<Eigen::Index> rows) {
    // Samples at the starting radius are copied; integrate_times does not
    // advance past a repeated leading time.
    while (times.size() > 1 && times[1] == times[0]) {
      for (std::size_t c = 0; c < kOuterDim; ++c) out(rows.front(), static_cast<Eigen::Index>(c)) = y[c];
      times.erase(times.begin() + 1);
      rows.erase(rows.begin());
    }
    if (times.size() < 2) return;
    std::size_t k = 0;
    auto observe = [&](const State& s, double) {
      if (k > 0)
        for (std::size_t c = 0; c < kOuterDim; ++c) out(rows[k - 1], static_cast<Eigen::Index>(c)) = s[c];
      ++k;
    };
    const double h = times.size() > 1 && times[1] < times[0] ? -1e-3 : 1e-3;
    odeint::integrate_times(make_stepper(o.tol), OuterSystem{p, Om}, y, times.begin(), times.end(), h, observe);
  };

  // Near side: outward from the interface state of the inner shot.
  if (split > 0) {
    State yi = center_start(p, u, o.r0);
    integrate(InnerSystem{p, Om}, yi, o.r0, R, o.tol);
    State y(kOuterDim + kAccumulators, 0.0);
    std::copy(yi.begin(), yi.begin() + kOuterDim, y.begin());
    std::vector<double> times{R};
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < split; ++i) {
      times.push_back(R * x[i]);
      rows.push_back(static_cast<Eigen::Index>(i));
    }
    run(std::move(y), std::move(times), std::move(rows));
  }
  // Far side: inward from the truncation point.
  if (split < x.size()) {
    std::vector<double> times{R * o.x_inf};
    std::vector<Eigen::Index> rows;
    for (std::size_t i = x.size(); i-- > split;) {
      times.push_back(R * x[i]);
      rows.push_back(static_cast<Eigen::Index>(i));
    }
    run(far_start(p, u, o), std::move(times), std::move(rows));
  }
  return out;
}

} // namespace bfstar
