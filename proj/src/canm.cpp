#include "bfstar/canm.hpp"

#include "bfstar/errors.hpp"
#include "bfstar/observables.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <boost/numeric/odeint/stepper/runge_kutta4.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <string>

namespace bfstar {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLaneEmdenZero = 3.65375373621;
constexpr double kMatchingRcondMin = 1e-14;

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index ix(std::size_t i) { return static_cast<Index>(i); }

// ---------------------------------------------------------------------------
// Boundary-row layout per mode.

std::vector<int> inner_left_mask(bool pure) {
  return pure ? std::vector<int>{1, 1, 0, 1, 1, 1, 1} : std::vector<int>{1, 0, 0, 1, 1, 1, 1};
}
std::vector<int> inner_right_mask(bool pure) {
  return pure ? std::vector<int>{0, 0, 1, 0, 0, 0, 0} : std::vector<int>{0, 0, 1, 0, 0, 0, 1};
}
const std::vector<int> kOuterLeftMask = {1, 0, 1, 0, 1, 0};

// Omega entering the model functions; sigma vanishes identically in the
// pure-fermion mode so any value works there.
double omega_eval(const IterationState& s) { return s.pure_fermion ? 0.0 : s.spectral.Omega; }

// Residuals of the inner boundary rows, in selector order: current minus target.
VectorXd inner_left_residual(const IterationState& s) {
  const VectorXd y0 = s.inner.left_value();
  const auto& p = s.params;
  if (s.pure_fermion) {
    VectorXd r(6);
    r << y0(kLambda), y0(kNu) - s.nu_c, y0(kXi), y0(kSigma), y0(kEta), y0(kMu) - p.mu_c;
    return r;
  }
  VectorXd r(5);
  r << y0(kLambda), y0(kXi), y0(kSigma) - p.sigma_c, y0(kEta), y0(kMu) - p.mu_c;
  return r;
}

VectorXd inner_right_residual(const IterationState& s) {
  const VectorXd y1 = s.inner.right_value();
  if (s.pure_fermion) return VectorXd::Constant(1, y1(kPhi) - s.spectral.phi_s);
  VectorXd r(2);
  r << y1(kPhi) - s.spectral.phi_s, y1(kMu);
  return r;
}

VectorXd outer_left_residual(const IterationState& s) {
  const VectorXd yi = s.inner.right_value();
  const VectorXd ye = s.outer.left_value();
  VectorXd r(3);
  r << ye(kLambda) - yi(kLambda), ye(kPhi) - s.spectral.phi_s, ye(kSigma) - yi(kSigma);
  return r;
}

VectorXd outer_right_residual(const IterationState& s) {
  const auto end = s.outer.evaluate(s.outer.mesh().b());
  const double X = s.outer.mesh().b();
  VectorXd r(3);
  if (s.farfield == FarField::Dirichlet) {
    r << end.value(kNu), end.value(kPhi), end.value(kSigma);
  } else {
    const double nu = end.value(kNu), dnu = end.derivative(kNu);
    const double phi = end.value(kPhi), dphi = end.derivative(kPhi);
    const double gR = s.params.gamma * s.spectral.R_s;
    r << std::exp(nu) * (1.0 + X * dnu) - 1.0, X * dphi + (1.0 + gR * X) * phi, end.value(kSigma);
  }
  return r;
}

BoundaryRows outer_right_rows(const IterationState& s) {
  if (s.farfield == FarField::Dirichlet) return BoundaryRows::selector({0, 1, 1, 0, 1, 0});
  const auto end = s.outer.evaluate(s.outer.mesh().b());
  const double X = s.outer.mesh().b();
  const double e = std::exp(end.value(kNu));
  BoundaryRows rows;
  rows.value = MatrixXd::Zero(3, 6);
  rows.derivative = MatrixXd::Zero(3, 6);
  rows.value(0, kNu) = e * (1.0 + X * end.derivative(kNu));
  rows.derivative(0, kNu) = e * X;
  rows.value(1, kPhi) = 1.0 + s.params.gamma * s.spectral.R_s * X;
  rows.derivative(1, kPhi) = X;
  rows.value(2, kSigma) = 1.0;
  return rows;
}

// The three interface conditions, as current values (zero at a solution).
Eigen::Vector3d conditions(const IterationState& s) {
  const VectorXd yi = s.inner.right_value();
  const VectorXd ye = s.outer.left_value();
  if (s.pure_fermion) return {yi(kMu), ye(kNu) - yi(kNu), ye(kXi) - yi(kXi)};
  return {ye(kNu) - yi(kNu), ye(kXi) - yi(kXi), ye(kEta) - yi(kEta)};
}

// Same functional applied to increment traces.
Eigen::Vector3d condition_of(bool pure, const HermiteGridFunction& zi, const HermiteGridFunction& ze) {
  const VectorXd a = zi.right_value();
  const VectorXd b = ze.left_value();
  if (pure) return {a(kMu), b(kNu) - a(kNu), b(kXi) - a(kXi)};
  return {b(kNu) - a(kNu), b(kXi) - a(kXi), b(kEta) - a(kEta)};
}

// ---------------------------------------------------------------------------
// Collocation-point samples of the current iterate.

struct Sample {
  std::vector<VectorXd> F;     // R-independent F in r-units
  std::vector<VectorXd> dRs;   // dF/dRs
  std::vector<VectorXd> dOm;   // dF/dOmega
  std::vector<MatrixXd> Q;     // dF/dy
  std::vector<VectorXd> resid; // R F - y'
};

template <bool Inner>
Sample sample(const IterationState& s, bool jacobians) {
  const HermiteGridFunction& f = Inner ? s.inner : s.outer;
  const Mesh& m = f.mesh();
  const double R = s.spectral.R_s;
  const double Om = omega_eval(s);
  const std::size_t K = m.collocation_count();
  Sample out;
  out.F.resize(K);
  out.resid.resize(K);
  if (jacobians) {
    out.dRs.resize(K);
    out.dOm.resize(K);
    out.Q.resize(K);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double x = m.collocation_point(k);
    const auto p = f.at_collocation(k);
    if constexpr (Inner) {
      const InnerVector y = p.value;
      if (jacobians) {
        const auto J = jacobians_inner(x, y, R, Om, s.params);
        out.F[k] = J.F;
        out.dRs[k] = J.dF_dRs;
        out.dOm[k] = J.dF_dOmega;
        out.Q[k] = J.Q;
      } else {
        out.F[k] = rhs_inner(x, y, R, Om, s.params);
      }
    } else {
      const OuterVector y = p.value;
      if (jacobians) {
        const auto J = jacobians_outer(x, y, R, Om, s.params);
        out.F[k] = J.F;
        out.dRs[k] = J.dF_dRs;
        out.dOm[k] = J.dF_dOmega;
        out.Q[k] = J.Q;
      } else {
        out.F[k] = rhs_outer(x, y, R, Om, s.params);
      }
    }
    out.resid[k] = R * out.F[k] - p.derivative;
  }
  return out;
}

using Forcing = std::function<VectorXd(std::size_t, double)>;

Forcing table(std::vector<VectorXd> values) {
  auto shared = std::make_shared<const std::vector<VectorXd>>(std::move(values));
  return [shared](std::size_t k, double) { return (*shared)[k]; };
}

// ---------------------------------------------------------------------------
// A linearization: factorized systems, parameter sensitivities and the
// matching matrix. Reused unchanged in the frozen regime.

struct Linearization {
  bool pure = false;
  FactoredSystem inner_sys;
  FactoredSystem outer_sys;
  std::array<HermiteGridFunction, 3> u_inner;
  std::array<HermiteGridFunction, 3> u_outer;
  Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
  double rcond = 0.0;
};

// Forcing and boundary data of the three parameter problems on the inner side.
std::array<LinearProblem, 3> inner_parameter_problems(const IterationState& s, const Sample& smp) {
  const double R = s.spectral.R_s;
  const std::size_t K = smp.F.size();
  const std::size_t nl = s.pure_fermion ? 6 : 5;
  const std::size_t nr = s.pure_fermion ? 1 : 2;
  std::array<LinearProblem, 3> p;
  for (auto& q : p) {
    q.left_data = VectorXd::Zero(ix(nl));
    q.right_data = VectorXd::Zero(ix(nr));
  }
  std::vector<VectorXd> fR(K);
  for (std::size_t k = 0; k < K; ++k) fR[k] = smp.F[k] + R * smp.dRs[k];
  p[0].forcing = table(std::move(fR));
  if (s.pure_fermion) {
    p[1].left_data(1) = 1.0; // nu(0) = nu_c
  } else {
    std::vector<VectorXd> fO(K);
    for (std::size_t k = 0; k < K; ++k) fO[k] = R * smp.dOm[k];
    p[1].forcing = table(std::move(fO));
  }
  p[2].right_data(0) = 1.0; // phi(1) = phi_s
  return p;
}

LinearProblem inner_s_problem(const IterationState& s, const Sample& smp) {
  LinearProblem p;
  p.forcing = table(smp.resid);
  p.left_data = -inner_left_residual(s);
  p.right_data = -inner_right_residual(s);
  return p;
}

// Outer parameter problems: interface data follow the inner sensitivities so
// that the coupled linearization is exact.
std::array<LinearProblem, 3> outer_parameter_problems(const IterationState& s, const Sample& smp,
                                                      const std::array<HermiteGridFunction, 3>& ui) {
  const double R = s.spectral.R_s;
  const std::size_t K = smp.F.size();
  std::array<LinearProblem, 3> p;
  for (std::size_t q = 0; q < 3; ++q) {
    const VectorXd t = ui[q].right_value();
    p[q].left_data = VectorXd::Zero(3);
    p[q].left_data << t(kLambda), (q == 2 ? 1.0 : 0.0), t(kSigma);
    p[q].right_data = VectorXd::Zero(3);
  }
  std::vector<VectorXd> fR(K);
  for (std::size_t k = 0; k < K; ++k) fR[k] = smp.F[k] + R * smp.dRs[k];
  p[0].forcing = table(std::move(fR));
  if (s.farfield == FarField::Robin) {
    const double X = s.outer.mesh().b();
    p[0].right_data(1) = -s.params.gamma * X * s.outer.right_value()(kPhi);
  }
  if (!s.pure_fermion) {
    std::vector<VectorXd> fO(K);
    for (std::size_t k = 0; k < K; ++k) fO[k] = R * smp.dOm[k];
    p[1].forcing = table(std::move(fO));
  }
  return p;
}

LinearProblem outer_s_problem(const IterationState& s, const Sample& smp, const HermiteGridFunction& si) {
  LinearProblem p;
  p.forcing = table(smp.resid);
  const VectorXd t = si.right_value();
  VectorXd d = -outer_left_residual(s);
  d(0) += t(kLambda);
  d(2) += t(kSigma);
  p.left_data = d;
  p.right_data = -outer_right_residual(s);
  return p;
}

LinearBVP inner_bvp(const IterationState& s, const Sample& smp) {
  LinearBVP bvp;
  bvp.dim = kInnerDim;
  auto Q = std::make_shared<std::vector<MatrixXd>>(smp.Q);
  const double R = s.spectral.R_s;
  bvp.coefficient = [Q, R](std::size_t k, double) -> MatrixXd { return R * (*Q)[k]; };
  bvp.left = BoundaryRows::selector(inner_left_mask(s.pure_fermion));
  bvp.right = BoundaryRows::selector(inner_right_mask(s.pure_fermion));
  return bvp;
}

LinearBVP outer_bvp(const IterationState& s, const Sample& smp) {
  LinearBVP bvp;
  bvp.dim = kOuterDim;
  auto Q = std::make_shared<std::vector<MatrixXd>>(smp.Q);
  const double R = s.spectral.R_s;
  bvp.coefficient = [Q, R](std::size_t k, double) -> MatrixXd { return R * (*Q)[k]; };
  bvp.left = BoundaryRows::selector(kOuterLeftMask);
  bvp.right = outer_right_rows(s);
  return bvp;
}

double matching_rcond(const Eigen::Matrix3d& M) {
  // Column equilibration first: the three unknowns have unrelated scales.
  Eigen::Matrix3d A = M;
  for (int c = 0; c < 3; ++c) {
    const double n = A.col(c).norm();
    if (n > 0.0) A.col(c) /= n;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(A);
  const auto& sv = svd.singularValues();
  return sv(0) > 0.0 ? sv(2) / sv(0) : 0.0;
}


// Builds a fresh linearization at `s` (if `fresh`) and returns the step.
StepResult step_impl(const IterationState& s, Linearization& lin, bool fresh) {
  const Sample si = sample<true>(s, fresh);
  const Sample se_probe = sample<false>(s, fresh);

  HermiteGridFunction s_in, s_out;
  if (fresh) {
    lin = Linearization{};
    lin.pure = s.pure_fermion;
    lin.inner_sys = assemble(inner_bvp(s, si), s.inner.mesh_ptr());
    auto pi = inner_parameter_problems(s, si);
    auto sols = lin.inner_sys.solve_many({inner_s_problem(s, si), pi[0], pi[1], pi[2]});
    s_in = std::move(sols[0]);
    for (std::size_t q = 0; q < 3; ++q) lin.u_inner[q] = std::move(sols[q + 1]);

    lin.outer_sys = assemble(outer_bvp(s, se_probe), s.outer.mesh_ptr());
    auto po = outer_parameter_problems(s, se_probe, lin.u_inner);
    auto solo = lin.outer_sys.solve_many({outer_s_problem(s, se_probe, s_in), po[0], po[1], po[2]});
    s_out = std::move(solo[0]);
    for (std::size_t q = 0; q < 3; ++q) lin.u_outer[q] = std::move(solo[q + 1]);

    for (std::size_t q = 0; q < 3; ++q)
      lin.M.col(ix(q)) = condition_of(s.pure_fermion, lin.u_inner[q], lin.u_outer[q]);
    lin.rcond = matching_rcond(lin.M);
  } else {
    s_in = std::move(lin.inner_sys.solve_many({inner_s_problem(s, si)}).front());
    s_out = std::move(lin.outer_sys.solve_many({outer_s_problem(s, se_probe, s_in)}).front());
  }

  if (!(lin.rcond >= kMatchingRcondMin)) throw SingularMatchingError(lin.rcond);

  StepResult r;
  r.matching = lin.M;
  r.matching_rcond = lin.rcond;
  r.matching_rhs = -(conditions(s) + condition_of(s.pure_fermion, s_in, s_out));
  const Eigen::Vector3d a = lin.M.partialPivLu().solve(r.matching_rhs);

  Increments& inc = r.increments;
  inc.z_inner = s_in;
  inc.z_outer = s_out;
  for (std::size_t q = 0; q < 3; ++q) {
    inc.z_inner.axpy(a(ix(q)), lin.u_inner[q]);
    inc.z_outer.axpy(a(ix(q)), lin.u_outer[q]);
  }
  inc.dR = a(0);
  if (s.pure_fermion)
    inc.dNuC = a(1);
  else
    inc.dOmega = a(1);
  inc.dPhiS = a(2);
  r.delta_f = defect(s);
  return r;
}

// ---------------------------------------------------------------------------
// Guess construction.

MeshPtr inner_mesh(const CanmConfig& cfg) {
  return std::make_shared<const Mesh>(build_mesh(0.0, 1.0, cfg.mesh.inner_cells));
}

MeshPtr outer_mesh(const CanmConfig& cfg, double R0) {
  const double X = cfg.x_inf ? *cfg.x_inf : cfg.r_max / R0;
  if (!(X > 1.0))
    throw DomainError("truncation point must lie outside the star (x_inf > 1, r_max > R_s)");
  return std::make_shared<const Mesh>(build_mesh(
      1.0, X, cfg.mesh.outer_cells, Grading::geometric(cfg.mesh.outer_ratio, Grading::Toward::Left)));
}

template <class Fn>
HermiteGridFunction tabulate(const MeshPtr& mesh, std::size_t dim, Fn fn) {
  HermiteGridFunction f(mesh, dim);
  const auto& x = mesh->nodes();
  for (std::size_t j = 0; j < x.size(); ++j) {
    VectorXd v = VectorXd::Zero(ix(dim)), d = VectorXd::Zero(ix(dim));
    fn(x[j], v, d);
    f.values().row(ix(j)) = v.transpose();
    f.derivatives().row(ix(j)) = d.transpose();
  }
  return f;
}

void ensure_dims(const IterationState& s) {
  if (s.inner.dim() != kInnerDim || s.outer.dim() != kOuterDim)
    throw DomainError("state has the wrong number of components");
  if (s.inner.mesh().a() != 0.0 || s.inner.mesh().b() != 1.0 || s.outer.mesh().a() != 1.0)
    throw DomainError("state meshes must span [0, 1] and [1, X]");
}

void finalize(Solution& sol) {
  sol.observables = compute_observables(sol);
}

Solution to_solution(const IterationState& s) {
  Solution sol;
  sol.params = s.params;
  sol.pure_fermion = s.pure_fermion;
  sol.farfield = s.farfield;
  sol.spectral = s.spectral;
  if (s.pure_fermion) sol.spectral.Omega = std::numeric_limits<double>::quiet_NaN();
  sol.nu_c = s.inner.left_value()(kNu);
  sol.inner = s.inner;
  sol.outer = s.outer;
  return sol;
}

} // namespace

void CanmConfig::validate() const {
  auto bad = [](const std::string& m) { throw DomainError(m); };
  if (!(epsilon >= 1e-12 && epsilon <= 1e-8))
  {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", epsilon);
    bad(std::string("epsilon must lie in [1e-12, 1e-8], got ") + buf);
  }
  if (!(freeze_threshold > epsilon)) bad("freeze_threshold must exceed epsilon");
  if (max_iter < 1) bad("max_iter must be >= 1");
  if (!(tau_min > 0.0 && tau_min <= 1.0)) bad("tau_min must lie in (0, 1]");
  if (mesh.inner_cells < 2 || mesh.outer_cells < 2) bad("meshes need at least two cells");
  if (!(mesh.outer_ratio > 0.0)) bad("outer_ratio must be positive");
  if (x_inf && !(*x_inf > 1.0)) bad("x_inf must be > 1");
  if (!x_inf && !(r_max > 0.0)) bad("r_max must be positive");
  if (R_s0 && !(*R_s0 > 0.0)) bad("R_s0 must be positive");
  if (!(Omega0 > 0.0 && Omega0 < 1.0)) bad("Omega0 must lie in (0, 1)");
  if (boson_width && !(*boson_width > 0.0)) bad("boson_width must be positive");
}

double newtonian_radius(const ModelParams& p) {
  return kLaneEmdenZero / std::sqrt(p.b * std::sqrt(p.mu_c));
}

double fermion_star_radius(const ModelParams& params) {
  ModelParams p = params;
  p.sigma_c = 0.0;
  using State = std::array<double, kInnerDim>;
  auto rhs = [&p](const State& y, State& dy, double r) {
    const InnerVector F = rhs_inner(r, Eigen::Map<const InnerVector>(y.data()), 1.0, 0.0, p);
    for (std::size_t i = 0; i < kInnerDim; ++i) dy[i] = F(ix(i));
  };
  boost::numeric::odeint::runge_kutta4<State> stepper;
  const double h = 1e-3 / std::max(1.0, std::sqrt(p.b * std::sqrt(p.mu_c)));
  State y{};
  y[kMu] = p.mu_c;
  double r = h; // regular center: the state is flat to O(r^2)
  try {
    while (r < 100.0) {
      State next = y;
      stepper.do_step(rhs, next, r, h);
      if (!std::all_of(next.begin(), next.end(), [](double v) { return std::isfinite(v); })) break;
      if (next[kMu] <= 0.0) return r + h * y[kMu] / (y[kMu] - next[kMu]);
      y = next;
      r += h;
    }
  } catch (const Error&) {
  }
  return newtonian_radius(params);
}

IterationState initial_guess(const ModelParams& params, const CanmConfig& cfg,
                             const Solution* override) {
  params.validate(true);
  if (override) {
    IterationState s;
    s.params = params;
    s.pure_fermion = override->pure_fermion;
    s.farfield = override->farfield;
    s.inner = override->inner;
    s.outer = override->outer;
    s.spectral = override->spectral;
    if (s.pure_fermion) s.spectral.Omega = 0.0;
    s.nu_c = override->nu_c;
    ensure_dims(s);
    return s;
  }

  const bool pure = params.sigma_c == 0.0;
  const double R0 = cfg.R_s0 ? *cfg.R_s0 : fermion_star_radius(params);
  const double Om0 = cfg.Omega0;
  const double phis = cfg.phi_s0;
  const double w = cfg.boson_width ? *cfg.boson_width : 3.0 / std::sqrt(1.0 - Om0 * Om0);
  const double sc = params.sigma_c, muc = params.mu_c, gamma = params.gamma;

  auto sigma = [&](double x, VectorXd& v, VectorXd& d) {
    const double e = sc * std::exp(-(R0 * x) * (R0 * x) / (w * w));
    v(kSigma) = e;
    d(kSigma) = -2.0 * R0 * R0 * x / (w * w) * e;
    v(kEta) = d(kSigma) / R0;
    d(kEta) = (-2.0 * R0 * R0 / (w * w) * e + (-2.0 * R0 * R0 * x / (w * w)) * d(kSigma)) / R0;
  };

  IterationState s;
  s.params = params;
  s.pure_fermion = pure;
  s.farfield = cfg.farfield;
  s.spectral = {R0, pure ? 0.0 : Om0, phis};
  s.nu_c = 0.0;
  s.inner = tabulate(inner_mesh(cfg), kInnerDim, [&](double x, VectorXd& v, VectorXd& d) {
    v(kPhi) = phis * x * x;
    d(kPhi) = 2.0 * phis * x;
    v(kXi) = d(kPhi) / R0;
    d(kXi) = 2.0 * phis / R0;
    sigma(x, v, d);
    v(kMu) = muc * (1.0 - x * x);
    d(kMu) = -2.0 * muc * x;
  });
  s.outer = tabulate(outer_mesh(cfg, R0), kOuterDim, [&](double x, VectorXd& v, VectorXd& d) {
    const double e = phis * std::exp(-gamma * R0 * (x - 1.0)) / x;
    v(kPhi) = e;
    d(kPhi) = -(gamma * R0 + 1.0 / x) * e;
    v(kXi) = d(kPhi) / R0;
    d(kXi) = ((gamma * R0 + 1.0 / x) * (gamma * R0 + 1.0 / x) + 1.0 / (x * x)) * e / R0;
    sigma(x, v, d);
  });
  return s;
}

IterationState resample(const Solution& src, const ModelParams& params, const CanmConfig& cfg) {
  params.validate(true);
  const double R = src.spectral.R_s;
  IterationState s;
  s.params = params;
  s.pure_fermion = params.sigma_c == 0.0;
  s.farfield = cfg.farfield;
  s.spectral = src.spectral;
  if (s.pure_fermion || !std::isfinite(s.spectral.Omega)) s.spectral.Omega = s.pure_fermion ? 0.0 : cfg.Omega0;
  s.nu_c = src.nu_c;

  const MeshPtr mi = inner_mesh(cfg);
  s.inner = tabulate(mi, kInnerDim, [&](double x, VectorXd& v, VectorXd& d) {
    const auto p = src.inner.evaluate(x);
    v = p.value;
    d = p.derivative;
  });

  // Beyond the source domain: metric functions fall off like 1/x, the
  // dilaton like exp(-gamma r)/r, the boson field is negligible.
  const double Xs = src.outer.mesh().b();
  const auto end = src.outer.evaluate(Xs);
  const double gR = params.gamma * R;
  s.outer = tabulate(outer_mesh(cfg, R), kOuterDim, [&](double x, VectorXd& v, VectorXd& d) {
    if (x <= Xs) {
      const auto p = src.outer.evaluate(x);
      v = p.value;
      d = p.derivative;
      return;
    }
    for (std::size_t c : {kLambda, kNu}) {
      v(ix(c)) = end.value(ix(c)) * Xs / x;
      d(ix(c)) = -v(ix(c)) / x;
    }
    const double e = end.value(kPhi) * std::exp(-gR * (x - Xs)) * Xs / x;
    v(kPhi) = e;
    d(kPhi) = -(gR + 1.0 / x) * e;
    v(kXi) = d(kPhi) / R;
    d(kXi) = ((gR + 1.0 / x) * (gR + 1.0 / x) + 1.0 / (x * x)) * e / R;
  });
  if (s.pure_fermion) {
    s.inner.values().col(kSigma).setZero();
    s.inner.values().col(kEta).setZero();
    s.inner.derivatives().col(kSigma).setZero();
    s.inner.derivatives().col(kEta).setZero();
    s.outer.values().col(kSigma).setZero();
    s.outer.values().col(kEta).setZero();
    s.outer.derivatives().col(kSigma).setZero();
    s.outer.derivatives().col(kEta).setZero();
  }
  return s;
}

StepResult canm_step(const IterationState& state, const CanmConfig& /*cfg*/) {
  ensure_dims(state);
  Linearization lin;
  return step_impl(state, lin, true);
}

double optimal_tau(double delta0, double delta1, double tau_min) {
  if (delta0 == 0.0 && delta1 == 0.0) return 1.0;
  if (!std::isfinite(delta1)) return tau_min;
  const double tau = delta0 / (delta0 + delta1);
  return std::clamp(tau, tau_min, 1.0);
}

double defect(const IterationState& s) {
  const double R = s.spectral.R_s;
  const double Om = omega_eval(s);
  const auto& p = s.params;
  const double Di = defect_norm(
      s.inner,
      [&](double x, const VectorXd& y) -> VectorXd { return rhs_inner(x, InnerVector(y), R, Om, p); },
      R);
  const double De = defect_norm(
      s.outer,
      [&](double x, const VectorXd& y) -> VectorXd { return rhs_outer(x, OuterVector(y), R, Om, p); },
      R);
  const double B2 = inner_left_residual(s).squaredNorm() + inner_right_residual(s).squaredNorm() +
                    outer_left_residual(s).squaredNorm() + outer_right_residual(s).squaredNorm() +
                    conditions(s).squaredNorm();
  return std::sqrt(Di * Di + De * De + B2);
}

IterationState advance(const IterationState& state, const Increments& inc, double tau) {
  IterationState s = state;
  s.inner.axpy(tau, inc.z_inner);
  s.outer.axpy(tau, inc.z_outer);
  s.spectral.R_s += tau * inc.dR;
  s.spectral.phi_s += tau * inc.dPhiS;
  if (s.pure_fermion)
    s.nu_c += tau * inc.dNuC;
  else
    s.spectral.Omega += tau * inc.dOmega;
  return s;
}

double residual_delta(const IterationState& state, const Increments& inc, double tau) {
  const double second = state.pure_fermion ? inc.dNuC : inc.dOmega;
  const double p = std::max({std::pow(tau * inc.dR, 2), std::pow(tau * second, 2),
                             std::pow(tau * inc.dPhiS, 2)});
  const IterationState trial = advance(state, inc, tau);
  if (!(trial.spectral.R_s > 0.0)) return kInf;
  double df;
  try {
    df = defect(trial);
  } catch (const EvaluationError&) {
    return kInf;
  }
  if (!std::isfinite(df)) return kInf;
  return std::max(df, p);
}

Eigen::Vector3d interface_mismatch(const IterationState& s) {
  const VectorXd yi = s.inner.right_value();
  const VectorXd ye = s.outer.left_value();
  return {ye(kNu) - yi(kNu), ye(kXi) - yi(kXi), ye(kEta) - yi(kEta)};
}

std::pair<HermiteGridFunction, HermiteGridFunction> linear_correction(const IterationState& s,
                                                                      const Eigen::Vector3d& a) {
  ensure_dims(s);
  const Sample si = sample<true>(s, true);
  const Sample se = sample<false>(s, true);
  auto combine = [&](LinearProblem base, const std::array<LinearProblem, 3>& ps,
                     std::size_t K) -> LinearProblem {
    std::vector<VectorXd> f(K);
    for (std::size_t k = 0; k < K; ++k) {
      VectorXd v = base.forcing ? base.forcing(k, 0.0) : VectorXd();
      for (std::size_t q = 0; q < 3; ++q) {
        if (!ps[q].forcing) continue;
        const VectorXd fq = ps[q].forcing(k, 0.0);
        v = v.size() ? VectorXd(v + a(ix(q)) * fq) : VectorXd(a(ix(q)) * fq);
      }
      f[k] = v;
    }
    for (std::size_t q = 0; q < 3; ++q) {
      base.left_data += a(ix(q)) * ps[q].left_data;
      base.right_data += a(ix(q)) * ps[q].right_data;
    }
    base.forcing = table(std::move(f));
    return base;
  };

  const FactoredSystem isys = assemble(inner_bvp(s, si), s.inner.mesh_ptr());
  const auto pi = inner_parameter_problems(s, si);
  const LinearProblem full_i = combine(inner_s_problem(s, si), pi, si.F.size());
  HermiteGridFunction zi = isys.solve_many({full_i}).front();

  // The outer interface data of the full problem are the inner traces.
  const FactoredSystem esys = assemble(outer_bvp(s, se), s.outer.mesh_ptr());
  LinearProblem full_e;
  {
    HermiteGridFunction zero_in(s.inner.mesh_ptr(), kInnerDim);
    LinearProblem base = outer_s_problem(s, se, zero_in);
    std::array<HermiteGridFunction, 3> zeros = {zero_in, zero_in, zero_in};
    auto pe = outer_parameter_problems(s, se, zeros);
    full_e = combine(base, pe, se.F.size());
    const VectorXd t = zi.right_value();
    full_e.left_data(0) += t(kLambda);
    full_e.left_data(2) += t(kSigma);
  }
  HermiteGridFunction ze = esys.solve_many({full_e}).front();
  return {std::move(zi), std::move(ze)};
}

namespace {

Solution iterate(IterationState state, const CanmConfig& cfg) {
  ensure_dims(state);
  ConvergenceReport rep;
  std::vector<double> history;

  double delta0 = kInf;
  try {
    delta0 = defect(state);
  } catch (const EvaluationError& e) {
    rep.failure = e.what();
  }
  IterationMode mode = IterationMode::FullNewton;
  Linearization lin;
  bool have_lin = false;
  std::vector<std::pair<double, double>> newton_pairs;

  for (int k = 1; k <= cfg.max_iter && std::isfinite(delta0); ++k) {
    const bool fresh = mode == IterationMode::FullNewton || !have_lin;
    StepResult step;
    try {
      step = step_impl(state, lin, fresh);
      have_lin = true;
    } catch (const FactorizationError& e) {
      if (delta0 < cfg.epsilon) {
        rep.converged = true;
        rep.warnings.push_back(std::string("stopped on an ill-conditioned system: ") + e.what());
        break;
      }
      rep.failure = e.what();
      break;
    } catch (const SingularMatchingError& e) {
      if (delta0 < cfg.epsilon) {
        rep.converged = true;
        rep.warnings.push_back(std::string("stopped on an ill-conditioned system: ") + e.what());
        break;
      }
      if (mode == IterationMode::Frozen) {
        mode = IterationMode::FullNewton;
        have_lin = false;
        ++rep.mode_switches;
        continue;
      }
      rep.failure = e.what();
      break;
    } catch (const EvaluationError& e) {
      rep.failure = e.what();
      break;
    }

    const Increments& inc = step.increments;
    // Keep R_s positive: never move more than half of it in one step.
    double tau_cap = 1.0;
    if (inc.dR < 0.0 && -inc.dR > 0.5 * state.spectral.R_s) tau_cap = 0.5 * state.spectral.R_s / -inc.dR;

    const double delta1 = residual_delta(state, inc, tau_cap);
    double tau = std::min(tau_cap, optimal_tau(delta0, delta1, cfg.tau_min));
    double delta_tau = tau == tau_cap ? delta1 : residual_delta(state, inc, tau);
    while (!std::isfinite(delta_tau) && tau > cfg.tau_min) {
      tau = std::max(cfg.tau_min, 0.5 * tau);
      delta_tau = residual_delta(state, inc, tau);
    }
    if (!std::isfinite(delta_tau)) {
      rep.failure = "no finite trial state along the Newton direction";
      break;
    }

    if (mode == IterationMode::Frozen && delta_tau >= delta0) {
      // The chord direction stopped paying off: refresh the linearization.
      mode = IterationMode::FullNewton;
      have_lin = false;
      ++rep.mode_switches;
      continue;
    }

    state = advance(state, inc, tau);
    IterationRecord rec;
    rec.k = k;
    rec.delta = delta_tau;
    rec.tau = tau;
    rec.mode = mode;
    rec.dR = inc.dR;
    rec.dOmega = state.pure_fermion ? inc.dNuC : inc.dOmega;
    rec.dPhiS = inc.dPhiS;
    rec.matching_rcond = step.matching_rcond;
    try {
      rec.delta_f = defect(state);
    } catch (const EvaluationError&) {
      rec.delta_f = kInf;
    }
    rep.log.push_back(rec);
    history.push_back(delta_tau);
    if (mode == IterationMode::FullNewton) newton_pairs.emplace_back(delta0, delta_tau);
    delta0 = delta_tau;
    state.k = k;
    state.delta = delta_tau;
    state.mode = mode;

    if (delta0 < cfg.epsilon) {
      rep.converged = true;
      break;
    }
    if (mode == IterationMode::FullNewton && cfg.allow_freeze && delta0 < cfg.freeze_threshold) {
      mode = IterationMode::Frozen;
      ++rep.mode_switches;
    }
  }

  rep.iterations = static_cast<int>(rep.log.size());
  rep.residual = delta0;
  if (!rep.converged && rep.failure.empty())
    rep.failure = "no convergence within " + std::to_string(cfg.max_iter) + " iterations";
  if (!newton_pairs.empty()) {
    const std::size_t n = newton_pairs.size();
    double c = 0.0;
    for (std::size_t i = n >= 2 ? n - 2 : 0; i < n; ++i)
      if (newton_pairs[i].first > 0.0)
        c = std::max(c, newton_pairs[i].second / (newton_pairs[i].first * newton_pairs[i].first));
    rep.quadratic_constant = c;
  }
  if (!state.pure_fermion && !(state.spectral.Omega > 0.0 && state.spectral.Omega < 1.0))
    rep.warnings.push_back("Omega = " + std::to_string(state.spectral.Omega) +
                           " lies outside (0, 1); the boson field is not localized");

  Solution sol = to_solution(state);
  sol.report = std::move(rep);
  try {
    finalize(sol);
  } catch (const Error& e) {
    sol.report.warnings.push_back(std::string("observables unavailable: ") + e.what());
  }
  return sol;
}

} // namespace

Solution try_solve_from(IterationState state, const CanmConfig& cfg) {
  cfg.validate();
  Solution sol = iterate(std::move(state), cfg);
  if (cfg.x_inf) return sol;

  // X_inf is fixed in x-units during a solve, so the physical truncation
  // radius R_s X_inf depends on the starting radius. Re-solve with
  // X_inf = r_max / R_s until the truncation sits at r_max.
  constexpr int kMaxPasses = 8;
  CanmConfig fixed = cfg;
  for (int pass = 0; pass < kMaxPasses && sol.report.converged; ++pass) {
    const double X = cfg.r_max / sol.spectral.R_s;
    if (std::abs(X - sol.x_inf()) <= 1e-11 * X) return sol;
    if (!(X > 1.0)) {
      sol.report.warnings.push_back("r_max lies inside the star; truncation left at x = " +
                                    std::to_string(sol.x_inf()));
      return sol;
    }
    fixed.x_inf = X;
    Solution next = iterate(resample(sol, sol.params, fixed), fixed);
    if (!next.report.converged) {
      sol.report.warnings.push_back("re-solve at r_max failed: " + next.report.failure);
      return sol;
    }
    // One report for the whole solve; the quadratic fit belongs to the
    // main convergence.
    ConvergenceReport& r = next.report;
    const int offset = sol.report.iterations;
    for (auto& rec : r.log) {
      rec.k += offset;
      rec.pass = pass + 1;
    }
    r.log.insert(r.log.begin(), sol.report.log.begin(), sol.report.log.end());
    r.iterations += offset;
    r.mode_switches += sol.report.mode_switches;
    r.quadratic_constant = sol.report.quadratic_constant;
    r.warnings.insert(r.warnings.begin(), sol.report.warnings.begin(), sol.report.warnings.end());
    sol = std::move(next);
  }
  if (sol.report.converged && std::abs(sol.r_max() - cfg.r_max) > 1e-9 * cfg.r_max)
    sol.report.warnings.push_back("truncation radius " + std::to_string(sol.r_max()) + " differs from r_max");
  return sol;
}

Solution solve_from(IterationState state, const CanmConfig& cfg) {
  Solution sol = try_solve_from(std::move(state), cfg);
  if (!sol.report.converged) {
    std::vector<double> history;
    for (const auto& r : sol.report.log) history.push_back(r.delta);
    throw ConvergenceError("CANM failed: " + sol.report.failure, std::move(history));
  }
  return sol;
}

Solution solve(const ModelParams& params, const CanmConfig& cfg, const Solution* guess) {
  cfg.validate();
  params.validate(true);
  if (params.sigma_c == 0.0) return pure_fermion_solve(params, cfg, guess);
  IterationState s = guess ? resample(*guess, params, cfg) : initial_guess(params, cfg);
  return solve_from(std::move(s), cfg);
}

Solution pure_fermion_solve(const ModelParams& params, const CanmConfig& cfg, const Solution* guess) {
  cfg.validate();
  params.validate(true);
  if (params.sigma_c != 0.0) throw DomainError("pure_fermion_solve needs sigma_c = 0");
  IterationState s = guess ? resample(*guess, params, cfg) : initial_guess(params, cfg);
  s.pure_fermion = true;
  s.spectral.Omega = 0.0;
  return solve_from(std::move(s), cfg);
}

} // namespace bfstar
