#include "bfstar/model.hpp"

#include "bfstar/dual.hpp"
#include "bfstar/errors.hpp"

#include <array>
#include <cmath>
#include <string>

namespace bfstar {

namespace {

constexpr double kSqrt3 = 1.7320508075688772935;
constexpr double kInvSqrt3 = 0.57735026918962576451;

// f(mu) = mu^{5/2} (1/5 - mu/14 + mu^2/24 - 5 mu^3/176 + 35 mu^4/1664 - ...)
double f_series(double mu) {
  const double poly =
      1.0 / 5.0 + mu * (-1.0 / 14.0 + mu * (1.0 / 24.0 + mu * (-5.0 / 176.0 + mu * (35.0 / 1664.0))));
  return mu * mu * std::sqrt(mu) * poly;
}

double f_closed(double mu) {
  const double q = std::sqrt(mu + mu * mu);
  return 0.125 * ((2.0 * mu - 3.0) * q + 3.0 * std::log(std::sqrt(mu) + std::sqrt(1.0 + mu)));
}

double g_closed(double mu) {
  const double q = std::sqrt(mu + mu * mu);
  return 0.125 * ((6.0 * mu + 3.0) * q - 3.0 * std::log(std::sqrt(mu) + std::sqrt(1.0 + mu)));
}

// Values for mu >= 0. Negative mu (possible between iterates near the
// surface) is treated as vacuum by the right-hand sides.
struct EosRaw {
  double f, g, fp, gp;
};

EosRaw eos_raw(double mu) {
  if (!(mu > 0.0)) return {0.0, 0.0, 0.0, 0.0};
  const double s = std::sqrt(1.0 + mu);
  const double m32 = mu * std::sqrt(mu);
  EosRaw e{};
  if (mu < kEosSeriesThreshold) {
    e.f = f_series(mu);
    e.g = m32 * s - e.f; // f + g = mu^{3/2} sqrt(1 + mu)
  } else {
    e.f = f_closed(mu);
    e.g = g_closed(mu);
  }
  e.fp = m32 / (2.0 * s);
  e.gp = 1.5 * std::sqrt(mu * (1.0 + mu));
  return e;
}

// (g + f) / f' = 2 (1 + mu) identically; the direct quotient is used above
// the series threshold, the closed limit below (and for mu < 0).
double source_ratio_ext(double mu) {
  if (mu < kEosSeriesThreshold) return 2.0 * (1.0 + mu);
  const EosRaw e = eos_raw(mu);
  return (e.g + e.f) / e.fp;
}

// Scalar-generic wrappers: double returns the value, Dual applies the chain rule.
inline double eos_f(double mu) { return eos_raw(mu).f; }
inline double eos_g(double mu) { return eos_raw(mu).g; }
inline double ratio(double mu) { return source_ratio_ext(mu); }

template <std::size_t N> Dual<N> eos_f(const Dual<N>& mu) {
  const EosRaw e = eos_raw(mu.v);
  return chain(mu, e.f, e.fp);
}
template <std::size_t N> Dual<N> eos_g(const Dual<N>& mu) {
  const EosRaw e = eos_raw(mu.v);
  return chain(mu, e.g, e.gp);
}
template <std::size_t N> Dual<N> ratio(const Dual<N>& mu) {
  return chain(mu, source_ratio_ext(mu.v), 2.0);
}

using std::exp;

template <class T>
struct StressT {
  T t00F, t11F, TF, t00B, t11B, TB;
};

template <class T>
StressT<T> stress_t(const T& phi, const T& sigma, const T& eta, const T& nu, const T& lambda,
                    const T* mu, const T& Omega, const ModelParams& p) {
  const T A = exp(phi * kInvSqrt3);
  const T a2 = A * A;
  const T a4 = a2 * a2;
  const T s = sigma * sigma;
  const T W = -0.5 * (s + 0.5 * p.Lambda * s * s);
  const T kin = Omega * Omega * s * exp(-nu);
  const T grad = eta * eta * exp(-lambda);
  StressT<T> out{T(0.0), T(0.0), T(0.0), T(0.0), T(0.0), T(0.0)};
  out.t00B = 0.5 * a2 * (kin + grad) - a4 * W;
  out.t11B = -0.5 * a2 * (kin + grad) - a4 * W;
  out.TB = -1.0 * a2 * (kin - grad) - 4.0 * a4 * W;
  if (mu != nullptr) {
    const T f = eos_f(*mu);
    const T g = eos_g(*mu);
    out.t00F = p.b * a4 * g;
    out.t11F = -p.b * a4 * f;
    out.TF = p.b * a4 * (g - 3.0 * f);
  }
  return out;
}

// Off-center right-hand side; y has kInnerDim entries, the last is ignored
// when fermions are absent.
template <class T>
std::array<T, 7> rhs_t(const T& r, const std::array<T, 7>& y, const T& Omega, const ModelParams& p,
                       bool fermion) {
  const T& lambda = y[kLambda];
  const T& nu = y[kNu];
  const T& phi = y[kPhi];
  const T& xi = y[kXi];
  const T& sigma = y[kSigma];
  const T& eta = y[kEta];

  const auto st = stress_t<T>(phi, sigma, eta, nu, lambda, fermion ? &y[kMu] : nullptr, Omega, p);
  const T A = exp(phi * kInvSqrt3);
  const T a2 = A * A;
  const T one_minus = 1.0 - a2;
  const T V = 1.5 * one_minus * one_minus;
  const T Vp = -2.0 * kSqrt3 * a2 * one_minus;
  const T Wp = -0.5 * (1.0 + p.Lambda * sigma * sigma);
  const double g2 = p.gamma * p.gamma;

  const T el = exp(lambda);
  const T rho = st.t00F + st.t00B + 0.5 * g2 * V;
  const T pr = st.t11F + st.t11B + 0.5 * g2 * V;
  const T F1 = (1.0 - el) / r + r * (el * rho + xi * xi);
  const T F2 = -1.0 * (1.0 - el) / r - r * (el * pr - xi * xi);
  const T half_diff = 0.5 * (F1 - F2);
  const T F3 = -2.0 * xi / r + half_diff * xi +
               0.5 * el * (kInvSqrt3 * (st.TF + st.TB) + 0.5 * g2 * Vp);
  const T F4 = -2.0 * eta / r + (half_diff - 2.0 * kInvSqrt3 * xi) * eta -
               sigma * el * (Omega * Omega * exp(-nu) + 2.0 * a2 * Wp);
  T F5(0.0);
  if (fermion) F5 = -1.0 * ratio(y[kMu]) * (0.5 * F2 + kInvSqrt3 * xi);
  return {F1, F2, xi, F3, eta, F4, F5};
}

// Regular-center limits: the (2/r) u' terms contribute -2 u''(0), which turns
// the remaining source S into S/3; the metric and hydrostatic equations vanish.
template <class T>
std::array<T, 7> center_t(const std::array<T, 7>& y, const T& Omega, const ModelParams& p) {
  const T& lambda = y[kLambda];
  const T& nu = y[kNu];
  const T& phi = y[kPhi];
  const T& sigma = y[kSigma];
  const auto st = stress_t<T>(phi, sigma, y[kEta], nu, lambda, &y[kMu], Omega, p);
  const T A = exp(phi * kInvSqrt3);
  const T a2 = A * A;
  const T Vp = -2.0 * kSqrt3 * a2 * (1.0 - a2);
  const T Wp = -0.5 * (1.0 + p.Lambda * sigma * sigma);
  const T el = exp(lambda);
  const T S3 = 0.5 * el * (kInvSqrt3 * (st.TF + st.TB) + 0.5 * p.gamma * p.gamma * Vp);
  const T S4 = -1.0 * sigma * el * (Omega * Omega * exp(-nu) + 2.0 * a2 * Wp);
  return {T(0.0), T(0.0), y[kXi], S3 / 3.0, y[kEta], S4 / 3.0, T(0.0)};
}

void check_finite(const double* v, std::size_t n, double x) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(v[i])) throw EvaluationError(i, x);
}

void check_inputs(double x, double Rs) {
  if (!std::isfinite(x) || x < 0.0) throw DomainError("coordinate must be finite and >= 0");
  if (!(Rs > 0.0) || !std::isfinite(Rs)) throw DomainError("R_s must be positive");
}

using D9 = Dual<9>;

template <int N>
ModelJacobian<N> jacobian_impl(double x, const double* y, double Rs, double Omega,
                               const ModelParams& p, bool fermion) {
  std::array<D9, 7> yd{};
  for (int i = 0; i < N; ++i) yd[i] = D9::variable(y[i], static_cast<std::size_t>(i));
  const D9 Om = D9::variable(Omega, 8);
  std::array<D9, 7> F{};
  if (x == 0.0) {
    F = center_t<D9>(yd, Om, p);
  } else {
    const D9 r = D9::variable(Rs * x, 7);
    F = rhs_t<D9>(r, yd, Om, p, fermion);
  }
  ModelJacobian<N> J;
  for (int i = 0; i < N; ++i) {
    J.F(i) = F[i].v;
    for (int j = 0; j < N; ++j) J.Q(i, j) = F[i].d[j];
    J.dF_dRs(i) = x * F[i].d[7];
    J.dF_dOmega(i) = F[i].d[8];
  }
  check_finite(J.F.data(), N, x);
  check_finite(J.Q.data(), N * N, x);
  check_finite(J.dF_dRs.data(), N, x);
  check_finite(J.dF_dOmega.data(), N, x);
  return J;
}

} // namespace

const char* component_name(std::size_t c) {
  static constexpr const char* names[] = {"lambda", "nu", "phi", "xi", "sigma", "eta", "mu"};
  return c < 7 ? names[c] : "?";
}

void ModelParams::validate(bool free_boundary) const {
  auto bad = [](const std::string& m) { throw DomainError(m); };
  if (!std::isfinite(gamma) || gamma < 0.0) bad("gamma must be >= 0");
  if (!std::isfinite(Lambda) || Lambda < 0.0) bad("Lambda must be >= 0");
  if (!std::isfinite(b) || !(b > 0.0)) bad("b must be > 0");
  if (!std::isfinite(sigma_c) || sigma_c < 0.0) bad("sigma_c must be >= 0");
  if (!std::isfinite(mu_c) || mu_c < 0.0) bad("mu_c must be >= 0");
  if (free_boundary && !(mu_c > 0.0))
    bad("mu_c must be > 0: pure boson configurations have no fermionic surface");
}

Coupling coupling(double phi) { return {std::exp(phi * kInvSqrt3), kInvSqrt3}; }

DilatonPotential dilaton_potential(double phi) {
  const double a2 = std::exp(2.0 * phi * kInvSqrt3);
  const double d = 1.0 - a2;
  return {1.5 * d * d, -2.0 * kSqrt3 * a2 * d};
}

BosonPotential boson_potential(double s, double Lambda) {
  if (!(s >= 0.0)) throw DomainError("boson_potential: s = sigma^2 must be >= 0");
  return {-0.5 * (s + 0.5 * Lambda * s * s), -0.5 * (1.0 + Lambda * s)};
}

EosValues eos(double mu) {
  if (!std::isfinite(mu) || mu < 0.0) throw DomainError("eos: Fermi momentum must be >= 0");
  const EosRaw e = eos_raw(mu);
  return {e.f, e.g, e.fp, mu * std::sqrt(mu)};
}

double eos_source_ratio(double mu) {
  if (!std::isfinite(mu) || mu < 0.0) throw DomainError("eos_source_ratio: mu must be >= 0");
  return source_ratio_ext(mu);
}

StressBundle stress(double phi, double /*xi*/, double sigma, double eta, double nu, double lambda,
                    std::optional<double> mu, double Omega, const ModelParams& p) {
  const double* m = mu ? &*mu : nullptr;
  const auto s = stress_t<double>(phi, sigma, eta, nu, lambda, m, Omega, p);
  return {s.t00F, s.t11F, s.t00B, s.t11B, s.TF, s.TB};
}

InnerVector rhs_center(const InnerVector& y, double Omega, const ModelParams& p) {
  std::array<double, 7> ya{};
  for (int i = 0; i < 7; ++i) ya[i] = y(i);
  const auto F = center_t<double>(ya, Omega, p);
  InnerVector out = Eigen::Map<const InnerVector>(F.data());
  check_finite(out.data(), 7, 0.0);
  return out;
}

InnerVector rhs_inner(double x, const InnerVector& y, double Rs, double Omega,
                      const ModelParams& p) {
  check_inputs(x, Rs);
  if (x == 0.0) return rhs_center(y, Omega, p);
  std::array<double, 7> ya{};
  for (int i = 0; i < 7; ++i) ya[i] = y(i);
  const auto F = rhs_t<double>(Rs * x, ya, Omega, p, true);
  InnerVector out = Eigen::Map<const InnerVector>(F.data());
  check_finite(out.data(), 7, x);
  return out;
}

OuterVector rhs_outer(double x, const OuterVector& y, double Rs, double Omega,
                      const ModelParams& p) {
  check_inputs(x, Rs);
  if (x == 0.0) throw DomainError("rhs_outer: x must be > 0");
  std::array<double, 7> ya{};
  for (int i = 0; i < 6; ++i) ya[i] = y(i);
  const auto F = rhs_t<double>(Rs * x, ya, Omega, p, false);
  OuterVector out = Eigen::Map<const OuterVector>(F.data());
  check_finite(out.data(), 6, x);
  return out;
}

InnerJacobian jacobians_inner(double x, const InnerVector& y, double Rs, double Omega,
                              const ModelParams& p) {
  check_inputs(x, Rs);
  return jacobian_impl<7>(x, y.data(), Rs, Omega, p, true);
}

OuterJacobian jacobians_outer(double x, const OuterVector& y, double Rs, double Omega,
                              const ModelParams& p) {
  check_inputs(x, Rs);
  if (x == 0.0) throw DomainError("jacobians_outer: x must be > 0");
  return jacobian_impl<6>(x, y.data(), Rs, Omega, p, false);
}

} // namespace bfstar
