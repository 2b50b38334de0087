#pragma once

// Governing equation f''' + ((m+1)/2) f f'' - m f'^2 = 0, its augmented
// first-order form with integral accumulators, the (u,v) phase-plane vector
// field with isoclines, and the integral-identity residual checks.

#include <blsim/integrator.hpp>

#include <cmath>
#include <stdexcept>

namespace blsim {

struct ModelParams {
  double m;

  explicit ModelParams(double m_in) : m(m_in) {
    if (!std::isfinite(m) || m == 0.0)
      throw std::invalid_argument("m=0 is the Blasius case, out of scope");
  }
};

// Augmented t-space state layout (independent variable t kept alongside):
// the accumulators carry int_0^t f'^2, int_0^t f f'^2, int_0^t f f''^2.
struct State3 {
  double t = 0.0;
  double f = 0.0;
  double fp = 0.0;
  double fpp = 0.0;
  double acc_fp2 = 0.0;
  double acc_ffp2 = 0.0;
  double acc_ffpp2 = 0.0;
};

// Component indices of the 6-dimensional integration state.
inline constexpr int kF = 0;
inline constexpr int kFP = 1;
inline constexpr int kFPP = 2;
inline constexpr int kAccFp2 = 3;
inline constexpr int kAccFfp2 = 4;
inline constexpr int kAccFfpp2 = 5;

using TVec = ode::Vec<6>;
using PhaseVec = ode::Vec<2>;

[[nodiscard]] inline TVec to_vec(const State3& s) {
  TVec y;
  y << s.f, s.fp, s.fpp, s.acc_fp2, s.acc_ffp2, s.acc_ffpp2;
  return y;
}

[[nodiscard]] inline State3 from_vec(double t, const TVec& y) {
  return {t, y[kF], y[kFP], y[kFPP], y[kAccFp2], y[kAccFfp2], y[kAccFfpp2]};
}

// Blowing-up coordinates u = f'/f^2, v = f''/f^3; defined only off f = 0.
struct PhasePoint {
  double u = 0.0;
  double v = 0.0;
};

[[nodiscard]] inline double residual(const ModelParams& p, double f, double fp,
                                     double fpp, double fppp) {
  return fppp + 0.5 * (p.m + 1.0) * f * fpp - p.m * fp * fp;
}

[[nodiscard]] inline State3 rhs_t(const ModelParams& p, const State3& s) {
  // Kept expression-for-expression identical to make_rhs_t so the two
  // forms agree bitwise.
  State3 d;
  const double fp2 = s.fp * s.fp;
  d.t = 1.0;
  d.f = s.fp;
  d.fp = s.fpp;
  d.fpp = p.m * fp2 - 0.5 * (p.m + 1.0) * s.f * s.fpp;
  d.acc_fp2 = fp2;
  d.acc_ffp2 = s.f * fp2;
  d.acc_ffpp2 = s.f * s.fpp * s.fpp;
  return d;
}

// Vector-field functor over the packed state, for the integrator.
[[nodiscard]] inline auto make_rhs_t(const ModelParams& p) {
  const double m = p.m;
  return [m](double, const TVec& y) {
    TVec d;
    const double fp2 = y[kFP] * y[kFP];
    d[kF] = y[kFP];
    d[kFP] = y[kFPP];
    d[kFPP] = m * fp2 - 0.5 * (m + 1.0) * y[kF] * y[kFPP];
    d[kAccFp2] = fp2;
    d[kAccFfp2] = y[kF] * fp2;
    d[kAccFfpp2] = y[kF] * y[kFPP] * y[kFPP];
    return d;
  };
}

// (P, Q_m) = (v - 2u^2, -((m+1)/2) v + m u^2 - 3uv).
[[nodiscard]] inline PhaseVec phase_rhs(const ModelParams& p, const PhasePoint& q) {
  const double P = q.v - 2.0 * q.u * q.u;
  const double Q = -0.5 * (p.m + 1.0) * q.v + p.m * q.u * q.u - 3.0 * q.u * q.v;
  return PhaseVec(P, Q);
}

// Same field over packed coordinates; sign = -1 flips the flow direction
// (used to trace trajectories against the s-parameter).
[[nodiscard]] inline auto make_phase_rhs(const ModelParams& p, double sign = 1.0) {
  const double m = p.m;
  return [m, sign](double, const PhaseVec& y) {
    const double u = y[0], v = y[1];
    return PhaseVec(sign * (v - 2.0 * u * u),
                    sign * (-0.5 * (m + 1.0) * v + m * u * u - 3.0 * u * v));
  };
}

struct IsoclineValue {
  double v_p = 0.0;   // P = 0 isocline: v = 2u^2
  double v_q = 0.0;   // Q_m = 0 isocline: v = Psi_m(u); meaningless at a pole
  bool q_pole = false;  // 3u + (m+1)/2 = 0 (vertical asymptote of Psi_m)
};

[[nodiscard]] inline IsoclineValue isoclines(const ModelParams& p, double u) {
  IsoclineValue iso;
  iso.v_p = 2.0 * u * u;
  const double denom = 3.0 * u + 0.5 * (p.m + 1.0);
  if (denom == 0.0) {
    iso.q_pole = true;
    return iso;
  }
  iso.v_q = p.m * u * u / denom;
  return iso;
}

// Abscissa of the Psi_m pole, for splitting plotted isocline curves.
[[nodiscard]] inline double isocline_pole_u(const ModelParams& p) {
  return -(p.m + 1.0) / 6.0;
}

[[nodiscard]] inline PhasePoint to_phase(double f, double fp, double fpp) {
  if (f == 0.0)
    throw std::domain_error("to_phase: undefined at f = 0 (use the t-space form)");
  const double f2 = f * f;
  return {fp / f2, fpp / (f2 * f)};
}

// dv/du = Q_m/P along trajectories; vertical on the P = 0 isocline.
[[nodiscard]] inline double phase_slope(const ModelParams& p, const PhasePoint& q) {
  const PhaseVec pq = phase_rhs(p, q);
  if (pq[0] == 0.0)
    throw std::domain_error("phase_slope: vertical slope on the P = 0 isocline");
  return pq[1] / pq[0];
}

struct IdentityResiduals {
  double r1 = 0.0;
  double r2 = 0.0;
  double r3 = 0.0;
  [[nodiscard]] double max_abs() const {
    return std::max({std::abs(r1), std::abs(r2), std::abs(r3)});
  }
};

// Residuals of the three integral identities over [alpha, beta]; all three
// vanish (to integration accuracy) along any trajectory of the equation.
[[nodiscard]] IdentityResiduals identity_residuals(const ModelParams& p,
                                                   const ode::Profile<6>& prof,
                                                   double alpha, double beta);

// Profile of t -> kappa * f(kappa * t), exact on the dense coefficients.
// Requires kappa > 0: a negative kappa would map [0,T) outside the domain.
[[nodiscard]] ode::Profile<6> scale_solution(const ode::Profile<6>& prof, double kappa);

}  // namespace blsim
