#include <blsim/model.hpp>

namespace blsim {

IdentityResiduals identity_residuals(const ModelParams& p,
                                     const ode::Profile<6>& prof,
                                     double alpha, double beta) {
  const State3 a = from_vec(alpha, prof.eval(alpha));
  const State3 b = from_vec(beta, prof.eval(beta));
  const double m = p.m;

  const auto bracket1 = [&](const State3& s) {
    return s.fpp + 0.5 * (m + 1.0) * s.f * s.fp;
  };
  const auto bracket2 = [&](const State3& s) {
    return s.f * s.fpp - 0.5 * s.fp * s.fp + 0.5 * (m + 1.0) * s.f * s.f * s.fp;
  };
  const auto bracket3 = [&](const State3& s) {
    return 0.5 * s.fpp * s.fpp - (m / 3.0) * s.fp * s.fp * s.fp;
  };

  IdentityResiduals r;
  r.r1 = (bracket1(b) - bracket1(a)) -
         0.5 * (3.0 * m + 1.0) * (b.acc_fp2 - a.acc_fp2);
  r.r2 = (bracket2(b) - bracket2(a)) -
         (2.0 * m + 1.0) * (b.acc_ffp2 - a.acc_ffp2);
  r.r3 = (bracket3(b) - bracket3(a)) +
         0.5 * (m + 1.0) * (b.acc_ffpp2 - a.acc_ffpp2);
  return r;
}

ode::Profile<6> scale_solution(const ode::Profile<6>& prof, double kappa) {
  if (!(kappa > 0.0) || !std::isfinite(kappa))
    throw std::invalid_argument("scale_solution: kappa must be positive and finite");

  // g(t) = kappa f(kappa t) maps component i by kappa^e_i with exponents
  // (1, 2, 3, 3, 4, 6): derivatives gain one power each, the accumulators
  // pick up (4-1, 5-1, 7-1) from the integrand scaling and dt = ds/kappa.
  TVec d;
  d << kappa, kappa * kappa, kappa * kappa * kappa, kappa * kappa * kappa,
      kappa * kappa * kappa * kappa,
      kappa * kappa * kappa * kappa * kappa * kappa;

  ode::Profile<6> out = prof;
  const double inv = 1.0 / kappa;
  out.t_start = prof.t_start * inv;
  out.t_end = prof.t_end * inv;
  out.y_start = d.cwiseProduct(prof.y_start);
  out.y_end = d.cwiseProduct(prof.y_end);
  out.termination.t = prof.termination.t * inv;
  for (std::size_t i = 0; i < out.steps.size(); ++i) {
    auto& st = out.steps[i];
    st.t0 = prof.steps[i].t0 * inv;
    st.h = prof.steps[i].h * inv;
    // The dense polynomial is in the local variable theta, which the time
    // re-scaling leaves invariant, so coefficients scale componentwise.
    st.r1 = d.cwiseProduct(prof.steps[i].r1);
    st.r2 = d.cwiseProduct(prof.steps[i].r2);
    st.r3 = d.cwiseProduct(prof.steps[i].r3);
    st.r4 = d.cwiseProduct(prof.steps[i].r4);
    st.r5 = d.cwiseProduct(prof.steps[i].r5);
  }
  for (std::size_t i = 0; i < out.events.size(); ++i) {
    out.events[i].t = prof.events[i].t * inv;
    out.events[i].y = d.cwiseProduct(prof.events[i].y);
  }
  return out;
}

}  // namespace blsim
