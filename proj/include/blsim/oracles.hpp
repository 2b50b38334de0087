#pragma once

// Closed-form solutions and the cross-check suite built on them.  These are
// the ground truths the numerical layers are tested against, and the fast
// paths the solver can hand out directly.

#include <blsim/model.hpp>

#include <string>
#include <vector>

namespace blsim::oracle {

struct Triple {
  double f = 0.0;
  double fp = 0.0;
  double fpp = 0.0;
};

enum class ClosedFormCase { UniversalRational, MNegOne, MNegThird, MOne };

// One closed-form solution instance.  For the blow-up branches domain_end
// is the finite singularity time T; evaluation requires t < domain_end.
// ell is the limit of f when the domain is infinite (NaN otherwise).
struct ClosedForm {
  ClosedFormCase kind = ClosedFormCase::UniversalRational;
  double tau = 0.0;  // UniversalRational only
  double a = 0.0;    // the f(0) of the instance
  double b = 0.0;    // the f''(0) of the instance
  int branch = 0;    // MOne only: 1 or 2
  double ell = 0.0;
  double domain_end = 0.0;

  [[nodiscard]] Triple eval(double t) const;
  [[nodiscard]] double eval_fppp(double t) const;
  [[nodiscard]] State3 state(double t) const;  // with exact accumulators
};

// f = 6/(t+tau); a solution for every m.  tau = sqrt(6) is the instance
// meeting the initial conditions f(0) = sqrt(6), f'(0) = -1.
[[nodiscard]] ClosedForm universal_form(double tau);
[[nodiscard]] Triple universal(double tau, double t);

// m = -1: f = a - sqrt(6) + 6/(t + sqrt(6)); f''(0) = sqrt(2/3) for all a.
[[nodiscard]] ClosedForm m_neg_one_form(double a);
[[nodiscard]] Triple m_neg_one(double a, double t);

// m = -1/3 with b = a/3: the Riccati branch.  Global for a >= sqrt(6)
// (limit sqrt(a^2-6)), finite-time singular otherwise.
[[nodiscard]] ClosedForm m_neg_third_form(double a);
[[nodiscard]] Triple m_neg_third(double a, double t);
[[nodiscard]] double m_neg_third_T(double a);  // +inf when global

// m = 1: f = k_i + (1/k_i) e^{-k_i t}, k_1 = (a - sqrt(a^2-4))/2,
// k_2 = (a + sqrt(a^2-4))/2; requires a >= 2.
[[nodiscard]] ClosedForm m_one_form(double a, int branch);
[[nodiscard]] Triple m_one(double a, int branch, double t);

// Dense 6-component profile of a closed form on [0, span], accumulators
// included in closed form; piecewise-cubic steps refined until the
// interpolant matches the formula to node_tol at step midpoints.
[[nodiscard]] ode::Profile<6> synthetic_profile(const ClosedForm& cf, double span,
                                                double node_tol = 1e-9);

struct VerifyEntry {
  std::string pin;
  double measured = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyEntry> entries;
  bool all_pass = true;
};

// Every oracle-vs-numeric comparison in one sweep: closed-form residuals,
// integral-identity residuals (numeric runs use `controls`, so loosened
// tolerances show up as failures), the initial-value reproductions of each
// closed form, blow-up times for m = -1/3, and the scaling closure.
// pin_filter, when nonempty, keeps only entries whose name contains it.
[[nodiscard]] VerifyReport verify_suite(const ode::IntegratorControls& controls = {},
                                        const std::string& pin_filter = {});

}  // namespace blsim::oracle
