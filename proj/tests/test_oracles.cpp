#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <blsim/oracles.hpp>

#include <cmath>
#include <random>

using namespace blsim;
using namespace blsim::oracle;

namespace {
const double rt6 = std::sqrt(6.0);
}

TEST_CASE("universal family pointwise values") {
  const Triple v = universal(rt6, 0.0);
  CHECK(v.f == doctest::Approx(rt6).epsilon(1e-15));
  CHECK(v.fp == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(v.fpp == doctest::Approx(2.0 / rt6).epsilon(1e-15));

  const Triple w = universal(1.0, 0.0);
  CHECK(w.f == 6.0);
  CHECK(w.fp == -6.0);
  CHECK(w.fpp == 12.0);

  CHECK_THROWS_AS((void)universal(1.0, -1.0), std::domain_error);
  CHECK_THROWS_AS((void)universal_form(0.0), std::invalid_argument);

  std::mt19937 rng(99u);
  std::uniform_real_distribution<double> m_d(-3.0, 3.0), tau_d(0.5, 4.0),
      t_d(0.0, 12.0);
  int n = 0;
  while (n < 100) {
    const double m = m_d(rng);
    if (std::abs(m) < 1e-3) continue;
    const ClosedForm cf = universal_form(tau_d(rng));
    const double t = t_d(rng);
    const Triple u = cf.eval(t);
    CHECK(std::abs(residual(ModelParams{m}, u.f, u.fp, u.fpp,
                            cf.eval_fppp(t))) < 1e-12);
    ++n;
  }
}

TEST_CASE("m = -1 family: boundary data, limit, pointwise energy") {
  const Triple v = m_neg_one(0.0, 0.0);
  CHECK(v.f == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(v.fp == -1.0);
  CHECK(v.fpp == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));

  const ClosedForm cf = m_neg_one_form(2.5);
  CHECK(cf.ell == doctest::Approx(2.5 - rt6).epsilon(1e-15));
  CHECK(std::abs(cf.eval(1e8).f - cf.ell) < 1e-7);
  CHECK(std::abs(cf.eval(1e8).fp) < 1e-15);

  for (double t : {0.0, 1.0, 10.0}) {
    const Triple u = cf.eval(t);
    CHECK(std::abs(0.5 * u.fpp * u.fpp + u.fp * u.fp * u.fp / 3.0) < 1e-15);
  }
  CHECK_THROWS_AS((void)m_neg_one(0.0, -0.5), std::domain_error);
}

TEST_CASE("m = -1/3 Riccati branch: values, domains, blow-up times") {
  SUBCASE("a = sqrt(6) degenerates to the rational form") {
    const ClosedForm cf = m_neg_third_form(rt6);
    CHECK(std::isinf(cf.domain_end));
    for (double t : {0.0, 1.0, 5.0, 40.0})
      CHECK(std::abs(cf.eval(t).f - 6.0 / (t + rt6)) <= 1e-9);
  }

  SUBCASE("a = 3: global decay to sqrt(3)") {
    const ClosedForm cf = m_neg_third_form(3.0);
    CHECK(cf.b == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::isinf(cf.domain_end));
    CHECK(cf.eval(0.0).f == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(cf.eval(0.0).fp == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(cf.ell == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
    CHECK(std::abs(cf.eval(60.0).f - std::sqrt(3.0)) < 1e-12);
    // Independent reference: sigma * coth(sigma (t+c)/6).
    const double sg = std::sqrt(3.0);
    const double c = (3.0 / sg) * std::log((3.0 + sg) / (3.0 - sg));
    for (double t : {0.0, 0.5, 2.0, 9.0}) {
      const double ref = sg / std::tanh(sg * (t + c) / 6.0);
      CHECK(std::abs(cf.eval(t).f - ref) <= 1e-12);
    }
  }

  SUBCASE("oscillatory branch blow-up times") {
    CHECK(m_neg_third_T(0.0) ==
          doctest::Approx(rt6 * M_PI / 2.0).epsilon(1e-14));
    const double om1 = std::sqrt(5.0);
    CHECK(m_neg_third_T(1.0) ==
          doctest::Approx((6.0 / om1) * (M_PI - std::atan2(1.0, 1.0 / om1)))
              .epsilon(1e-14));
    CHECK(m_neg_third_T(1.0) == doctest::Approx(5.3434).epsilon(1e-4));
    CHECK(m_neg_third_T(2.0) == doctest::Approx(10.7175).epsilon(1e-4));
    CHECK(m_neg_third_T(-rt6) == doctest::Approx(rt6).epsilon(1e-14));
  }

  SUBCASE("negative rc1 branch: root-found T equals the log formula") {
    const double a = -3.0, sg = std::sqrt(3.0);
    const double explicit_T = (3.0 / sg) * std::log((a - sg) / (a + sg));
    CHECK(m_neg_third_T(a) == doctest::Approx(explicit_T).epsilon(1e-12));
    const ClosedForm cf = m_neg_third_form(a);
    CHECK(cf.eval(0.99 * cf.domain_end).f < -100.0);
    CHECK_THROWS_AS((void)cf.eval(cf.domain_end + 0.1), std::domain_error);
  }

  SUBCASE("blow-up time agrees with a direct integration") {
    for (double a : {0.0, 1.0, 2.0}) {
      const double T = m_neg_third_T(a);
      ModelParams p{-1.0 / 3.0};
      TVec y0;
      y0 << a, -1.0, a / 3.0, 0.0, 0.0, 0.0;
      ode::IntegratorControls c;
      c.max_span = T + 5.0;
      c.magnitude_cap = 1e8;
      c.blowup_dims = 1;
      const auto prof = ode::integrate<6>(make_rhs_t(p), y0, 0.0, c);
      REQUIRE(prof.termination.kind == ode::TerminationKind::BlowUp);
      const double T_hat = prof.t_end + 6.0 / std::abs(prof.y_end[kF]);
      CHECK(std::abs(T_hat - T) <= 1e-3);
    }
  }
}

TEST_CASE("m = 1 exponential family") {
  const ClosedForm c1 = m_one_form(2.5, 1);
  const ClosedForm c2 = m_one_form(2.5, 2);
  CHECK(c1.b == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c2.b == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(c1.ell == doctest::Approx(0.5).epsilon(1e-15));
  for (const ClosedForm& cf : {c1, c2}) {
    CHECK(cf.eval(0.0).f == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(cf.eval(0.0).fp == -1.0);
    CHECK(cf.eval(0.0).fpp == doctest::Approx(cf.b).epsilon(1e-15));
  }
  CHECK(c1.eval(1.0).f ==
        doctest::Approx(0.5 + 2.0 * std::exp(-0.5)).epsilon(1e-15));

  // a = 2: the branches coincide at k = 1.
  CHECK(m_one_form(2.0, 1).b == 1.0);
  CHECK(m_one_form(2.0, 2).b == 1.0);
  CHECK(m_one(2.0, 1, 0.7).f == doctest::Approx(1.0 + std::exp(-0.7)));

  std::mt19937 rng(5u);
  std::uniform_real_distribution<double> t_d(0.0, 15.0);
  for (int i = 0; i < 40; ++i) {
    const double t = t_d(rng);
    for (int br : {1, 2}) {
      const ClosedForm cf = m_one_form(3.3, br);
      const Triple v = cf.eval(t);
      CHECK(std::abs(residual(ModelParams{1.0}, v.f, v.fp, v.fpp,
                              cf.eval_fppp(t))) < 1e-13);
    }
  }

  CHECK_THROWS_AS((void)m_one_form(1.9, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)m_one_form(3.0, 0), std::invalid_argument);
}

TEST_CASE("synthetic profiles reproduce the formulas densely") {
  const ClosedForm uni = universal_form(rt6);
  const auto prof = synthetic_profile(uni, 50.0);
  CHECK(prof.t_end == doctest::Approx(50.0).epsilon(1e-12));

  std::mt19937 rng(17u);
  std::uniform_real_distribution<double> t_d(0.0, 50.0);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double t = t_d(rng);
    const Triple v = uni.eval(t);
    worst = std::max(worst, std::abs(prof.eval_component(t, kF) - v.f));
    worst = std::max(worst, std::abs(prof.eval_component(t, kFP) - v.fp));
    worst = std::max(worst, std::abs(prof.eval_component(t, kFPP) - v.fpp));
  }
  CHECK(worst <= 1e-6);

  // Node states carry the exact accumulators.
  const State3 end = uni.state(prof.t_end);
  CHECK(std::abs(prof.y_end[kAccFp2] - end.acc_fp2) <= 1e-12);
  CHECK(std::abs(prof.y_end[kAccFfp2] - end.acc_ffp2) <= 1e-12);
  CHECK(std::abs(prof.y_end[kAccFfpp2] - end.acc_ffpp2) <= 1e-12);

  // Node derivatives equal the exact slopes (criterion for later scaling use).
  for (std::size_t i = 0; i < prof.steps.size(); i += 7) {
    const auto& st = prof.steps[i];
    CHECK(std::abs(prof.eval_deriv_component(st.t0, kF) - uni.eval(st.t0).fp) <=
          1e-11);
  }

  CHECK(identity_residuals(ModelParams{-2.0}, prof, 0.0, 50.0).max_abs() <=
        1e-9);

  // Blow-up branches refuse spans that reach the singularity.
  CHECK_THROWS_AS((void)synthetic_profile(m_neg_third_form(2.0), 20.0),
                  std::domain_error);
  CHECK_NOTHROW((void)synthetic_profile(m_neg_third_form(2.0), 9.0));
}

TEST_CASE("verify_suite passes by default and fails when degraded") {
  const VerifyReport rep = verify_suite();
  CHECK(rep.all_pass);
  CHECK(rep.entries.size() >= 15);
  for (const auto& e : rep.entries) {
    INFO(e.pin, " measured=", e.measured, " tol=", e.tol);
    CHECK(e.pass);
  }

  ode::IntegratorControls loose;
  loose.rel_tol = 1e-3;
  loose.abs_tol = 1e-6;
  const VerifyReport bad = verify_suite(loose);
  CHECK_FALSE(bad.all_pass);
  bool numeric_pin_failed = false;
  for (const auto& e : bad.entries)
    if (!e.pass && (e.pin.rfind("ivp-", 0) == 0 ||
                    e.pin.rfind("identity-numeric", 0) == 0))
      numeric_pin_failed = true;
  CHECK(numeric_pin_failed);

  const VerifyReport filtered = verify_suite({}, "blowup");
  CHECK(filtered.entries.size() == 4);
  for (const auto& e : filtered.entries)
    CHECK(e.pin.find("blowup") != std::string::npos);
}
