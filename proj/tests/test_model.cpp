#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <blsim/model.hpp>

#include <cmath>
#include <random>
#include <vector>

using namespace blsim;

namespace {

ode::Profile<6> integrate_ivp(double m, double a, double b, double span,
                              double rel = 1e-10, double abs = 1e-12) {
  ModelParams p{m};
  TVec y0;
  y0 << a, -1.0, b, 0.0, 0.0, 0.0;
  ode::IntegratorControls c;
  c.rel_tol = rel;
  c.abs_tol = abs;
  c.max_span = span;
  return ode::integrate<6>(make_rhs_t(p), y0, 0.0, c);
}

}  // namespace

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(ModelParams{0.0}, std::invalid_argument);
  CHECK_THROWS_AS(ModelParams{std::nan("")}, std::invalid_argument);
  CHECK_NOTHROW(ModelParams{-2.0});
  CHECK_NOTHROW(ModelParams{0.5});
}

TEST_CASE("residual vanishes on the explicit blow-up family for every m") {
  // f = 6/(t+tau) satisfies the equation identically, independent of m.
  std::mt19937 rng(20260819u);
  std::uniform_real_distribution<double> m_d(-3.0, 3.0), tau_d(0.5, 3.0),
      t_d(0.0, 10.0);
  int checked = 0;
  while (checked < 120) {
    const double m = m_d(rng);
    if (std::abs(m) < 1e-3) continue;
    const double x = t_d(rng) + tau_d(rng);
    const double f = 6.0 / x;
    const double fp = -6.0 / (x * x);
    const double fpp = 12.0 / (x * x * x);
    const double fppp = -36.0 / (x * x * x * x);
    CHECK(std::abs(residual(ModelParams{m}, f, fp, fpp, fppp)) < 1e-12);
    ++checked;
  }
  // m = -1 kills the f f'' term entirely.
  CHECK(residual(ModelParams{-1.0}, 7.0, 2.0, 0.0, -4.0) == 0.0);
}

TEST_CASE("t-space right-hand side pins") {
  {
    State3 s{0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0};
    const State3 d = rhs_t(ModelParams{1.0}, s);
    CHECK(d.t == 1.0);
    CHECK(d.f == -1.0);
    CHECK(d.fp == 0.0);
    CHECK(d.fpp == doctest::Approx(1.0).epsilon(1e-15));
  }
  {
    State3 s{0.0, 5.0, -1.0, 3.0, 0.0, 0.0, 0.0};
    const State3 d = rhs_t(ModelParams{-1.0}, s);
    CHECK(d.fpp == doctest::Approx(-1.0).epsilon(1e-15));  // m fp^2 only
  }
  {
    State3 s{0.0, 2.0, -1.0, 1.5, 0.0, 0.0, 0.0};
    const State3 d = rhs_t(ModelParams{0.5}, s);
    CHECK(d.acc_fp2 == 1.0);
    CHECK(d.acc_ffp2 == 2.0);
    CHECK(d.acc_ffpp2 == doctest::Approx(2.0 * 1.5 * 1.5).epsilon(1e-15));
  }
  // Packed functor agrees with the struct form on random states.
  std::mt19937 rng(7u);
  std::uniform_real_distribution<double> d01(-2.0, 2.0);
  for (int i = 0; i < 50; ++i) {
    const double m = (i % 2 == 0) ? -2.0 : 0.75;
    State3 s{0.0, d01(rng), d01(rng), d01(rng), 0.0, 0.0, 0.0};
    const State3 ds = rhs_t(ModelParams{m}, s);
    const TVec dv = make_rhs_t(ModelParams{m})(0.0, to_vec(s));
    CHECK(dv[kF] == ds.f);
    CHECK(dv[kFP] == ds.fp);
    CHECK(dv[kFPP] == ds.fpp);
    CHECK(dv[kAccFp2] == ds.acc_fp2);
    CHECK(dv[kAccFfp2] == ds.acc_ffp2);
    CHECK(dv[kAccFfpp2] == ds.acc_ffpp2);
  }
}

TEST_CASE("phase field pins and singular points") {
  // m = 2 at (1,2): on the P = 0 isocline, Q = -3*2 + 2 - 6 = -7.
  const PhaseVec pq = phase_rhs(ModelParams{2.0}, {1.0, 2.0});
  CHECK(pq[0] == 0.0);
  CHECK(pq[1] == doctest::Approx(-7.0).epsilon(1e-15));

  for (double m : {-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 2.966}) {
    const PhaseVec at_o = phase_rhs(ModelParams{m}, {0.0, 0.0});
    CHECK(at_o[0] == 0.0);
    CHECK(at_o[1] == 0.0);
    const PhaseVec at_a = phase_rhs(ModelParams{m}, {-1.0 / 6.0, 1.0 / 18.0});
    CHECK(std::abs(at_a[0]) <= 1e-13);
    CHECK(std::abs(at_a[1]) <= 1e-13);
  }
}

TEST_CASE("isoclines: values, pole, and intersection locus") {
  const IsoclineValue iso = isoclines(ModelParams{-1.0}, 1.0);
  CHECK(iso.v_p == 2.0);
  CHECK(iso.v_q == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
  CHECK_FALSE(iso.q_pole);

  // m = -2: pole abscissa 1/6, hit exactly in double arithmetic.
  CHECK(isocline_pole_u(ModelParams{-2.0}) == doctest::Approx(1.0 / 6.0));
  CHECK(isoclines(ModelParams{-2.0}, 1.0 / 6.0).q_pole);

  // The two isoclines meet only at u = 0 and u = -1/6, for every m.
  for (double m : {-2.0, -1.2, -0.5, 0.5, 1.0, 2.5}) {
    const ModelParams p{m};
    const double pole = isocline_pole_u(p);
    const auto gap = [&](double u) {
      const IsoclineValue v = isoclines(p, u);
      REQUIRE_FALSE(v.q_pole);
      return v.v_p - v.v_q;
    };
    CHECK(gap(0.0) == 0.0);
    const int n = 6000;
    double prev_u = -3.0, prev_g = gap(prev_u);
    for (int i = 1; i <= n; ++i) {
      const double u = -3.0 + 6.0 * i / n;
      if (std::abs(u - pole) < 2e-3 || std::abs(u) < 1e-9) continue;
      const double g = gap(u);
      if (prev_g * g < 0.0 && !(prev_u < pole && pole < u)) {
        // Genuine root in (prev_u, u): bisect and pin it to -1/6.
        double lo = prev_u, hi = u, glo = prev_g;
        for (int k = 0; k < 80; ++k) {
          const double mid = 0.5 * (lo + hi), gm = gap(mid);
          if (glo * gm <= 0.0) hi = mid; else { lo = mid; glo = gm; }
        }
        CHECK(std::abs(0.5 * (lo + hi) - (-1.0 / 6.0)) < 1e-10);
      }
      // Away from both roots the gap stays bounded from zero.
      if (std::abs(u) > 0.05 && std::abs(u + 1.0 / 6.0) > 0.05 &&
          std::abs(u - pole) > 0.05)
        CHECK(std::abs(g) > 1e-4);
      prev_u = u;
      prev_g = g;
    }
  }
}

TEST_CASE("to_phase: initial line, blow-up family, and the f = 0 wall") {
  std::mt19937 rng(11u);
  std::uniform_real_distribution<double> a_d(0.3, 4.0), b_d(-3.0, 3.0);
  for (int i = 0; i < 40; ++i) {
    const double a = (i % 2 == 0 ? 1.0 : -1.0) * a_d(rng);
    const double b = b_d(rng);
    const PhasePoint q = to_phase(a, -1.0, b);
    CHECK(q.u == doctest::Approx(-1.0 / (a * a)).epsilon(1e-14));
    CHECK(q.v == doctest::Approx(b / (a * a * a)).epsilon(1e-14));
  }
  // f = 6/(t+tau) sits at the interior singular point A for all t.
  for (double x : {0.7, 1.0, 2.449489742783178, 8.0}) {
    const PhasePoint q =
        to_phase(6.0 / x, -6.0 / (x * x), 12.0 / (x * x * x));
    CHECK(std::abs(q.u + 1.0 / 6.0) <= 1e-12);
    CHECK(std::abs(q.v - 1.0 / 18.0) <= 1e-12);
  }
  CHECK_THROWS_AS((void)to_phase(0.0, -1.0, 0.5), std::domain_error);
}

TEST_CASE("phase_slope value and isocline rejection") {
  CHECK(phase_slope(ModelParams{-2.0}, {-1.0, -1.0}) ==
        doctest::Approx(11.0 / 6.0).epsilon(1e-15));
  CHECK_THROWS_AS((void)phase_slope(ModelParams{2.0}, {1.0, 2.0}),
                  std::domain_error);
}

TEST_CASE("integral identities hold along arbitrary trajectories") {
  // Derived by integrating the equation, so they hold along any
  // trajectory; this one stays bounded on the whole window.
  const double rt6 = std::sqrt(6.0);
  const auto prof = integrate_ivp(-0.5, rt6, 2.0 / rt6, 50.0);
  REQUIRE(prof.termination.kind == ode::TerminationKind::SpanExhausted);

  const ModelParams p{-0.5};
  const IdentityResiduals exact = identity_residuals(p, prof, 7.3, 7.3);
  CHECK(exact.r1 == 0.0);
  CHECK(exact.r2 == 0.0);
  CHECK(exact.r3 == 0.0);

  CHECK(identity_residuals(p, prof, 0.0, 50.0).max_abs() <= 1e-6);
  std::mt19937 rng(3u);
  std::uniform_real_distribution<double> t_d(0.0, 50.0);
  for (int i = 0; i < 30; ++i) {
    double alpha = t_d(rng), beta = t_d(rng);
    if (alpha > beta) std::swap(alpha, beta);
    CHECK(identity_residuals(p, prof, alpha, beta).max_abs() <= 1e-6);
  }
  CHECK_THROWS_AS(identity_residuals(p, prof, 0.0, 50.0 + 1.0),
                  std::domain_error);
  CHECK_THROWS_AS(identity_residuals(p, prof, -1.0, 10.0), std::domain_error);

  // Second regime: m = -1 with the exactly known convex initial slope.
  const double b_star = std::sqrt(2.0 / 3.0);
  const auto prof1 = integrate_ivp(-1.0, 0.0, b_star, 10.0);
  CHECK(identity_residuals(ModelParams{-1.0}, prof1, 0.0, 10.0).max_abs() <=
        1e-8);

  // Accumulator of f'^2 is nondecreasing.
  double prev = 0.0;
  for (const auto& st : prof.steps) {
    CHECK(st.r1[kAccFp2] >= prev - 1e-15);
    prev = st.r1[kAccFp2];
  }
}

TEST_CASE("scale_solution: identity, closure on the blow-up family, residual") {
  const double rt6 = std::sqrt(6.0);
  const auto prof = integrate_ivp(-2.0, rt6, 2.0 / rt6, 5.0);
  REQUIRE(prof.termination.kind == ode::TerminationKind::SpanExhausted);

  SUBCASE("kappa = 1 reproduces the profile bit for bit") {
    const auto one = scale_solution(prof, 1.0);
    REQUIRE(one.steps.size() == prof.steps.size());
    for (std::size_t i = 0; i < prof.steps.size(); ++i) {
      CHECK(one.steps[i].t0 == prof.steps[i].t0);
      CHECK(one.steps[i].h == prof.steps[i].h);
      CHECK((one.steps[i].r1 - prof.steps[i].r1).cwiseAbs().maxCoeff() == 0.0);
      CHECK((one.steps[i].r5 - prof.steps[i].r5).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((one.y_end - prof.y_end).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("kappa = 2 maps 6/(t+sqrt6) onto 6/(t+sqrt6/2)") {
    // The starting profile is the member of the blow-up family with
    // tau = sqrt(6); scaling by kappa sends tau to tau/kappa.
    const auto g = scale_solution(prof, 2.0);
    CHECK(g.t_end == doctest::Approx(2.5).epsilon(1e-15));
    // Off-node values carry the dense-interpolant error (~1e-8 at these
    // tolerances); node values carry only the integration error.
    for (int i = 0; i <= 50; ++i) {
      const double t = 2.5 * i / 50.0;
      const double expect = 6.0 / (t + rt6 / 2.0);
      CHECK(std::abs(g.eval_component(t, kF) - expect) <= 5e-8);
    }
    for (const auto& st : g.steps)
      CHECK(std::abs(st.r1[kF] - 6.0 / (st.t0 + rt6 / 2.0)) <= 5e-8);
  }

  SUBCASE("scaled profile still satisfies the equation at the nodes") {
    // At theta = 0 the dense-output derivative equals the stage-1 slope
    // exactly, so the equation can be checked without re-integration.
    const ModelParams p{-2.0};
    const auto g = scale_solution(prof, 2.0);
    double worst = 0.0;
    for (const auto& st : g.steps) {
      const double fppp = g.eval_deriv_component(st.t0, kFPP);
      const double f = st.r1[kF], fp = st.r1[kFP], fpp = st.r1[kFPP];
      worst = std::max(worst, std::abs(residual(p, f, fp, fpp, fppp)));
    }
    CHECK(worst <= 1e-8);
  }

  SUBCASE("rejects non-positive or non-finite kappa") {
    CHECK_THROWS_AS(scale_solution(prof, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(scale_solution(prof, -2.0), std::invalid_argument);
    CHECK_THROWS_AS(scale_solution(prof, std::nan("")), std::invalid_argument);
  }
}

TEST_CASE("state packing round trip") {
  State3 s{1.5, 0.1, -0.2, 0.3, 0.4, 0.5, 0.6};
  const State3 r = from_vec(s.t, to_vec(s));
  CHECK(r.t == s.t);
  CHECK(r.f == s.f);
  CHECK(r.fp == s.fp);
  CHECK(r.fpp == s.fpp);
  CHECK(r.acc_fp2 == s.acc_fp2);
  CHECK(r.acc_ffp2 == s.acc_ffp2);
  CHECK(r.acc_ffpp2 == s.acc_ffpp2);
}
