#include "blsim/shooting.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "blsim/oracles.hpp"
#include "blsim/phaseplane.hpp"

namespace blsim::shooting {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_spec(const IvpSpec& spec) {
  std::ostringstream os;
  os << "m=" << spec.m << " a=" << spec.a << " b=" << spec.b;
  return os.str();
}

// Classification events.  The f''-zero guard accepts only falling crossings
// taken with f' < 0 (entering the absorbing concave cone); a falling
// inflection with f' > 0 is a legitimate interior feature and is merely
// recorded.  The f'-zero guard accepts rising crossings with f'' > 0.  The
// accept bounds sit far above integration noise: on a decaying tail both
// derivatives die together, and a zero "crossing" at the 1e-12 noise floor
// must not end the run.
std::vector<ode::EventSpec<6>> classify_events(bool stop_at_f_zero) {
  std::vector<ode::EventSpec<6>> evs;
  evs.push_back({"fpp0",
                 [](double, const TVec& y) { return y[kFPP]; },
                 ode::EventDirection::Falling, ode::EventAction::Terminate,
                 [](double, const TVec& y) { return y[kFP] < -1e-11; }});
  evs.push_back({"fp0",
                 [](double, const TVec& y) { return y[kFP]; },
                 ode::EventDirection::Rising, ode::EventAction::Terminate,
                 [](double, const TVec& y) { return y[kFPP] > 1e-11; }});
  evs.push_back({"f0",
                 [](double, const TVec& y) { return y[kF]; },
                 ode::EventDirection::Any,
                 stop_at_f_zero ? ode::EventAction::Terminate
                                : ode::EventAction::Record,
                 {}});
  return evs;
}

ode::Profile<6> run_ivp(const IvpSpec& spec, double span,
                        const ode::IntegratorControls& base,
                        const std::vector<ode::EventSpec<6>>& events) {
  ode::IntegratorControls c = base;
  c.max_span = span;
  c.blowup_dims = 1;  // watch f alone: every escape drags f -> -inf
  const ModelParams p = spec.params();
  return ode::integrate<6>(make_rhs_t(p), spec.initial_state(), 0.0, c, events);
}

// Every finite-time singularity of the equation has the local form
// f ~ 6/(t - T), so T is read off the endpoint once |f| is large.
double pole_estimate(const ode::Profile<6>& prof) {
  const double f_end = prof.y_end[kF];
  if (f_end < -100.0) return prof.t_end + 6.0 / std::abs(f_end);
  return prof.t_end;
}

std::optional<double> first_f_zero(const ode::Profile<6>& prof) {
  for (const auto& e : prof.events)
    if (e.label == "f0") return e.t;
  return std::nullopt;
}

struct TailCheck {
  bool pass = false;
  int arm = 0;
};

// Decaying-tail acceptance at the end of an event-free run.  Arm 1 is the
// plain threshold |f'|,|f''| <= tail_tol (exponential tails reach it fast).
// Arm 2 serves the algebraic tails, where no fixed threshold is reachable
// before the shooting resolution runs out: it requires small scale-normalized
// heads u = f'/max(1,f^2), v = f''/max(1,|f|^3), an average log-slope of
// |f'| over the last octave of at least 1/4, and |f'| nonincreasing there.
// The head bound must fit inside the peel horizon of a b known to ~1e-12:
// transverse error grows like exp((m+1)/2 * |s|), which for the slowest
// algebraic class caps the usable horizon near u ~ 1e-3; 1e-2 keeps margin
// while still rejecting phase-scale wanderers (|u| ~ 0.1).
TailCheck tail_criteria(const ode::Profile<6>& prof, double tail_tol) {
  const double T = prof.t_end;
  const double f = prof.y_end[kF];
  const double fp = prof.y_end[kFP];
  const double fpp = prof.y_end[kFPP];
  if (std::abs(fp) <= tail_tol && std::abs(fpp) <= tail_tol) return {true, 1};
  if (!(T > 0.0)) return {};
  const double u_head = std::abs(fp) / std::max(1.0, f * f);
  const double v_head = std::abs(fpp) / std::max(1.0, std::abs(f * f * f));
  if (!(u_head <= 1e-2 && v_head <= 1e-2)) return {};
  const double fp_half = prof.eval_component(0.5 * T, kFP);
  if (fp == 0.0) return {true, 2};
  if (fp_half == 0.0 || std::abs(fp) > std::abs(fp_half)) return {};
  const double slope =
      std::log(std::abs(fp_half) / std::abs(fp)) / std::log(2.0);
  if (!(slope >= 0.25)) return {};
  double prev = std::abs(fp_half);
  for (int i = 1; i <= 24; ++i) {
    const double t = 0.5 * T + 0.5 * T * static_cast<double>(i) / 24.0;
    const double cur = std::abs(prof.eval_component(std::min(t, T), kFP));
    if (cur > prev * (1.0 + 1e-9) + 1e-15) return {};
    prev = cur;
  }
  return {true, 2};
}

// Limit of f read from the stored tail when the plain settle test fails:
// octave gap ratio rho = [f(T)-f(T/2)] / [f(T/2)-f(T/4)] is 1/2 for a c/t
// tail (geometric sum gives the limit exactly) and >= 2^{1/3} > 0.95 for the
// unbounded power-drift class, which is reported as a signed infinity.
double ratio_extrapolate(const ode::Profile<6>& prof) {
  const double T = prof.t_end;
  const double f1 = prof.y_end[kF];
  if (!(T > 0.0) || prof.empty()) return f1;
  const double f4 = prof.eval_component(0.25 * T, kF);
  const double f2 = prof.eval_component(0.5 * T, kF);
  const double d1 = f2 - f4;
  const double d2 = f1 - f2;
  if (std::abs(d2) <= 1e-12 * std::max(1.0, std::abs(f1))) return f1;
  const double rho = d2 / d1;
  if (!std::isfinite(rho) || rho >= 0.95) return d2 < 0.0 ? -kInf : kInf;
  if (rho <= 0.0) return f1;
  return f1 + d2 * rho / (1.0 - rho);
}

double limit_from_tail(const ode::Profile<6>& prof, double tail_tol) {
  try {
    return estimate_limit(prof, std::max(tail_tol, 1e-8)).ell;
  } catch (const std::runtime_error&) {
    return ratio_extrapolate(prof);
  }
}

struct Certified {
  ode::Profile<6> profile;
  TypeCTail tail;
};

// Verify that the orbit of `spec` is decaying (Type C) and return a profile
// whose endpoint passes the tail criteria.  A bisected or separatrix-derived
// b pins the orbit only up to a finite peel time, so an event or blow-up on
// a long run is treated as peel: the horizon is pulled back below it.  When
// the tails are not yet asymptotic the horizon grows instead.
Certified certify_type_c(const IvpSpec& spec, double span0, double tail_tol,
                         const ode::IntegratorControls& base) {
  const auto events = classify_events(false);
  double span = std::max(span0, 20.0);
  double ceiling = kInf;
  std::vector<double> tried;
  for (int k = 0; k < 14; ++k) {
    auto prof = run_ivp(spec, span, base, events);
    tried.push_back(span);
    if (prof.termination.kind == ode::TerminationKind::SpanExhausted) {
      const double fp = prof.y_end[kFP];
      const double fpp = prof.y_end[kFPP];
      // Sign test with a noise allowance: at a near-exact b the endpoint
      // derivatives sit at the integration noise floor with random sign.
      if ((fp < 0.0 || std::abs(fp) <= tail_tol) &&
          (fpp > 0.0 || std::abs(fpp) <= tail_tol)) {
        const TailCheck tc = tail_criteria(prof, tail_tol);
        if (tc.pass) {
          TypeCTail tail{prof.y_end[kF], fp, fpp, prof.t_end, tc.arm};
          return {std::move(prof), tail};
        }
      }
      if (span >= ceiling) break;
      span = std::min(2.0 * span, ceiling);
      continue;
    }
    const double t_ev = std::max(prof.termination.t, 1.0);
    ceiling = std::min(ceiling, 0.95 * t_ev);
    span = 0.7 * t_ev;
    if (span < 10.0) break;
  }
  throw UndecidedError(
      "shoot_convex: tail certification failed at " + fmt_spec(spec), tried);
}

BvpSolution make_solution(const IvpSpec& spec, Certified cert,
                          const ModelParams& p, double tail_tol,
                          std::string provenance) {
  BvpSolution s{spec,
                Shape::Convex,
                0.0,
                std::move(cert.profile),
                std::abs(cert.tail.fp_end),
                std::abs(cert.tail.fpp_end),
                std::move(provenance)};
  const ShapeReport rep = validate_shape(s.profile, p);
  if (rep.shape) s.shape = *rep.shape;
  s.limit_ell = limit_from_tail(s.profile, tail_tol);
  return s;
}

BvpSolution closed_form_solution(double m, const oracle::ClosedForm& cf,
                                 double span, std::string provenance) {
  auto prof = oracle::synthetic_profile(cf, span);
  const oracle::Triple end = cf.eval(span);
  return BvpSolution{IvpSpec(m, cf.a, cf.b), Shape::Convex, cf.ell,
                     std::move(prof),        std::abs(end.fp),
                     std::abs(end.fpp),      std::move(provenance)};
}

enum class Side { Low, High, Undecided };

// One shooting probe for the m < 0 bisection.  Low means the orbit fell into
// the concave cone (b too small), High that f' turned around (b too large).
// For m < -1 an event-free long run is decided by the sign of f' at the
// horizon: past the hyperbolic collapse onto the slow manifold of the phase
// origin the transverse part of the initial offset is dead, and the
// surviving center component has the sign of b - b*; it carries f' with it.
struct SideProbe {
  const IvpSpec base_spec;
  const ode::IntegratorControls controls;
  double span = 0.0;
  double span_cap = 0.0;
  std::vector<double> spans_tried;

  SideProbe(double m, double a, const ShootOptions& opt)
      : base_spec(m, a, 0.0),
        controls(opt.controls),
        span(opt.controls.max_span),
        span_cap(opt.controls.max_span *
                 std::ldexp(1.0, std::max(opt.max_span_doublings, 0))) {
    if (m < -1.0) span = std::max(span, 300.0);
  }

  Side operator()(double b) {
    const IvpSpec spec(base_spec.m, base_spec.a, b);
    const auto events = classify_events(false);
    for (;;) {
      auto prof = run_ivp(spec, span, controls, events);
      switch (prof.termination.kind) {
        case ode::TerminationKind::Event:
          return prof.termination.label == "fpp0" ? Side::Low : Side::High;
        case ode::TerminationKind::BlowUp:
        case ode::TerminationKind::StepUnderflow:
          return (prof.y_end[kF] < 0.0 && prof.y_end[kFP] < 0.0) ? Side::Low
                                                                 : Side::High;
        default: {
          if (base_spec.m < -1.0 && std::abs(prof.y_end[kFP]) > 1e-20)
            return prof.y_end[kFP] < 0.0 ? Side::Low : Side::High;
          if (span >= span_cap) return Side::Undecided;
          spans_tried.push_back(span);
          span = std::min(2.0 * span, span_cap);
        }
      }
    }
  }
};

// Starting upper bracket for the m < 0 bisection; doubled until Type B.
double initial_hi(double m, double a) {
  if (m <= -1.0) return std::max(1.0, -(m + 1.0) * std::abs(a));
  const double cm = (m <= -1.0 / 3.0) ? m : -(m + 1.0) / 2.0;
  return std::max(1.0, 0.5 * (m + 1.0) * (std::abs(a) + a) +
                           1.05 * std::sqrt(-2.0 * cm));
}

BvpSolution shoot_convex_bisect(const ModelParams& p, double a,
                                const ShootOptions& opt) {
  SideProbe side(p.m, a, opt);
  double lo = 0.0;  // f'''(0) = m < 0: the concave cone absorbs immediately
  if (side(lo) != Side::Low)
    throw std::runtime_error("shoot_convex: b = 0 did not fall concave at m=" +
                             std::to_string(p.m));
  double hi = initial_hi(p.m, a);
  for (int grows = 0; side(hi) != Side::High; ++grows) {
    if (grows > 60)
      throw std::runtime_error(
          "shoot_convex: no turnaround bracket found at m=" +
          std::to_string(p.m));
    hi *= 2.0;
  }
  for (int it = 0; it < 200; ++it) {
    if (hi - lo <= opt.b_tol_rel * std::max(1.0, std::abs(hi))) break;
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    const Side s = side(mid);
    if (s == Side::Undecided) {
      // Acceptable only in the endgame: the midpoint is then a valid answer.
      if (hi - lo <= 1e-3 * std::max(1.0, std::abs(hi))) break;
      side.spans_tried.push_back(side.span);
      throw UndecidedError("shoot_convex: probe undecided at m=" +
                               std::to_string(p.m) + " b=" +
                               std::to_string(mid),
                           side.spans_tried);
    }
    (s == Side::Low ? lo : hi) = mid;
  }
  const double bstar = 0.5 * (lo + hi);
  const IvpSpec spec(p.m, a, bstar);
  Certified cert =
      certify_type_c(spec, opt.controls.max_span, opt.tail_tol, opt.controls);
  return make_solution(spec, std::move(cert), p, opt.tail_tol,
                       "shooting bisection");
}

// Ordinates v of the S1+ separatrix at u = u0 < 0, ascending, deduplicated.
std::vector<double> s1plus_crossings(const ModelParams& p, double u0) {
  phase::TraceOptions topt;
  topt.controls.max_span = 600.0;
  phase::PhaseTrajectory tr;
  try {
    tr = phase::trace_separatrix(p, phase::SeparatrixId::S1plus, topt);
  } catch (const phase::UnresolvedError& e) {
    tr = e.trajectory();
  }
  std::vector<double> vs;
  const auto& pts = tr.points;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double g0 = pts[i].q.u - u0;
    const double g1 = pts[i + 1].q.u - u0;
    if (g0 == 0.0) {
      vs.push_back(pts[i].q.v);
      continue;
    }
    if (g0 * g1 < 0.0) {
      double slo = pts[i].s, shi = pts[i + 1].s, glo = g0;
      for (int it = 0; it < 60; ++it) {
        const double smid = 0.5 * (slo + shi);
        const double gm = tr.at(smid).u - u0;
        if (gm == 0.0) {
          slo = shi = smid;
          break;
        }
        if ((gm > 0.0) == (glo > 0.0)) {
          slo = smid;
          glo = gm;
        } else {
          shi = smid;
        }
      }
      vs.push_back(tr.at(0.5 * (slo + shi)).v);
    }
  }
  if (!pts.empty() && pts.back().q.u == u0) vs.push_back(pts.back().q.v);
  std::sort(vs.begin(), vs.end());
  std::vector<double> out;
  for (double v : vs) {
    if (out.empty() || std::abs(v - out.back()) > 1e-7 * std::max(1.0, std::abs(v)))
      out.push_back(v);
  }
  if (out.size() > 12) {
    std::vector<double> trimmed(out.begin(), out.begin() + 6);
    trimmed.insert(trimmed.end(), out.end() - 6, out.end());
    out = std::move(trimmed);
  }
  return out;
}

// Local refinement of a separatrix-derived b at m > 0.  The crossing fixes b
// to roughly the trace accuracy (~1e-5); certification needs the horizon
// endpoint on the decaying side, so b is re-bisected on sign(f'(T)): below
// the crossing the orbit drifts with f' < 0 (family interior or concave
// fall), above it f' turns positive.
double polish_crossing(const ModelParams& p, double a, double b_raw,
                       const ode::IntegratorControls& base) {
  const double T_ref = std::max(100.0, base.max_span);
  const auto events = classify_events(true);
  auto is_high = [&](double b) -> bool {
    auto prof = run_ivp(IvpSpec(p.m, a, b), T_ref, base, events);
    switch (prof.termination.kind) {
      case ode::TerminationKind::Event:
      case ode::TerminationKind::Converged:
        return prof.termination.label == "fp0";
      case ode::TerminationKind::BlowUp:
      case ode::TerminationKind::StepUnderflow:
        return false;
      default:
        return prof.y_end[kFP] > 0.0;
    }
  };
  double w = std::max(1e-6, 1e-5 * std::abs(b_raw));
  double lo = b_raw - w, hi = b_raw + w;
  bool ok = false;
  for (int e = 0; e < 10; ++e) {
    const bool l = is_high(lo), h = is_high(hi);
    if (!l && h) {
      ok = true;
      break;
    }
    w *= 4.0;
    lo = b_raw - w;
    hi = b_raw + w;
    if (w > 0.05 * std::max(1.0, std::abs(b_raw))) break;
  }
  if (!ok) return b_raw;  // signature did not bracket: keep the raw value
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (is_high(mid) ? hi : lo) = mid;
  }
  return lo;  // the f'(T) < 0 side decays
}

// Reverse shooting for an isolated orbit entering the phase origin with a
// finite positive limit.  Such an orbit has the pure exponential tail
//   f = ell + c e^{-lambda (t-T)},  lambda = (m+1) ell / 2,
// and at m > 1 it sits inside a continuum of ell = 0 runs (the point A is
// attracting there, every neighbour relaxes onto f ~ 6/t), so no forward
// signature separates it from its neighbours to certification accuracy.
// Matching (f(0), f'(0)) = (a, -1) by Newton iteration on (ell, ln c) over a
// backward integration pins b = f''(0) to the integration tolerance instead.
std::optional<double> tail_match_b(const ModelParams& p, double a, double ell0,
                                   double c0, double T,
                                   const ode::IntegratorControls& base) {
  auto fwd = make_rhs_t(p);
  auto rev = [fwd](double t, const TVec& y) { return TVec(-fwd(t, y)); };
  ode::IntegratorControls c = base;
  c.rel_tol = 1e-12;
  c.abs_tol = 1e-14;
  c.max_span = T;
  // Backward endpoint state for parameters x = (ell, sigma = ln c).
  auto shoot = [&](double ell, double sigma) -> TVec {
    const double lam = 0.5 * (p.m + 1.0) * ell;
    const double cc = std::exp(sigma);
    TVec yT = TVec::Zero();
    yT[kF] = ell + cc;
    yT[kFP] = -lam * cc;
    yT[kFPP] = lam * lam * cc;
    auto prof = ode::integrate<6>(rev, yT, 0.0, c, {});
    return prof.y_end;
  };
  double ell = ell0;
  double sigma = std::log(std::max(c0, 1e-300));
  for (int it = 0; it < 40; ++it) {
    if (!(ell > 1e-3) || !std::isfinite(sigma)) return std::nullopt;
    const TVec y0 = shoot(ell, sigma);
    const double r1 = y0[kF] - a;
    const double r2 = y0[kFP] + 1.0;
    if (std::abs(r1) < 1e-11 * std::max(1.0, std::abs(a)) &&
        std::abs(r2) < 1e-11)
      return y0[kFPP];
    const double de = 1e-7 * std::max(1.0, std::abs(ell));
    const double ds = 1e-7;
    const TVec ye = shoot(ell + de, sigma);
    const TVec ys = shoot(ell, sigma + ds);
    Eigen::Matrix2d J;
    J << (ye[kF] - y0[kF]) / de, (ys[kF] - y0[kF]) / ds,
        (ye[kFP] - y0[kFP]) / de, (ys[kFP] - y0[kFP]) / ds;
    const Eigen::Vector2d step = J.fullPivLu().solve(Eigen::Vector2d(r1, r2));
    if (!step.allFinite()) return std::nullopt;
    const double cap = 0.3 * std::max(1.0, std::abs(ell));
    ell -= std::clamp(step[0], -cap, cap);
    sigma -= std::clamp(step[1], -2.0, 2.0);
  }
  return std::nullopt;
}

// Seed the tail match from the forward run at the raw crossing candidate:
// before the (slow, algebraic) peel the orbit hugs the true entry orbit, so
// f, f', f'' at a moderate horizon read off ell, c and lambda directly.
std::optional<double> tail_refine_crossing(const ModelParams& p, double a,
                                           double b_raw,
                                           const ode::IntegratorControls& base) {
  auto seed = run_ivp(IvpSpec(p.m, a, b_raw), 40.0, base, {});
  if (seed.termination.kind != ode::TerminationKind::SpanExhausted)
    return std::nullopt;
  // Anchor where the decaying mode is resolved: late anchors read pure
  // integrator noise once e^{-lambda T} drops under the tolerance floor.
  for (double T : {40.0, 28.0, 20.0, 14.0, 10.0, 7.0, 5.0}) {
    const TVec yT = seed.eval(T);
    const double fp = yT[kFP], fpp = yT[kFPP];
    if (!(fp < -1e-9) || !(fpp > 1e-9)) continue;
    const double lam = fpp / (-fp);
    if (!(lam > 1e-3)) continue;
    const double c0 = -fp / lam;
    const double ell0 = yT[kF] - c0;
    if (!(ell0 > 1e-3)) continue;
    return tail_match_b(p, a, ell0, c0, T, base);
  }
  return std::nullopt;
}

BvpSolution shoot_convex_separatrix(const ModelParams& p, double a,
                                    const ShootOptions& opt) {
  const double bound = 2.0 / std::sqrt(p.m + 1.0);
  if (!(a > bound))
    throw std::domain_error(
        "shoot_convex: m > 0 requires a > 2/sqrt(m+1), and a = " +
        std::to_string(a) + " is not above " + std::to_string(bound));
  const double u0 = -1.0 / (a * a);
  const std::vector<double> vs = s1plus_crossings(p, u0);
  if (vs.empty())
    throw std::runtime_error(
        "shoot_convex: the line u = -1/a^2 misses the S1+ arc (a below the "
        "existence threshold) at m=" +
        std::to_string(p.m));
  // Topmost crossing: convex solution.
  const double bstar =
      polish_crossing(p, a, vs.back() * a * a * a, opt.controls);
  const IvpSpec spec(p.m, a, bstar);
  Certified cert =
      certify_type_c(spec, opt.controls.max_span, opt.tail_tol, opt.controls);
  return make_solution(spec, std::move(cert), p, opt.tail_tol, "separatrix");
}

// Event-free verification run for a family member.  Interior members cross
// f' = 0 legitimately, so classification events must stay out; the span is
// long enough for the ratio extrapolation of the algebraic tail to resolve
// the limit to ~1e-6.
BvpSolution family_member(const ModelParams& p, double a, double b,
                          const ode::IntegratorControls& base) {
  const IvpSpec spec(p.m, a, b);
  auto prof = run_ivp(spec, 1e7, base, {});
  if (prof.termination.kind != ode::TerminationKind::SpanExhausted)
    throw std::runtime_error("family sample left the bounded class at " +
                             fmt_spec(spec));
  const double ell = ratio_extrapolate(prof);
  if (!std::isfinite(ell))
    throw std::runtime_error("family sample drifts unbounded at " +
                             fmt_spec(spec));
  const double fp_end = std::abs(prof.y_end[kFP]);
  const double fpp_end = std::abs(prof.y_end[kFPP]);
  BvpSolution s{spec,   Shape::Convex, ell,
                std::move(prof), fp_end, fpp_end,
                "family interior sample"};
  const ShapeReport rep = validate_shape(s.profile, p);
  if (rep.shape) s.shape = *rep.shape;
  return s;
}

// The isolated ell < 0 solution at m < -1, a < 0 (upper family endpoint).
// Its orbit crosses f' = 0 and then an inflection, so this too runs free of
// classification events; the tail is exponential and settles fast.
BvpSolution isolated_cc_member(const ModelParams& p, double a, double b,
                               const ode::IntegratorControls& base) {
  const IvpSpec spec(p.m, a, b);
  double span = 400.0;
  for (int k = 0; k < 3; ++k) {
    auto prof = run_ivp(spec, span, base, {});
    if (prof.termination.kind != ode::TerminationKind::SpanExhausted)
      throw std::runtime_error("isolated sample left the bounded class at " +
                               fmt_spec(spec));
    try {
      const LimitEstimate le = estimate_limit(prof, 1e-6);
      const double fp_end = std::abs(prof.y_end[kFP]);
      const double fpp_end = std::abs(prof.y_end[kFPP]);
      BvpSolution s{spec,   Shape::ConvexConcave, le.ell,
                    std::move(prof), fp_end, fpp_end,
                    "admissible line intersection"};
      const ShapeReport rep = validate_shape(s.profile, p);
      if (rep.shape) s.shape = *rep.shape;
      return s;
    } catch (const std::runtime_error&) {
      span *= 4.0;
    }
  }
  throw std::runtime_error("isolated sample tail did not settle at " +
                           fmt_spec(spec));
}

std::string fmt_g(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

void solve_m_below_minus_one(const ModelParams& p, double a,
                             const SolveOptions& opt, SolutionSet& out) {
  ShootOptions sopt;
  sopt.controls = opt.controls;
  sopt.tail_tol = opt.tail_tol;
  BvpSolution convex = shoot_convex(p.m, a, sopt);
  const double ell = convex.limit_ell;
  const double lower = -std::sqrt(a * a - 4.0 / (p.m + 1.0));
  out.notes.push_back("convex solution: ell = " + fmt_g(ell) +
                      " inside (" + fmt_g(lower) + ", " + fmt_g(a) +
                      "), margins " + fmt_g(ell - lower) + " / " +
                      fmt_g(a - ell));
  out.isolated.push_back(std::move(convex));
  if (a < 0.0) {
    const phase::AdmissibleB ab = phase::admissible_b(p, a);
    out.isolated.push_back(
        isolated_cc_member(p, a, ab.b_isolated, opt.controls));
    Family fam;
    fam.b_lo = ab.b_family_lo;
    fam.b_hi = ab.b_family_hi;
    const int n = std::max(opt.family_samples, 0);
    for (int k = 1; k <= n; ++k) {
      const double b = fam.b_lo + (fam.b_hi - fam.b_lo) * k /
                                      static_cast<double>(n + 1);
      try {
        fam.samples.push_back(family_member(p, a, b, opt.controls));
      } catch (const std::runtime_error& err) {
        out.notes.push_back(std::string("family sample dropped: ") +
                            err.what());
      }
    }
    out.notes.push_back(
        "shooting endpoint vs admissible line: |b* - b_lo| = " +
        fmt_g(std::abs(out.isolated.front().spec.b - fam.b_lo)));
    out.family = std::move(fam);
    out.regime = "m < -1, a < 0: convex + isolated convex-concave + family";
  } else {
    out.regime = "m < -1, a >= 0: unique convex";
    out.notes.push_back(
        "convex-concave existence for a >= 0 is not settled here");
  }
}

void solve_m_neg_one(double m, double a, const SolveOptions& opt,
                     SolutionSet& out) {
  const double span = std::max(50.0, opt.controls.max_span);
  out.isolated.push_back(closed_form_solution(
      m, oracle::m_neg_one_form(a), span, "m=-1 closed form"));
  out.regime = "m = -1: closed form, b* = sqrt(2/3) for every a";
  out.notes.push_back("unique convex solution; ell = a - sqrt(6)");
}

void solve_m_neg_unit_interval(const ModelParams& p, double a,
                               const SolveOptions& opt, SolutionSet& out) {
  ShootOptions sopt;
  sopt.controls = opt.controls;
  sopt.tail_tol = opt.tail_tol;
  out.isolated.push_back(shoot_convex(p.m, a, sopt));
  if (p.m < -1.0 / 3.0) {
    out.regime = "-1 < m < -1/3: unique convex";
    out.notes.push_back("convex solution unique in its class");
    if (!std::isfinite(out.isolated.front().limit_ell))
      out.notes.push_back(
          "f drifts to -inf with f' -> 0: no finite limit in this range");
  } else {
    out.regime = "-1/3 <= m < 0: convex (uniqueness open)";
  }
  if (p.m <= -0.5 && a <= 0.0)
    out.notes.push_back("no convex-concave solution in this corner");
  else
    out.notes.push_back("convex-concave existence not settled here");
}

void solve_m_one(double m, double a, const SolveOptions& opt,
                 SolutionSet& out) {
  if (a < 2.0) {
    out.regime = "m = 1, a < 2: empty";
    out.empty_reason =
        "a < a1* = 2 at m = 1: the characteristic k^2 - a k + 1 = 0 has no "
        "real root";
    return;
  }
  const double span = std::max(50.0, opt.controls.max_span);
  out.isolated.push_back(closed_form_solution(
      m, oracle::m_one_form(a, 1), span, "m=1 closed form, branch 1"));
  if (a > 2.0)
    out.isolated.push_back(closed_form_solution(
        m, oracle::m_one_form(a, 2), span, "m=1 closed form, branch 2"));
  else
    out.notes.push_back("a = 2: the two exponential branches coincide");
  out.regime = "m = 1, a >= 2: closed-form pair";
  out.notes.push_back("no one-parameter family at m = 1 (limit set spirals "
                      "outward below m = 4/3)");
  if (opt.exploratory) {
    int type_c = 0;
    for (int k = 0; k < 64; ++k) {
      const double b = -50.0 + 100.0 * k / 63.0;
      ode::IntegratorControls c = opt.controls;
      c.max_span = 150.0;
      ClassifyOptions copt;
      copt.stop_at_f_zero = true;
      try {
        const IvpOutcome o = classify_ivp(IvpSpec(m, a, b), c, copt);
        if (o.kind == IvpKind::TypeC && !o.f_zero_t) ++type_c;
      } catch (const UndecidedError&) {
      }
    }
    out.notes.push_back("exploratory sweep: " + std::to_string(type_c) +
                        " decaying orbits on a 64-point b-grid");
  }
}

void solve_m_positive(const ModelParams& p, double a, const SolveOptions& opt,
                      SolutionSet& out) {
  ShootOptions sopt;
  sopt.controls = opt.controls;
  sopt.tail_tol = opt.tail_tol;
  const double u0 = -1.0 / (a * a);
  const std::vector<double> vs = s1plus_crossings(p, u0);
  const phase::CriticalValues cv = phase::critical_a(p);
  if (vs.empty()) {
    out.regime = p.m < 1.0 ? "0 < m < 1: empty" : "m > 1: empty";
    out.empty_reason = "u = -1/a^2 = " + fmt_g(u0) +
                       " misses the S1+ arc: a below a1* ~ " +
                       fmt_g(cv.a1_star);
    return;
  }
  std::vector<double> bs(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    double b = vs[i] * a * a * a;
    if (i + 1 == vs.size()) {
      b = polish_crossing(p, a, b, opt.controls);
    } else if (i == 0 && vs.size() >= 2 && p.m > 1.0) {
      if (auto rb = tail_refine_crossing(p, a, b, opt.controls)) b = *rb;
    }
    bs[i] = b;
    const IvpSpec spec(p.m, a, b);
    try {
      Certified cert = certify_type_c(spec, opt.controls.max_span,
                                      opt.tail_tol, opt.controls);
      out.isolated.push_back(
          make_solution(spec, std::move(cert), p, opt.tail_tol, "separatrix"));
    } catch (const UndecidedError& err) {
      out.notes.push_back(std::string("crossing candidate dropped: ") +
                          err.what());
    }
  }
  if (p.m > 1.0 && vs.size() >= 2) {
    Family fam;
    fam.b_lo = bs.front();
    fam.b_hi = bs.back();
    const int n = std::max(opt.family_samples, 0);
    for (int k = 1; k <= n; ++k) {
      const double b = fam.b_lo + (fam.b_hi - fam.b_lo) * k /
                                      static_cast<double>(n + 1);
      try {
        fam.samples.push_back(family_member(p, a, b, opt.controls));
      } catch (const std::runtime_error& err) {
        out.notes.push_back(std::string("family sample dropped: ") +
                            err.what());
      }
    }
    out.family = std::move(fam);
    out.regime = "m > 1: isolated pair + family";
  } else if (p.m > 1.0) {
    out.regime = "m > 1: single crossing";
  } else {
    out.regime = "0 < m < 1: separatrix crossings";
    if (cv.a2_star && a < *cv.a2_star)
      out.notes.push_back(
          "completeness between a1* and a2* is not certified here");
  }
  out.notes.push_back("a1* ~ " + fmt_g(cv.a1_star) +
                      (cv.a2_star ? ", a2* ~ " + fmt_g(*cv.a2_star) : ""));
}

}  // namespace

IvpSpec::IvpSpec(double m_, double a_, double b_) : m(m_), a(a_), b(b_) {
  if (!std::isfinite(a) || !std::isfinite(b))
    throw std::invalid_argument("IvpSpec: a and b must be finite");
  (void)ModelParams(m);  // validates m
}

TVec IvpSpec::initial_state() const {
  TVec y = TVec::Zero();
  y[kF] = a;
  y[kFP] = -1.0;
  y[kFPP] = b;
  return y;
}

const char* to_string(IvpKind k) {
  switch (k) {
    case IvpKind::TypeA: return "TypeA";
    case IvpKind::TypeB: return "TypeB";
    case IvpKind::TypeC: return "TypeC";
    case IvpKind::FiniteTimeSingularity: return "FiniteTimeSingularity";
    case IvpKind::FVanished: return "FVanished";
  }
  return "?";
}

const char* to_string(Shape s) {
  switch (s) {
    case Shape::Convex: return "Convex";
    case Shape::ConvexConcave: return "ConvexConcave";
    case Shape::ConcaveConvex: return "ConcaveConvex";
  }
  return "?";
}

IvpOutcome classify_ivp(const IvpSpec& spec,
                        const ode::IntegratorControls& controls,
                        const ClassifyOptions& copt) {
  const ModelParams p = spec.params();
  const auto events = classify_events(copt.stop_at_f_zero);
  // m < 0 with f''(0) < 0: the concave cone is absorbing from t = 0 (the
  // third derivative cannot lift f'' back); record a bounded stretch anyway.
  if (p.m < 0.0 && spec.b < 0.0) {
    auto prof = run_ivp(spec, controls.max_span, controls, events);
    auto fz = first_f_zero(prof);
    return IvpOutcome{IvpKind::TypeA, 0.0, std::nullopt, fz, std::move(prof)};
  }
  double span = controls.max_span;
  std::vector<double> tried;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto prof = run_ivp(spec, span, controls, events);
    tried.push_back(span);
    const ode::Termination term = prof.termination;
    auto fz = first_f_zero(prof);
    switch (term.kind) {
      case ode::TerminationKind::Event:
      case ode::TerminationKind::Converged: {
        if (term.label == "fpp0" && term.t > 1e-12) {
          // Interior concave turn: f'' < 0 with f' < 0 seals the fate, and
          // the orbit usually ceases to exist at a finite pole (f ~ -6/(T-t)).
          // Report the maximal-interval endpoint when it is reachable; the
          // sign event alone is the verdict only for initial-data concavity
          // (t = 0) or when the collapse outruns the span.
          // Drop the sign events, keep only the f = 0 guard.
          std::vector<ode::EventSpec<6>> tail_ev{
              classify_events(copt.stop_at_f_zero).back()};
          auto follow = run_ivp(spec, span, controls, tail_ev);
          if (follow.termination.kind == ode::TerminationKind::BlowUp ||
              follow.termination.kind == ode::TerminationKind::StepUnderflow) {
            const double T = pole_estimate(follow);
            auto fz2 = first_f_zero(follow);
            return IvpOutcome{IvpKind::FiniteTimeSingularity, T, std::nullopt,
                              fz2, std::move(follow)};
          }
        }
        IvpKind kind;
        if (term.label == "fpp0") kind = IvpKind::TypeA;
        else if (term.label == "fp0") kind = IvpKind::TypeB;
        else kind = IvpKind::FVanished;
        if (term.label == "f0" && !fz) fz = term.t;
        return IvpOutcome{kind, term.t, std::nullopt, fz, std::move(prof)};
      }
      case ode::TerminationKind::BlowUp:
      case ode::TerminationKind::StepUnderflow: {
        const double T = pole_estimate(prof);
        return IvpOutcome{IvpKind::FiniteTimeSingularity, T, std::nullopt, fz,
                          std::move(prof)};
      }
      case ode::TerminationKind::SpanExhausted: {
        const double fp = prof.y_end[kFP];
        const double fpp = prof.y_end[kFPP];
        if ((fp < 0.0 || std::abs(fp) <= copt.tail_tol) &&
            (fpp > 0.0 || std::abs(fpp) <= copt.tail_tol)) {
          const TailCheck tc = tail_criteria(prof, copt.tail_tol);
          if (tc.pass) {
            TypeCTail tail{prof.y_end[kF], fp, fpp, prof.t_end, tc.arm};
            return IvpOutcome{IvpKind::TypeC, prof.t_end, tail, fz,
                              std::move(prof)};
          }
        }
        span *= 2.0;
        break;
      }
    }
  }
  throw UndecidedError("classify_ivp: undecided at " + fmt_spec(spec), tried);
}

LimitEstimate estimate_limit(const ode::Profile<6>& prof, double tail_tol) {
  if (!(tail_tol > 0.0) || !std::isfinite(tail_tol))
    throw std::invalid_argument("estimate_limit: tail_tol must be positive");
  if (prof.empty())
    throw std::runtime_error("estimate_limit: not converged");
  // First time where both |f'| and |f f'| sit below tail_tol.
  std::optional<double> t_hit;
  for (const auto& step : prof.steps) {
    for (int j = 0; j < 8; ++j) {
      const double t =
          std::min(step.t0 + step.h * static_cast<double>(j) / 8.0, prof.t_end);
      const double f = prof.eval_component(t, kF);
      const double fp = prof.eval_component(t, kFP);
      if (std::abs(fp) <= tail_tol && std::abs(f * fp) <= tail_tol) {
        t_hit = t;
        break;
      }
    }
    if (t_hit) break;
  }
  if (!t_hit) {
    const double f = prof.y_end[kF], fp = prof.y_end[kFP];
    if (std::abs(fp) <= tail_tol && std::abs(f * fp) <= tail_tol)
      t_hit = prof.t_end;
  }
  if (!t_hit) throw std::runtime_error("estimate_limit: not converged");
  const double ell = prof.eval_component(*t_hit, kF);
  const double drift = std::abs(prof.y_end[kF] - ell);
  if (drift > tail_tol * std::max(1.0, prof.t_end - *t_hit))
    throw std::runtime_error("estimate_limit: not converged");
  return LimitEstimate{ell, *t_hit, drift};
}

ShapeReport validate_shape(const ode::Profile<6>& prof, const ModelParams& p) {
  ShapeReport rep;
  if (prof.empty()) {
    rep.flags.push_back("empty profile");
    return rep;
  }
  const double eps =
      1e-9 * std::max(1.0, std::abs(prof.y_start[kFPP]));
  // Sign ledger of f'' sampled through every step (endpoints + midpoint).
  int first_sign = 0;
  int last_sign = 0;
  double last_t = prof.t_start;
  auto feed = [&](double t, double fpp) {
    const int s = fpp > eps ? 1 : (fpp < -eps ? -1 : 0);
    if (s != 0) {
      if (first_sign == 0) first_sign = s;
      if (last_sign != 0 && s != last_sign) {
        // refine the crossing between last_t and t
        double tl = last_t, th = t;
        for (int it = 0; it < 60; ++it) {
          const double tm = 0.5 * (tl + th);
          const double vm = prof.eval_component(tm, kFPP);
          if ((vm > 0.0) == (s > 0)) th = tm;
          else tl = tm;
        }
        rep.fpp_changes.push_back(SignChange{0.5 * (tl + th), s});
      }
      last_sign = s;
      last_t = t;
    }
  };
  feed(prof.t_start, prof.y_start[kFPP]);
  for (const auto& step : prof.steps) {
    const double tm = std::min(step.t0 + 0.5 * step.h, prof.t_end);
    const double te = std::min(step.t0 + step.h, prof.t_end);
    feed(tm, prof.eval_component(tm, kFPP));
    feed(te, prof.eval_component(te, kFPP));
  }
  for (const auto& ch : rep.fpp_changes) {
    if (p.m < 0.0 && ch.direction > 0) rep.lemma_ok = false;
    if (p.m > 0.0 && ch.direction < 0) rep.lemma_ok = false;
  }
  if (rep.fpp_changes.empty()) {
    if (first_sign >= 0) rep.shape = Shape::Convex;
    else rep.flags.push_back("concave throughout");
  } else if (rep.fpp_changes.size() == 1) {
    const int dir = rep.fpp_changes.front().direction;
    if (first_sign > 0 && dir < 0) rep.shape = Shape::ConvexConcave;
    else if (first_sign < 0 && dir > 0) rep.shape = Shape::ConcaveConvex;
    else rep.flags.push_back("unrecognized curvature pattern");
  } else {
    rep.flags.push_back("multiple f'' sign changes (" +
                        std::to_string(rep.fpp_changes.size()) + ")");
  }
  if (p.m > 0.0) {
    for (const auto& step : prof.steps) {
      const double te = std::min(step.t0 + step.h, prof.t_end);
      const double f = prof.eval_component(te, kF);
      const double fp = prof.eval_component(te, kFP);
      if (f < -1e-9 * std::max(1.0, std::abs(prof.y_start[kF])) ||
          fp > 1e-9) {
        rep.monotone_ok = false;
        break;
      }
    }
  }
  // Interpolant-vs-field residual at up to ~600 points; catches profiles
  // that were not produced by this equation.
  const std::size_t n = prof.steps.size();
  const std::size_t stride = std::max<std::size_t>(1, n / 200);
  for (std::size_t i = 0; i < n; i += stride) {
    const auto& step = prof.steps[i];
    for (int j = 1; j <= 3; ++j) {
      const double t = step.t0 + step.h * static_cast<double>(j) / 4.0;
      if (t > prof.t_end) break;
      const TVec y = prof.eval(t);
      const TVec dy = prof.eval_deriv(t);
      const double res =
          residual(p, y[kF], y[kFP], y[kFPP], dy[kFPP]);
      const double scale =
          std::max({1.0, std::abs(dy[kFPP]), std::abs(p.m * y[kFP] * y[kFP]),
                    std::abs(0.5 * (p.m + 1.0) * y[kF] * y[kFPP])});
      double rel = std::abs(res) / scale;
      rel = std::max(rel, std::abs(dy[kF] - y[kFP]) /
                              std::max(1.0, std::abs(y[kFP])));
      rel = std::max(rel, std::abs(dy[kFP] - y[kFPP]) /
                              std::max(1.0, std::abs(y[kFPP])));
      rep.max_residual = std::max(rep.max_residual, rel);
    }
  }
  rep.residual_ok = rep.max_residual <= 1e-5;
  if (!rep.residual_ok) rep.flags.push_back("field residual too large");
  return rep;
}

namespace {

ode::Profile<6> tilde_apply(const ode::Profile<6>& prof, const TVec& d,
                            double ts) {
  ode::Profile<6> out;
  out.t_start = prof.t_start * ts;
  out.t_end = prof.t_end * ts;
  out.y_start = prof.y_start.cwiseProduct(d);
  out.y_end = prof.y_end.cwiseProduct(d);
  out.steps.reserve(prof.steps.size());
  for (const auto& s : prof.steps) {
    typename ode::Profile<6>::Step o;
    o.t0 = s.t0 * ts;
    o.h = s.h * ts;
    o.r1 = s.r1.cwiseProduct(d);
    o.r2 = s.r2.cwiseProduct(d);
    o.r3 = s.r3.cwiseProduct(d);
    o.r4 = s.r4.cwiseProduct(d);
    o.r5 = s.r5.cwiseProduct(d);
    out.steps.push_back(o);
  }
  out.events.reserve(prof.events.size());
  for (const auto& e : prof.events)
    out.events.push_back({e.label, e.index, e.t * ts, e.y.cwiseProduct(d)});
  out.termination = prof.termination;
  out.termination.t *= ts;
  return out;
}

TVec tilde_diag(double m) {
  const double k1 = std::sqrt(-(m + 1.0) / 2.0);
  TVec d;
  d << -k1, -1.0, -1.0 / k1, k1, -k1 * k1, -1.0;
  return d;
}

}  // namespace

ode::Profile<6> tilde_transform(double m, const ode::Profile<6>& prof) {
  if (!(m < -1.0))
    throw std::invalid_argument("tilde_transform: defined for m < -1 only");
  const double k1 = std::sqrt(-(m + 1.0) / 2.0);
  return tilde_apply(prof, tilde_diag(m), k1);
}

ode::Profile<6> tilde_inverse(double m, const ode::Profile<6>& prof) {
  if (!(m < -1.0))
    throw std::invalid_argument("tilde_inverse: defined for m < -1 only");
  const double k1 = std::sqrt(-(m + 1.0) / 2.0);
  return tilde_apply(prof, tilde_diag(m).cwiseInverse(), 1.0 / k1);
}

BvpSolution shoot_convex(double m, double a, const ShootOptions& opt) {
  const ModelParams p(m);
  if (!std::isfinite(a))
    throw std::invalid_argument("shoot_convex: a must be finite");
  const double rt6 = std::sqrt(6.0);
  const double span = std::max(50.0, std::min(opt.controls.max_span, 200.0));
  if (opt.use_closed_forms && std::abs(a - rt6) <= 1e-9) {
    // f = 6/(t + sqrt 6) solves the equation for every m and sits exactly on
    // the interior phase fixed point; for m > 4/3 that point is attracting
    // and no bisection can isolate this b.  Return it in closed form.
    return closed_form_solution(m, oracle::universal_form(rt6), span,
                                "universal closed form");
  }
  if (opt.use_closed_forms && std::abs(m + 1.0) <= 1e-12)
    return closed_form_solution(m, oracle::m_neg_one_form(a), span,
                                "m=-1 closed form");
  if (m > 0.0) return shoot_convex_separatrix(p, a, opt);
  return shoot_convex_bisect(p, a, opt);
}

RefinedTail refine_convex_tail(const IvpSpec& spec, double target_t,
                               const ode::IntegratorControls& controls) {
  if (!(target_t > 0.0) || !std::isfinite(target_t))
    throw std::invalid_argument("refine_convex_tail: target_t must be positive");
  const ModelParams p = spec.params();
  ode::IntegratorControls rc = controls;
  rc.rel_tol = std::min(rc.rel_tol, 1e-12);
  rc.abs_tol = std::min(rc.abs_tol, 1e-14);
  rc.blowup_dims = 1;
  auto rhs = make_rhs_t(p);
  std::vector<ode::EventSpec<6>> events;
  events.push_back({"A",
                    [](double, const TVec& y) { return y[kFPP]; },
                    ode::EventDirection::Falling, ode::EventAction::Terminate,
                    {}});
  events.push_back({"B",
                    [](double, const TVec& y) { return y[kFP]; },
                    ode::EventDirection::Rising, ode::EventAction::Terminate,
                    {}});
  auto run = [&](const TVec& y, double t0, double span, bool with_events) {
    ode::IntegratorControls c = rc;
    c.max_span = span;
    static const std::vector<ode::EventSpec<6>> no_events;
    return ode::integrate<6>(rhs, y, t0, c, with_events ? events : no_events);
  };
  auto side_of = [](const ode::Profile<6>& pr) -> int {
    switch (pr.termination.kind) {
      case ode::TerminationKind::Event:
        return pr.termination.label == "A" ? -1 : +1;
      case ode::TerminationKind::BlowUp:
      case ode::TerminationKind::StepUnderflow:
        return (pr.y_end[kF] < 0.0 && pr.y_end[kFP] < 0.0) ? -1 : +1;
      default:
        return 0;
    }
  };

  // Stage 0: re-solve b at the tightened tolerances on a short horizon.
  double lo = 0.0, hi = std::max(1.0, 2.0 * std::abs(spec.b));
  {
    auto at = [&](double b) {
      TVec y = TVec::Zero();
      y[kF] = spec.a;
      y[kFP] = -1.0;
      y[kFPP] = b;
      return y;
    };
    if (side_of(run(at(lo), 0.0, 200.0, true)) != -1)
      throw std::runtime_error("refine_convex_tail: b = 0 is not on the low side");
    int grows = 0;
    while (side_of(run(at(hi), 0.0, 200.0, true)) != +1) {
      hi *= 2.0;
      if (++grows > 60)
        throw std::runtime_error("refine_convex_tail: no upper bracket");
    }
    double tA = 0.0, tB = 0.0;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      auto pr = run(at(mid), 0.0, 200.0, true);
      const int s = side_of(pr);
      if (s == 0) break;  // peel beyond the short horizon: stage handoff
      if (s == -1) {
        lo = mid;
        tA = pr.termination.t;
      } else {
        hi = mid;
        tB = pr.termination.t;
      }
    }
    if (!(tA > 0.0) || !(tB > 0.0))
      throw std::runtime_error("refine_convex_tail: stage-0 bracket collapsed");
    const double b0 = 0.5 * (lo + hi);
    const double T0 = 0.9 * std::min(tA, tB);
    RefinedTail tail{IvpSpec(spec.m, spec.a, b0), {}, 0.0, at(b0), 0.0, 0};
    auto piece = run(at(b0), 0.0, T0, false);
    if (piece.termination.kind != ode::TerminationKind::SpanExhausted)
      throw std::runtime_error("refine_convex_tail: stage-0 segment broke early");
    tail.profile = std::move(piece);
    tail.t_end = tail.profile.t_end;
    tail.y_end = tail.profile.y_end;

    // Continuation: re-bisect f'' within a shrinking bracket at successive
    // horizons, advancing 55% of the decided stretch each stage.  The tiny
    // f'' jumps are accumulated; at m = -1/2 each jump delta shifts the
    // downstream f'^2 integral by exactly 4*delta.
    double last_gain = 60.0;
    while (tail.t_end < target_t && tail.stages < 400) {
      const double beta = tail.y_end[kFPP];
      double d = std::max(1e-13, 1e-10 * std::abs(beta));
      double pspan = std::min(3.0 * tail.t_end, std::max(60.0, 8.0 * last_gain));
      auto probe = [&](double bb) -> std::pair<int, double> {
        TVec y = tail.y_end;
        y[kFPP] = bb;
        double sp = pspan;
        for (int k = 0; k < 8; ++k) {
          auto pr = run(y, tail.t_end, sp, true);
          const int s = side_of(pr);
          if (s != 0) return {s, pr.termination.t};
          sp *= 2.0;
        }
        return {0, 0.0};
      };
      double blo = 0.0, bhi = 0.0, ta = 0.0, tb = 0.0;
      bool bracketed = false;
      for (int e = 0; e < 40; ++e) {
        const auto [sl, tl] = probe(beta - d);
        const auto [sh, th] = probe(beta + d);
        if (sl == -1 && sh == +1) {
          blo = beta - d;
          bhi = beta + d;
          ta = tl;
          tb = th;
          bracketed = true;
          break;
        }
        d *= 4.0;
        if (d > std::max(1.0, std::abs(beta))) break;
      }
      if (!bracketed) break;
      for (int it = 0; it < 75; ++it) {
        const double mid = 0.5 * (blo + bhi);
        if (mid == blo || mid == bhi) break;
        const auto [s, tev] = probe(mid);
        if (s == 0) break;
        if (s == -1) {
          blo = mid;
          ta = tev;
        } else {
          bhi = mid;
          tb = tev;
        }
      }
      const double reach = std::min(ta, tb);
      const double gain = reach - tail.t_end;
      if (!(gain > 0.3)) break;
      const double applied = 0.5 * (blo + bhi);
      const double t_next = std::min(target_t, tail.t_end + 0.55 * gain);
      TVec y = tail.y_end;
      y[kFPP] = applied;
      auto seg = run(y, tail.t_end, t_next - tail.t_end, false);
      if (seg.termination.kind != ode::TerminationKind::SpanExhausted) break;
      tail.jump_sum += applied - beta;
      for (const auto& s : seg.steps) tail.profile.steps.push_back(s);
      tail.profile.t_end = seg.t_end;
      tail.profile.y_end = seg.y_end;
      tail.profile.termination = seg.termination;
      tail.t_end = seg.t_end;
      tail.y_end = seg.y_end;
      ++tail.stages;
      last_gain = gain;
    }
    return tail;
  }
}

double fp2_integral_to_infinity(const RefinedTail& tail) {
  const double m = tail.spec.m;
  if (std::abs(m + 0.5) > 1e-12)
    throw std::invalid_argument(
        "fp2_integral_to_infinity: the exact tail remainder needs m = -1/2");
  const TVec& y = tail.y_end;
  const double f = y[kF], fp = y[kFP], fpp = y[kFPP];
  // Conserved along solutions at m = -1/2: E = f f'' - f'^2/2 + f^2 f'/4.
  const double E = f * fpp - 0.5 * fp * fp + 0.25 * f * f * fp;
  const double C = std::cbrt(-12.0 * E);
  if (!(C > 0.0))
    throw std::runtime_error(
        "fp2_integral_to_infinity: tail energy outside the convex regime");
  const double target = -fp;
  if (!(target > 0.0))
    throw std::runtime_error(
        "fp2_integral_to_infinity: f' not negative at the horizon");
  // Tail coordinate X solving f' = -(C/3) X^{-2/3} + (10/3) X^{-2}.
  double X = std::pow(C / (3.0 * target), 1.5);
  for (int it = 0; it < 80; ++it) {
    const double r = (C / 3.0) * std::pow(X, -2.0 / 3.0) -
                     (10.0 / 3.0) / (X * X) - target;
    const double dr = -(2.0 * C / 9.0) * std::pow(X, -5.0 / 3.0) +
                      (20.0 / 3.0) * std::pow(X, -3.0);
    const double step = r / dr;
    double Xn = X - step;
    if (!(Xn > 0.25 * X)) Xn = 0.25 * X;
    const bool done = std::abs(step) <= 1e-13 * X;
    X = Xn;
    if (done) break;
  }
  const double remainder = (C * C / 3.0) * std::pow(X, -1.0 / 3.0) -
                           (4.0 * C / 3.0) * std::pow(X, -5.0 / 3.0);
  // Local cross-check from the tail identity: the remainder also equals
  // 4 (f'' + f f'/4) at the horizon when the orbit is asymptotic.
  const double r_loc = 4.0 * (fpp + 0.25 * f * fp);
  if (std::abs(remainder - r_loc) >
      0.02 * std::max(std::abs(remainder), std::abs(r_loc)))
    throw std::runtime_error(
        "fp2_integral_to_infinity: horizon not in the asymptotic regime");
  return (y[kAccFp2] - 4.0 * tail.jump_sum) + remainder;
}

SolutionSet solve(double m, double a, const SolveOptions& opt) {
  const ModelParams p(m);
  if (!std::isfinite(a))
    throw std::invalid_argument("solve: a must be finite");
  SolutionSet out;
  out.m = m;
  out.a = a;
  if (m < -1.0 && std::abs(m + 1.0) > 1e-12) {
    solve_m_below_minus_one(p, a, opt, out);
  } else if (std::abs(m + 1.0) <= 1e-12) {
    solve_m_neg_one(m, a, opt, out);
  } else if (m < 0.0) {
    solve_m_neg_unit_interval(p, a, opt, out);
  } else {
    const double bound = 2.0 / std::sqrt(m + 1.0);
    if (a <= bound + 1e-12) {
      out.regime = "m > 0, a <= 2/sqrt(m+1): empty";
      out.empty_reason = "a = " + fmt_g(a) + " <= 2/sqrt(m+1) = " +
                         fmt_g(bound) + ": the decay identity excludes a "
                         "monotone solution";
    } else if (std::abs(m - 1.0) <= 1e-12) {
      solve_m_one(m, a, opt, out);
    } else {
      solve_m_positive(p, a, opt, out);
    }
  }
  return out;
}

}  // namespace blsim::shooting
