#include <blsim/phaseplane.hpp>

#include <algorithm>
#include <cmath>

namespace blsim::phase {

namespace {

void require_phase_m(const ModelParams& p) {
  if (p.m == -1.0)
    throw std::invalid_argument("phase coordinates are not used at m = -1");
}

// Quadratic coefficients of the local invariant manifolds at O, from the
// invariance condition Q(u, h(u)) = h'(u) P(u, h(u)) at second order:
//   W  (tangent to L):  v = -(m+1)/2 u + c_w u^2,  c_w = -(3m+1)/(2(m+1))
//   W0 (tangent to L0): v = c_2 u^2,               c_2 = 2m/(m+1)
double coeff_w(double m) { return -(3.0 * m + 1.0) / (2.0 * (m + 1.0)); }
double coeff_2(double m) { return 2.0 * m / (m + 1.0); }

constexpr double kUA = -1.0 / 6.0;  // A's abscissa (also the Poincare section)
constexpr double kVA = 1.0 / 18.0;

// Speed floor for the regularized unit-speed parameterization (see the note
// above run_trace). Within |F| ~ eps of a singular point the parameter blends
// into flow time / eps; everywhere else it is arc length to ~eps accuracy.
constexpr double kSpeedFloor = 1e-3;

}  // namespace

const char* to_string(PointClass c) {
  switch (c) {
    case PointClass::UnstableNode: return "unstable node";
    case PointClass::UnstableFocus: return "unstable focus";
    case PointClass::StableFocus: return "stable focus";
    case PointClass::StableNode: return "stable node";
    case PointClass::SaddleNode: return "saddle-node";
  }
  return "?";
}

const char* to_string(SeparatrixId s) {
  switch (s) {
    case SeparatrixId::S0minus: return "S0minus";
    case SeparatrixId::S1minus: return "S1minus";
    case SeparatrixId::S1plus: return "S1plus";
    case SeparatrixId::S2minus: return "S2minus";
  }
  return "?";
}

const char* to_string(CrossCurve c) {
  switch (c) {
    case CrossCurve::PIsocline: return "P=0";
    case CrossCurve::QIsocline: return "Q=0";
    case CrossCurve::UAxis: return "u-axis";
    case CrossCurve::VAxis: return "v-axis";
  }
  return "?";
}

std::pair<SingularPointInfo, SingularPointInfo> singular_points(
    const ModelParams& p) {
  require_phase_m(p);
  const double m = p.m;

  SingularPointInfo O;
  O.location = {0.0, 0.0};
  const double lam_w = -0.5 * (m + 1.0);
  O.lambda1 = {0.0, 0.0};
  O.lambda2 = {lam_w, 0.0};
  O.classification = PointClass::SaddleNode;
  O.dir_center = PhaseVec(1.0, 0.0);
  O.dir_hyperbolic = PhaseVec(1.0, lam_w);
  O.c_w = coeff_w(m);
  O.c_2 = coeff_2(m);
  O.w_below_L = O.c_w < 0.0;
  O.w0_above_L0 = O.c_2 > 0.0;
  O.degenerate = std::abs(3.0 * m + 1.0) < 1e-9;  // c_w = 0: no side to pick

  SingularPointInfo A;
  A.location = {kUA, kVA};
  // Jacobian of (P, Q_m) at A: [[2/3, 1], [-m/3 - 1/6, -m/2]].
  const double tr = 2.0 / 3.0 - 0.5 * m;
  const double disc = tr * tr - 2.0 / 3.0;  // trace^2 - 4 det, det = 1/6
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    const double l1 = 0.5 * (tr - root), l2 = 0.5 * (tr + root);
    A.lambda1 = {l1, 0.0};
    A.lambda2 = {l2, 0.0};
    // Eigenvector for lambda: (1, lambda - 2/3) from the first Jacobian row.
    A.dir_center = PhaseVec(1.0, l1 - 2.0 / 3.0);
    A.dir_hyperbolic = PhaseVec(1.0, l2 - 2.0 / 3.0);
    A.classification = tr > 0.0 ? PointClass::UnstableNode : PointClass::StableNode;
  } else {
    const double im = 0.5 * std::sqrt(-disc);
    A.lambda1 = {0.5 * tr, -im};
    A.lambda2 = {0.5 * tr, im};
    A.classification = tr > 0.0 ? PointClass::UnstableFocus : PointClass::StableFocus;
  }
  A.degenerate = std::abs(disc) < 1e-9 || std::abs(tr) < 1e-9;

  return {O, A};
}

PhasePoint local_seed(const ModelParams& p, SeparatrixId which, double delta) {
  require_phase_m(p);
  if (!(delta > 0.0) || delta > 1e-3)
    throw std::invalid_argument("local_seed: delta must lie in (0, 1e-3]");
  const double m = p.m;
  const double s1 = -0.5 * (m + 1.0);  // slope of L
  switch (which) {
    case SeparatrixId::S0minus:
      if (m >= -1.0)
        throw std::invalid_argument("S0minus exists only for m < -1");
      return {delta, s1 * delta + coeff_w(m) * delta * delta};
    case SeparatrixId::S1minus:
      if (m >= -1.0)
        throw std::invalid_argument("S1minus exists only for m < -1");
      return {-delta, -s1 * delta + coeff_w(m) * delta * delta};
    case SeparatrixId::S1plus:
      if (m <= -1.0)
        throw std::invalid_argument("S1plus exists only for m > -1");
      return {-delta, -s1 * delta + coeff_w(m) * delta * delta};
    case SeparatrixId::S2minus:
      return {-delta, coeff_2(m) * delta * delta};
  }
  throw std::invalid_argument("local_seed: unknown separatrix id");
}

bool traces_forward(const ModelParams& p, SeparatrixId which) {
  require_phase_m(p);
  const double m = p.m;
  switch (which) {
    case SeparatrixId::S0minus:
    case SeparatrixId::S1minus:
      if (m >= -1.0)
        throw std::invalid_argument("S0minus/S1minus exist only for m < -1");
      return true;  // W unstable (eigenvalue -(m+1)/2 > 0): leaves O forward
    case SeparatrixId::S1plus:
      if (m <= -1.0)
        throw std::invalid_argument("S1plus exists only for m > -1");
      return false;  // W stable: enters O forward, traced backward
    case SeparatrixId::S2minus:
      // Flow on W0 is u' = -2/(m+1) u^2: the u<0 branch leaves O forward when
      // m > -1 and enters O forward when m < -1.
      return m > -1.0;
  }
  throw std::invalid_argument("traces_forward: unknown separatrix id");
}

namespace {

// Traces integrate the regularized unit-speed field dq/ds = ± F/(|F| + eps),
// so away from the singular points s is arc length. Flow time is monotone in
// s but nonuniform. Two reasons not to use flow time directly: the raw
// parameter crawls algebraically near O on the center manifold (the visible
// curve would collapse into one step), and near the u -> -inf escape an RK
// step in flow time happily lands *across* the pole unseen (the Riccati
// u' ~ u^2 flow is a Moebius map) -- at unit speed |q| changes by at most h
// per step, so the magnitude cap cannot be tunneled through. The eps floor
// matters: dividing by |F| alone turns the neighborhood of the slow manifold
// into a stiff layer (Jacobian ~ J/|F|) that an explicit stepper cannot hold.
PhaseTrajectory run_trace(const ModelParams& p, std::optional<SeparatrixId> which,
                          PhasePoint start, double time_sign,
                          const TraceOptions& opt,
                          const std::vector<ode::EventSpec<2>>& extra) {
  require_phase_m(p);
  if (time_sign != 1.0 && time_sign != -1.0)
    throw std::invalid_argument("trace: time_sign must be +1 or -1");

  const double m = p.m;
  std::vector<ode::EventSpec<2>> ev;
  ev.push_back({"P",
                [](double, const PhaseVec& y) { return y[1] - 2.0 * y[0] * y[0]; },
                ode::EventDirection::Any, ode::EventAction::Record, {}});
  ev.push_back({"Q",
                [m](double, const PhaseVec& y) {
                  return -0.5 * (m + 1.0) * y[1] + m * y[0] * y[0] -
                         3.0 * y[0] * y[1];
                },
                ode::EventDirection::Any, ode::EventAction::Record, {}});
  ev.push_back({"u_axis", [](double, const PhaseVec& y) { return y[1]; },
                ode::EventDirection::Any, ode::EventAction::Record, {}});
  ev.push_back({"v_axis", [](double, const PhaseVec& y) { return y[0]; },
                ode::EventDirection::Any, ode::EventAction::Record, {}});

  // Convergence balls. A keeps the tight radius (approach is exponential or
  // spiral). O's is tied to the seed scale: orbits that rejoin O do so along
  // the center manifold, where the approach is algebraic -- tightening the
  // ball costs sigma ~ eps/r for no information, since every separatrix is
  // seeded only delta-accurately to begin with. Seeds inside the ball are
  // fine: the guard arms on exit and fires on re-entry.
  const double prox_o = std::max(opt.proximity, 10.0 * opt.delta);
  const double prox_o2 = prox_o * prox_o;
  const double prox2 = opt.proximity * opt.proximity;
  ev.push_back({"O",
                [prox_o2](double, const PhaseVec& y) {
                  return y[0] * y[0] + y[1] * y[1] - prox_o2;
                },
                ode::EventDirection::Falling, ode::EventAction::TerminateConverged,
                {}});
  ev.push_back({"A",
                [prox2](double, const PhaseVec& y) {
                  const double du = y[0] - kUA, dv = y[1] - kVA;
                  return du * du + dv * dv - prox2;
                },
                ode::EventDirection::Falling, ode::EventAction::TerminateConverged,
                {}});

  // Loop closure: Poincare-section hits (u = -1/6 crossed on the side where
  // the traced field has u increasing) are collected; a return within
  // loop_tol of a previous ordinate away from A terminates the trace.
  auto hits = std::make_shared<std::vector<double>>();
  const double loop_tol = opt.loop_tol;
  const double flow_side = time_sign;  // trace-rising side: v > vA iff forward
  ev.push_back({"loop",
                [](double, const PhaseVec& y) { return y[0] - kUA; },
                ode::EventDirection::Rising, ode::EventAction::Terminate,
                [hits, loop_tol, flow_side](double, const PhaseVec& y) {
                  const double v = y[1];
                  if (flow_side * (v - kVA) <= 0.0) return false;
                  for (double prev : *hits)
                    if (std::abs(v - prev) < loop_tol &&
                        std::abs(v - kVA) > 1e-3)
                      return true;
                  hits->push_back(v);
                  return false;
                }});

  for (const auto& e : extra) ev.push_back(e);

  PhaseTrajectory traj;
  traj.which = which;
  traj.start = start;
  traj.time_sign = time_sign;
  const PhaseVec y0(start.u, start.v);
  const auto raw = make_phase_rhs(p, time_sign);
  const auto unit = [raw](double s, const PhaseVec& y) -> PhaseVec {
    const PhaseVec f = raw(s, y);
    return PhaseVec(f / (f.norm() + kSpeedFloor));
  };
  traj.profile = ode::integrate<2>(unit, y0, 0.0, opt.controls, ev);
  traj.termination = traj.profile.termination;

  // Sample points: accepted-step endpoints, or a uniform grid when requested.
  const double s_end = traj.profile.t_end;
  traj.points.push_back({0.0, start});
  if (opt.sample_ds > 0.0) {
    for (double s = opt.sample_ds; s < s_end; s += opt.sample_ds) {
      const PhaseVec y = traj.profile.eval(s);
      traj.points.push_back({s, {y[0], y[1]}});
    }
  } else {
    for (const auto& st : traj.profile.steps) {
      const double s = std::min(st.t0 + st.h, s_end);
      if (s <= traj.points.back().s) continue;
      const PhaseVec y = traj.profile.eval(s);
      traj.points.push_back({s, {y[0], y[1]}});
    }
  }
  if (traj.points.back().s < s_end) {
    const PhaseVec y = traj.profile.y_end;
    traj.points.push_back({s_end, {y[0], y[1]}});
  }

  int ord_p = 0, ord_q = 0, ord_u = 0, ord_v = 0;
  for (const auto& hit : traj.profile.events) {
    CrossCurve curve;
    int* ord = nullptr;
    if (hit.label == "P") { curve = CrossCurve::PIsocline; ord = &ord_p; }
    else if (hit.label == "Q") { curve = CrossCurve::QIsocline; ord = &ord_q; }
    else if (hit.label == "u_axis") { curve = CrossCurve::UAxis; ord = &ord_u; }
    else if (hit.label == "v_axis") { curve = CrossCurve::VAxis; ord = &ord_v; }
    else continue;
    traj.crossings.push_back({curve, {hit.y[0], hit.y[1]}, hit.t, ++(*ord)});
  }
  return traj;
}

}  // namespace

PhaseTrajectory trace_separatrix(const ModelParams& p, SeparatrixId which,
                                 const TraceOptions& opt) {
  const PhasePoint seed = local_seed(p, which, opt.delta);
  const double sign = traces_forward(p, which) ? 1.0 : -1.0;
  return run_trace(p, which, seed, sign, opt, {});
}

PhaseTrajectory trace_from(const ModelParams& p, PhasePoint start,
                           double time_sign, const TraceOptions& opt) {
  return run_trace(p, std::nullopt, start, time_sign, opt, {});
}

CriticalValues critical_a(const ModelParams& p, const TraceOptions& opt) {
  const double m = p.m;
  if (!(m > 0.0)) throw std::invalid_argument("critical_a requires m > 0");

  CriticalValues cv;
  if (m == 1.0) {
    // S1plus at m = 1 is the loop carried by f = 1 + e^{-t} (a = 2): it
    // leaves O along W0 and returns along L, touching P = 0 exactly at the
    // t = 0 point u = f'(0)/f(0)^2 = -1/4. No u-axis crossing exists.
    cv.u1_star = -0.25;
    cv.a1_star = 2.0;
    cv.provenance = "closed form at m=1: P=0 touch of the a=2 loop";
    return cv;
  }

  PhaseTrajectory traj = trace_separatrix(p, SeparatrixId::S1plus, opt);
  std::vector<Crossing> pcross, ucross;
  for (const auto& c : traj.crossings) {
    if (c.point.u >= 0.0) continue;
    if (c.curve == CrossCurve::PIsocline) pcross.push_back(c);
    if (c.curve == CrossCurve::UAxis) ucross.push_back(c);
  }

  // Backward tracing reverses the paper's "last/penultimate" order: the
  // crossings nearest O come first.
  if (m < 1.0) {
    if (pcross.size() < 2)
      throw UnresolvedError("critical_a: unresolved (need two P=0 crossings of S1plus)",
                            std::move(traj));
    cv.u1_star = pcross[0].point.u;
    cv.u2_star = pcross[1].point.u;
    cv.provenance = "last and penultimate P=0 crossings of S1plus";
  } else {
    if (pcross.empty() || ucross.empty())
      throw UnresolvedError("critical_a: unresolved (P=0 or u-axis crossing of S1plus missing)",
                            std::move(traj));
    cv.u1_star = pcross[0].point.u;
    cv.u2_star = ucross[0].point.u;
    cv.provenance = "P=0 and u-axis crossings of S1plus";
  }

  if (!(cv.u1_star < *cv.u2_star && *cv.u2_star < 0.0))
    throw UnresolvedError("critical_a: crossing order violates u1* < u2* < 0",
                          std::move(traj));
  cv.a1_star = std::sqrt(-1.0 / cv.u1_star);
  cv.a2_star = std::sqrt(-1.0 / *cv.u2_star);
  if (!(cv.a1_star >= 2.0 / std::sqrt(m + 1.0) - 1e-12))
    throw UnresolvedError("critical_a: a1* contradicts the a > 2/sqrt(m+1) bound",
                          std::move(traj));
  return cv;
}

AdmissibleB admissible_b(const ModelParams& p, double a, const TraceOptions& opt) {
  if (!(p.m < -1.0)) throw std::invalid_argument("admissible_b requires m < -1");
  if (!(a < 0.0)) throw std::invalid_argument("admissible_b requires a < 0");

  const double u0 = -1.0 / (a * a);
  TraceOptions o = opt;
  o.delta = std::min(opt.delta, 0.5 * std::abs(u0));  // seed the line's near side

  const auto intersect = [&](SeparatrixId id) {
    std::vector<ode::EventSpec<2>> extra;
    extra.push_back({"line",
                     [u0](double, const PhaseVec& y) { return y[0] - u0; },
                     ode::EventDirection::Any, ode::EventAction::Terminate, {}});
    const PhasePoint seed = local_seed(p, id, o.delta);
    PhaseTrajectory t = run_trace(p, id, seed, 1.0, o, extra);
    if (t.termination.kind != ode::TerminationKind::Event ||
        t.termination.label != "line")
      throw UnresolvedError(
          std::string("admissible_b: ") + to_string(id) +
              " did not reach u = -1/a^2 within the traced extent; extend trace",
          std::move(t));
    const PhaseVec y = t.profile.y_end;
    return std::pair<double, double>(y[1], std::abs(y[0] - u0));
  };

  const auto [vm, res0] = intersect(SeparatrixId::S0minus);
  const auto [vp, res1] = intersect(SeparatrixId::S1minus);
  if (!(vm < vp && vp < 0.0))
    throw std::logic_error("admissible_b: expected v_minus < v_plus < 0");

  AdmissibleB ab;
  ab.a = a;
  ab.v_minus = vm;
  ab.v_plus = vp;
  ab.line_residual_s0 = res0;
  ab.line_residual_s1 = res1;
  const double a3 = a * a * a;
  ab.b_isolated = vm * a3;
  ab.b_family_lo = std::min(vp * a3, vm * a3);
  ab.b_family_hi = std::max(vp * a3, vm * a3);
  return ab;
}

std::optional<LimitCycle> find_limit_cycle(const ModelParams& p,
                                           const TraceOptions& opt) {
  const double m = p.m;
  if (!(m > 0.0))
    throw std::invalid_argument("find_limit_cycle: wrong regime (needs m > 0)");
  const auto [o_info, a_info] = singular_points(p);
  (void)o_info;
  if (a_info.classification != PointClass::UnstableFocus &&
      a_info.classification != PointClass::StableFocus)
    throw std::invalid_argument("find_limit_cycle: A is not a focus at this m");

  // Return map on the section {u = -1/6, v > 1/18}; crossings there always
  // have u' = v - 1/18 > 0, so one Rising hit per revolution.
  const auto ret = [&](double v0) -> std::optional<double> {
    std::vector<ode::EventSpec<2>> ev;
    ev.push_back({"sec",
                  [](double, const PhaseVec& y) { return y[0] - kUA; },
                  ode::EventDirection::Rising, ode::EventAction::Terminate,
                  [](double s, const PhaseVec&) { return s > 1e-3; }});
    const double prox2 = opt.proximity * opt.proximity;
    ev.push_back({"A",
                  [prox2](double, const PhaseVec& y) {
                    const double du = y[0] - kUA, dv = y[1] - kVA;
                    return du * du + dv * dv - prox2;
                  },
                  ode::EventDirection::Falling,
                  ode::EventAction::TerminateConverged, {}});
    ode::IntegratorControls c = opt.controls;
    c.max_span = 400.0;
    const auto prof = ode::integrate<2>(make_phase_rhs(p, 1.0),
                                        PhaseVec(kUA, v0), 0.0, c, ev);
    if (prof.termination.kind == ode::TerminationKind::Event &&
        prof.termination.label == "sec")
      return prof.y_end[1];
    return std::nullopt;
  };

  // Scan outward from A for a sign change of the displacement map.
  double lo = 0.0, hi = 0.0;
  int sign_lo = 0;
  for (double r = 1e-3; r <= 0.52; r *= 2.0) {
    const double v0 = kVA + r;
    const auto v1 = ret(v0);
    if (!v1) break;  // left the returning region
    const int s = (*v1 > v0) ? +1 : -1;
    if (sign_lo == 0) {
      sign_lo = s;
      lo = v0;
    } else if (s == sign_lo) {
      lo = v0;
    } else {
      hi = v0;
      break;
    }
  }
  if (hi == 0.0) return std::nullopt;

  double v_star = 0.0;
  bool converged = false;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    const auto v1 = ret(mid);
    if (!v1) return std::nullopt;  // map broke inside the bracket
    const double d = *v1 - mid;
    if (std::abs(d) < 1e-9) {
      v_star = mid;
      converged = true;
      break;
    }
    if (((d > 0.0) ? +1 : -1) == sign_lo) lo = mid; else hi = mid;
  }
  if (!converged) return std::nullopt;
  if (std::abs(v_star - kVA) <= 1e-3) return std::nullopt;  // not away from A

  LimitCycle cyc;
  cyc.v_star = v_star;
  TraceOptions lopt = opt;
  lopt.loop_tol = 1e-6;
  cyc.loop = run_trace(p, std::nullopt, PhasePoint{kUA, v_star}, 1.0, lopt, {});
  cyc.period_s = cyc.loop.termination.t;
  return cyc;
}

std::vector<SeparatrixId> regime_separatrices(const ModelParams& p) {
  require_phase_m(p);
  if (p.m < -1.0)
    return {SeparatrixId::S0minus, SeparatrixId::S1minus, SeparatrixId::S2minus};
  return {SeparatrixId::S1plus, SeparatrixId::S2minus};
}

Portrait portrait(const ModelParams& p, const PortraitOptions& opt) {
  require_phase_m(p);
  Portrait pt;
  pt.m = p.m;
  pt.window = opt.window;

  const int n_iso = 400;
  const double du = (opt.window.u_max - opt.window.u_min) / n_iso;
  const double v_cap =
      4.0 * std::max(std::abs(opt.window.v_min), std::abs(opt.window.v_max));
  const double pole = isocline_pole_u(p);

  std::vector<PhasePoint> branch;
  for (int i = 0; i <= n_iso; ++i) {
    const double u = opt.window.u_min + i * du;
    pt.p_isocline.push_back({u, 2.0 * u * u});
    const IsoclineValue iso = isoclines(p, u);
    const bool usable =
        !iso.q_pole && std::abs(u - pole) > 1e-6 && std::abs(iso.v_q) <= v_cap;
    const bool crossed_pole =
        !branch.empty() && (branch.back().u - pole) * (u - pole) < 0.0;
    if (!usable || crossed_pole) {
      if (branch.size() > 1) pt.q_isocline.push_back(branch);
      branch.clear();
    }
    if (usable) branch.push_back({u, iso.v_q});
  }
  if (branch.size() > 1) pt.q_isocline.push_back(branch);

  std::tie(pt.at_O, pt.at_A) = singular_points(p);

  for (SeparatrixId id : regime_separatrices(p))
    pt.separatrices.push_back(trace_separatrix(p, id, opt.trace));

  // Short flow segments on a lattice, skipping the singular points. The
  // field is normalized so seg_span is arc length and whiskers come out a
  // uniform size instead of collapsing where the flow is slow.
  ode::IntegratorControls c = opt.trace.controls;
  c.max_span = opt.seg_span;
  const auto raw = make_phase_rhs(p, 1.0);
  const auto unit = [raw](double s, const PhaseVec& y) -> PhaseVec {
    const PhaseVec f = raw(s, y);
    return PhaseVec(f / (f.norm() + kSpeedFloor));
  };
  const int n = std::max(2, opt.grid_n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double u = opt.window.u_min +
                       (i + 0.5) * (opt.window.u_max - opt.window.u_min) / n;
      const double v = opt.window.v_min +
                       (j + 0.5) * (opt.window.v_max - opt.window.v_min) / n;
      if (std::hypot(u, v) < 1e-2 || std::hypot(u - kUA, v - kVA) < 1e-2)
        continue;
      const auto prof = ode::integrate<2>(unit, PhaseVec(u, v), 0.0, c, {});
      FlowSegment seg;
      seg.start = {u, v};
      const int n_samp = 16;
      for (int k = 0; k <= n_samp; ++k) {
        const double s = prof.t_start + (prof.t_end - prof.t_start) * k / n_samp;
        const PhaseVec y = prof.eval(s);
        seg.points.push_back({s, {y[0], y[1]}});
      }
      pt.grid.push_back(std::move(seg));
    }
  }
  return pt;
}

}  // namespace blsim::phase
