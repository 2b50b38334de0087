#pragma once

// Adaptive Dormand-Prince 5(4) integration with continuous (dense) output,
// directional event localization and truncation-aware termination verdicts.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace blsim::ode {

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;

struct IntegratorControls {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  // Underflow guard, relative: a demanded step below min_step*max(1,|t|)
  // terminates the run as StepUnderflow (finite-time singularity evidence).
  double min_step = 1e-13;
  double max_span = 100.0;
  double magnitude_cap = 1e8;
  // Number of leading state components tested against magnitude_cap
  // (0 = all). Lets callers watch |f| without tripping on the faster
  // divergence of derivatives and accumulators near a pole.
  int blowup_dims = 0;

  [[nodiscard]] bool valid() const {
    return std::isfinite(rel_tol) && rel_tol > 0.0 && std::isfinite(abs_tol) &&
           abs_tol > 0.0 && max_step > 0.0 && min_step > 0.0 &&
           min_step < max_step && std::isfinite(max_span) && max_span > 0.0 &&
           magnitude_cap > 1.0 && blowup_dims >= 0;
  }
};

enum class EventDirection { Rising, Falling, Any };

// Terminate stops the run where the guard crosses; TerminateConverged does
// the same but marks the run as having reached its goal (e.g. proximity to a
// fixed point) rather than having been cut short.
enum class EventAction { Record, Terminate, TerminateConverged };

template <int N>
struct EventSpec {
  std::string label;
  std::function<double(double, const Vec<N>&)> guard;
  EventDirection direction = EventDirection::Any;
  EventAction action = EventAction::Record;
  // Optional gate evaluated at the localized crossing; when it returns false
  // a terminating event is downgraded to a recorded one.
  std::function<bool(double, const Vec<N>&)> accept;
};

enum class TerminationKind { SpanExhausted, Event, BlowUp, StepUnderflow, Converged };

struct Termination {
  TerminationKind kind = TerminationKind::SpanExhausted;
  double t = 0.0;
  std::string label;  // terminating event label, when kind is Event/Converged
};

template <int N>
struct Profile {
  // One accepted step with the 5th-order interpolant
  //   y(theta) = r1 + theta*(r2 + (1-theta)*(r3 + theta*(r4 + (1-theta)*r5)))
  // valid for theta = (t - t0)/h in [0, 1].
  struct Step {
    double t0 = 0.0;
    double h = 0.0;
    Vec<N> r1, r2, r3, r4, r5;
  };

  struct Hit {
    std::string label;
    int index = -1;  // position in the EventSpec list
    double t = 0.0;
    Vec<N> y;
  };

  std::vector<Step> steps;
  std::vector<Hit> events;
  double t_start = 0.0;
  double t_end = 0.0;  // truncated at a terminal event / blow-up localization
  Vec<N> y_start = Vec<N>::Zero();
  Vec<N> y_end = Vec<N>::Zero();
  Termination termination;

  [[nodiscard]] bool empty() const { return steps.empty(); }
  [[nodiscard]] double span() const { return t_end - t_start; }

  [[nodiscard]] const Step& step_at(double t) const {
    if (steps.empty()) throw std::domain_error("Profile::step_at: empty profile");
    std::size_t lo = 0, hi = steps.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (steps[mid].t0 <= t) lo = mid; else hi = mid - 1;
    }
    return steps[lo];
  }

  [[nodiscard]] Vec<N> eval(double t) const {
    check_inside(t);
    t = clamp_time(t);
    const Step& s = step_at(t);
    const double th = (t - s.t0) / s.h;
    return s.r1 + th * (s.r2 + (1.0 - th) * (s.r3 + th * (s.r4 + (1.0 - th) * s.r5)));
  }

  [[nodiscard]] double eval_component(double t, int i) const { return eval(t)[i]; }

  // Time derivative of the interpolant; exact rhs values at step endpoints.
  [[nodiscard]] Vec<N> eval_deriv(double t) const {
    check_inside(t);
    t = clamp_time(t);
    const Step& s = step_at(t);
    const double th = (t - s.t0) / s.h;
    const Vec<N> dy = s.r2 + (1.0 - 2.0 * th) * s.r3 + th * (2.0 - 3.0 * th) * s.r4 +
                      2.0 * th * (1.0 - th) * (1.0 - 2.0 * th) * s.r5;
    return dy / s.h;
  }

  [[nodiscard]] double eval_deriv_component(double t, int i) const { return eval_deriv(t)[i]; }

 private:
  void check_inside(double t) const {
    const double slack = 1e-12 * std::max(1.0, std::max(std::abs(t_start), std::abs(t_end)));
    if (t < t_start - slack || t > t_end + slack)
      throw std::domain_error("Profile::eval: t outside integrated span");
  }
  [[nodiscard]] double clamp_time(double t) const {
    return std::min(std::max(t, t_start), t_end);
  }
};

namespace detail {

// Dormand-Prince 5(4) tableau.
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                        a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                        a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Dense-output weights for the r5 coefficient.
inline constexpr double d1 = -12715105075.0 / 11282082432.0;
inline constexpr double d3 = 87487479700.0 / 32700410799.0;
inline constexpr double d4 = -10690763975.0 / 1880347072.0;
inline constexpr double d5 = 701980252875.0 / 199316789632.0;
inline constexpr double d6 = -1453857185.0 / 822651844.0;
inline constexpr double d7 = 69997945.0 / 29380423.0;

template <int N>
[[nodiscard]] inline bool finite(const Vec<N>& v) {
  for (int i = 0; i < N; ++i)
    if (!std::isfinite(v[i])) return false;
  return true;
}

}  // namespace detail

// Integrates y' = rhs(t, y) from (t0, y0) forward over at most controls.max_span,
// localizing each event guard's sign changes on the dense output to
// |dt| <= 1e-12*max(1,|t|). Event list order breaks exact ties.
template <int N, class F>
Profile<N> integrate(F&& rhs, const Vec<N>& y0, double t0,
                     const IntegratorControls& controls,
                     const std::vector<EventSpec<N>>& events = {}) {
  using detail::finite;
  if (!controls.valid()) throw std::invalid_argument("integrate: invalid controls");
  if (!finite<N>(y0)) throw std::invalid_argument("integrate: non-finite initial state");
  {
    const Vec<N> f0 = rhs(t0, y0);
    if (!finite<N>(f0)) throw std::invalid_argument("integrate: rhs non-finite at y0");
  }

  Profile<N> prof;
  prof.t_start = t0;
  prof.y_start = y0;
  prof.t_end = t0;
  prof.y_end = y0;

  const double t_final = t0 + controls.max_span;
  const int cap_dims = (controls.blowup_dims == 0 || controls.blowup_dims > N)
                           ? N
                           : controls.blowup_dims;

  const auto over_cap = [&](const Vec<N>& y) {
    for (int i = 0; i < cap_dims; ++i)
      if (!(std::abs(y[i]) <= controls.magnitude_cap)) return true;
    return false;
  };
  if (over_cap(y0)) {
    prof.termination = {TerminationKind::BlowUp, t0, {}};
    return prof;
  }

  // Zero-at-start guards: fire at t0 if the trajectory moves off zero in the
  // event's direction (resolved once the first step is accepted).
  std::vector<char> pending_zero(events.size(), 0);
  std::vector<double> last_fire(events.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i].guard && events[i].guard(t0, y0) == 0.0) pending_zero[i] = 1;

  double t = t0;
  Vec<N> y = y0;
  Vec<N> k1 = rhs(t, y);

  const auto step_cap = [&](double tt) {
    return std::min(controls.max_step, 0.25 * std::max(std::abs(tt), 1.0));
  };

  // Initial step heuristic; the controller corrects it within a few steps.
  double h;
  {
    double d0 = 0.0, d1n = 0.0;
    for (int i = 0; i < N; ++i) {
      const double sc = controls.abs_tol + controls.rel_tol * std::abs(y[i]);
      d0 = std::max(d0, std::abs(y[i]) / sc);
      d1n = std::max(d1n, std::abs(k1[i]) / sc);
    }
    h = (d1n > 0.0) ? 0.01 * std::max(1.0, d0) / d1n : 1e-4 * controls.max_span;
    h = std::min({h, step_cap(t0), controls.max_span});
    h = std::max(h, 4.0 * controls.min_step * std::max(1.0, std::abs(t0)));
  }

  Vec<N> k2, k3, k4, k5, k6, k7, y1, yerr;
  bool first_step = true;

  while (t < t_final) {
    const double min_h = controls.min_step * std::max(1.0, std::abs(t));
    if (t_final - t <= 1e-12 * std::max(1.0, std::abs(t))) break;  // span used up
    if (h < min_h) {
      prof.termination = {TerminationKind::StepUnderflow, t, {}};
      return prof;
    }
    bool last = false;
    if (t + h >= t_final) {
      h = t_final - t;
      last = true;
    }

    using detail::a21; using detail::a31; using detail::a32; using detail::a41;
    using detail::a42; using detail::a43; using detail::a51; using detail::a52;
    using detail::a53; using detail::a54; using detail::a61; using detail::a62;
    using detail::a63; using detail::a64; using detail::a65;

    k2 = rhs(t + h * 0.2, Vec<N>(y + h * (a21 * k1)));
    k3 = rhs(t + h * 0.3, Vec<N>(y + h * (a31 * k1 + a32 * k2)));
    k4 = rhs(t + h * 0.8, Vec<N>(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
    k5 = rhs(t + h * (8.0 / 9.0), Vec<N>(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
    k6 = rhs(t + h, Vec<N>(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
    y1 = y + h * (detail::b1 * k1 + detail::b3 * k3 + detail::b4 * k4 +
                  detail::b5 * k5 + detail::b6 * k6);
    k7 = rhs(t + h, y1);

    bool ok = finite<N>(k2) && finite<N>(k3) && finite<N>(k4) && finite<N>(k5) &&
              finite<N>(k6) && finite<N>(y1) && finite<N>(k7);
    double err = 0.0;
    if (ok) {
      yerr = h * (detail::e1 * k1 + detail::e3 * k3 + detail::e4 * k4 +
                  detail::e5 * k5 + detail::e6 * k6 + detail::e7 * k7);
      for (int i = 0; i < N; ++i) {
        const double sc = controls.abs_tol +
                          controls.rel_tol * std::max(std::abs(y[i]), std::abs(y1[i]));
        const double q = yerr[i] / sc;
        err += q * q;
      }
      err = std::sqrt(err / N);
    }

    if (!ok || err > 1.0) {
      const double fac = ok ? std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.2;
      h *= fac;
      continue;
    }

    // Accept: store the dense step.
    typename Profile<N>::Step st;
    st.t0 = t;
    st.h = h;
    st.r1 = y;
    st.r2 = y1 - y;
    st.r3 = h * k1 - st.r2;
    st.r4 = 2.0 * st.r2 - h * (k1 + k7);
    st.r5 = h * (detail::d1 * k1 + detail::d3 * k3 + detail::d4 * k4 +
                 detail::d5 * k5 + detail::d6 * k6 + detail::d7 * k7);
    prof.steps.push_back(st);

    const double t1 = last ? t_final : t + h;
    const auto dense = [&st](double tt) -> Vec<N> {
      const double th = (tt - st.t0) / st.h;
      return st.r1 + th * (st.r2 + (1.0 - th) * (st.r3 + th * (st.r4 + (1.0 - th) * st.r5)));
    };

    const auto finish = [&](TerminationKind kind, double tt, const Vec<N>& yy,
                            const std::string& label) {
      prof.t_end = tt;
      prof.y_end = yy;
      prof.termination = {kind, tt, label};
    };

    // Resolve pending zero-at-start guards on the first accepted step.
    if (first_step) {
      first_step = false;
      for (std::size_t i = 0; i < events.size(); ++i) {
        if (!pending_zero[i]) continue;
        pending_zero[i] = 0;
        const EventSpec<N>& ev = events[i];
        const double tp = t + 1e-3 * h;
        const double probe = ev.guard(tp, dense(tp));
        const bool moved = (ev.direction == EventDirection::Falling && probe < 0.0) ||
                           (ev.direction == EventDirection::Rising && probe > 0.0) ||
                           (ev.direction == EventDirection::Any && probe != 0.0);
        if (!moved) continue;
        prof.events.push_back({ev.label, static_cast<int>(i), t0, prof.y_start});
        last_fire[i] = t0;
        bool terminal = ev.action != EventAction::Record;
        if (terminal && ev.accept && !ev.accept(t0, prof.y_start)) terminal = false;
        if (terminal) {
          finish(ev.action == EventAction::TerminateConverged ? TerminationKind::Converged
                                                              : TerminationKind::Event,
                 t0, prof.y_start, ev.label);
          return prof;
        }
      }
    }

    // Blow-up bound for this step (events before it still win).
    double t_stop = t1;
    bool blew_up = false;
    if (over_cap(y1)) {
      double lo = t, hi = t1;
      for (int it = 0; it < 90 && hi - lo > 1e-13 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (over_cap(dense(mid))) hi = mid; else lo = mid;
      }
      t_stop = lo;
      blew_up = true;
    }

    // Process event crossings in chronological order within [t, t_stop];
    // list order breaks exact ties via the scan order below.
    const auto tie_eps = [](double tt) { return 1e-12 * std::max(1.0, std::abs(tt)); };
    double cursor = t - 1.0;  // no filtering on the first pass
    constexpr int kSub = 4;
    while (true) {
      int best_idx = -1;
      double best_t = std::numeric_limits<double>::infinity();
      Vec<N> best_y;
      for (std::size_t i = 0; i < events.size(); ++i) {
        const EventSpec<N>& ev = events[i];
        if (!ev.guard) continue;
        double ta = t;
        double ga = ev.guard(ta, y);
        for (int sub = 1; sub <= kSub; ++sub) {
          double tb = t + (t1 - t) * (static_cast<double>(sub) / kSub);
          if (sub == kSub || tb > t_stop) tb = t_stop;
          if (tb <= ta) break;
          const double gb = ev.guard(tb, dense(tb));
          const bool crossed =
              (ev.direction == EventDirection::Falling && ga > 0.0 && gb <= 0.0) ||
              (ev.direction == EventDirection::Rising && ga < 0.0 && gb >= 0.0) ||
              (ev.direction == EventDirection::Any &&
               ((ga > 0.0 && gb <= 0.0) || (ga < 0.0 && gb >= 0.0)));
          if (crossed) {
            double lo = ta, hi = tb, glo = ga;
            while (hi - lo > tie_eps(hi)) {
              const double mid = 0.5 * (lo + hi);
              const double gm = ev.guard(mid, dense(mid));
              if ((glo > 0.0 && gm <= 0.0) || (glo < 0.0 && gm >= 0.0)) hi = mid;
              else { lo = mid; glo = gm; }
            }
            const double tc = hi;
            if (tc >= cursor - tie_eps(tc) && tc > last_fire[i] + tie_eps(tc)) {
              if (tc < best_t) {
                best_idx = static_cast<int>(i);
                best_t = tc;
                best_y = dense(tc);
              }
              break;  // earliest usable crossing of this guard found
            }
            // Already-fired crossing: keep scanning the rest of the step.
          }
          if (tb >= t_stop) break;
          ta = tb;
          ga = gb;
        }
      }
      if (best_idx < 0) break;

      const EventSpec<N>& ev = events[best_idx];
      prof.events.push_back({ev.label, best_idx, best_t, best_y});
      last_fire[best_idx] = best_t;
      bool terminal = ev.action != EventAction::Record;
      if (terminal && ev.accept && !ev.accept(best_t, best_y)) terminal = false;
      if (terminal) {
        finish(ev.action == EventAction::TerminateConverged ? TerminationKind::Converged
                                                            : TerminationKind::Event,
               best_t, best_y, ev.label);
        return prof;
      }
      cursor = best_t;
    }

    if (blew_up) {
      finish(TerminationKind::BlowUp, t_stop, dense(t_stop), {});
      return prof;
    }

    t = t1;
    y = y1;
    k1 = k7;  // FSAL
    prof.t_end = t;
    prof.y_end = y;

    if (last || t >= t_final) break;

    const double fac =
        (err > 0.0) ? std::min(5.0, std::max(0.2, 0.9 * std::pow(err, -0.2))) : 5.0;
    h = std::min(h * fac, step_cap(t));
    h = std::min(h, t_final - t);
  }

  prof.termination = {TerminationKind::SpanExhausted, prof.t_end, {}};
  return prof;
}

// Copy of `prof` cut at t_cut: steps starting at or beyond the cut are
// dropped, t_end/y_end move to the cut, and events past it are removed.
// The partial last step keeps its full coefficients; eval() clamps at t_end.
template <int N>
[[nodiscard]] Profile<N> truncated(const Profile<N>& prof, double t_cut) {
  if (t_cut >= prof.t_end) return prof;
  if (t_cut <= prof.t_start || prof.empty())
    throw std::domain_error("truncated: cut before the first step");
  Profile<N> out;
  out.t_start = prof.t_start;
  out.y_start = prof.y_start;
  for (const auto& s : prof.steps) {
    if (s.t0 >= t_cut) break;
    out.steps.push_back(s);
  }
  for (const auto& e : prof.events) {
    if (e.t <= t_cut) out.events.push_back(e);
  }
  out.t_end = t_cut;
  out.y_end = out.eval(t_cut);
  out.termination = {TerminationKind::SpanExhausted, t_cut, {}};
  return out;
}

}  // namespace blsim::ode
