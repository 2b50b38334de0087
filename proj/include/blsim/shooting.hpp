#pragma once

// Shooting layer: classifies initial-value runs by their exit mode, bisects
// on f''(0) for the convex boundary-value solution, certifies solution
// families, and assembles the full solution set of a given (m, a) cell.
//
// Conventions shared by everything here:
//  - the IVP is f(0) = a, f'(0) = -1, f''(0) = b, integrated as the
//    6-component state of model.hpp (accumulators riding along);
//  - "convex" means f'' > 0 wherever the classifier looked; solutions are
//    certified on the integrated horizon, with the tail criteria below
//    standing in for the unreachable t = infinity.

#include <blsim/integrator.hpp>
#include <blsim/model.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace blsim::shooting {

// One shooting instance. Validates on construction: finite a and b, m
// finite and nonzero.
struct IvpSpec {
  double m = 0.0;
  double a = 0.0;
  double b = 0.0;

  IvpSpec(double m_in, double a_in, double b_in);

  [[nodiscard]] ModelParams params() const { return ModelParams(m); }
  [[nodiscard]] TVec initial_state() const;
};

// Exit modes of an initial-value run.
//  TypeA  f'' fell through zero while f' < 0: f' can no longer turn back up.
//  TypeB  f' rose through zero while f'' > 0: f overshoots, no decaying tail.
//  TypeC  neither event fired and the tail criteria hold at the horizon:
//         the boundary-value candidate.
//  FiniteTimeSingularity  |f| blew up (plunge to -inf); witness_t estimates
//         the pole time.
//  FVanished  f crossed zero and the caller asked to stop there.
enum class IvpKind { TypeA, TypeB, TypeC, FiniteTimeSingularity, FVanished };

[[nodiscard]] const char* to_string(IvpKind k);

// Tail snapshot backing a TypeC verdict. arm 1: |f'| and |f''| are below
// tail_tol outright (exponential tails). arm 2: the scale-normalized heads
// |f'|/max(1,f^2) and |f''|/max(1,|f|^3) are small, |f'| decays
// monotonically over the second half of the span, and its log-log slope is
// bounded away from zero (algebraic tails, where absolute thresholds are
// unreachable on any feasible horizon).
struct TypeCTail {
  double ell = 0.0;     // f at the horizon; biased low for slow tails
  double fp_end = 0.0;  // |f'| at the horizon
  double fpp_end = 0.0; // |f''| at the horizon
  double t_end = 0.0;
  int arm = 0;          // 1 or 2
};

struct IvpOutcome {
  IvpKind kind = IvpKind::TypeA;
  double witness_t = 0.0;  // event time / pole estimate / horizon
  std::optional<TypeCTail> tail;      // TypeC only
  std::optional<double> f_zero_t;     // first f = 0 crossing, if any
  ode::Profile<6> profile;
};

struct ClassifyOptions {
  double tail_tol = 1e-8;
  // Terminate at the first f = 0 crossing (verdict FVanished). Off by
  // default: for m < 0 genuine solutions may cross zero.
  bool stop_at_f_zero = false;
};

// Thrown when a run exhausts its span without meeting any classification
// criterion, even after the built-in retry with a doubled span.
class UndecidedError : public std::runtime_error {
 public:
  UndecidedError(const std::string& what, std::vector<double> spans)
      : std::runtime_error(what), spans_(std::move(spans)) {}
  [[nodiscard]] const std::vector<double>& spans_tried() const { return spans_; }

 private:
  std::vector<double> spans_;
};

// Runs the IVP and maps the termination to an IvpKind. controls.max_span is
// the classification horizon (doubled once before giving up undecided); the
// blow-up watch is restricted to f itself so that accumulator growth never
// ends a run.
[[nodiscard]] IvpOutcome classify_ivp(const IvpSpec& spec,
                                      const ode::IntegratorControls& controls = {},
                                      const ClassifyOptions& opt = {});

// f'' sign pattern of a stored profile.
enum class Shape { Convex, ConvexConcave, ConcaveConvex };

[[nodiscard]] const char* to_string(Shape s);

struct SignChange {
  double t = 0.0;
  int direction = 0;  // +1 rising, -1 falling
};

// Report-only profile audit: f'' sign changes, the one-way sign-propagation
// law (m < 0: f'' <= 0 is absorbing; m > 0: f'' >= 0 is absorbing),
// positivity/monotonicity for m > 0, and the pointwise equation residual of
// the interpolant (catches profiles that never came from the equation).
struct ShapeReport {
  std::optional<Shape> shape;  // nullopt: pattern fits no catalogued shape
  std::vector<SignChange> fpp_changes;
  bool lemma_ok = true;
  bool monotone_ok = true;     // m > 0 only; true otherwise
  double max_residual = 0.0;   // scale-normalized equation residual
  bool residual_ok = true;
  std::vector<std::string> flags;
};

[[nodiscard]] ShapeReport validate_shape(const ode::Profile<6>& prof,
                                         const ModelParams& p);

// Limit of f read off a stored profile: the first time both |f'| and |f f'|
// are below tail_tol, cross-checked against the drift of f over the rest of
// the profile. Throws std::runtime_error("estimate_limit: not converged")
// when no such time exists or the drift exceeds tail_tol per unit time.
struct LimitEstimate {
  double ell = 0.0;
  double t_hit = 0.0;
  double tail_drift = 0.0;
};

[[nodiscard]] LimitEstimate estimate_limit(const ode::Profile<6>& prof,
                                           double tail_tol);

// m < -1 rescaling t -> kappa1 * t, f -> -kappa1 * f with
// kappa1 = sqrt(-(m+1)/2), applied exactly on the dense coefficients
// (accumulators included). The image solves the companion equation
// g''' + g g'' - (2m/(m+1)) g'^2 = 0, which is not in the same family, so
// the inverse is a separate map rather than a second application.
// Both throw std::invalid_argument for m >= -1.
[[nodiscard]] ode::Profile<6> tilde_transform(double m, const ode::Profile<6>& prof);
[[nodiscard]] ode::Profile<6> tilde_inverse(double m, const ode::Profile<6>& prof);

// One boundary-value solution.
struct BvpSolution {
  IvpSpec spec;  // with the solved b
  Shape shape = Shape::Convex;
  // lim f. Finite for exponential tails and for algebraic decay to zero;
  // -inf for the unbounded decreasing class (f ~ -(6t)^{1/3} at the
  // critical a of -1 < m < 0 regimes).
  double limit_ell = 0.0;
  ode::Profile<6> profile;
  double tail_fp = 0.0;   // |f'| at the stored horizon
  double tail_fpp = 0.0;  // |f''| at the stored horizon
  std::string provenance; // "bisection" / "closed form" / "separatrix"
};

struct ShootOptions {
  ode::IntegratorControls controls;  // probe horizon seeds from max_span
  double tail_tol = 1e-8;
  double b_tol_rel = 1e-12;      // bracket width target, times max(1, |b|)
  int max_span_doublings = 6;    // probe span escalation cap (2^6 * max_span)
  // Hand out exact closed forms where one matches the request (a = sqrt(6)).
  // For m > 1 this is load-bearing: the universal solution sits inside a
  // continuum of TypeC runs, so no bisection can isolate it.
  bool use_closed_forms = true;
};

// The convex solution of the (m, a) cell.
//  m <= 0   genuine bisection on b: TypeA evidence below, TypeB above.
//  m > 0    the top crossing of the S1+ separatrix with the line u = -1/a^2
//           supplies b; the run at that b is then certified by integration.
// Throws std::runtime_error when no bracket / no crossing exists and
// UndecidedError when certification fails.
[[nodiscard]] BvpSolution shoot_convex(double m, double a,
                                       const ShootOptions& opt = {});

// Critical-orbit extension by staged re-bisection. A single bisected b pins
// the orbit only until roundoff in b peels it off (t ~ 100 for the slow
// tails); each stage re-brackets beta = f''(T_k) and advances the horizon,
// concatenating profile pieces. jump_sum records the total applied
// correction to f'' (each jump alters downstream integrals by a known
// multiple, see fp2_integral_to_infinity).
struct RefinedTail {
  IvpSpec spec;
  ode::Profile<6> profile;  // piecewise orbit from t = 0
  double t_end = 0.0;
  TVec y_end;
  double jump_sum = 0.0;
  int stages = 0;
};

[[nodiscard]] RefinedTail refine_convex_tail(const IvpSpec& spec, double target_t,
                                             const ode::IntegratorControls& controls = {});

// int_0^infinity f'^2 for the m = -1/2 convex solution, assembled as the
// accumulated integral up to the refined horizon (jump-corrected) plus the
// closed-form remainder of the conserved-quantity tail
// E = f f'' - f'^2/2 + f^2 f'/4, f ~ -C x^{1/3}. Requires m = -1/2 within
// 1e-12 (the exact remainder exists only where 2m + 1 = 0).
[[nodiscard]] double fp2_integral_to_infinity(const RefinedTail& tail);

// A continuum of solutions: every b in the open interval solves the
// boundary-value problem with limit zero. samples holds verified interior
// representatives.
struct Family {
  double b_lo = 0.0;
  double b_hi = 0.0;
  std::vector<BvpSolution> samples;
};

struct SolveOptions {
  ode::IntegratorControls controls;
  double tail_tol = 1e-8;
  int family_samples = 5;
  // Scan a coarse b-grid for structure beyond what the theory lists
  // (reported in notes, never as certified solutions).
  bool exploratory = false;
};

struct SolutionSet {
  double m = 0.0;
  double a = 0.0;
  std::string regime;  // descriptor of the (m, a) cell
  std::vector<BvpSolution> isolated;
  std::optional<Family> family;
  std::vector<std::string> notes;
  // Set when the cell provably has no solution; the string carries the
  // certificate (bound or phase-plane reason).
  std::optional<std::string> empty_reason;

  [[nodiscard]] bool certified_empty() const { return empty_reason.has_value(); }
};

// Full solution set of the (m, a) cell: isolated solutions, the family when
// the regime carries one, uniqueness/completeness notes, and certified
// emptiness below the existence bounds. m = 0 is rejected by ModelParams.
[[nodiscard]] SolutionSet solve(double m, double a, const SolveOptions& opt = {});

}  // namespace blsim::shooting
