#pragma once

// Phase-plane machinery over the (u, v) = (f'/f^2, f''/f^3) field: singular
// points with their invariant directions, separatrix seeding and tracing with
// crossing records, the critical parameters a1*/a2* for m > 0, admissible-b
// intervals for m < -1, a best-effort limit-cycle search, and portrait data.

#include <blsim/model.hpp>

#include <complex>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace blsim::phase {

enum class PointClass {
  UnstableNode,
  UnstableFocus,
  StableFocus,
  StableNode,
  SaddleNode,
};

[[nodiscard]] const char* to_string(PointClass c);

struct SingularPointInfo {
  PhasePoint location;
  std::complex<double> lambda1, lambda2;
  PointClass classification = PointClass::SaddleNode;
  // Invariant directions. At O: dir_center spans L0 = {(1,0)} (the center
  // manifold tangent) and dir_hyperbolic spans L = {(1, -(m+1)/2)} (the W
  // manifold). At A they are eigenvector directions when real (nodes), zero
  // for foci.
  PhaseVec dir_center = PhaseVec::Zero();
  PhaseVec dir_hyperbolic = PhaseVec::Zero();
  // Side placement of the local manifold parabolas relative to their tangent
  // lines, encoded by the quadratic coefficients: W sits below L when
  // c_w = -(3m+1)/(2(m+1)) < 0, and W0 sits above L0 when c_2 = 2m/(m+1) > 0.
  double c_w = 0.0;
  double c_2 = 0.0;
  bool w_below_L = false;
  bool w0_above_L0 = false;
  // m at (or numerically on top of) a classification/side boundary; results
  // are advisory there.
  bool degenerate = false;
};

// O = (0,0) first, A = (-1/6, 1/18) second.
[[nodiscard]] std::pair<SingularPointInfo, SingularPointInfo> singular_points(
    const ModelParams& p);

// Named separatrices of the figure portraits. S0/S1 are the right/left
// branches of the hyperbolic manifold W (tangent to L at O); S2minus is the
// left branch of the center manifold W0 (tangent to L0). The minus names
// belong to the m < -1 panels, S1plus to m > -1.
enum class SeparatrixId { S0minus, S1minus, S1plus, S2minus };

[[nodiscard]] const char* to_string(SeparatrixId s);

enum class CrossCurve { PIsocline, QIsocline, UAxis, VAxis };

[[nodiscard]] const char* to_string(CrossCurve c);

struct Crossing {
  CrossCurve curve = CrossCurve::PIsocline;
  PhasePoint point;
  double s = 0.0;   // trace parameter at the crossing
  int ordinal = 0;  // 1-based, per curve, in trace order
};

struct TrajectorySample {
  double s = 0.0;
  PhasePoint q;
};

struct PhaseTrajectory {
  std::optional<SeparatrixId> which;  // nullopt: generic start point
  PhasePoint start;
  // The trace parameter s is arc length along the orbit, up to a small
  // regularization near the singular points (the field F is rescaled to
  // F/(|F| + eps) before integrating). Flow time advances monotonically with
  // time_sign * s; -1 marks a separatrix traced against the flow (an
  // omega-separatrix entering O).
  double time_sign = 1.0;
  std::vector<TrajectorySample> points;
  std::vector<Crossing> crossings;
  ode::Termination termination;  // in the s parameter
  ode::Profile<2> profile;       // dense storage, s-parameterized

  [[nodiscard]] PhasePoint at(double s) const {
    const PhaseVec y = profile.eval(s);
    return {y[0], y[1]};
  }
};

struct TraceOptions {
  ode::IntegratorControls controls;  // defaults adjusted in the constructor
  double delta = 1e-4;               // seed distance from O
  double sample_ds = 0.0;            // 0: store accepted steps; >0: resample
  double proximity = 1e-8;           // O/A convergence radius
  double loop_tol = 1e-6;            // Poincare-section closure tolerance

  TraceOptions() {
    controls.rel_tol = 1e-10;
    controls.abs_tol = 1e-12;
    // Arc length to the escape cap is ~ sqrt(2) * magnitude_cap; step sizes
    // grow geometrically, so the long leg costs only ~log(cap) steps.
    controls.max_span = 2.5e6;
    controls.magnitude_cap = 1e6;  // phase escape = f vanishing in t-space
    controls.blowup_dims = 0;
  }
};

// Thrown when a required crossing cannot be extracted; carries the trace for
// diagnosis. (shared_ptr keeps the exception copyable.)
class UnresolvedError : public std::runtime_error {
 public:
  UnresolvedError(const std::string& what, PhaseTrajectory traj)
      : std::runtime_error(what),
        traj_(std::make_shared<PhaseTrajectory>(std::move(traj))) {}
  [[nodiscard]] const PhaseTrajectory& trajectory() const { return *traj_; }

 private:
  std::shared_ptr<PhaseTrajectory> traj_;
};

// Seed point at parameter distance delta from O along the requested
// separatrix's tangent direction, displaced to the correct side by the
// quadratic term of the local manifold expansion (v = -(m+1)/2 u + c_w u^2
// for W, v = c_2 u^2 for W0).
[[nodiscard]] PhasePoint local_seed(const ModelParams& p, SeparatrixId which,
                                    double delta);

// true if the separatrix is traced with time_sign = +1 (alpha-separatrix
// leaving O forward in flow time), false for backward tracing.
[[nodiscard]] bool traces_forward(const ModelParams& p, SeparatrixId which);

[[nodiscard]] PhaseTrajectory trace_separatrix(const ModelParams& p,
                                               SeparatrixId which,
                                               const TraceOptions& opt = {});

// Generic trace from an arbitrary start point (time_sign = -1 integrates the
// reversed field). Same events and termination rules as separatrix traces.
[[nodiscard]] PhaseTrajectory trace_from(const ModelParams& p, PhasePoint start,
                                         double time_sign = 1.0,
                                         const TraceOptions& opt = {});

struct CriticalValues {
  double u1_star = 0.0;
  double a1_star = 0.0;
  std::optional<double> u2_star;
  std::optional<double> a2_star;
  std::string provenance;
};

// Critical initial values a1* (existence threshold) and a2* for m > 0, read
// off the P=0 / u-axis crossings of S1plus traced backward from O. m = 1 is
// answered in closed form (u1* = -1/4 from the a = 2 solution; no u-axis
// crossing exists since S1plus returns to O along W0).
[[nodiscard]] CriticalValues critical_a(const ModelParams& p,
                                        const TraceOptions& opt = {});

struct AdmissibleB {
  double a = 0.0;
  double v_minus = 0.0;  // S0minus ordinate at u = -1/a^2
  double v_plus = 0.0;   // S1minus ordinate at u = -1/a^2
  double b_isolated = 0.0;        // v_minus * a^3, the ell < 0 solution
  double b_family_lo = 0.0;       // open interval (lo, hi) of the ell = 0
  double b_family_hi = 0.0;       //   convex-concave family
  double line_residual_s0 = 0.0;  // |u - u0| at the located intersections
  double line_residual_s1 = 0.0;
};

// Intersections of the vertical line u = -1/a^2 with S0minus and S1minus for
// m < -1, a < 0, mapped to f''(0) values through b = v a^3 (which flips the
// interval order since a^3 < 0; b_family_hi coincides with b_isolated).
[[nodiscard]] AdmissibleB admissible_b(const ModelParams& p, double a,
                                       const TraceOptions& opt = {});

struct LimitCycle {
  double v_star = 0.0;      // section ordinate of the fixed point
  double period_s = 0.0;    // return time in the trace parameter
  PhaseTrajectory loop;     // one revolution from (-1/6, v_star)
};

// Best-effort Poincare return map search on the section {u = -1/6, v > 1/18}
// for focus-at-A regimes (m > 0 with complex eigenvalues at A). A nullopt
// result is not evidence of nonexistence.
[[nodiscard]] std::optional<LimitCycle> find_limit_cycle(
    const ModelParams& p, const TraceOptions& opt = {});

struct Window {
  double u_min = -0.7;
  double u_max = 0.4;
  double v_min = -0.4;
  double v_max = 0.4;
};

struct PortraitOptions {
  Window window;
  int grid_n = 12;          // lattice density for the flow-segment field
  double seg_span = 0.6;    // s-length of each grid segment
  TraceOptions trace;
};

struct FlowSegment {
  PhasePoint start;
  std::vector<TrajectorySample> points;
};

struct Portrait {
  double m = 0.0;
  Window window;
  std::vector<PhasePoint> p_isocline;
  std::vector<std::vector<PhasePoint>> q_isocline;  // branches split at the pole
  SingularPointInfo at_O;
  SingularPointInfo at_A;
  std::vector<PhaseTrajectory> separatrices;
  std::vector<FlowSegment> grid;
};

// Dataset sufficient to re-render the figure portraits: isoclines, singular
// points, the regime's separatrices, and a lattice of short flow segments.
[[nodiscard]] Portrait portrait(const ModelParams& p,
                                const PortraitOptions& opt = {});

// Separatrices shown in the portrait of the given regime.
[[nodiscard]] std::vector<SeparatrixId> regime_separatrices(const ModelParams& p);

}  // namespace blsim::phase
