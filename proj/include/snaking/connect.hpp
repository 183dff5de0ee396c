#pragma once

#include <optional>

#include "snaking/continuation.hpp"
#include "snaking/ode.hpp"
#include "snaking/periodic.hpp"

namespace snaking {

struct SectionNotReached : std::runtime_error {
    double t_cap;
    explicit SectionNotReached(double cap)
        : std::runtime_error("segment did not reach the section before t = " +
                             std::to_string(cap)),
          t_cap(cap) {}
};
struct NoRoot : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoSectionRoot : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RadiusNotReachable : std::runtime_error {
    double reached;
    RadiusNotReachable(const std::string& what, double r) : std::runtime_error(what), reached(r) {}
};

/// Plane <u - point, normal> = 0 separating E from P.
struct Section {
    Vector3d point = Vector3d::Zero();
    Vector3d normal = Vector3d::UnitZ();
    double offset(const VectorXd& u) const {
        return normal.dot(u.head<3>().matrix() - point);
    }
};

/// Model-specific data the connection stages need beyond the orbit itself.
/// `equilibrium` returns the base copy of E; `lift` shifts it to the copy the
/// stable segment actually targets (covering coordinates).  `section` may be
/// empty, in which case the plane through the midpoint of E_far and the orbit
/// mean, normal along that line, is used.
struct ConnectionSetup {
    std::function<Vector3d(const VectorXd& lam)> equilibrium;
    std::function<Vector3d(const VectorXd& lam)> stable_dir;
    Vector3d lift = Vector3d::Zero();
    std::function<Section(const VectorXd& lam)> section;
};

enum class ConnectionStage { Seeded, MinusGrown, PlusGrown, Glued, OnTorus };

struct ConnectionProblem {
    PeriodicOrbit po;
    FloquetBundle bundle;  // unstable side
    ConnectionSetup setup;
    Section section;

    OrbitSegment u_minus;  // in W^u(P); time_scale = T^-
    OrbitSegment u_plus;   // in W^s(E); time_scale = T^+
    OrbitSegment hat_p;    // second orbit copy, present after the torus stage
    bool has_u_plus = false;
    bool has_hat = false;

    double delta_start = -1e-4;
    double eps_end = 1e-6;
    Vector3d gap_direction = Vector3d::UnitX();
    double eta = 0.0;
    double torus_radius = 0.0;
    ConnectionStage stage = ConnectionStage::Seeded;
};

struct ConnectionOptions {
    double t_minus_cap = 500.0;
    double t_plus_cap = 500.0;
    int n_minus = 240;
    int n_plus = 60;
    int degree = 4;
    double gap_tol = 1e-9;        // "already connected" threshold on the gap norm
    double delta_decades = 1.15;  // close_gap walk range, in multiplier factors of delta
    int max_gap_roots = 4;
    int max_section_roots = 8;    // eta_1 roots collected before picking the nearest
    NewtonOptions newton;
    StepOptions step;
};

ConnectionProblem make_connection_problem(PeriodicOrbit po, FloquetBundle bundle,
                                          ConnectionSetup setup,
                                          const ConnectionOptions& opts = {});

/// Run 1: grow u^- from the unstable fiber until it reaches the section,
/// continuing (T^-, eta^-) from T^- = 0 and landing exactly on eta^- = 0.
ConnectionProblem grow_unstable_segment(ConnectionProblem cp, const ConnectionOptions& opts = {});

/// Run 2: grow u^+ backward from E_far + eps * v_s until u^+(0) lies in the
/// section.  eps stays frozen here.
ConnectionProblem grow_stable_segment(ConnectionProblem cp, const ConnectionOptions& opts = {});

/// Run 3: close the Lin gap u^+(0) - u^-(1) = eta z along the branch with
/// (T^-, T^+, delta, eps) free, collecting every root of eta within the walk
/// range.  Expect two roots strictly between the t_b folds.
std::vector<ConnectionProblem> close_gap(const ConnectionProblem& cp,
                                         const ConnectionOptions& opts = {});

/// Runs 4 and 5: activate the second orbit copy, slide the glued point into
/// the Poincare section of hat_u_P(0) (eta_1 = 0, nearest root by distance),
/// then continue the distance eta_2 to the requested torus radius.
ConnectionProblem torus_intersection(ConnectionProblem cp, double radius = 0.1,
                                     const ConnectionOptions& opts = {});

/// Smooth curve s -> lambda in R^2 tracing the scanned EtoP locus.
struct CbParametrization {
    std::function<Eigen::Vector2d(double s)> eval;
};

struct EtopRoot {
    double lam1 = 0.0;
    double lam2 = 0.0;
    double slope = 0.0;  // d(test)/d(lam1) at the root, finite differences
};

/// Monotone cubic (Fritsch-Carlson) through the locus, s in [0,1] spanning the
/// scanned lam2 range.
CbParametrization make_cb_parametrization(const std::vector<EtopRoot>& locus);

struct TorusObservation {
    Vector3d base;  // hat_u_P(0)
    Vector3d point; // u^-(1), on the torus
    Vector3d v_stable, v_unstable, flow;
    Eigen::Vector2d lam;
    double s = 0.0;
};

struct GammaSample {
    double phi = 0.0;
    Eigen::Vector2d lam;
    Vector3d point;
    Vector3d base;
    double s = 0.0;
};

struct GammaCurve {
    std::vector<GammaSample> samples;
    double torus_radius = 0.0;
    std::vector<BranchEvent> folds;  // s-limit points (t_b crossings)
    bool closed = false;
};

/// Angles of the observations in their (stable, unstable) frames after
/// sequential sign alignment, unwrapped along the branch and shifted so the
/// sample of minimal lambda_2 sits at phi = 0.  Validates the torus-distance
/// and continuity invariants.
GammaCurve assemble_gamma(std::vector<TorusObservation> obs, double radius);

/// Step 3: continue the full five-segment stack in s along lambda(s), one
/// closed fold-to-fold loop covering both PtoE incarnations.
GammaCurve continue_gamma(const ConnectionProblem& cp, const CbParametrization& cb,
                          double s_start = 0.5, const ConnectionOptions& opts = {});

struct GammaShape {
    bool single_valued = false;
    int n_minima = 0;
    int n_maxima = 0;
    double second_diff_at_min = 0.0;
    double second_diff_at_max = 0.0;
    double phi_span = 0.0;
};

/// Circular shape analysis of lambda_2 over the angle (graph property, extrema
/// count, second differences at the critical points).
GammaShape gamma_shape(const GammaCurve& curve);

/// Stable/unstable eigenvectors and flow direction at orbit point tau, from
/// the monodromy of the variational flow started there.
struct OrbitFrame {
    Vector3d v_stable, v_unstable, flow;
    double mult_stable = 0.0, mult_unstable = 0.0;
};
OrbitFrame orbit_frame_at(const VectorFieldSpec& field, const VectorXd& lam,
                          const OrbitSegment& orbit, const Identification& ident, double tau,
                          double tol = 1e-11);

// --- generic parameter-root walking (used by close_gap and the torus stage) --

struct ParamRootWalk {
    std::string primary;      // continuation parameter
    std::string watch;        // parameter whose roots are collected; empty = primary
    double root_value = 0.0;
    int max_roots = 4;
    bool both_directions = true;
    StepOptions step;
    // optional walk guard; the walk in one direction stops when it returns true
    std::function<bool(const BvpProblem&)> stop;
};

/// Continue the problem in walk.primary from its current solved state,
/// re-solving with the watched parameter frozen at root_value at every sign
/// change.  Returns the solved root states ordered by discovery.  Throws NoRoot
/// when no crossing lies within the walk range.
std::vector<BvpProblem::State> collect_param_roots(BvpProblem& prob, const ParamRootWalk& walk);

// --- EtoP scan (c_b locus) ---------------------------------------------------

struct EtopScanSetup {
    VectorFieldSpec field;
    std::function<Vector3d(const VectorXd& lam)> equilibrium;
    std::function<Vector3d(const VectorXd& lam)> unstable_dir;
    std::function<OrbitSegment(const VectorXd& lam)> orbit_guess;
    Identification ident;
    double zeta = 1e-6;   // offset along the unstable direction of E
    double t_max = 400.0;
    double r_cap = 10.0;  // stop the flowout when |(x,y)| exceeds this
    double approach_window = 2.0;
    double tol_lam1 = 1e-10;
    PeriodicOptions periodic;
};

struct EtopBox {
    double lam1_lo = 0.0, lam1_hi = 0.0;
    double lam2_lo = 0.0, lam2_hi = 0.0;
    int n_slices = 5;
};

/// Signed distance between the W^u(E) flowout and W^s(P): the unstable-frame
/// coefficient of the deviation at the closest approach to the orbit.
double etop_test_function(const EtopScanSetup& setup, const VectorXd& lam);

/// Root of the test function in lam1 at fixed lam2.  Throws NoRoot when the
/// bracket has no sign change.
EtopRoot etop_slice_root(const EtopScanSetup& setup, double lam2, double lam1_lo,
                         double lam1_hi);

/// Scan lam2 slices (concurrently, SNAKE_THREADS workers); slices without a
/// root are skipped, so an empty box yields an empty locus.
std::vector<EtopRoot> etop_scan(const EtopScanSetup& setup, const EtopBox& box);

// --- laser front ends --------------------------------------------------------

/// Periodic orbit of the laser model from the rotationally symmetric circle
/// guess (saddle branch).  The orbit does not wind the angle coordinate.
PeriodicOrbit laser_periodic_orbit(const VectorXd& lam, const PeriodicOptions& opts = {});

/// Analytic equilibrium/eigenvector hooks and the covering lift (0,0,2*pi).
ConnectionSetup laser_connection_setup();

EtopScanSetup laser_etop_setup();

}  // namespace snaking
