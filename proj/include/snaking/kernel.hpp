#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snaking/models.hpp"

namespace snaking {

// Reduced description of the flow near an EtoP cycle: everything the coupling
// solvers need is a handful of scalar maps of (phi, lambda).  lambda is always
// packed as (lambda1, lambda2).

struct ShootingFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractionViolated : std::runtime_error {
    double lipschitz;  // observed update ratio when the iteration was abandoned
    ContractionViolated(const std::string& what, double lip)
        : std::runtime_error(what), lipschitz(lip) {}
};

/// z parametrizes the connection set: g(phi, l1, z(phi, l1)) = 0, 2pi-periodic
/// in phi.  h_c / h_u locate the entry point of the singular connection in the
/// section, alpha_s < 0 < alpha_u are the linearization rates, a_s / a_u the
/// transition amplitudes (delta exactly in the linear chart).
struct KernelModel {
    std::function<double(double phi, double lambda1)> z;
    std::function<double(double phi, const Eigen::Vector2d& lam)> g;
    std::function<double(const Eigen::Vector2d& lam)> h_c;
    std::function<double(const Eigen::Vector2d& lam)> h_u;  // h_u(0, l2) = 0
    std::function<double(const Eigen::Vector2d& lam)> alpha_s;
    std::function<double(const Eigen::Vector2d& lam)> alpha_u;
    std::function<double(const Eigen::Vector2d& lam)> a_s;
    std::function<double(const Eigen::Vector2d& lam)> a_u;
    double delta = 0.1;                        // section offset of the chart
    double q = 0.0;                            // declared phase-map contraction bound, < 1
    double b = 0.0;                            // declared lower bound on |dg/dl2| (0 = unstated)
    Eigen::Vector2d lambda2_range{-0.5, 0.5};  // admissible window for lambda2
};

/// Synthetic model with every solver quantity in closed form:
/// z = 0.5 sin(phi), g = l2 - z, h_c = 0, h_u = l1, rates -1/+1, delta = 0.1.
KernelModel sine_kernel_model();

/// Variant where the connection set is a closed curve (phi_hat, lambda2_hat)(r)
/// instead of a graph over phi; g cuts it out as a level set, so dg/dl2 may
/// vanish and only the normal derivative along the curve is assumed nonzero.
struct ClosedGammaModel {
    std::function<double(double r, double lambda1)> phi_hat;      // 2pi-periodic in r
    std::function<double(double r, double lambda1)> lambda2_hat;  // 2pi-periodic in r
    std::function<double(double phi, const Eigen::Vector2d& lam)> g;
    std::function<double(const Eigen::Vector2d& lam)> h_c;
    std::function<double(const Eigen::Vector2d& lam)> h_u;
    std::function<double(const Eigen::Vector2d& lam)> alpha_s;
    std::function<double(const Eigen::Vector2d& lam)> alpha_u;
    std::function<double(const Eigen::Vector2d& lam)> a_s;
    std::function<double(const Eigen::Vector2d& lam)> a_u;
    double delta = 0.1;
};

/// Circle of radius 0.3 around (phi, lambda2) = (1, 0), cut out by the lifted
/// quadratic g = (phi-1)^2 + lambda2^2 - 0.09; h_c = 0, h_u = l1, rates -1/+1.
ClosedGammaModel circle_gamma_model();

// transition map through the orbit neighborhood -------------------------------

struct ShilnikovEndpoints {
    Eigen::Vector3d v0;     // (v^c, v^s, v^u) at time 0
    Eigen::Vector3d v_end;  // at time 2L
};

/// Entry/exit problem in the linear chart, closed form: the solution with
/// v^c(0) = phi, v^s(0) = chi_s * delta, v^u(2L) = chi_u * delta has
/// v^u(0) = chi_u delta e^{-2 alpha_u L} and v^s(2L) = chi_s delta e^{2 alpha_s L}.
ShilnikovEndpoints shilnikov_exact(double phi, const Eigen::Vector2d& lam, double L,
                                   double chi_s, double chi_u, const FenichelParams& p);

/// Same two-point problem with couplings present, solved by shooting in
/// v^u(0).  Throws ShootingFailure when the iteration stalls or the
/// trajectory leaves the chart.
ShilnikovEndpoints shilnikov_numeric(double phi, const Eigen::Vector2d& lam, double L,
                                     double chi_s, double chi_u, const FenichelParams& p,
                                     double tol = 1e-12);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Ordinary least squares line through (x_i, y_i).
RateFit least_squares_line(const std::vector<double>& x, const std::vector<double>& y);

/// Shooting over an L grid.  decay fits log|v^u(0)| against L (slope is
/// -2 alpha_u to leading order).  a_inf is the transition amplitude measured
/// at the largest L; remainder fits the log-deviation of v^u(0) e^{2 alpha_u L}
/// from a_inf over the earlier grid points, so its slope is the remainder rate.
struct ShilnikovFit {
    std::vector<double> L;
    std::vector<double> vu0;
    RateFit decay;
    RateFit remainder;
    double a_inf = 0.0;
};

ShilnikovFit shilnikov_fit(double phi, const Eigen::Vector2d& lam,
                           const std::vector<double>& L_grid, double chi_s, double chi_u,
                           const FenichelParams& p, double tol = 1e-12);

// snaking ---------------------------------------------------------------------

/// Fixed point of phi = h_c(0, z(phi + 2L, 0)) by direct iteration from 0,
/// reduced to [0, 2pi).  Throws ContractionViolated when the observed update
/// ratio reaches 1.
double solve_phi0(double L, const KernelModel& m);

struct SnakingPoint {
    double L = 0.0;
    double phi = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
};

struct SnakeOptions {
    double chi_s = 1.0;
    double chi_u = 1.0;
    double tol = 1e-12;  // residual target of the coupling-system Newton
    int max_iter = 50;
    // Shoot through the chart instead of using the closed form.  The chart's
    // couplings come from `chart`; its rates and width are taken from the
    // model at the current lambda, so set only A_c/A_s/A_u here.
    bool numeric_transition = false;
    FenichelParams chart;
    double shoot_tol = 1e-12;
    bool match_folds = true;     // requires declared q < 1/2
    double match_window = 1e-2;  // |fold - nearest phase zero| allowed when matching
};

/// Newton solve of the three coupling equations at fixed transit time L:
///   phi = h_c(lam)
///   g(v^c(2L), lam) = (a_s/delta) v^s(2L)
///   h_u(lam) = (a_u/delta) v^u(0)
/// with the transition endpoints supplied by shilnikov_exact or _numeric.
/// Seeded from (phi0*, 0, z(phi0* + 2L, 0)); throws NonConvergence.
SnakingPoint solve_snaking_point(double L, const KernelModel& m, const SnakeOptions& o = {});

enum class BranchTag { Single, Plus, Minus };

struct SnakingFold {
    double L = 0.0;          // extremum of lambda2 along the curve
    double lambda2 = 0.0;
    double curvature = 0.0;  // quadratic coefficient of the local fit
    double L_phase = 0.0;    // nearest zero of d/dphi z along the phase map
    bool matched = false;    // |L - L_phase| within the match window
};

struct SnakingCurve {
    std::vector<SnakingPoint> points;  // L strictly increasing
    BranchTag branch_tag = BranchTag::Single;
    std::vector<SnakingFold> folds;
};

/// Samples solve_snaking_point over [L_min, L_max], locates extrema of
/// lambda2(L) by successive 3-point quadratic fits, and matches each against
/// the zeros of d/dphi z evaluated along Phi(L) = phi0*(L) + 2L.
SnakingCurve snaking_curve(double L_min, double L_max, int n_samples, const KernelModel& m,
                           const SnakeOptions& o = {});

struct BranchPair {
    SnakingPoint plus;
    SnakingPoint minus;
};

/// Orientation-reversing variant: the second branch solves the coupling
/// system with (chi_s, chi_u) = (-1, 1), h_c shifted by 2pi and h_u negated,
/// so lambda1 changes sign between the branches.
BranchPair snaking_negative(double L, const KernelModel& m, const SnakeOptions& o = {});

struct CurvePair {
    SnakingCurve plus;
    SnakingCurve minus;
};

CurvePair snaking_negative_curves(double L_min, double L_max, int n_samples,
                                  const KernelModel& m, const SnakeOptions& o = {});

// isolas ------------------------------------------------------------------------

struct IsolaPoint {
    double r = 0.0;        // position along the closed connection curve
    double phi = 0.0;      // exit angle
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double l_tilde = 0.0;  // correction to the transit time l0(r) + k pi
    // displacement along the curve normal; lambda2 = lambda2_hat + s * n_lam,
    // kept separately because it underflows the rounding of lambda2 itself
    double s = 0.0;
};

struct IsolaCurve {
    int k = 0;  // winding count of the transit
    std::vector<IsolaPoint> points;  // closed: first and last agree to solver tolerance
};

struct IsolaOptions {
    int n_r = 128;     // samples along the curve parameter (plus the closing repeat)
    double chi_s = 1.0;
    double chi_u = 1.0;
    double tol = 1e-12;
    int max_outer = 60;
    int max_inner = 40;
};

/// One closed solution curve per winding count k in [k_min, k_max].  The
/// transit-time correction is iterated as a fixed point with the in/out
/// conditions solved exactly at each stage; small k breaks the contraction
/// and raises ContractionViolated.
std::vector<IsolaCurve> isola_family(int k_min, int k_max, const ClosedGammaModel& m,
                                     const IsolaOptions& o = {});

// hypothesis scan -----------------------------------------------------------------

struct HypothesisEntry {
    std::string name;
    bool ok = false;
    double value = 0.0;   // headline observed quantity
    double margin = 0.0;  // room to the bound; negative means violated
    std::string detail;
};

struct HypothesisReport {
    std::vector<HypothesisEntry> entries;
    // (phi, d2z/dphi2) at the zeros of dz/dphi(., 0) in [0, 2pi)
    std::vector<std::pair<double, double>> z_critical;

    bool all_ok() const;
    const HypothesisEntry* find(const std::string& name) const;
};

struct HypothesisOptions {
    int n_phi = 720;
    int n_lam = 11;
    double lambda1_box = 0.05;  // lambda1 sampled in [-box, box]
};

/// Samples the standing assumptions on a grid and reports margins; purely
/// diagnostic, violations become entries with ok = false.
HypothesisReport check_hypotheses(const KernelModel& m, const HypothesisOptions& o = {});
HypothesisReport check_hypotheses(const ClosedGammaModel& m, const HypothesisOptions& o = {});

}  // namespace snaking
