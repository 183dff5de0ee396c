#pragma once

#include <Eigen/Eigenvalues>

#include "snaking/collocation.hpp"
#include "snaking/ode.hpp"

namespace snaking {

struct DegenerateOrbit : std::runtime_error {
    double period;
    explicit DegenerateOrbit(double T)
        : std::runtime_error("orbit period " + std::to_string(T) + " below the minimum"),
          period(T) {}
};
struct TrivialMultiplierMissing : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct WrongMultiplierBranch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Affine endpoint identification u(1) = R u(0) + b.  Identity for ordinary
/// periodic orbits; for cycles living in a quotient chart (covering space)
/// R carries the deck transformation's linear part.
struct Identification {
    MatrixXd R;
    VectorXd b;
    bool trivial() const { return R.size() == 0; }
    static Identification identity() { return {}; }
};

struct PeriodicOrbit {
    VectorFieldSpec field;
    VectorXd lam;            // model parameters, fixed
    OrbitSegment segment;    // solved orbit; period = time_scale
    OrbitSegment reference;  // phase-condition anchor
    Identification ident;    // endpoint identification (empty = periodic)
};

struct FloquetBundle {
    OrbitSegment bundle_segment;  // u_F on [0,1], |u_F(0)| = 1
    double multiplier = 0.0;
};

enum class BundleSide { Stable, Unstable };

struct PeriodicOptions {
    int n_intervals = 50;
    int degree = 4;
    double integrate_tol = 1e-11;  // seeding and monodromy
    double transient = 30.0;       // settle time before the return search
    double t_return_max = 100.0;
    double min_period = 1e-3;
    NewtonOptions newton;
};

/// Integrate a transient from `seed`, detect an approximate Poincare return,
/// and close the loop with the collocation BVP (periodicity + integral phase
/// condition against the seed loop).
PeriodicOrbit find_periodic_orbit(const VectorFieldSpec& field, const VectorXd& lam,
                                  const VectorXd& seed, const PeriodicOptions& opts = {});

/// Periodic BVP from an explicit loop guess and phase reference; `ident`
/// selects ordinary periodicity or a quotient identification.
PeriodicOrbit solve_periodic(const VectorFieldSpec& field, const VectorXd& lam,
                             const OrbitSegment& guess, const OrbitSegment& reference,
                             const PeriodicOptions& opts = {}, SolveReport* report = nullptr,
                             const Identification& ident = {});

/// Floquet multipliers: eigenvalues of the fundamental matrix over one period
/// (variational equation integrated alongside the orbit), sorted by modulus.
/// One multiplier must lie within 1e-4 of 1.
Eigen::VectorXcd monodromy_multipliers(const PeriodicOrbit& po, double tol = 1e-11);

/// Floquet bundle of the requested side: solves the orbit and bundle jointly,
/// u_F' = T Df u_F - ln|mu| u_F with sgn(mu) R u_F(0) = u_F(1), |u_F(0)| = 1.
/// The stable side runs the same BVP on the time-reversed field.
FloquetBundle solve_floquet_bundle(const PeriodicOrbit& po, BundleSide side,
                                   const PeriodicOptions& opts = {});

}  // namespace snaking
