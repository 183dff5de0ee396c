#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace snaking {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// A smooth vector field u' = f(u, p) with optional analytic Jacobians.
/// When jacobian_state / jacobian_params are empty, callers fall back to
/// central finite differences (fd_jacobian_*, step 1e-6).
struct VectorFieldSpec {
    int dimension = 0;
    std::vector<std::string> parameter_names;
    std::function<VectorXd(const VectorXd&, const VectorXd&)> evaluate;
    std::function<MatrixXd(const VectorXd&, const VectorXd&)> jacobian_state;
    std::function<MatrixXd(const VectorXd&, const VectorXd&)> jacobian_params;
    // coordinate index -> period, for angle coordinates; everything else lives on R
    std::map<int, double> periodic_coordinates;

    MatrixXd jac_state(const VectorXd& u, const VectorXd& p) const;
    MatrixXd jac_params(const VectorXd& u, const VectorXd& p) const;
};

MatrixXd fd_jacobian_state(const VectorFieldSpec& f, const VectorXd& u, const VectorXd& p);
MatrixXd fd_jacobian_params(const VectorFieldSpec& f, const VectorXd& u, const VectorXd& p);

/// Local normal-form chart near a hyperbolic periodic orbit: v = (v^c, v^s, v^u),
/// valid for |v^s|, |v^u| <= delta.  The A_* couplings must vanish at v^s=v^u=0.
struct FenichelParams {
    double alpha_s = -1.0;  // < 0
    double alpha_u = 1.0;   // > 0
    double delta = 0.5;     // chart half-width and section offset
    using Coupling = std::function<double(const Vector3d& v, double l1, double l2)>;
    Coupling A_c, A_s, A_u;  // optional; absent means exactly linear in (v^s,v^u)
};

// model builders ------------------------------------------------------------

// 3-d laser model, parameters p = (nu1, nu2).  Stored with signs pre-flipped
// so that the equilibrium E = (0,0,phi_E) has a 2-d stable eigenplane.
VectorFieldSpec make_laser();

// normal-form chart as a standalone synthetic system, parameters p = (l1, l2)
VectorFieldSpec make_fenichel(const FenichelParams& fp);

// 4*pi covering chart for the negative-multiplier case, parameters p = (l1, l2).
// F_s, F_u are optional couplings which must be equivariant under the deck map.
VectorFieldSpec make_floquet_negative(const FenichelParams& fp,
                                      const FenichelParams::Coupling& F_s = {},
                                      const FenichelParams::Coupling& F_u = {});

// deck transformation of the covering chart: (v^c+2pi, -v^s, -v^u)
Vector3d floquet_identification(const Vector3d& v);

// planar Hopf normal form with an attached -z axis; unit circle cycle of
// period 2*pi, nontrivial multipliers e^{-4pi} and e^{-2pi}.  No parameters.
VectorFieldSpec make_hopf_test();

/// Build a model by name ("laser", "fenichel", "floquet_neg", "hopf_test")
/// from a flat key-value table (alpha_s, alpha_u, delta where applicable).
VectorFieldSpec make_model(const std::string& name,
                           const std::map<std::string, double>& opts = {});

}  // namespace snaking
