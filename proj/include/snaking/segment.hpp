#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace snaking {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Gauss-Legendre collocation basis of degree m on the reference interval [0,1].
/// Interpolation nodes are {0, c_1..c_m} with c_i the Gauss points, so each
/// mesh interval carries a degree-m polynomial through the left breakpoint and
/// the m collocation values.
struct CollocationBasis {
    int m = 0;
    VectorXd c;       // Gauss points in (0,1), size m
    VectorXd w_quad;  // Gauss quadrature weights on [0,1], size m
    VectorXd nodes;   // {0, c_1..c_m}, size m+1
    VectorXd bary;    // barycentric weights for `nodes`
    MatrixXd D;       // D(i,k) = l_k'(c_i), m x (m+1)
    MatrixXd Dfull;   // full differentiation matrix at `nodes`, (m+1) x (m+1)
    VectorXd E;       // E(k) = l_k(1)

    VectorXd lagrange_at(double x) const;        // basis values, size m+1
    VectorXd lagrange_deriv_at(double x) const;  // basis derivatives, size m+1
};

/// Shared immutable basis for a given degree (2 <= m <= 10).
const CollocationBasis& collocation_basis(int m);

/// Gauss-Legendre nodes/weights on (0,1).
void gauss_legendre_01(int m, VectorXd& nodes, VectorXd& weights);

/// Piecewise-polynomial orbit segment on the scaled time interval [0,1].
/// Column layout of `values`: [u_0, U_{0,1..m}, u_1, U_{1,1..m}, ..., u_N]
/// where u_j sits at breakpoint tau_j and U_{j,i} at tau_j + c_i h_j.
struct OrbitSegment {
    std::vector<double> mesh;  // 0 = tau_0 < ... < tau_N = 1
    int degree = 4;
    MatrixXd values;       // dimension x (N*(m+1)+1)
    double time_scale = 1.0;  // physical duration T

    int dimension() const { return static_cast<int>(values.rows()); }
    int n_intervals() const { return static_cast<int>(mesh.size()) - 1; }
    int n_columns() const { return n_intervals() * (degree + 1) + 1; }

    int col_break(int j) const { return j * (degree + 1); }        // u_j
    int col_stage(int j, int i) const { return j * (degree + 1) + 1 + i; }  // U_{j,i}

    /// column index of the collocation site (j,i) and its tau location
    double tau_stage(int j, int i) const;

    VectorXd eval(double tau) const;             // interpolant value
    VectorXd eval_derivative(double tau) const;  // d/dtau of the interpolant

    /// segment with identical geometry sampled from a callable u(tau)
    static OrbitSegment from_function(const std::vector<double>& mesh, int degree,
                                      const std::function<VectorXd(double)>& u,
                                      double time_scale);
    static OrbitSegment constant(int n_intervals, int degree, const VectorXd& u0,
                                 double time_scale);
};

/// Interpolate onto a new mesh using the collocation polynomials.
OrbitSegment interpolate_to_mesh(const OrbitSegment& seg, const std::vector<double>& new_mesh);

/// Equidistribute a local error monitor and reinterpolate.
OrbitSegment remesh(const OrbitSegment& seg, int n_intervals);

std::vector<double> uniform_mesh(int n_intervals);

}  // namespace snaking
