#include "snaking/ode.hpp"

#include <algorithm>
#include <cmath>

namespace snaking {

IntegrationBlowup::IntegrationBlowup(double t)
    : std::runtime_error("step size underflow at t = " + std::to_string(t)), t_fail(t) {}

namespace {

// Dormand-Prince 5(4) tableau
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
// error weights b5 - b4
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
// dense-output weights
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

}  // namespace

VectorXd DenseTrajectory::eval(double t) const {
    t = std::clamp(t, t_.front(), t_.back());
    int lo = 0, hi = static_cast<int>(t_.size()) - 1;
    while (hi - lo > 1) {
        int mid = (lo + hi) / 2;
        (t_[mid] <= t ? lo : hi) = mid;
    }
    double h = t_[lo + 1] - t_[lo];
    double th = h > 0.0 ? (t - t_[lo]) / h : 0.0;
    const auto& r = coef_[lo];
    return r[0] + th * (r[1] + (1.0 - th) * (r[2] + th * (r[3] + (1.0 - th) * r[4])));
}

DenseTrajectory integrate_dense(const OdeRhs& rhs, const VectorXd& u0, double t_span,
                                double tol) {
    if (t_span < 0.0) throw std::invalid_argument("t_span must be nonnegative");
    DenseTrajectory traj;
    traj.t_.push_back(0.0);
    if (t_span == 0.0) {
        traj.t_.push_back(0.0);
        traj.coef_.push_back({u0, VectorXd::Zero(u0.size()), VectorXd::Zero(u0.size()),
                              VectorXd::Zero(u0.size()), VectorXd::Zero(u0.size())});
        return traj;
    }

    const double atol = tol, rtol = tol;
    VectorXd y = u0;
    VectorXd k1 = rhs(y);
    double t = 0.0;
    double h = std::min(t_span, 1e-2 / std::max(1.0, k1.norm() / (1.0 + y.norm())));

    while (t < t_span) {
        h = std::min(h, t_span - t);
        if (h < 1e-14 * std::max(1.0, std::abs(t))) throw IntegrationBlowup(t);

        VectorXd k2 = rhs(y + h * (a21 * k1));
        VectorXd k3 = rhs(y + h * (a31 * k1 + a32 * k2));
        VectorXd k4 = rhs(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
        VectorXd k5 = rhs(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        VectorXd k6 = rhs(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        VectorXd y1 = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        VectorXd k7 = rhs(y1);

        VectorXd err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double err = 0.0;
        for (int i = 0; i < y.size(); ++i) {
            double sc = atol + rtol * std::max(std::abs(y(i)), std::abs(y1(i)));
            err += std::pow(err_vec(i) / sc, 2);
        }
        err = std::sqrt(err / y.size());
        if (!std::isfinite(err)) err = 1e10;

        if (err <= 1.0) {
            VectorXd dy = y1 - y;
            VectorXd r2 = h * k1 - dy;
            VectorXd r3 = dy - h * k7 - r2;
            VectorXd r4 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
            traj.coef_.push_back({y, dy, r2, r3, r4});
            t += h;
            traj.t_.push_back(t);
            y = y1;
            k1 = k7;  // FSAL
        }
        double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
        h *= std::clamp(fac, 0.2, 5.0);
    }
    return traj;
}

OrbitSegment integrate(const VectorFieldSpec& field, const VectorXd& u0, const VectorXd& lam,
                       double t_span, double tol, int n_out, int degree) {
    OdeRhs rhs = [&](const VectorXd& u) { return field.evaluate(u, lam); };
    DenseTrajectory traj = integrate_dense(rhs, u0, t_span, tol);
    if (n_out <= 0) n_out = std::clamp(traj.n_steps(), 10, 400);
    auto u_of_tau = [&](double tau) { return traj.eval(tau * t_span); };
    return OrbitSegment::from_function(uniform_mesh(n_out), degree, u_of_tau, t_span);
}

std::optional<EventHit> integrate_until(const OdeRhs& rhs, const VectorXd& u0, double t_max,
                                        double tol,
                                        const std::function<double(const VectorXd&)>& event) {
    DenseTrajectory traj = integrate_dense(rhs, u0, t_max, tol);
    double g_prev = event(traj.eval(0.0));
    double t_prev = 0.0;
    // subsample the dense output; 8 probes per accepted step catches crossings
    // that reverse within a step
    const int total = std::max(64, traj.n_steps() * 8);
    for (int i = 1; i <= total; ++i) {
        double t = t_max * i / total;
        double g = event(traj.eval(t));
        if (g_prev == 0.0) return EventHit{t_prev, traj.eval(t_prev)};
        if (g_prev * g < 0.0) {
            double lo = t_prev, hi = t;
            double glo = g_prev;
            for (int it = 0; it < 200; ++it) {
                double mid = 0.5 * (lo + hi);
                double gm = event(traj.eval(mid));
                if (glo * gm <= 0.0)
                    hi = mid;
                else {
                    lo = mid;
                    glo = gm;
                }
                if (hi - lo < 1e-13 * std::max(1.0, hi)) break;
            }
            double t_hit = 0.5 * (lo + hi);
            return EventHit{t_hit, traj.eval(t_hit)};
        }
        g_prev = g;
        t_prev = t;
    }
    return std::nullopt;
}

}  // namespace snaking
