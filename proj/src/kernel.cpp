#include "snaking/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "snaking/collocation.hpp"
#include "snaking/ode.hpp"

namespace snaking {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double reduce_angle(double phi) {
    double r = std::fmod(phi, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    return r;
}

}  // namespace

KernelModel sine_kernel_model() {
    KernelModel m;
    m.z = [](double phi, double) { return 0.5 * std::sin(phi); };
    m.g = [](double phi, const Vector2d& lam) { return lam(1) - 0.5 * std::sin(phi); };
    m.h_c = [](const Vector2d&) { return 0.0; };
    m.h_u = [](const Vector2d& lam) { return lam(0); };
    m.alpha_s = [](const Vector2d&) { return -1.0; };
    m.alpha_u = [](const Vector2d&) { return 1.0; };
    m.a_s = [](const Vector2d&) { return 0.1; };
    m.a_u = [](const Vector2d&) { return 0.1; };
    m.delta = 0.1;
    m.q = 0.0;
    m.b = 1.0;
    m.lambda2_range = Vector2d(-0.5, 0.5);
    return m;
}

ClosedGammaModel circle_gamma_model() {
    ClosedGammaModel m;
    m.phi_hat = [](double r, double) { return 1.0 + 0.3 * std::cos(r); };
    m.lambda2_hat = [](double r, double) { return 0.3 * std::sin(r); };
    m.g = [](double phi, const Vector2d& lam) {
        return (phi - 1.0) * (phi - 1.0) + lam(1) * lam(1) - 0.09;
    };
    m.h_c = [](const Vector2d&) { return 0.0; };
    m.h_u = [](const Vector2d& lam) { return lam(0); };
    m.alpha_s = [](const Vector2d&) { return -1.0; };
    m.alpha_u = [](const Vector2d&) { return 1.0; };
    m.a_s = [](const Vector2d&) { return 0.1; };
    m.a_u = [](const Vector2d&) { return 0.1; };
    m.delta = 0.1;
    return m;
}

// transition map ----------------------------------------------------------------

ShilnikovEndpoints shilnikov_exact(double phi, const Vector2d&, double L, double chi_s,
                                   double chi_u, const FenichelParams& p) {
    ShilnikovEndpoints ep;
    ep.v0 = Vector3d(phi, chi_s * p.delta, chi_u * p.delta * std::exp(-2.0 * p.alpha_u * L));
    ep.v_end = Vector3d(phi + 2.0 * L, chi_s * p.delta * std::exp(2.0 * p.alpha_s * L),
                        chi_u * p.delta);
    return ep;
}

ShilnikovEndpoints shilnikov_numeric(double phi, const Vector2d& lam, double L, double chi_s,
                                     double chi_u, const FenichelParams& p, double tol) {
    // integrate in a chart wider than the section: early shots overshoot the
    // exit value by the size of the coupling terms before the correction
    // settles, and integrator stages probe slightly past accepted states
    FenichelParams widened = p;
    widened.delta = p.delta * 1.1;
    const VectorFieldSpec field = make_fenichel(widened);
    Eigen::VectorXd pars(2);
    pars << lam(0), lam(1);
    const OdeRhs rhs = [&field, &pars](const VectorXd& u) { return field.evaluate(u, pars); };

    const double T = 2.0 * L;
    const auto shoot = [&](double vu0) {
        Eigen::VectorXd u0(3);
        u0 << phi, chi_s * p.delta, vu0;
        try {
            const DenseTrajectory traj = integrate_dense(rhs, u0, T, tol);
            const Eigen::VectorXd ue = traj.eval(T);
            ShilnikovEndpoints ep;
            ep.v0 = Vector3d(u0(0), u0(1), u0(2));
            ep.v_end = Vector3d(ue(0), ue(1), ue(2));
            return ep;
        } catch (const std::domain_error& e) {
            throw ShootingFailure(std::string("trajectory left the chart: ") + e.what());
        } catch (const IntegrationBlowup&) {
            throw ShootingFailure("transition integration blew up");
        }
    };

    const double target = chi_u * p.delta;
    if (target == 0.0) return shoot(0.0);

    // multiplicative correction: the exit value scales essentially linearly
    // with the entry value, so this contracts in a few rounds and keeps the
    // relative accuracy of an exponentially small entry amplitude
    double s = target * std::exp(-2.0 * p.alpha_u * L);
    for (int it = 0; it < 30; ++it) {
        const ShilnikovEndpoints ep = shoot(s);
        const double vu_end = ep.v_end(2);
        if (!std::isfinite(vu_end) || vu_end * target <= 0.0)
            throw ShootingFailure("shot missed the exit section");
        if (std::abs(vu_end - target) <= tol * std::abs(target)) return ep;
        s *= target / vu_end;
    }
    throw ShootingFailure("shooting did not converge in 30 corrections");
}

RateFit least_squares_line(const std::vector<double>& x, const std::vector<double>& y) {
    RateFit f;
    const size_t n = x.size();
    if (n < 2 || y.size() != n) return f;
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double det = n * sxx - sx * sx;
    if (det == 0.0) return f;
    f.slope = (n * sxy - sx * sy) / det;
    f.intercept = (sy - f.slope * sx) / n;
    double ss_res = 0.0, ss_tot = 0.0;
    const double ybar = sy / n;
    for (size_t i = 0; i < n; ++i) {
        const double e = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += e * e;
        ss_tot += (y[i] - ybar) * (y[i] - ybar);
    }
    f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

ShilnikovFit shilnikov_fit(double phi, const Vector2d& lam, const std::vector<double>& L_grid,
                           double chi_s, double chi_u, const FenichelParams& p, double tol) {
    if (L_grid.size() < 2) throw std::invalid_argument("shilnikov_fit needs at least two L values");
    ShilnikovFit out;
    out.L = L_grid;
    std::vector<double> logv;
    for (double L : L_grid) {
        const ShilnikovEndpoints ep = shilnikov_numeric(phi, lam, L, chi_s, chi_u, p, tol);
        out.vu0.push_back(std::abs(ep.v0(2)));
        logv.push_back(std::log(out.vu0.back()));
    }
    out.decay = least_squares_line(L_grid, logv);

    const size_t last = L_grid.size() - 1;
    out.a_inf = out.vu0[last] * std::exp(2.0 * p.alpha_u * L_grid[last]);
    // deviation of the measured amplitude from its large-L limit; values at
    // the integrator noise floor (relative drift of the dense integration,
    // around 1e-8 at tol = 1e-12) carry no rate information and are dropped
    std::vector<double> xs, ys;
    for (size_t i = 0; i < last; ++i) {
        const double resid =
            std::abs(out.vu0[i] * std::exp(2.0 * p.alpha_u * L_grid[i]) / out.a_inf - 1.0);
        if (resid > 5e-8) {
            xs.push_back(L_grid[i]);
            ys.push_back(std::log(resid));
        }
    }
    if (xs.size() >= 2) out.remainder = least_squares_line(xs, ys);
    return out;
}

// snaking -------------------------------------------------------------------------

double solve_phi0(double L, const KernelModel& m) {
    const auto map = [&](double phi) { return m.h_c(Vector2d(0.0, m.z(phi + 2.0 * L, 0.0))); };
    double phi = 0.0;
    double prev_step = std::numeric_limits<double>::quiet_NaN();
    double ratio = std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it < 10000; ++it) {
        const double next = map(phi);
        const double step = std::abs(next - phi);
        phi = next;
        if (step <= 1e-12) return reduce_angle(phi);
        if (prev_step == prev_step && prev_step > 1e-9) {
            ratio = step / prev_step;
            if (ratio >= 1.0001)
                throw ContractionViolated(
                    "phase map expands: update grew by factor " + std::to_string(ratio), ratio);
        }
        prev_step = step;
    }
    throw ContractionViolated("phase map did not settle within the iteration cap", ratio);
}

namespace {

struct CouplingEval {
    Vector3d F;
    double t_s = 0.0;  // magnitudes of the two transition targets, which set
    double t_u = 0.0;  // the scale the matching equations must resolve
};

CouplingEval coupling_eval(double L, const KernelModel& m, const SnakeOptions& o,
                           const Vector3d& x) {
    const Vector2d lam(x(1), x(2));
    FenichelParams chart = o.chart;
    chart.alpha_s = m.alpha_s(lam);
    chart.alpha_u = m.alpha_u(lam);
    chart.delta = m.delta;
    const ShilnikovEndpoints ep =
        o.numeric_transition
            ? shilnikov_numeric(x(0), lam, L, o.chi_s, o.chi_u, chart, o.shoot_tol)
            : shilnikov_exact(x(0), lam, L, o.chi_s, o.chi_u, chart);
    CouplingEval ev;
    const double ts = (m.a_s(lam) / m.delta) * ep.v_end(1);
    const double tu = (m.a_u(lam) / m.delta) * ep.v0(2);
    ev.F(0) = x(0) - m.h_c(lam);
    ev.F(1) = m.g(ep.v_end(0), lam) - ts;
    ev.F(2) = m.h_u(lam) - tu;
    ev.t_s = std::abs(ts);
    ev.t_u = std::abs(tu);
    return ev;
}

// The targets are exponentially small in L, so the tolerance is taken
// relative to them: an absolute test would accept the seed unchanged once
// the targets drop below it.  The g equation runs through O(1) quantities
// and keeps a cancellation noise floor; the h_u equation lives entirely at
// the target scale and does not.
bool coupling_converged(const CouplingEval& ev, const Vector3d& x, double tol) {
    return std::abs(ev.F(0)) <= tol * (1.0 + std::abs(x(0))) &&
           std::abs(ev.F(1)) <= std::max(tol * ev.t_s, 1e-14) &&
           std::abs(ev.F(2)) <= std::max(tol * ev.t_u, 1e-290);
}

KernelModel negative_partner(const KernelModel& m) {
    KernelModel mm = m;
    mm.h_c = [f = m.h_c](const Vector2d& lam) { return f(lam) + kTwoPi; };
    mm.h_u = [f = m.h_u](const Vector2d& lam) { return -f(lam); };
    return mm;
}

}  // namespace

SnakingPoint solve_snaking_point(double L, const KernelModel& m, const SnakeOptions& o) {
    const double phi0 = solve_phi0(L, m);
    Vector3d x(phi0, 0.0, m.z(phi0 + 2.0 * L, 0.0));
    CouplingEval ev = coupling_eval(L, m, o, x);
    for (int it = 0; it < o.max_iter; ++it) {
        if (coupling_converged(ev, x, o.tol)) break;
        Matrix3d J;
        for (int j = 0; j < 3; ++j) {
            const double h = 1e-7 * (1.0 + std::abs(x(j)));
            Vector3d xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            J.col(j) = (coupling_eval(L, m, o, xp).F - coupling_eval(L, m, o, xm).F) / (2.0 * h);
        }
        const Vector3d step = J.partialPivLu().solve(-ev.F);
        double damp = 1.0;
        for (int half = 0;; ++half) {
            const Vector3d cand = x + damp * step;
            const CouplingEval evc = coupling_eval(L, m, o, cand);
            if (evc.F.norm() <= ev.F.norm() || half >= 10) {
                x = cand;
                ev = evc;
                break;
            }
            damp *= 0.5;
        }
    }
    if (!coupling_converged(ev, x, o.tol))
        throw NonConvergence("coupling system did not reach the residual target",
                             ev.F.lpNorm<Eigen::Infinity>());
    return {L, x(0), x(1), x(2)};
}

namespace {

// d/dphi z along the composed phase map, used to match folds against the
// critical points selected by the leading-order expansion
double phase_zero_indicator(double L, const KernelModel& m) {
    const double x = solve_phi0(L, m) + 2.0 * L;
    const double h = 1e-6;
    return (m.z(x + h, 0.0) - m.z(x - h, 0.0)) / (2.0 * h);
}

double bisect_phase_zero(double lo, double hi, double flo, const KernelModel& m) {
    for (int it = 0; it < 100 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = phase_zero_indicator(mid, m);
        if (flo * fm <= 0.0)
            hi = mid;
        else {
            lo = mid;
            flo = fm;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace

SnakingCurve snaking_curve(double L_min, double L_max, int n_samples, const KernelModel& m,
                           const SnakeOptions& o) {
    if (n_samples < 3 || !(L_max > L_min))
        throw std::invalid_argument("snaking_curve needs an increasing range and >= 3 samples");
    if (o.match_folds && m.q >= 0.5)
        throw std::domain_error(
            "fold matching requires a declared phase-map contraction bound below 1/2, got q = " +
            std::to_string(m.q));

    SnakingCurve curve;
    for (int i = 0; i < n_samples; ++i) {
        const double L = L_min + (L_max - L_min) * i / (n_samples - 1);
        curve.points.push_back(solve_snaking_point(L, m, o));
    }

    const auto lam2_at = [&](double L) { return solve_snaking_point(L, m, o).lambda2; };
    for (size_t i = 1; i + 1 < curve.points.size(); ++i) {
        const double d0 = curve.points[i].lambda2 - curve.points[i - 1].lambda2;
        const double d1 = curve.points[i + 1].lambda2 - curve.points[i].lambda2;
        if (!(d0 * d1 < 0.0)) continue;

        const double lo = curve.points[i - 1].L, hi = curve.points[i + 1].L;
        // seed the vertex from the three samples around the sign change
        const double L0 = curve.points[i - 1].L, L1 = curve.points[i].L,
                     L2 = curve.points[i + 1].L;
        const double f01 = d0 / (L1 - L0), f12 = d1 / (L2 - L1);
        const double f012 = (f12 - f01) / (L2 - L0);
        double v = f012 != 0.0 ? 0.5 * (L0 + L1) - f01 / (2.0 * f012) : L1;
        v = std::clamp(v, lo, hi);

        // successive quadratic fits on a fixed-width stencil; shrinking the
        // stencil instead would drown the fit in solver noise
        const double h = 1e-4;
        double curvature = 0.0;
        for (int it = 0; it < 30; ++it) {
            const double ym = lam2_at(v - h), y0 = lam2_at(v), yp = lam2_at(v + h);
            const double slope = (yp - ym) / (2.0 * h);
            const double second = (yp - 2.0 * y0 + ym) / (h * h);
            if (second == 0.0) break;
            curvature = 0.5 * second;
            const double vn = std::clamp(v - slope / second, lo, hi);
            const double dv = std::abs(vn - v);
            v = vn;
            if (dv <= 1e-8) break;
        }

        SnakingFold fold;
        fold.L = v;
        fold.lambda2 = lam2_at(v);
        fold.curvature = curvature;
        fold.L_phase = v;
        fold.matched = false;
        if (o.match_folds) {
            // walk outward in match-window steps to bracket the nearest zero
            // of the phase indicator, then bisect
            const double w = o.match_window;
            const double f0 = phase_zero_indicator(v, m);
            std::optional<double> nearest;
            double best_dist = std::numeric_limits<double>::infinity();
            for (double side : {1.0, -1.0}) {
                double a = v, fa = f0;
                for (int j = 1; j <= 50; ++j) {
                    const double b = v + side * j * w;
                    const double fb = phase_zero_indicator(b, m);
                    if (fa * fb <= 0.0) {
                        const double lo_b = std::min(a, b), hi_b = std::max(a, b);
                        const double zero = bisect_phase_zero(
                            lo_b, hi_b, phase_zero_indicator(lo_b, m), m);
                        if (std::abs(zero - v) < best_dist) {
                            best_dist = std::abs(zero - v);
                            nearest = zero;
                        }
                        break;
                    }
                    a = b;
                    fa = fb;
                }
            }
            if (nearest) {
                fold.L_phase = *nearest;
                fold.matched = best_dist <= w;
            }
        }
        curve.folds.push_back(fold);
    }
    return curve;
}

BranchPair snaking_negative(double L, const KernelModel& m, const SnakeOptions& o) {
    SnakeOptions op = o;
    op.chi_s = 1.0;
    op.chi_u = 1.0;
    SnakeOptions om = o;
    om.chi_s = -1.0;
    om.chi_u = 1.0;
    BranchPair bp;
    bp.plus = solve_snaking_point(L, m, op);
    bp.minus = solve_snaking_point(L, negative_partner(m), om);
    return bp;
}

CurvePair snaking_negative_curves(double L_min, double L_max, int n_samples,
                                  const KernelModel& m, const SnakeOptions& o) {
    SnakeOptions op = o;
    op.chi_s = 1.0;
    op.chi_u = 1.0;
    SnakeOptions om = o;
    om.chi_s = -1.0;
    om.chi_u = 1.0;
    CurvePair cp;
    cp.plus = snaking_curve(L_min, L_max, n_samples, m, op);
    cp.plus.branch_tag = BranchTag::Plus;
    cp.minus = snaking_curve(L_min, L_max, n_samples, negative_partner(m), om);
    cp.minus.branch_tag = BranchTag::Minus;
    return cp;
}

// isolas --------------------------------------------------------------------------

namespace {

struct GammaLocal {
    double phi_hat = 0.0;
    double lam2_hat = 0.0;
    double n_phi = 0.0;  // unit normal in the (phi, lambda2) plane
    double n_lam = 0.0;
    double dgn = 0.0;  // first and half-second directional derivatives of g
    double c2 = 0.0;   // along the normal: g(curve + s n) ~ dgn s + c2 s^2
};

GammaLocal gamma_local(const ClosedGammaModel& m, double r, double l1) {
    GammaLocal gl;
    const double h = 1e-6;
    const double dphi = (m.phi_hat(r + h, l1) - m.phi_hat(r - h, l1)) / (2.0 * h);
    const double dlam = (m.lambda2_hat(r + h, l1) - m.lambda2_hat(r - h, l1)) / (2.0 * h);
    const double nrm = std::hypot(dphi, dlam);
    if (!(nrm > 0.0))
        throw NonConvergence("connection curve is singular at r = " + std::to_string(r), 0.0);
    gl.phi_hat = m.phi_hat(r, l1);
    gl.lam2_hat = m.lambda2_hat(r, l1);
    gl.n_phi = -dlam / nrm;
    gl.n_lam = dphi / nrm;

    // the parametrization lies on the zero set of g by contract, so expand g
    // along the normal instead of evaluating it at a displaced point: the
    // displacement is far below the rounding of the curve coordinates
    const double hg = 1e-5;
    const double gp = m.g(gl.phi_hat + hg * gl.n_phi,
                          Vector2d(l1, gl.lam2_hat + hg * gl.n_lam));
    const double gm = m.g(gl.phi_hat - hg * gl.n_phi,
                          Vector2d(l1, gl.lam2_hat - hg * gl.n_lam));
    const double g0 = m.g(gl.phi_hat, Vector2d(l1, gl.lam2_hat));
    gl.dgn = (gp - gm) / (2.0 * hg);
    gl.c2 = (gp - 2.0 * g0 + gm) / (2.0 * hg * hg);
    return gl;
}

struct InOutResidual {
    Vector2d G;       // (entry matching, exit matching)
    double scale_g = 0.0;  // magnitudes of the two transition targets
    double scale_h = 0.0;
};

InOutResidual inout_residual(const ClosedGammaModel& m, const IsolaOptions& o, double r,
                             double l, double s, double l1) {
    const GammaLocal gl = gamma_local(m, r, l1);
    const Vector2d lam(l1, gl.lam2_hat + s * gl.n_lam);
    const double tg = o.chi_s * m.a_s(lam) * std::exp(2.0 * m.alpha_s(lam) * l);
    const double th = o.chi_u * m.a_u(lam) * std::exp(-2.0 * m.alpha_u(lam) * l);
    InOutResidual res;
    res.G(0) = gl.dgn * s + gl.c2 * s * s - tg;
    res.G(1) = m.h_u(lam) - th;
    res.scale_g = std::max(std::abs(tg), 1e-280);
    res.scale_h = std::max(std::abs(th), 1e-280);
    return res;
}

IsolaPoint solve_isola_point(const ClosedGammaModel& m, const IsolaOptions& o, double r, int k,
                             double& s, double& l1, double& lt) {
    const double l0 =
        0.5 * (m.phi_hat(r, 0.0) - m.h_c(Vector2d(0.0, m.lambda2_hat(r, 0.0))));
    double prev_step = std::numeric_limits<double>::quiet_NaN();
    double ratio = std::numeric_limits<double>::quiet_NaN();
    for (int outer = 0; outer < o.max_outer; ++outer) {
        const double l = l0 + lt + k * M_PI;

        // in/out matching at fixed transit time: 2x2 Newton in (s, l1)
        bool inner_ok = false;
        InOutResidual res = inout_residual(m, o, r, l, s, l1);
        for (int in = 0; in < o.max_inner; ++in) {
            if (std::abs(res.G(0)) <= o.tol * res.scale_g &&
                std::abs(res.G(1)) <= o.tol * res.scale_h) {
                inner_ok = true;
                break;
            }
            const double hs = 1e-8 * (1.0 + std::abs(s));
            const double hl = 1e-8 * (1.0 + std::abs(l1));
            const Vector2d dGs =
                (inout_residual(m, o, r, l, s + hs, l1).G - inout_residual(m, o, r, l, s - hs, l1).G) /
                (2.0 * hs);
            const Vector2d dGl =
                (inout_residual(m, o, r, l, s, l1 + hl).G - inout_residual(m, o, r, l, s, l1 - hl).G) /
                (2.0 * hl);
            const double det = dGs(0) * dGl(1) - dGs(1) * dGl(0);
            if (det == 0.0 || !std::isfinite(det))
                throw NonConvergence("in/out matching system is singular", res.G.norm());
            s -= (res.G(0) * dGl(1) - res.G(1) * dGl(0)) / det;
            l1 -= (dGs(0) * res.G(1) - dGs(1) * res.G(0)) / det;
            res = inout_residual(m, o, r, l, s, l1);
        }
        if (!inner_ok) throw NonConvergence("in/out matching stalled", res.G.norm());

        const GammaLocal gl = gamma_local(m, r, l1);
        const Vector2d lam(l1, gl.lam2_hat + s * gl.n_lam);
        // group the O(1) cancellation before adding the tiny displacement
        const double lt_new = 0.5 * ((gl.phi_hat - m.h_c(lam) - 2.0 * l0) + s * gl.n_phi);
        const double step = std::abs(lt_new - lt);
        if (step <= 1e-12 * (1.0 + std::abs(lt))) {
            lt = lt_new;
            IsolaPoint pt;
            pt.r = r;
            pt.phi = gl.phi_hat + s * gl.n_phi;
            pt.lambda1 = l1;
            pt.lambda2 = lam(1);
            pt.l_tilde = lt;
            pt.s = s;
            return pt;
        }
        if (prev_step == prev_step && prev_step > 1e-10) {
            ratio = step / prev_step;
            if (ratio >= 1.0001)
                throw ContractionViolated(
                    "transit-time iteration expands: update grew by factor " +
                        std::to_string(ratio),
                    ratio);
        }
        prev_step = step;
        lt = lt_new;
    }
    throw ContractionViolated("transit-time iteration hit the cap", ratio);
}

}  // namespace

std::vector<IsolaCurve> isola_family(int k_min, int k_max, const ClosedGammaModel& m,
                                     const IsolaOptions& o) {
    if (k_max < k_min) throw std::invalid_argument("isola_family needs k_min <= k_max");
    if (o.n_r < 4) throw std::invalid_argument("isola_family needs at least 4 samples");
    std::vector<IsolaCurve> fam;
    for (int k = k_min; k <= k_max; ++k) {
        IsolaCurve c;
        c.k = k;
        double s = 0.0, l1 = 0.0, lt = 0.0;  // warm-started around the loop
        for (int j = 0; j <= o.n_r; ++j) {
            const double r = kTwoPi * j / o.n_r;
            c.points.push_back(solve_isola_point(m, o, r, k, s, l1, lt));
        }
        fam.push_back(std::move(c));
    }
    return fam;
}

// hypothesis scan -------------------------------------------------------------------

bool HypothesisReport::all_ok() const {
    for (const HypothesisEntry& e : entries)
        if (!e.ok) return false;
    return true;
}

const HypothesisEntry* HypothesisReport::find(const std::string& name) const {
    for (const HypothesisEntry& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

namespace {

void push_entry(HypothesisReport& rep, std::string name, bool ok, double value, double margin,
                std::string detail) {
    rep.entries.push_back({std::move(name), ok, value, margin, std::move(detail)});
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * i / (n - 1));
    return v;
}

// shared between both model flavours
void scan_h_u_and_rates(HypothesisReport& rep,
                        const std::function<double(const Vector2d&)>& h_u,
                        const std::function<double(const Vector2d&)>& alpha_s,
                        const std::function<double(const Vector2d&)>& alpha_u,
                        const std::function<double(const Vector2d&)>& a_s,
                        const std::function<double(const Vector2d&)>& a_u,
                        const std::vector<double>& l1s, const std::vector<double>& l2s) {
    double hu0 = 0.0;
    for (double l2 : l2s) hu0 = std::max(hu0, std::abs(h_u(Vector2d(0.0, l2))));
    push_entry(rep, "h-u-vanishes-at-zero", hu0 <= 1e-10, hu0, 1e-10 - hu0,
               "max |h_u(0, lambda2)| over the lambda2 window");

    const double h = 1e-7;
    double slope_min = std::numeric_limits<double>::infinity();
    double slope_at_min = 0.0;
    for (double l2 : l2s) {
        const double d = (h_u(Vector2d(h, l2)) - h_u(Vector2d(-h, l2))) / (2.0 * h);
        if (std::abs(d) < slope_min) {
            slope_min = std::abs(d);
            slope_at_min = d;
        }
    }
    push_entry(rep, "h-u-lambda1-slope", slope_min > 1e-3, slope_at_min, slope_min - 1e-3,
               "d h_u / d lambda1 at lambda1 = 0, worst case over lambda2");

    double rate_margin = std::numeric_limits<double>::infinity();
    double amp_min = std::numeric_limits<double>::infinity();
    for (double l1 : l1s)
        for (double l2 : l2s) {
            const Vector2d lam(l1, l2);
            rate_margin = std::min(rate_margin, std::min(-alpha_s(lam), alpha_u(lam)));
            amp_min = std::min(amp_min, std::min(a_s(lam), a_u(lam)));
        }
    push_entry(rep, "rates-signed", rate_margin > 0.0, rate_margin, rate_margin,
               "min of (-alpha_s, alpha_u) over the parameter box");
    push_entry(rep, "amplitudes-positive", amp_min > 0.0, amp_min, amp_min,
               "min transition amplitude over the parameter box");
}

}  // namespace

HypothesisReport check_hypotheses(const KernelModel& m, const HypothesisOptions& o) {
    HypothesisReport rep;
    const std::vector<double> l1s = linspace(-o.lambda1_box, o.lambda1_box, o.n_lam);
    const std::vector<double> l2s = linspace(m.lambda2_range(0), m.lambda2_range(1), o.n_lam);
    std::vector<double> phis;
    for (int i = 0; i < o.n_phi; ++i) phis.push_back(kTwoPi * i / o.n_phi);

    double gmax = 0.0, permax = 0.0;
    double bmin = std::numeric_limits<double>::infinity();
    for (double phi : phis)
        for (double l1 : l1s) {
            const double zv = m.z(phi, l1);
            gmax = std::max(gmax, std::abs(m.g(phi, Vector2d(l1, zv))));
            permax = std::max(permax, std::abs(m.z(phi + kTwoPi, l1) - zv));
            const double h = 1e-6;
            const double d =
                (m.g(phi, Vector2d(l1, zv + h)) - m.g(phi, Vector2d(l1, zv - h))) / (2.0 * h);
            bmin = std::min(bmin, std::abs(d));
        }
    push_entry(rep, "g-vanishes-on-gamma", gmax <= 1e-8, gmax, 1e-8 - gmax,
               "max |g| along the parametrized zero set");
    push_entry(rep, "z-periodic", permax <= 1e-8, permax, 1e-8 - permax,
               "max |z(phi + 2pi) - z(phi)|");
    const double bthr = m.b > 0.0 ? 0.5 * m.b : 1e-3;
    push_entry(rep, "g-lambda2-lower-bound", bmin > bthr, bmin, bmin - bthr,
               "min |dg/dlambda2| along the zero set");

    double qobs = 0.0;
    for (double phi : phis) {
        const double h = 1e-5;
        const auto comp = [&](double x) { return m.h_c(Vector2d(0.0, m.z(x, 0.0))); };
        qobs = std::max(qobs, std::abs((comp(phi + h) - comp(phi - h)) / (2.0 * h)));
    }
    const bool q_ok = qobs < 1.0 && (m.q <= 0.0 || qobs <= m.q + 1e-6);
    push_entry(rep, "phase-map-contraction", q_ok, qobs, 1.0 - qobs,
               "max slope of the composed phase map");

    // critical points of z(., 0): bracket sign changes of the derivative,
    // bisect, then classify by a wide-stencil second derivative
    const auto zphi = [&](double x) {
        const double h = 1e-6;
        return (m.z(x + h, 0.0) - m.z(x - h, 0.0)) / (2.0 * h);
    };
    std::vector<double> zeros;
    for (int i = 0; i < o.n_phi; ++i) {
        const double a = phis[i];
        const double b = (i + 1 < o.n_phi) ? phis[i + 1] : kTwoPi;
        double fa = zphi(a), fb = zphi(b);
        if (fa * fb > 0.0) continue;
        double lo = a, hi = b;
        for (int it = 0; it < 100 && hi - lo > 1e-13; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double fm = zphi(mid);
            if (fa * fm <= 0.0) {
                hi = mid;
                fb = fm;
            } else {
                lo = mid;
                fa = fm;
            }
        }
        zeros.push_back(reduce_angle(0.5 * (lo + hi)));
    }
    std::sort(zeros.begin(), zeros.end());
    zeros.erase(std::unique(zeros.begin(), zeros.end(),
                            [](double x, double y) { return std::abs(x - y) < 1e-6; }),
                zeros.end());
    if (zeros.size() >= 2 && zeros.back() - zeros.front() > kTwoPi - 1e-6) zeros.pop_back();

    double d2min = std::numeric_limits<double>::infinity();
    for (double x : zeros) {
        const double h = 5e-3;  // wide stencil: the fourth-order formula stays
                                // accurate while roundoff shrinks with 1/h^2
        const double d2 = (-m.z(x + 2 * h, 0.0) + 16.0 * m.z(x + h, 0.0) - 30.0 * m.z(x, 0.0) +
                           16.0 * m.z(x - h, 0.0) - m.z(x - 2 * h, 0.0)) /
                          (12.0 * h * h);
        rep.z_critical.emplace_back(x, d2);
        d2min = std::min(d2min, std::abs(d2));
    }
    const bool cp_ok = !zeros.empty() && d2min > 1e-3;
    push_entry(rep, "z-critical-nondegenerate", cp_ok, zeros.empty() ? 0.0 : d2min,
               (zeros.empty() ? 0.0 : d2min) - 1e-3,
               "min |d2z/dphi2| over the critical points of z(., 0)");

    scan_h_u_and_rates(rep, m.h_u, m.alpha_s, m.alpha_u, m.a_s, m.a_u, l1s, l2s);
    return rep;
}

HypothesisReport check_hypotheses(const ClosedGammaModel& m, const HypothesisOptions& o) {
    HypothesisReport rep;
    std::vector<double> rs;
    for (int i = 0; i < o.n_phi; ++i) rs.push_back(kTwoPi * i / o.n_phi);

    double reg_min = std::numeric_limits<double>::infinity();
    double grad_min = std::numeric_limits<double>::infinity();
    double phi_lo = std::numeric_limits<double>::infinity(), phi_hi = -phi_lo;
    double l2_lo = std::numeric_limits<double>::infinity(), l2_hi = -l2_lo;
    const double h = 1e-6;
    for (double r : rs) {
        const double dphi = (m.phi_hat(r + h, 0.0) - m.phi_hat(r - h, 0.0)) / (2.0 * h);
        const double dlam = (m.lambda2_hat(r + h, 0.0) - m.lambda2_hat(r - h, 0.0)) / (2.0 * h);
        const double nrm = std::hypot(dphi, dlam);
        reg_min = std::min(reg_min, nrm);

        const double phv = m.phi_hat(r, 0.0), lav = m.lambda2_hat(r, 0.0);
        phi_lo = std::min(phi_lo, phv);
        phi_hi = std::max(phi_hi, phv);
        l2_lo = std::min(l2_lo, lav);
        l2_hi = std::max(l2_hi, lav);
        if (nrm > 0.0) {
            const double gphi =
                (m.g(phv + h, Vector2d(0.0, lav)) - m.g(phv - h, Vector2d(0.0, lav))) / (2.0 * h);
            const double glam =
                (m.g(phv, Vector2d(0.0, lav + h)) - m.g(phv, Vector2d(0.0, lav - h))) / (2.0 * h);
            grad_min = std::min(grad_min,
                                std::abs(gphi * (-dlam / nrm) + glam * (dphi / nrm)));
        }
    }
    push_entry(rep, "gamma-regular", reg_min > 1e-3, reg_min, reg_min - 1e-3,
               "min speed of the curve parametrization");
    push_entry(rep, "gamma-normal-gradient", grad_min > 1e-3, grad_min, grad_min - 1e-3,
               "min |grad g . normal| along the curve");
    const double span = phi_hi - phi_lo;
    push_entry(rep, "gamma-phase-range", span < kTwoPi - 1e-6, span, kTwoPi - span,
               "phi extent of the curve; must stay inside one period");

    const std::vector<double> l1s = linspace(-o.lambda1_box, o.lambda1_box, o.n_lam);
    const std::vector<double> l2s = linspace(l2_lo, l2_hi, o.n_lam);
    scan_h_u_and_rates(rep, m.h_u, m.alpha_s, m.alpha_u, m.a_s, m.a_u, l1s, l2s);
    return rep;
}

}  // namespace snaking
