#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "snaking/collocation.hpp"
#include "snaking/kernel.hpp"

using namespace snaking;
using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

// Raw coefficients of a small family of test models:
//   z(phi, l1) = za sin(phi) + zb cos(phi) + zc l1 cos(phi)
//   g = l2 - z,  h_c = c0 + c1 l2,  h_u = l1,  a_s = a_u = delta.
struct RawKernel {
    double za = 0.5, zb = 0.0, zc = 0.0;
    double c0 = 0.0, c1 = 0.0;
    double alpha_s = -1.0, alpha_u = 1.0;
    double delta = 0.1;
};

KernelModel build_model(const RawKernel& rk) {
    KernelModel m;
    m.z = [rk](double phi, double l1) {
        return rk.za * std::sin(phi) + (rk.zb + rk.zc * l1) * std::cos(phi);
    };
    m.g = [zf = m.z](double phi, const Vector2d& lam) { return lam(1) - zf(phi, lam(0)); };
    m.h_c = [rk](const Vector2d& lam) { return rk.c0 + rk.c1 * lam(1); };
    m.h_u = [](const Vector2d& lam) { return lam(0); };
    m.alpha_s = [rk](const Vector2d&) { return rk.alpha_s; };
    m.alpha_u = [rk](const Vector2d&) { return rk.alpha_u; };
    m.a_s = [rk](const Vector2d&) { return rk.delta; };
    m.a_u = [rk](const Vector2d&) { return rk.delta; };
    m.delta = rk.delta;
    m.q = std::abs(rk.c1) * (std::abs(rk.za) + std::abs(rk.zb)) + 0.01;
    m.b = 1.0;
    m.lambda2_range = Vector2d(-0.8, 0.8);
    return m;
}

// Independently coded copy of the three coupling equations, used by the
// grid-and-polish search below.
Vector3d oracle_residual(const RawKernel& rk, double L, double chi_s, double chi_u,
                         const Vector3d& x) {
    const double phi = x(0), l1 = x(1), l2 = x(2);
    const double zout =
        rk.za * std::sin(phi + 2.0 * L) + (rk.zb + rk.zc * l1) * std::cos(phi + 2.0 * L);
    Vector3d r;
    r(0) = phi - (rk.c0 + rk.c1 * l2);
    r(1) = (l2 - zout) - chi_s * rk.delta * std::exp(2.0 * rk.alpha_s * L);
    r(2) = l1 - chi_u * rk.delta * std::exp(-2.0 * rk.alpha_u * L);
    return r;
}

// Brute-force oracle: best point of a 41^3 grid, then plain damped Newton.
Vector3d grid_polish_search(const RawKernel& rk, double L, double chi_s, double chi_u,
                            double l2_lo, double l2_hi) {
    const int n = 41;
    const double l1_box = 2.0 * rk.delta * std::exp(-2.0 * rk.alpha_u * L);
    Vector3d best = Vector3d::Zero();
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const double phi = kTwoPi * i / n;
        for (int j = 0; j < n; ++j) {
            const double l1 = -l1_box + 2.0 * l1_box * j / (n - 1);
            for (int k = 0; k < n; ++k) {
                const double l2 = l2_lo + (l2_hi - l2_lo) * k / (n - 1);
                const Vector3d r = oracle_residual(rk, L, chi_s, chi_u, Vector3d(phi, l1, l2));
                const double v = r.squaredNorm();
                if (v < best_val) {
                    best_val = v;
                    best = Vector3d(phi, l1, l2);
                }
            }
        }
    }
    Vector3d x = best;
    Vector3d r = oracle_residual(rk, L, chi_s, chi_u, x);
    for (int it = 0; it < 100 && r.lpNorm<Eigen::Infinity>() > 1e-14; ++it) {
        Matrix3d J;
        for (int j = 0; j < 3; ++j) {
            const double h = 1e-7 * (1.0 + std::abs(x(j)));
            Vector3d xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            J.col(j) = (oracle_residual(rk, L, chi_s, chi_u, xp) -
                        oracle_residual(rk, L, chi_s, chi_u, xm)) /
                       (2.0 * h);
        }
        const Vector3d step = J.partialPivLu().solve(-r);
        double damp = 1.0;
        for (int half = 0; half < 12; ++half) {
            const Vector3d cand = x + damp * step;
            const Vector3d rc = oracle_residual(rk, L, chi_s, chi_u, cand);
            if (rc.norm() < r.norm() || damp < 1e-3) {
                x = cand;
                r = rc;
                break;
            }
            damp *= 0.5;
        }
    }
    return x;
}

}  // namespace

TEST_CASE("closed-form transition endpoints") {
    FenichelParams p;
    p.alpha_s = -1.0;
    p.alpha_u = 1.0;
    p.delta = 0.1;
    const double L = 5.0;
    const auto ep = shilnikov_exact(0.3, Vector2d::Zero(), L, 1.0, 1.0, p);

    CHECK(ep.v0(0) == 0.3);
    CHECK(ep.v0(1) == 0.1);
    CHECK(std::abs(ep.v0(2) - 0.1 * std::exp(-10.0)) <= 1e-18);
    CHECK(ep.v0(2) == doctest::Approx(4.5399929e-6).epsilon(1e-6));
    CHECK(ep.v_end(0) == 0.3 + 2.0 * L);
    CHECK(std::abs(ep.v_end(1) - 0.1 * std::exp(-10.0)) <= 1e-18);
    CHECK(ep.v_end(2) == 0.1);
}

TEST_CASE("entry and exit data carry the requested signs") {
    FenichelParams p;
    p.alpha_s = -0.7;
    p.alpha_u = 1.3;
    p.delta = 0.25;
    for (double L : {1.0, 4.0, 9.0}) {
        const auto ep = shilnikov_exact(1.1, Vector2d::Zero(), L, -1.0, 1.0, p);
        CHECK(ep.v0(1) == -0.25);          // entry pinned at -delta
        CHECK(ep.v_end(0) == 1.1 + 2 * L); // angle advances by the transit time
        CHECK(std::abs(ep.v_end(1) + 0.25 * std::exp(2.0 * p.alpha_s * L)) <= 1e-18);
        CHECK(ep.v_end(2) == 0.25);
        const auto em = shilnikov_exact(1.1, Vector2d::Zero(), L, 1.0, -1.0, p);
        CHECK(em.v0(2) < 0.0);
        CHECK(em.v_end(2) == -0.25);
    }
}

TEST_CASE("shooting with no coupling reproduces the closed form") {
    FenichelParams p;
    p.alpha_s = -1.0;
    p.alpha_u = 1.0;
    p.delta = 0.1;
    for (double L : {2.0, 5.0, 10.0}) {
        const auto ex = shilnikov_exact(0.7, Vector2d::Zero(), L, 1.0, 1.0, p);
        const auto nu = shilnikov_numeric(0.7, Vector2d::Zero(), L, 1.0, 1.0, p);
        for (int i = 0; i < 3; ++i) {
            const double scale = std::max(std::abs(ex.v0(i)), 1e-3);
            CHECK(std::abs(nu.v0(i) - ex.v0(i)) <= 1e-9 * scale);
            const double scale_e = std::max(std::abs(ex.v_end(i)), 1e-3);
            CHECK(std::abs(nu.v_end(i) - ex.v_end(i)) <= 1e-9 * scale_e);
        }
    }
}

TEST_CASE("rate fit on the linear chart") {
    FenichelParams p;
    p.alpha_s = -1.0;
    p.alpha_u = 1.0;
    p.delta = 0.1;
    std::vector<double> grid;
    for (double L = 4.0; L <= 10.01; L += 1.0) grid.push_back(L);
    const auto fit = shilnikov_fit(0.0, Vector2d::Zero(), grid, 1.0, 1.0, p);
    CHECK(std::abs(fit.decay.slope + 2.0) <= 1e-6);
    CHECK(std::abs(fit.a_inf - 0.1) <= 1e-7);  // limited by integrator drift over T = 20
    CHECK(fit.decay.r2 > 0.999999);
}

TEST_CASE("coupled shooting: decay slope and remainder rate") {
    FenichelParams p;
    p.alpha_s = -1.0;
    p.alpha_u = 1.0;
    p.delta = 0.1;
    p.A_u = [](const Vector3d& v, double, double) { return 0.05 * v(1); };

    // separable coupling, so the shot amplitude has a closed form:
    // v^u(0) = delta e^{-2L} exp(-0.05 delta (1 - e^{-2L}))
    const double L0 = 6.0;
    const auto ep = shilnikov_numeric(0.0, Vector2d::Zero(), L0, 1.0, 1.0, p);
    const double vu0_expected =
        0.1 * std::exp(-2.0 * L0) * std::exp(-0.05 * 0.1 * (1.0 - std::exp(-2.0 * L0)));
    // the coupling shifts the amplitude by 5e-3 relative; integrator drift
    // sits around 1e-8, so the shift is resolved by five orders of magnitude
    CHECK(std::abs(ep.v0(2) - vu0_expected) <= 1e-7 * vu0_expected);
    CHECK(std::abs(ep.v_end(1) - 0.1 * std::exp(-2.0 * L0)) <= 1e-7 * 0.1 * std::exp(-2.0 * L0));

    // keep the grid where the coupling-induced deviation (~5e-3 e^{-2L})
    // clears the integrator noise floor by several decades
    std::vector<double> grid;
    for (double L = 2.0; L <= 6.01; L += 0.5) grid.push_back(L);
    const auto fit = shilnikov_fit(0.0, Vector2d::Zero(), grid, 1.0, 1.0, p);
    CHECK(std::abs(fit.decay.slope - (-2.0)) <= 0.02);  // within 1% of -2 alpha_u
    CHECK(fit.decay.r2 > 0.9999);
    CHECK(fit.remainder.slope < -1.0);  // exponentially decaying deviation
    CHECK(std::abs(fit.remainder.slope + 2.0) <= 0.1);
    CHECK(fit.remainder.r2 > 0.99);
}

TEST_CASE("trajectories leaving the chart surface as a shooting failure") {
    FenichelParams p;
    p.alpha_s = -1.0;
    p.alpha_u = 1.0;
    p.delta = 0.1;
    // destabilizes the contracting direction near the section: v^s grows and
    // leaves the chart before the transit completes
    p.A_s = [](const Vector3d& v, double, double) { return 20.0 * std::abs(v(1)); };
    CHECK_THROWS_AS(shilnikov_numeric(0.0, Vector2d::Zero(), 4.0, 1.0, 1.0, p),
                    ShootingFailure);
}

TEST_CASE("constant phase map pins the fixed point") {
    RawKernel rk;
    rk.c0 = 1.3;
    const KernelModel m = build_model(rk);
    for (double L : {1.0, 2.7, 9.0}) CHECK(std::abs(solve_phi0(L, m) - 1.3) <= 1e-12);

    RawKernel neg;
    neg.c0 = -0.3;
    CHECK(std::abs(solve_phi0(2.0, build_model(neg)) - (kTwoPi - 0.3)) <= 1e-12);
}

TEST_CASE("phase fixed point is pi-periodic in L") {
    RawKernel rk;
    rk.c1 = 0.2;  // h_c(0, z(phi,0)) = 0.1 sin(phi)
    const KernelModel m = build_model(rk);
    for (double L : {1.0, 2.2, 5.0})
        CHECK(std::abs(solve_phi0(L, m) - solve_phi0(L + M_PI, m)) <= 1e-10);
}

TEST_CASE("phase fixed point matches direct iteration") {
    RawKernel rk;
    rk.c1 = 0.2;
    const KernelModel m = build_model(rk);
    // phi = 0.1 sin(phi + 2), iterated from 0
    double phi = 0.0;
    for (int i = 0; i < 200; ++i) phi = 0.1 * std::sin(phi + 2.0);
    CHECK(std::abs(solve_phi0(1.0, m) - phi) <= 1e-10);
}

TEST_CASE("expanding phase map is rejected") {
    RawKernel rk;
    rk.c1 = 2.4;  // slope 1.2 along the connection set
    const KernelModel m = build_model(rk);
    CHECK_THROWS_AS(solve_phi0(1.0, m), ContractionViolated);
}

TEST_CASE("coupling solve matches the closed form on the sine model") {
    const KernelModel m = sine_kernel_model();
    for (double L = 3.0; L <= 20.01; L += 0.5) {
        const SnakingPoint pt = solve_snaking_point(L, m);
        const double l1_exp = 0.1 * std::exp(-2.0 * L);
        const double l2_exp = 0.5 * std::sin(2.0 * L) + 0.1 * std::exp(-2.0 * L);
        CHECK(std::abs(pt.phi) <= 1e-12);
        CHECK(std::abs(pt.lambda1 - l1_exp) <= 1e-10 * l1_exp);
        CHECK(std::abs(pt.lambda2 - l2_exp) <= 1e-10 * std::abs(l2_exp));
    }

    // the shooting transition map gives the same answer
    SnakeOptions num;
    num.numeric_transition = true;
    const SnakingPoint pn = solve_snaking_point(4.0, m, num);
    CHECK(std::abs(pn.phi) <= 1e-11);
    CHECK(std::abs(pn.lambda1 - 0.1 * std::exp(-8.0)) <= 1e-9 * 0.1 * std::exp(-8.0));
    CHECK(std::abs(pn.lambda2 - (0.5 * std::sin(8.0) + 0.1 * std::exp(-8.0))) <= 1e-9);
}

TEST_CASE("solver equals a grid-and-polish search") {
    RawKernel rk;  // the sine model in raw form
    const KernelModel m = build_model(rk);
    const double L = 4.0;
    const Vector3d oracle = grid_polish_search(rk, L, 1.0, 1.0, -0.5, 0.5);
    const SnakingPoint pt = solve_snaking_point(L, m);
    CHECK(std::abs(pt.phi - oracle(0)) <= 1e-8);
    CHECK(std::abs(pt.lambda1 - oracle(1)) <= 1e-8);
    CHECK(std::abs(pt.lambda2 - oracle(2)) <= 1e-8);

    // the search itself lands on the closed form
    CHECK(std::abs(oracle(1) - 0.1 * std::exp(-8.0)) <= 1e-10);
    CHECK(std::abs(oracle(2) - (0.5 * std::sin(8.0) + 0.1 * std::exp(-8.0))) <= 1e-10);
}

TEST_CASE("ten random models agree with the search") {
    std::mt19937 gen(20240817u);
    auto uni = [&gen](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen);
    };
    for (int draw = 0; draw < 10; ++draw) {
        RawKernel rk;
        const double amp = uni(0.2, 0.5), ang = uni(0.0, kTwoPi);
        rk.za = amp * std::cos(ang);
        rk.zb = amp * std::sin(ang);
        rk.zc = uni(0.0, 0.3);
        rk.c0 = uni(0.0, 1.0);
        rk.c1 = uni(0.0, 0.4);
        rk.alpha_u = uni(0.8, 1.4);
        rk.alpha_s = -uni(0.8, 1.4);
        rk.delta = uni(0.05, 0.15);
        const double L = uni(3.0, 5.0);

        const KernelModel m = build_model(rk);
        const SnakingPoint pt = solve_snaking_point(L, m);
        const Vector3d oracle = grid_polish_search(rk, L, 1.0, 1.0, -0.8, 0.8);
        CHECK(std::abs(pt.phi - oracle(0)) <= 1e-8);
        CHECK(std::abs(pt.lambda1 - oracle(1)) <= 1e-8);
        CHECK(std::abs(pt.lambda2 - oracle(2)) <= 1e-8);
    }
}

TEST_CASE("iteration caps propagate as non-convergence") {
    RawKernel rk;
    KernelModel m = build_model(rk);
    m.h_u = [](const Vector2d& lam) { return std::sin(lam(0)); };  // mildly nonlinear
    SnakeOptions o;
    o.max_iter = 1;
    CHECK_THROWS_AS(solve_snaking_point(0.2, m, o), NonConvergence);
}

TEST_CASE("fold ladder of the sine model") {
    const KernelModel m = sine_kernel_model();
    const SnakingCurve curve = snaking_curve(3.0, 12.0, 181, m);

    REQUIRE(curve.points.size() == 181);
    for (size_t i = 1; i < curve.points.size(); ++i) {
        CHECK(curve.points[i].L > curve.points[i - 1].L);
        CHECK(std::abs(curve.points[i].lambda1) < std::abs(curve.points[i - 1].lambda1));
        CHECK(curve.points[i].lambda2 >= -0.501);
        CHECK(curve.points[i].lambda2 <= 0.501);
    }

    REQUIRE(curve.folds.size() == 6);
    double prev_l1 = 0.0;
    for (size_t i = 0; i < curve.folds.size(); ++i) {
        const SnakingFold& f = curve.folds[i];
        CHECK(f.matched);
        // the matched phase zeros sit exactly on the quarter-period ladder
        const double k = std::round((f.L_phase - M_PI / 4.0) / (M_PI / 2.0));
        CHECK(std::abs(f.L_phase - (M_PI / 4.0 + k * M_PI / 2.0)) <= 1e-6);
        // the extremum itself is offset by the exponentially small remainder
        CHECK(std::abs(f.L - f.L_phase) <= 2e-4);
        CHECK(std::abs(f.L - f.L_phase) <= 1.05 * 0.1 * std::exp(-2.0 * f.L) + 1e-7);
        CHECK(std::abs(f.curvature) >= 0.8);
        CHECK(std::abs(f.curvature) <= 1.2);
        // lambda2 alternates between the extremes of z
        const double expected_sign = (static_cast<int>(k) % 2 == 0) ? 1.0 : -1.0;
        CHECK(f.lambda2 * expected_sign > 0.0);
        CHECK(std::abs(std::abs(f.lambda2) - 0.5) <= 1e-3);
        // lambda1 shrinks by e^{-pi} per half-period rung
        const double l1_here = 0.1 * std::exp(-2.0 * f.L);
        if (i > 0) CHECK(std::abs(l1_here / prev_l1 - std::exp(-M_PI)) <= 1e-3);
        prev_l1 = l1_here;
    }
}

TEST_CASE("rate laws along the snaking curve") {
    const KernelModel m = sine_kernel_model();
    const SnakingCurve curve = snaking_curve(3.0, 12.0, 181, m);

    std::vector<double> Ls, log_l1, log_rem;
    for (const SnakingPoint& p : curve.points) {
        Ls.push_back(p.L);
        log_l1.push_back(std::log(std::abs(p.lambda1)));
        const double rem = std::abs(p.lambda2 - 0.5 * std::sin(p.phi + 2.0 * p.L));
        log_rem.push_back(std::log(rem));
    }
    const RateFit l1_fit = least_squares_line(Ls, log_l1);
    CHECK(std::abs(l1_fit.slope + 2.0) <= 0.02);
    CHECK(std::abs(std::exp(l1_fit.intercept) / 0.1 - 1.0) <= 0.01);
    CHECK(l1_fit.r2 > 0.9999);

    const RateFit rem_fit = least_squares_line(Ls, log_rem);
    CHECK(rem_fit.slope <= -1.8);  // at least 0.9 * 2 min(|alpha_s|, alpha_u)
    CHECK(rem_fit.r2 > 0.999);
}

TEST_CASE("fold matching demands the stricter phase bound") {
    RawKernel rk;
    rk.c1 = 1.2;  // phase-map slope 0.6: contracting, but above 1/2
    const KernelModel m = build_model(rk);

    SnakeOptions strict;
    strict.match_folds = true;
    CHECK_THROWS_AS(snaking_curve(3.0, 5.0, 21, m, strict), std::domain_error);

    SnakeOptions lax;
    lax.match_folds = false;
    const SnakingCurve curve = snaking_curve(3.0, 5.0, 21, m, lax);
    CHECK(curve.points.size() == 21);
    CHECK(curve.folds.empty() == false);  // extrema still reported, just unmatched
}

TEST_CASE("mirror branches of the negative-multiplier model") {
    const KernelModel m = sine_kernel_model();
    for (double L : {3.0, 5.0, 8.0}) {
        const BranchPair bp = snaking_negative(L, m);
        const double mag = 0.1 * std::exp(-2.0 * L);
        CHECK(bp.plus.lambda1 > 0.0);
        CHECK(bp.minus.lambda1 < 0.0);
        CHECK(std::abs(bp.plus.lambda1 - mag) <= 1e-10 * mag);
        CHECK(std::abs(bp.minus.lambda1 + mag) <= 1e-10 * mag);
        CHECK(std::abs(bp.minus.phi - bp.plus.phi - kTwoPi) <= 1e-10);
        CHECK(std::abs(bp.plus.lambda2 - (0.5 * std::sin(2 * L) + mag)) <= 1e-10);
        CHECK(std::abs(bp.minus.lambda2 - (0.5 * std::sin(2 * L) - mag)) <= 1e-10);
    }

    // the minus branch is the plus branch half a period later, up to remainders
    for (double L : {3.0, 6.0}) {
        const double plus_l2 = snaking_negative(L, m).plus.lambda2;
        const double minus_l2 = snaking_negative(L + M_PI, m).minus.lambda2;
        const double gap_exp = 0.1 * (std::exp(-2.0 * L) + std::exp(-2.0 * (L + M_PI)));
        CHECK(std::abs((plus_l2 - minus_l2) - gap_exp) <= 1e-12);
    }
}

TEST_CASE("isola family of the circle model") {
    const ClosedGammaModel m = circle_gamma_model();
    IsolaOptions o;
    o.n_r = 96;
    const std::vector<IsolaCurve> fam = isola_family(6, 12, m, o);
    REQUIRE(fam.size() == 7);

    std::vector<double> ks, log_dev, log_haus;
    for (const IsolaCurve& c : fam) {
        REQUIRE(c.points.size() == 97);
        const IsolaPoint& a = c.points.front();
        const IsolaPoint& b = c.points.back();
        CHECK(std::hypot(a.lambda1 - b.lambda1, a.lambda2 - b.lambda2) <= 1e-8);

        double dev = 0.0, haus = 0.0;
        for (const IsolaPoint& pt : c.points) {
            // transit time is pinned by the curve geometry, so lambda1 has a
            // closed form up to the tiny time correction
            const double l0 = 0.5 * (1.0 + 0.3 * std::cos(pt.r));
            const double l1_exp = 0.1 * std::exp(-2.0 * (l0 + c.k * M_PI));
            CHECK(std::abs(pt.lambda1 - l1_exp) <= 1e-9 * l1_exp);

            // the normal displacement rounds away inside the stored lambda2,
            // so reconstruct the deviation from s and the circle geometry
            dev = std::max(dev, std::abs(pt.s) * std::abs(std::sin(pt.r)));
            const double over =
                std::max(0.0, std::abs((0.3 - pt.s) * std::sin(pt.r)) - 0.3);
            haus = std::max(haus, std::hypot(pt.lambda1, over));
        }
        ks.push_back(c.k);
        log_dev.push_back(std::log(dev));
        log_haus.push_back(std::log(haus));
    }

    // deviation from the curve and distance to the limiting segment both
    // shrink exponentially in the winding count
    const RateFit dev_fit = least_squares_line(ks, log_dev);
    CHECK(dev_fit.slope < 0.0);
    CHECK(std::abs(dev_fit.slope + kTwoPi) <= 0.05);
    CHECK(dev_fit.r2 > 0.99);
    const RateFit haus_fit = least_squares_line(ks, log_haus);
    CHECK(haus_fit.slope < 0.0);
    CHECK(haus_fit.r2 > 0.99);
    for (size_t i = 1; i < fam.size(); ++i)
        CHECK(std::exp(log_haus[i]) < std::exp(log_haus[i - 1]));

    // neighbouring curves never touch
    for (size_t i = 0; i + 1 < fam.size(); ++i) {
        double min_dist = std::numeric_limits<double>::infinity();
        for (const IsolaPoint& pa : fam[i].points)
            for (const IsolaPoint& pb : fam[i + 1].points)
                min_dist = std::min(
                    min_dist, std::hypot(pa.lambda1 - pb.lambda1, pa.lambda2 - pb.lambda2));
        CHECK(min_dist > 0.0);
    }
}

TEST_CASE("isolas reject insufficient winding") {
    ClosedGammaModel m = circle_gamma_model();
    // steep dependence of the entry angle on lambda1 breaks the transit-time
    // contraction once the winding no longer suppresses lambda1
    m.h_c = [](const Vector2d& lam) { return 40.0 * lam(0); };
    IsolaOptions o;
    o.n_r = 8;
    CHECK_THROWS_AS(isola_family(0, 0, m, o), ContractionViolated);
}

TEST_CASE("hypothesis scan on the sine model") {
    const HypothesisReport rep = check_hypotheses(sine_kernel_model());
    CHECK(rep.all_ok());

    const HypothesisEntry* b = rep.find("g-lambda2-lower-bound");
    REQUIRE(b != nullptr);
    CHECK(b->ok);
    CHECK(std::abs(b->value - 1.0) <= 1e-9);

    const HypothesisEntry* q = rep.find("phase-map-contraction");
    REQUIRE(q != nullptr);
    CHECK(q->ok);
    CHECK(std::abs(q->value) <= 1e-9);

    const HypothesisEntry* slope = rep.find("h-u-lambda1-slope");
    REQUIRE(slope != nullptr);
    CHECK(std::abs(slope->value - 1.0) <= 1e-7);

    REQUIRE(rep.z_critical.size() == 2);
    CHECK(std::abs(rep.z_critical[0].first - M_PI / 2.0) <= 1e-6);
    CHECK(std::abs(rep.z_critical[0].second + 0.5) <= 1e-6);
    CHECK(std::abs(rep.z_critical[1].first - 3.0 * M_PI / 2.0) <= 1e-6);
    CHECK(std::abs(rep.z_critical[1].second - 0.5) <= 1e-6);
}

TEST_CASE("hypothesis scan flags planted defects") {
    RawKernel rk;
    rk.c1 = 2.4;  // phase-map slope 1.2
    const HypothesisReport rep = check_hypotheses(build_model(rk));
    CHECK_FALSE(rep.all_ok());
    const HypothesisEntry* q = rep.find("phase-map-contraction");
    REQUIRE(q != nullptr);
    CHECK_FALSE(q->ok);
    CHECK(q->value == doctest::Approx(1.2).epsilon(1e-4));

    KernelModel flat = sine_kernel_model();
    flat.g = [zf = flat.z](double phi, const Vector2d& lam) {
        return (lam(1) - zf(phi, lam(0))) * std::cos(phi);  // dg/dl2 crosses zero
    };
    flat.b = 0.0;
    const HypothesisReport rep2 = check_hypotheses(flat);
    CHECK_FALSE(rep2.all_ok());
    const HypothesisEntry* b = rep2.find("g-lambda2-lower-bound");
    REQUIRE(b != nullptr);
    CHECK_FALSE(b->ok);
    CHECK(std::abs(b->value) <= 1e-6);
}

TEST_CASE("hypothesis scan on the circle model") {
    const HypothesisReport rep = check_hypotheses(circle_gamma_model());
    CHECK(rep.all_ok());

    const HypothesisEntry* reg = rep.find("gamma-regular");
    REQUIRE(reg != nullptr);
    CHECK(reg->value == doctest::Approx(0.3).epsilon(1e-5));

    const HypothesisEntry* grad = rep.find("gamma-normal-gradient");
    REQUIRE(grad != nullptr);
    CHECK(grad->value == doctest::Approx(0.6).epsilon(1e-5));

    const HypothesisEntry* range = rep.find("gamma-phase-range");
    REQUIRE(range != nullptr);
    CHECK(range->ok);
    CHECK(range->value == doctest::Approx(0.6).epsilon(1e-5));
}
