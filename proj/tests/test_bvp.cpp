#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "snaking/collocation.hpp"
#include "snaking/models.hpp"
#include "snaking/ode.hpp"

using namespace snaking;

namespace {

SegmentOde exponential_ode() {
    SegmentOde ode;
    ode.dim = 1;
    ode.rhs = [](const VectorXd& u, const VectorXd& p) {
        return VectorXd::Constant(1, p(0) * u(0));
    };
    ode.jac_u = [](const VectorXd&, const VectorXd& p) {
        MatrixXd J(1, 1);
        J(0, 0) = p(0);
        return J;
    };
    ode.jac_p = [](const VectorXd& u, const VectorXd& p) {
        MatrixXd J(1, p.size());
        J.setZero();
        J(0, 0) = u(0);
        return J;
    };
    return ode;
}

// u' = T u, u(0) = 1, and when T is free also u(1) = e (so T -> 1)
BvpProblem linear_bvp(int n_intervals, int degree, double T_guess, bool T_free) {
    BvpProblem prob;
    prob.add_param("T", T_guess, T_free);
    OrbitSegment seg = OrbitSegment::from_function(
        uniform_mesh(n_intervals), degree,
        [&](double t) { return VectorXd::Constant(1, std::exp(T_guess * t)); }, 1.0);
    prob.add_segment("u", exponential_ode(), seg);
    prob.add_boundary_condition(
        {"left", 1, [](const Endpoints& ep, const VectorXd&) {
             return VectorXd::Constant(1, ep.left[0](0) - 1.0);
         }});
    if (T_free)
        prob.add_boundary_condition(
            {"right", 1, [](const Endpoints& ep, const VectorXd&) {
                 return VectorXd::Constant(1, ep.right[0](0) - std::exp(1.0));
             }});
    return prob;
}

double max_breakpoint_error(const BvpProblem& prob) {
    const auto& seg = prob.segment(0).data;
    double err = 0.0;
    for (int j = 0; j <= seg.n_intervals(); ++j)
        err = std::max(err,
                       std::abs(seg.values(0, seg.col_break(j)) - std::exp(seg.mesh[j])));
    return err;
}

}  // namespace

TEST_CASE("collocation basis sanity") {
    for (int m : {2, 3, 4, 5}) {
        const auto& B = collocation_basis(m);
        // quadrature exact for polynomials of degree 2m-1 on [0,1]
        for (int d = 0; d <= 2 * m - 1; ++d) {
            double q = 0.0;
            for (int i = 0; i < m; ++i) q += B.w_quad(i) * std::pow(B.c(i), d);
            CHECK(q == doctest::Approx(1.0 / (d + 1)).epsilon(1e-12));
        }
        // differentiation matrix exact on the interpolation space
        for (int d = 0; d <= m; ++d) {
            for (int i = 0; i < m; ++i) {
                double val = 0.0;
                for (int k = 0; k <= m; ++k) val += B.D(i, k) * std::pow(B.nodes(k), d);
                double exact = d == 0 ? 0.0 : d * std::pow(B.c(i), d - 1);
                CHECK(val == doctest::Approx(exact).epsilon(1e-10));
            }
        }
        // continuity weights reproduce the value at 1
        double e = 0.0;
        for (int k = 0; k <= m; ++k) e += B.E(k) * std::pow(B.nodes(k), m);
        CHECK(e == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("segment interpolation reproduces polynomials") {
    auto poly = [](double t) {
        VectorXd v(2);
        v << 1.0 + t * (2.0 + t * (3.0 + t * 4.0)), t * t;
        return v;
    };
    OrbitSegment seg = OrbitSegment::from_function(uniform_mesh(5), 3, poly, 1.0);
    for (double tau : {0.0, 0.13, 0.5, 0.77, 0.999, 1.0}) {
        VectorXd v = seg.eval(tau);
        CHECK((v - poly(tau)).norm() < 1e-13);
    }
    // derivative of the first component: 2 + 6t + 12t^2
    VectorXd d = seg.eval_derivative(0.3);
    CHECK(d(0) == doctest::Approx(2.0 + 6.0 * 0.3 + 12.0 * 0.09).epsilon(1e-11));
    CHECK(d(1) == doctest::Approx(0.6).epsilon(1e-11));
}

TEST_CASE("integrate: uncoupled normal form grows exactly exponentially") {
    auto f = make_fenichel(FenichelParams{});
    VectorXd v0(3), lam(2);
    v0 << 0.0, 0.0, 1e-4;
    lam << 0.0, 0.0;
    OrbitSegment seg = integrate(f, v0, lam, 2.0, 1e-12);
    VectorXd v2 = seg.eval(1.0);
    CHECK(std::abs(v2(2) - 1e-4 * std::exp(2.0)) < 1e-8 * 1e-4 * std::exp(2.0));
    CHECK(v2(0) == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(seg.time_scale == doctest::Approx(2.0));
}

TEST_CASE("integrate: zero time span returns the initial point") {
    auto f = make_hopf_test();
    VectorXd u0(3);
    u0 << 0.3, -0.2, 0.1;
    OrbitSegment seg = integrate(f, u0, VectorXd(0), 0.0, 1e-10);
    CHECK((seg.eval(0.0) - u0).norm() == 0.0);
    CHECK((seg.eval(1.0) - u0).norm() == 0.0);
}

TEST_CASE("integrate: test cycle closes after one period") {
    auto f = make_hopf_test();
    VectorXd u0(3);
    u0 << 1.0, 0.0, 0.0;
    OrbitSegment seg = integrate(f, u0, VectorXd(0), 2.0 * M_PI, 1e-11);
    CHECK((seg.eval(1.0) - u0).norm() < 1e-7);
}

TEST_CASE("integrate: finite-time blow-up reports the failure time") {
    VectorFieldSpec f;
    f.dimension = 1;
    f.evaluate = [](const VectorXd& u, const VectorXd&) {
        return VectorXd::Constant(1, u(0) * u(0));
    };
    VectorXd u0 = VectorXd::Constant(1, 2.0);  // u(t) = 2/(1-2t), pole at 1/2
    bool thrown = false;
    try {
        integrate(f, u0, VectorXd(0), 1.0, 1e-10);
    } catch (const IntegrationBlowup& e) {
        thrown = true;
        CHECK(std::abs(e.t_fail - 0.5) < 0.01);
    }
    CHECK(thrown);
}

TEST_CASE("integrate_until locates the first section crossing") {
    auto f = make_hopf_test();
    auto rhs = [&](const VectorXd& u) { return f.evaluate(u, VectorXd(0)); };
    VectorXd u0(3);
    u0 << 1.0, 0.0, 0.0;
    // on the unit cycle x(t) = cos t: first zero at pi/2
    auto hit = integrate_until(rhs, u0, 3.0, 1e-12,
                               [](const VectorXd& u) { return u(0); });
    REQUIRE(hit.has_value());
    CHECK(hit->t == doctest::Approx(M_PI / 2.0).epsilon(1e-9));
    CHECK(std::abs(hit->u(0)) < 1e-9);
    // no sign change of z from z0 > 0
    auto miss = integrate_until(rhs, u0, 3.0, 1e-12,
                                [](const VectorXd& u) { return u(2) + 1.0; });
    CHECK(!miss.has_value());
}

TEST_CASE("dense output is accurate between steps") {
    auto traj = integrate_dense(
        [](const VectorXd& u) { return VectorXd(u); }, VectorXd::Constant(1, 1.0), 1.0, 1e-11);
    CHECK(traj.eval(0.5)(0) == doctest::Approx(std::exp(0.5)).epsilon(1e-9));
    CHECK(traj.eval(1.0)(0) == doctest::Approx(std::exp(1.0)).epsilon(1e-9));
}

TEST_CASE("solve: linear test problem recovers the exponent") {
    BvpProblem prob = linear_bvp(10, 4, 0.9, true);
    SolveReport rep = solve(prob);
    CHECK(std::abs(prob.param("T") - 1.0) <= 1e-10);
    CHECK(rep.residual <= 1e-10);
    CHECK(max_breakpoint_error(prob) < 1e-9);
}

TEST_CASE("solve: converged problems are fixed points (0 iterations)") {
    BvpProblem prob = linear_bvp(8, 4, 0.9, true);
    solve(prob);
    MatrixXd before = prob.segment(0).data.values;
    double T_before = prob.param("T");
    SolveReport rep = solve(prob);
    CHECK(rep.iterations == 0);
    CHECK((prob.segment(0).data.values - before).norm() == 0.0);
    CHECK(prob.param("T") == T_before);
}

TEST_CASE("solve: periodic test cycle from a perturbed circle") {
    auto f = make_hopf_test();
    BvpProblem prob;
    prob.add_param("T", 6.2, true);
    OrbitSegment seg = OrbitSegment::from_function(
        uniform_mesh(40), 4,
        [](double t) {
            VectorXd v(3);
            v << 1.2 * std::cos(2.0 * M_PI * t), 1.2 * std::sin(2.0 * M_PI * t), 0.05;
            return v;
        },
        6.2);
    prob.add_segment("cycle", scaled_ode(f, 0, {}), seg);
    prob.add_boundary_condition({"periodic", 3, [](const Endpoints& ep, const VectorXd&) {
                                     return VectorXd(ep.right[0] - ep.left[0]);
                                 }});
    prob.add_boundary_condition({"phase", 1, [](const Endpoints& ep, const VectorXd&) {
                                     return VectorXd::Constant(1, ep.left[0](1));
                                 }});
    solve(prob);
    CHECK(std::abs(prob.param("T") - 2.0 * M_PI) < 1e-8);
    const auto& data = prob.segment(0).data;
    double worst = 0.0;
    for (int j = 0; j <= data.n_intervals(); ++j) {
        VectorXd u = data.values.col(data.col_break(j));
        worst = std::max(worst, std::abs(std::hypot(u(0), u(1)) - 1.0));
        worst = std::max(worst, std::abs(u(2)));
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("remesh: interpolation onto the same mesh is the identity") {
    auto f = make_hopf_test();
    VectorXd u0(3);
    u0 << 0.4, 0.1, 0.2;
    OrbitSegment seg = integrate(f, u0, VectorXd(0), 1.5, 1e-10, 12);
    OrbitSegment same = interpolate_to_mesh(seg, seg.mesh);
    CHECK((same.values - seg.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("remesh: constants stay constant exactly") {
    VectorXd c(2);
    c << 0.7, -1.3;
    OrbitSegment seg = OrbitSegment::constant(9, 4, c, 2.0);
    OrbitSegment out = remesh(seg, 7);
    for (int col = 0; col < out.n_columns(); ++col) {
        CHECK(out.values(0, col) == 0.7);
        CHECK(out.values(1, col) == -1.3);
    }
    CHECK_THROWS_AS(remesh(seg, 3), std::invalid_argument);
}

TEST_CASE("remesh then re-solve gains the superconvergence factor") {
    for (int m : {2, 3}) {
        BvpProblem coarse = linear_bvp(6, m, 1.0, false);
        solve(coarse);
        double err_coarse = max_breakpoint_error(coarse);

        BvpProblem fine = linear_bvp(6, m, 1.0, false);
        fine.segment(0).data = remesh(coarse.segment(0).data, 12);
        solve(fine);
        double err_fine = max_breakpoint_error(fine);

        CHECK(err_coarse / err_fine >= std::pow(2.0, 2 * m - 1));
    }
}

TEST_CASE("collocation order matches 2m on mesh halving") {
    for (int m : {2, 3}) {
        double prev_err = 0.0;
        for (int N : {4, 8, 16}) {
            BvpProblem prob = linear_bvp(N, m, 1.0, false);
            solve(prob);
            double err = max_breakpoint_error(prob);
            if (prev_err > 0.0) {
                double slope = std::log2(prev_err / err);
                CHECK(slope > 2 * m * 0.85);
                CHECK(slope < 2 * m * 1.15);
            }
            prev_err = err;
        }
    }
}

TEST_CASE("newton converges quadratically on the exponent problem") {
    BvpProblem prob = linear_bvp(12, 4, 0.9, true);
    std::vector<double> resid = {prob.residual_norm()};
    NewtonOptions one_step;
    one_step.max_iter = 1;
    for (int k = 0; k < 8 && resid.back() > 1e-12; ++k) {
        try {
            solve(prob, one_step);
        } catch (const NonConvergence&) {
            // state advanced by exactly one damped Newton step
        }
        resid.push_back(prob.residual_norm());
    }
    REQUIRE(resid.size() >= 3);
    for (size_t k = 0; k + 1 < resid.size(); ++k) {
        if (resid[k] < 1e-6) break;  // below this, rounding hides the quadratic tail
        CHECK(resid[k + 1] <= 20.0 * resid[k] * resid[k] + 1e-13);
    }
    CHECK(resid.back() <= 1e-10);
}

TEST_CASE("structurally singular systems are rejected") {
    BvpProblem prob;
    prob.add_param("a", 0.3, true);
    prob.add_param("b", 0.2, true);
    prob.add_boundary_condition({"r1", 1, [](const Endpoints&, const VectorXd& p) {
                                     return VectorXd::Constant(1, p(0) + p(1) - 1.0);
                                 }});
    prob.add_boundary_condition({"r2", 1, [](const Endpoints&, const VectorXd& p) {
                                     return VectorXd::Constant(1, 2.0 * (p(0) + p(1)) - 3.0);
                                 }});
    CHECK_THROWS_AS(solve(prob), SingularJacobian);
}

TEST_CASE("unsolvable conditions raise NonConvergence") {
    BvpProblem prob;
    prob.add_param("p", 1.0, true);
    prob.add_boundary_condition({"noroot", 1, [](const Endpoints&, const VectorXd& p) {
                                     return VectorXd::Constant(1, p(0) * p(0) + 1.0);
                                 }});
    CHECK_THROWS_AS(solve(prob), NonConvergence);
}

TEST_CASE("non-square systems are reported as a logic error") {
    BvpProblem prob = linear_bvp(6, 4, 1.0, true);
    prob.remove_condition("right");
    CHECK_THROWS_AS(solve(prob), std::logic_error);
    CHECK_THROWS_AS(prob.remove_condition("nonexistent"), std::invalid_argument);
}

TEST_CASE("bordered corrector walks the unit circle") {
    BvpProblem prob;
    prob.add_param("x", 1.0, true);
    prob.add_param("p", 0.0, true);
    prob.add_boundary_condition({"circle", 1, [](const Endpoints&, const VectorXd& q) {
                                     return VectorXd::Constant(1, q(0) * q(0) + q(1) * q(1) - 1.0);
                                 }});
    VectorXd prev(2);
    prev << 0.0, 1.0;
    VectorXd t = branch_tangent(prob, prev);
    CHECK(t(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t(1) == doctest::Approx(1.0).epsilon(1e-12));

    VectorXd ref = prob.reduced_state();
    double h = 0.1;
    solve_constrained(prob, t, ref, h);
    CHECK(prob.param("x") * prob.param("x") + prob.param("p") * prob.param("p") ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(prob.param("p") == doctest::Approx(h).epsilon(0.05));
}
