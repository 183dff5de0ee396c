#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "snaking/models.hpp"

using namespace snaking;

namespace {

// independent re-coding of the laser equations, kept deliberately separate
// from the library implementation (duplicate oracle, sign not yet flipped)
Vector3d laser_raw(double x, double y, double phi, double nu1, double nu2) {
    const double r2 = x * x + y * y;
    const double src = 2.0 * std::cos(phi) + nu2;
    return Vector3d(nu1 * x - y + x * std::sin(phi) - r2 * x + 0.01 * src * src,
                    nu1 * y + x + y * std::sin(phi) - r2 * y + 0.01 * M_PI * src * src,
                    nu2 - r2 + 2.0 * std::cos(phi));
}

}  // namespace

TEST_CASE("laser field at hand-checked points") {
    auto f = make_laser();
    VectorXd p(2);
    p << 0.0, 0.0;

    VectorXd u(3);
    u << 0.0, 0.0, M_PI / 2.0;
    VectorXd out = f.evaluate(u, p);
    CHECK(out.norm() == doctest::Approx(0.0).epsilon(1e-14));

    u << 0.0, 0.0, 0.0;
    out = f.evaluate(u, p);
    CHECK(out(0) == doctest::Approx(-0.04).epsilon(1e-14));
    CHECK(out(1) == doctest::Approx(-0.04 * M_PI).epsilon(1e-14));
    CHECK(out(2) == doctest::Approx(-2.0).epsilon(1e-14));
}

TEST_CASE("laser field equals negated duplicate oracle on random points") {
    auto f = make_laser();
    std::mt19937 rng(12345);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        VectorXd u(3), p(2);
        u << d(rng), d(rng), d(rng);
        p << d(rng), d(rng);
        Vector3d want = -laser_raw(u(0), u(1), u(2), p(0), p(1));
        VectorXd got = f.evaluate(u, p);
        CHECK((got - VectorXd(want)).norm() <= 1e-13 * (1.0 + want.norm()));
    }
}

TEST_CASE("laser evaluation is deterministic") {
    auto f = make_laser();
    VectorXd u(3), p(2);
    u << 0.3, -0.7, 1.9;
    p << 0.11, -0.45;
    VectorXd a = f.evaluate(u, p), b = f.evaluate(u, p);
    CHECK(a(0) == b(0));
    CHECK(a(1) == b(1));
    CHECK(a(2) == b(2));
}

TEST_CASE("fenichel chart field") {
    FenichelParams fp;
    fp.alpha_s = -1.0;
    fp.alpha_u = 1.0;
    fp.delta = 0.5;
    auto f = make_fenichel(fp);
    VectorXd p(2);
    p << 0.0, 0.0;

    SUBCASE("on the orbit: unit speed in v^c") {
        VectorXd v(3);
        v << 2.3, 0.0, 0.0;
        VectorXd out = f.evaluate(v, p);
        CHECK(out(0) == 1.0);
        CHECK(out(1) == 0.0);
        CHECK(out(2) == 0.0);
    }
    SUBCASE("linear case") {
        VectorXd v(3);
        v << 0.0, 0.1, 0.05;
        VectorXd out = f.evaluate(v, p);
        CHECK(out(0) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(out(1) == doctest::Approx(-0.1).epsilon(1e-15));
        CHECK(out(2) == doctest::Approx(0.05).epsilon(1e-15));
    }
    SUBCASE("coupling A_s = v^u") {
        FenichelParams fc = fp;
        fc.A_s = [](const Vector3d& v, double, double) { return v(2); };
        auto g = make_fenichel(fc);
        VectorXd v(3);
        v << 0.0, 0.1, 0.05;
        VectorXd out = g.evaluate(v, p);
        CHECK(out(1) == doctest::Approx((-1.0 + 0.05) * 0.1).epsilon(1e-14));
    }
    SUBCASE("outside chart rejected") {
        VectorXd v(3);
        v << 0.0, 0.6, 0.0;
        CHECK_THROWS_AS((void)f.evaluate(v, p), std::domain_error);
    }
}

TEST_CASE("fenichel rejects bad rates") {
    FenichelParams fp;
    fp.alpha_s = 0.5;  // wrong sign
    CHECK_THROWS_AS((void)make_fenichel(fp), std::invalid_argument);
}

TEST_CASE("covering-chart deck map and equivariance") {
    FenichelParams fp;
    fp.alpha_s = -1.0;
    fp.alpha_u = 0.8;
    fp.delta = 0.5;

    SUBCASE("deck map applied twice shifts by full period") {
        Vector3d v(1.2, 0.1, -0.2);
        Vector3d w = floquet_identification(floquet_identification(v));
        CHECK(w(0) == doctest::Approx(v(0) + 4.0 * M_PI).epsilon(1e-15));
        CHECK(w(1) == v(1));
        CHECK(w(2) == v(2));
    }
    SUBCASE("zero-coupling field value") {
        auto f = make_floquet_negative(fp);
        VectorXd v(3), p(2);
        v << 0.0, fp.delta, 0.0;
        p << 0.0, 0.0;
        VectorXd out = f.evaluate(v, p);
        CHECK(out(0) == 1.0);
        CHECK(out(1) == doctest::Approx(fp.alpha_s * fp.delta).epsilon(1e-15));
        CHECK(out(2) == 0.0);
    }
    SUBCASE("equivariance under the deck map, with couplings") {
        // F_s, F_u flip sign under v -> i(v) as required by the quotient construction
        auto Fs = [](const Vector3d& v, double, double) {
            return 0.03 * std::cos(v(0) / 2.0) * v(1) * v(1);
        };
        auto Fu = [](const Vector3d& v, double l1, double) {
            return (0.02 + 0.01 * l1) * std::sin(v(0) / 2.0) * v(2) * v(2);
        };
        auto f = make_floquet_negative(fp, Fs, Fu);
        Eigen::DiagonalMatrix<double, 3> Di(1.0, -1.0, -1.0);
        std::mt19937 rng(99);
        std::uniform_real_distribution<double> d(-0.4, 0.4);
        VectorXd p(2);
        for (int i = 0; i < 100; ++i) {
            Vector3d v(8.0 * d(rng), d(rng), d(rng));
            p << d(rng), d(rng);
            VectorXd lhs = f.evaluate(floquet_identification(v), p);
            VectorXd rhs = Di * f.evaluate(v, p);
            CHECK((lhs - rhs).norm() <= 1e-13);
        }
    }
}

TEST_CASE("hopf test field") {
    auto f = make_hopf_test();
    VectorXd p(0);
    VectorXd u(3);
    u << 1.0, 0.0, 0.0;
    VectorXd out = f.evaluate(u, p);
    CHECK(out(0) == 0.0);
    CHECK(out(1) == 1.0);
    CHECK(out(2) == 0.0);

    u << 0.0, 0.0, 1.0;
    out = f.evaluate(u, p);
    CHECK(out(0) == 0.0);
    CHECK(out(1) == 0.0);
    CHECK(out(2) == -1.0);
}

TEST_CASE("analytic jacobians agree with finite differences") {
    std::mt19937 rng(777);
    std::uniform_real_distribution<double> d(-1.5, 1.5);

    auto check_model = [&](const VectorFieldSpec& f, int npar) {
        for (int i = 0; i < 100; ++i) {
            VectorXd u(3), p(npar);
            u << d(rng), d(rng), d(rng);
            for (int j = 0; j < npar; ++j) p(j) = d(rng);
            MatrixXd Ja = f.jac_state(u, p);
            MatrixXd Jn = fd_jacobian_state(f, u, p);
            CHECK((Ja - Jn).norm() <= 1e-5 * (1.0 + Jn.norm()));
            if (npar > 0) {
                MatrixXd Pa = f.jac_params(u, p);
                MatrixXd Pn = fd_jacobian_params(f, u, p);
                CHECK((Pa - Pn).norm() <= 1e-5 * (1.0 + Pn.norm()));
            }
        }
    };

    check_model(make_laser(), 2);
    check_model(make_hopf_test(), 0);

    FenichelParams fp;
    fp.delta = 10.0;  // wide chart so random points stay valid
    fp.A_c = [](const Vector3d& v, double l1, double) { return 0.1 * std::sin(v(0)) + 0.05 * l1; };
    fp.A_s = [](const Vector3d& v, double, double l2) { return 0.07 * v(2) + 0.02 * l2; };
    fp.A_u = [](const Vector3d& v, double, double) { return 0.04 * v(1); };
    check_model(make_fenichel(fp), 2);
}

TEST_CASE("model factory") {
    auto f = make_model("laser");
    CHECK(f.dimension == 3);
    CHECK(f.parameter_names.size() == 2);
    auto g = make_model("fenichel", {{"alpha_u", 2.0}, {"delta", 0.3}});
    VectorXd v(3), p(2);
    v << 0.0, 0.0, 0.1;
    p << 0.0, 0.0;
    CHECK(g.evaluate(v, p)(2) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK_THROWS_AS((void)make_model("nope"), std::invalid_argument);
}
