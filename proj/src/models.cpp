#include "snaking/models.hpp"

#include <cmath>

namespace snaking {

namespace {
constexpr double kFdStep = 1e-6;
}

MatrixXd fd_jacobian_state(const VectorFieldSpec& f, const VectorXd& u, const VectorXd& p) {
    MatrixXd J(f.dimension, f.dimension);
    VectorXd up = u, um = u;
    for (int j = 0; j < f.dimension; ++j) {
        up(j) += kFdStep;
        um(j) -= kFdStep;
        J.col(j) = (f.evaluate(up, p) - f.evaluate(um, p)) / (2.0 * kFdStep);
        up(j) = u(j);
        um(j) = u(j);
    }
    return J;
}

MatrixXd fd_jacobian_params(const VectorFieldSpec& f, const VectorXd& u, const VectorXd& p) {
    MatrixXd J(f.dimension, p.size());
    VectorXd pp = p, pm = p;
    for (int j = 0; j < p.size(); ++j) {
        pp(j) += kFdStep;
        pm(j) -= kFdStep;
        J.col(j) = (f.evaluate(u, pp) - f.evaluate(u, pm)) / (2.0 * kFdStep);
        pp(j) = p(j);
        pm(j) = p(j);
    }
    return J;
}

MatrixXd VectorFieldSpec::jac_state(const VectorXd& u, const VectorXd& p) const {
    return jacobian_state ? jacobian_state(u, p) : fd_jacobian_state(*this, u, p);
}

MatrixXd VectorFieldSpec::jac_params(const VectorXd& u, const VectorXd& p) const {
    return jacobian_params ? jacobian_params(u, p) : fd_jacobian_params(*this, u, p);
}

// laser model ----------------------------------------------------------------

VectorFieldSpec make_laser() {
    VectorFieldSpec f;
    f.dimension = 3;
    f.parameter_names = {"nu1", "nu2"};
    f.periodic_coordinates[2] = 2.0 * M_PI;
    f.evaluate = [](const VectorXd& u, const VectorXd& p) -> VectorXd {
        const double x = u(0), y = u(1), phi = u(2);
        const double nu1 = p(0), nu2 = p(1);
        const double r2 = x * x + y * y;
        const double s = 2.0 * std::cos(phi) + nu2;
        VectorXd out(3);
        out(0) = -(nu1 * x - y + x * std::sin(phi) - r2 * x + 0.01 * s * s);
        out(1) = -(nu1 * y + x + y * std::sin(phi) - r2 * y + 0.01 * M_PI * s * s);
        out(2) = -(nu2 - r2 + 2.0 * std::cos(phi));
        return out;
    };
    f.jacobian_state = [](const VectorXd& u, const VectorXd& p) -> MatrixXd {
        const double x = u(0), y = u(1), phi = u(2);
        const double nu1 = p(0), nu2 = p(1);
        const double sp = std::sin(phi), cp = std::cos(phi);
        const double s = 2.0 * cp + nu2;
        MatrixXd J(3, 3);
        J(0, 0) = -(nu1 + sp - 3.0 * x * x - y * y);
        J(0, 1) = -(-1.0 - 2.0 * x * y);
        J(0, 2) = -(x * cp - 0.04 * sp * s);
        J(1, 0) = -(1.0 - 2.0 * x * y);
        J(1, 1) = -(nu1 + sp - x * x - 3.0 * y * y);
        J(1, 2) = -(y * cp - 0.04 * M_PI * sp * s);
        J(2, 0) = 2.0 * x;
        J(2, 1) = 2.0 * y;
        J(2, 2) = 2.0 * sp;
        return J;
    };
    f.jacobian_params = [](const VectorXd& u, const VectorXd& p) -> MatrixXd {
        const double x = u(0), y = u(1), phi = u(2);
        const double s = 2.0 * std::cos(phi) + p(1);
        MatrixXd J(3, 2);
        J(0, 0) = -x;
        J(0, 1) = -0.02 * s;
        J(1, 0) = -y;
        J(1, 1) = -0.02 * M_PI * s;
        J(2, 0) = 0.0;
        J(2, 1) = -1.0;
        return J;
    };
    return f;
}

// normal-form charts ----------------------------------------------------------

namespace {

double coupling_or_zero(const FenichelParams::Coupling& A, const Vector3d& v, double l1,
                        double l2) {
    return A ? A(v, l1, l2) : 0.0;
}

void check_chart(const VectorXd& u, double delta) {
    if (std::abs(u(1)) > delta || std::abs(u(2)) > delta)
        throw std::domain_error("normal-form chart evaluated outside |v^s|,|v^u| <= delta");
}

}  // namespace

VectorFieldSpec make_fenichel(const FenichelParams& fp) {
    if (!(fp.alpha_s < 0.0 && 0.0 < fp.alpha_u))
        throw std::invalid_argument("fenichel rates must satisfy alpha_s < 0 < alpha_u");
    VectorFieldSpec f;
    f.dimension = 3;
    f.parameter_names = {"l1", "l2"};
    f.periodic_coordinates[0] = 2.0 * M_PI;
    f.evaluate = [fp](const VectorXd& u, const VectorXd& p) -> VectorXd {
        check_chart(u, fp.delta);
        const Vector3d v = u.head<3>();
        const double l1 = p(0), l2 = p(1);
        VectorXd out(3);
        out(0) = 1.0 + coupling_or_zero(fp.A_c, v, l1, l2) * v(1) * v(2);
        out(1) = (fp.alpha_s + coupling_or_zero(fp.A_s, v, l1, l2)) * v(1);
        out(2) = (fp.alpha_u + coupling_or_zero(fp.A_u, v, l1, l2)) * v(2);
        return out;
    };
    if (!fp.A_c && !fp.A_s && !fp.A_u) {
        f.jacobian_state = [fp](const VectorXd& u, const VectorXd&) -> MatrixXd {
            check_chart(u, fp.delta);
            MatrixXd J = MatrixXd::Zero(3, 3);
            J(1, 1) = fp.alpha_s;
            J(2, 2) = fp.alpha_u;
            return J;
        };
        f.jacobian_params = [](const VectorXd&, const VectorXd&) { return MatrixXd::Zero(3, 2); };
    }
    return f;
}

Vector3d floquet_identification(const Vector3d& v) {
    return Vector3d(v(0) + 2.0 * M_PI, -v(1), -v(2));
}

VectorFieldSpec make_floquet_negative(const FenichelParams& fp,
                                      const FenichelParams::Coupling& F_s,
                                      const FenichelParams::Coupling& F_u) {
    if (!(fp.alpha_s < 0.0 && 0.0 < fp.alpha_u))
        throw std::invalid_argument("rates must satisfy alpha_s < 0 < alpha_u");
    VectorFieldSpec f;
    f.dimension = 3;
    f.parameter_names = {"l1", "l2"};
    f.periodic_coordinates[0] = 4.0 * M_PI;
    f.evaluate = [fp, F_s, F_u](const VectorXd& u, const VectorXd& p) -> VectorXd {
        check_chart(u, fp.delta);
        const Vector3d v = u.head<3>();
        const double l1 = p(0), l2 = p(1);
        VectorXd out(3);
        out(0) = 1.0;
        out(1) = fp.alpha_s * v(1) + coupling_or_zero(F_s, v, l1, l2);
        out(2) = fp.alpha_u * v(2) + coupling_or_zero(F_u, v, l1, l2);
        return out;
    };
    return f;
}

VectorFieldSpec make_hopf_test() {
    VectorFieldSpec f;
    f.dimension = 3;
    f.parameter_names = {};
    f.evaluate = [](const VectorXd& u, const VectorXd&) -> VectorXd {
        const double x = u(0), y = u(1), z = u(2);
        const double r2 = x * x + y * y;
        VectorXd out(3);
        out(0) = x - y - x * r2;
        out(1) = x + y - y * r2;
        out(2) = -z;
        return out;
    };
    f.jacobian_state = [](const VectorXd& u, const VectorXd&) -> MatrixXd {
        const double x = u(0), y = u(1);
        MatrixXd J(3, 3);
        J(0, 0) = 1.0 - 3.0 * x * x - y * y;
        J(0, 1) = -1.0 - 2.0 * x * y;
        J(0, 2) = 0.0;
        J(1, 0) = 1.0 - 2.0 * x * y;
        J(1, 1) = 1.0 - x * x - 3.0 * y * y;
        J(1, 2) = 0.0;
        J(2, 0) = 0.0;
        J(2, 1) = 0.0;
        J(2, 2) = -1.0;
        return J;
    };
    f.jacobian_params = [](const VectorXd&, const VectorXd& p) {
        return MatrixXd::Zero(3, p.size());
    };
    return f;
}

VectorFieldSpec make_model(const std::string& name, const std::map<std::string, double>& opts) {
    auto get = [&](const std::string& key, double dflt) {
        auto it = opts.find(key);
        return it == opts.end() ? dflt : it->second;
    };
    if (name == "laser") return make_laser();
    if (name == "hopf_test") return make_hopf_test();
    if (name == "fenichel" || name == "floquet_neg") {
        FenichelParams fp;
        fp.alpha_s = get("alpha_s", -1.0);
        fp.alpha_u = get("alpha_u", 1.0);
        fp.delta = get("delta", 0.5);
        return name == "fenichel" ? make_fenichel(fp) : make_floquet_negative(fp);
    }
    throw std::invalid_argument("unknown model name: " + name);
}

}  // namespace snaking
