#include "snaking/periodic.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <utility>

namespace snaking {

namespace {

// orbit and fundamental matrix integrated jointly, state (u, vec M)
struct VariationalFlow {
    DenseTrajectory traj;
    int d;

    MatrixXd matrix_at(double t) const {
        VectorXd z = traj.eval(t);
        return Eigen::Map<const MatrixXd>(z.data() + d, d, d);
    }
};

VariationalFlow integrate_variational(const VectorFieldSpec& field, const VectorXd& lam,
                                      const VectorXd& u0, double T, double tol) {
    const int d = field.dimension;
    VectorXd z0(d + d * d);
    z0.head(d) = u0;
    Eigen::Map<MatrixXd>(z0.data() + d, d, d).setIdentity();
    OdeRhs rhs = [&field, &lam, d](const VectorXd& z) {
        VectorXd u = z.head(d);
        Eigen::Map<const MatrixXd> M(z.data() + d, d, d);
        VectorXd dz(d + d * d);
        dz.head(d) = field.evaluate(u, lam);
        Eigen::Map<MatrixXd>(dz.data() + d, d, d) = field.jac_state(u, lam) * M;
        return dz;
    };
    return {integrate_dense(rhs, z0, T, tol), d};
}

// fundamental matrix over one period as a product of per-mesh-interval flows,
// each restarted on the stored breakpoint value.  Single shooting from u(0)
// drifts exponentially off a saddle cycle; restarting keeps the linearization
// anchored to the orbit everywhere.
MatrixXd piecewise_monodromy(const VectorFieldSpec& field, const VectorXd& lam,
                             const OrbitSegment& seg, double tol) {
    const int d = field.dimension;
    const double T = seg.time_scale;
    MatrixXd M = MatrixXd::Identity(d, d);
    for (int j = 0; j < seg.n_intervals(); ++j) {
        const double span = (seg.mesh[j + 1] - seg.mesh[j]) * T;
        auto vf = integrate_variational(field, lam, seg.values.col(seg.col_break(j)), span, tol);
        M = vf.matrix_at(span) * M;
    }
    return M;
}

void resolve_identification(const Identification& ident, int d, MatrixXd& R, VectorXd& b) {
    if (ident.trivial()) {
        R = MatrixXd::Identity(d, d);
        b = VectorXd::Zero(d);
        return;
    }
    if (ident.R.rows() != d || ident.R.cols() != d)
        throw std::invalid_argument("identification matrix shape does not match the field");
    R = ident.R;
    b = ident.b.size() ? ident.b : VectorXd::Zero(d);
    if (b.size() != d) throw std::invalid_argument("identification shift has wrong size");
}

// return-map derivative over one period; R^{-1} folds in the chart identification
MatrixXd quotient_monodromy(const PeriodicOrbit& po, double tol) {
    MatrixXd M = piecewise_monodromy(po.field, po.lam, po.segment, tol);
    if (!po.ident.trivial()) {
        MatrixXd R;
        VectorXd b;
        resolve_identification(po.ident, po.field.dimension, R, b);
        M = R.partialPivLu().solve(M);
    }
    return M;
}

std::vector<int> modulus_order(const Eigen::VectorXcd& mu) {
    std::vector<int> idx(mu.size());
    for (int i = 0; i < mu.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](int a, int c) { return std::abs(mu(a)) < std::abs(mu(c)); });
    return idx;
}

int trivial_index(const Eigen::VectorXcd& mu) {
    int ti = 0;
    double best = std::abs(mu(0) - 1.0);
    for (int i = 1; i < mu.size(); ++i) {
        double dist = std::abs(mu(i) - 1.0);
        if (dist < best) {
            best = dist;
            ti = i;
        }
    }
    return ti;
}

// extreme-modulus nontrivial multiplier on the requested side of the unit circle
int pick_bundle_index(const Eigen::VectorXcd& mu, BundleSide side) {
    const int ti = trivial_index(mu);
    int pick = -1;
    double ext = side == BundleSide::Unstable ? -1.0 : std::numeric_limits<double>::max();
    for (int i = 0; i < mu.size(); ++i) {
        if (i == ti) continue;
        double a = std::abs(mu(i));
        bool better = side == BundleSide::Unstable ? a > ext : a < ext;
        if (better) {
            ext = a;
            pick = i;
        }
    }
    if (pick < 0) throw WrongMultiplierBranch("orbit has no nontrivial multiplier");
    if (side == BundleSide::Unstable && ext <= 1.0)
        throw WrongMultiplierBranch("no multiplier outside the unit circle (largest nontrivial " +
                                    std::to_string(ext) + ")");
    if (side == BundleSide::Stable && ext >= 1.0)
        throw WrongMultiplierBranch("no multiplier inside the unit circle (smallest nontrivial " +
                                    std::to_string(ext) + ")");
    std::complex<double> m = mu(pick);
    if (std::abs(m.imag()) > 1e-8 * (1.0 + std::abs(m)))
        throw WrongMultiplierBranch("requested multiplier is part of a complex pair");
    return pick;
}

VectorXd real_eigenvector(const Eigen::MatrixXcd& vecs, int k) {
    Eigen::VectorXcd v = vecs.col(k);
    int imax = 0;
    double amax = 0.0;
    for (int i = 0; i < v.size(); ++i)
        if (std::abs(v(i)) > amax) {
            amax = std::abs(v(i));
            imax = i;
        }
    v /= v(imax) / std::abs(v(imax));  // rotate the arbitrary complex phase away
    VectorXd vr = v.real();
    if (v.imag().norm() > 1e-6 * vr.norm())
        throw WrongMultiplierBranch("eigenvector of the requested multiplier is not real");
    return vr.normalized();
}

OrbitSegment mirror_segment(const OrbitSegment& s) {
    const int n = static_cast<int>(s.mesh.size());
    std::vector<double> mesh(n);
    for (int i = 0; i < n; ++i) mesh[i] = 1.0 - s.mesh[n - 1 - i];
    mesh.front() = 0.0;
    mesh.back() = 1.0;
    return OrbitSegment::from_function(
        mesh, s.degree, [&s](double tau) { return s.eval(1.0 - tau); }, s.time_scale);
}

VectorFieldSpec reverse_field(const VectorFieldSpec& f) {
    VectorFieldSpec r = f;
    auto ev = f.evaluate;
    r.evaluate = [ev](const VectorXd& u, const VectorXd& p) { return (-ev(u, p)).eval(); };
    if (f.jacobian_state) {
        auto js = f.jacobian_state;
        r.jacobian_state = [js](const VectorXd& u, const VectorXd& p) { return (-js(u, p)).eval(); };
    }
    if (f.jacobian_params) {
        auto jp = f.jacobian_params;
        r.jacobian_params = [jp](const VectorXd& u, const VectorXd& p) { return (-jp(u, p)).eval(); };
    }
    return r;
}

// the same cycle traversed backwards: reversed field, mirrored segment,
// inverted identification
PeriodicOrbit reversed_orbit(const PeriodicOrbit& po) {
    PeriodicOrbit rev;
    rev.field = reverse_field(po.field);
    rev.lam = po.lam;
    rev.segment = mirror_segment(po.segment);
    rev.reference = rev.segment;
    if (!po.ident.trivial()) {
        const int d = po.field.dimension;
        MatrixXd R;
        VectorXd b;
        resolve_identification(po.ident, d, R, b);
        Eigen::PartialPivLU<MatrixXd> rlu(R);
        rev.ident.R = rlu.solve(MatrixXd::Identity(d, d));
        rev.ident.b = -rlu.solve(b);
    }
    return rev;
}

// orbit and bundle polished together: z = (u, w), u' = T f(u),
// w' = T Df(u) w - lnmu w, with sgn(mu) R w(0) = w(1) and |w(0)| = 1
FloquetBundle bundle_core(const PeriodicOrbit& po, const VariationalFlow& vf, double mu_target,
                          const VectorXd& v0, const PeriodicOptions& opts) {
    const int d = po.field.dimension;
    const double T = po.segment.time_scale;
    const double lnmu = std::log(std::abs(mu_target));
    const double sgn = mu_target >= 0.0 ? 1.0 : -1.0;
    MatrixXd R;
    VectorXd b;
    resolve_identification(po.ident, d, R, b);

    // seed the bundle with the detrended transported eigenvector; two extra
    // polynomial degrees keep the multiplier good to ~1e-9 relative
    const int degree = std::min(10, std::max(po.segment.degree + 2, opts.degree));
    OrbitSegment stacked = OrbitSegment::from_function(
        po.segment.mesh, degree,
        [&](double tau) {
            VectorXd z(2 * d);
            z.head(d) = po.segment.eval(tau);
            z.tail(d) = std::exp(-tau * lnmu) * (vf.matrix_at(tau * T) * v0);
            return z;
        },
        T);

    BvpProblem prob;
    prob.add_param("T", T, true);
    prob.add_param("lnmu", lnmu, true);

    const VectorFieldSpec f = po.field;
    const VectorXd q = po.lam;
    SegmentOde ode;
    ode.dim = 2 * d;
    ode.rhs = [f, q, d](const VectorXd& z, const VectorXd& p) {
        VectorXd u = z.head(d), w = z.tail(d);
        VectorXd dz(2 * d);
        dz.head(d) = p(0) * f.evaluate(u, q);
        dz.tail(d) = p(0) * (f.jac_state(u, q) * w) - p(1) * w;
        return dz;
    };
    ode.jac_p = [f, q, d](const VectorXd& z, const VectorXd&) {
        VectorXd u = z.head(d), w = z.tail(d);
        MatrixXd Jp = MatrixXd::Zero(2 * d, 2);
        Jp.col(0).head(d) = f.evaluate(u, q);
        Jp.col(0).tail(d) = f.jac_state(u, q) * w;
        Jp.col(1).tail(d) = -w;
        return Jp;
    };
    prob.add_segment("orbit_bundle", ode, stacked);

    auto ref = std::make_shared<OrbitSegment>(po.reference);
    prob.add_boundary_condition({"closure", d, [d, R, b](const Endpoints& ep, const VectorXd&) {
                                     return (ep.right[0].head(d) - R * ep.left[0].head(d) - b)
                                         .eval();
                                 }});
    prob.add_boundary_condition(
        {"bundle_closure", d, [d, R, sgn](const Endpoints& ep, const VectorXd&) {
             return (ep.right[0].tail(d) - sgn * (R * ep.left[0].tail(d))).eval();
         }});
    prob.add_boundary_condition({"bundle_norm", 1, [d](const Endpoints& ep, const VectorXd&) {
                                     VectorXd r(1);
                                     r(0) = ep.left[0].tail(d).squaredNorm() - 1.0;
                                     return r;
                                 }});
    prob.add_integral_condition({"phase", 0, [ref, d](double tau, const VectorXd& z, const VectorXd&) {
                                     return (z.head(d) - ref->eval(tau))
                                         .dot(ref->eval_derivative(tau));
                                 }});

    solve(prob, opts.newton);

    const double mu = sgn * std::exp(prob.param("lnmu"));
    if (std::abs(mu - mu_target) > 1e-4 * std::abs(mu_target))
        throw WrongMultiplierBranch("bundle converged to a different multiplier (" +
                                    std::to_string(mu) + " instead of " +
                                    std::to_string(mu_target) + ")");

    const OrbitSegment& seg = prob.segment(0).data;
    FloquetBundle fb;
    fb.bundle_segment.mesh = seg.mesh;
    fb.bundle_segment.degree = seg.degree;
    fb.bundle_segment.values = seg.values.bottomRows(d);
    fb.bundle_segment.time_scale = prob.param("T");
    fb.multiplier = mu;
    return fb;
}

}  // namespace

PeriodicOrbit solve_periodic(const VectorFieldSpec& field, const VectorXd& lam,
                             const OrbitSegment& guess, const OrbitSegment& reference,
                             const PeriodicOptions& opts, SolveReport* report,
                             const Identification& ident) {
    const int d = field.dimension;
    if (guess.dimension() != d)
        throw std::invalid_argument("guess dimension does not match the field");
    MatrixXd R;
    VectorXd b;
    resolve_identification(ident, d, R, b);
    auto ref = std::make_shared<OrbitSegment>(reference);

    BvpProblem prob;
    prob.add_param("T", guess.time_scale, true);

    const VectorFieldSpec f = field;
    const VectorXd q = lam;
    SegmentOde ode;
    ode.dim = d;
    ode.rhs = [f, q](const VectorXd& u, const VectorXd& p) { return (p(0) * f.evaluate(u, q)).eval(); };
    ode.jac_u = [f, q](const VectorXd& u, const VectorXd& p) {
        return (p(0) * f.jac_state(u, q)).eval();
    };
    ode.jac_p = [f, q](const VectorXd& u, const VectorXd&) {
        MatrixXd Jp(f.dimension, 1);
        Jp.col(0) = f.evaluate(u, q);
        return Jp;
    };
    prob.add_segment("orbit", ode, guess);

    prob.add_boundary_condition({"closure", d, [R, b](const Endpoints& ep, const VectorXd&) {
                                     return (ep.right[0] - R * ep.left[0] - b).eval();
                                 }});
    prob.add_integral_condition({"phase", 0, [ref](double tau, const VectorXd& u, const VectorXd&) {
                                     return (u - ref->eval(tau)).dot(ref->eval_derivative(tau));
                                 }});
    // during continuation the phase anchor follows the last accepted orbit
    prob.post_accept = [ref](BvpProblem& p) {
        OrbitSegment cur = p.segment(0).data;
        cur.time_scale = p.param("T");
        *ref = std::move(cur);
    };

    SolveReport rep = solve(prob, opts.newton);
    if (report) *report = rep;

    const double T = prob.param("T");
    if (!(T >= opts.min_period)) throw DegenerateOrbit(T);

    PeriodicOrbit po;
    po.field = field;
    po.lam = lam;
    po.segment = prob.segment(0).data;
    po.segment.time_scale = T;
    po.reference = po.segment;
    po.ident = ident;
    return po;
}

PeriodicOrbit find_periodic_orbit(const VectorFieldSpec& field, const VectorXd& lam,
                                  const VectorXd& seed, const PeriodicOptions& opts) {
    const int d = field.dimension;
    if (seed.size() != d) throw std::invalid_argument("seed dimension does not match the field");
    OdeRhs rhs = [&field, &lam](const VectorXd& u) { return field.evaluate(u, lam); };

    VectorXd u_a = seed;
    if (opts.transient > 0.0) {
        auto tr = integrate_dense(rhs, seed, opts.transient, opts.integrate_tol);
        u_a = tr.eval(opts.transient);
    }
    VectorXd f_a = field.evaluate(u_a, lam);
    const double speed = f_a.norm();
    if (speed <= 1e-8 * (1.0 + u_a.norm())) throw DegenerateOrbit(0.0);  // settled at equilibrium
    VectorXd nrm = f_a / speed;

    // first same-direction crossing of the section through u_a that also lands
    // near u_a again; far crossings of the plane re-arm the detector
    auto traj = integrate_dense(rhs, u_a, opts.t_return_max, opts.integrate_tol);
    const int nsamp = std::max(4096, 16 * traj.n_steps());
    double T_ret = -1.0;
    double g_prev = 0.0, t_prev = 0.0;
    bool armed = false;
    for (int k = 1; k <= nsamp; ++k) {
        const double t = opts.t_return_max * k / nsamp;
        const double g = nrm.dot(traj.eval(t) - u_a);
        if (!armed) {
            if (g < 0.0) armed = true;
        } else if (g_prev < 0.0 && g >= 0.0) {
            double lo = t_prev, hi = t;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                (nrm.dot(traj.eval(mid) - u_a) < 0.0 ? lo : hi) = mid;
            }
            const double t_star = 0.5 * (lo + hi);
            if ((traj.eval(t_star) - u_a).norm() <= 0.1 * (1.0 + u_a.norm())) {
                T_ret = t_star;
                break;
            }
            armed = false;
        }
        g_prev = g;
        t_prev = t;
    }
    if (T_ret < 0.0)
        throw NonConvergence("no return to the transversal section within the search window", 0.0);
    if (T_ret < opts.min_period) throw DegenerateOrbit(T_ret);

    OrbitSegment guess = OrbitSegment::from_function(
        uniform_mesh(opts.n_intervals), opts.degree,
        [&traj, T_ret](double tau) { return traj.eval(tau * T_ret); }, T_ret);
    return solve_periodic(field, lam, guess, guess, opts);
}

Eigen::VectorXcd monodromy_multipliers(const PeriodicOrbit& po, double tol) {
    Eigen::EigenSolver<MatrixXd> es(quotient_monodromy(po, tol));
    if (es.info() != Eigen::Success)
        throw std::runtime_error("monodromy eigenvalue iteration failed");
    Eigen::VectorXcd mu = es.eigenvalues();

    // sub-unit multipliers are ill-conditioned in the forward fundamental
    // matrix (absolute error of the integration swamps them); take them as
    // reciprocals of the reversed-time spectrum instead
    if ((mu.array().abs() < 1.0).any()) {
        PeriodicOrbit rev = reversed_orbit(po);
        Eigen::EigenSolver<MatrixXd> esr(quotient_monodromy(rev, tol));
        Eigen::VectorXcd eta = esr.eigenvalues();
        std::vector<bool> used(eta.size(), false);
        for (int i = 0; i < mu.size(); ++i) {
            if (std::abs(mu(i)) >= 1.0) continue;
            int jb = -1;
            double best = std::numeric_limits<double>::max();
            for (int j = 0; j < eta.size(); ++j) {
                if (used[j]) continue;
                double d = std::abs(mu(i) * eta(j) - 1.0);
                if (d < best) {
                    best = d;
                    jb = j;
                }
            }
            if (jb >= 0 && best < 0.5) {
                mu(i) = 1.0 / eta(jb);
                used[jb] = true;
            }
        }
    }

    Eigen::VectorXcd sorted(mu.size());
    auto order = modulus_order(mu);
    for (int i = 0; i < mu.size(); ++i) sorted(i) = mu(order[i]);

    double best = std::abs(sorted(trivial_index(sorted)) - 1.0);
    if (best > 1e-4)
        throw TrivialMultiplierMissing("no multiplier within 1e-4 of 1 (closest at distance " +
                                       std::to_string(best) + "); orbit is not closed to tolerance");
    return sorted;
}

FloquetBundle solve_floquet_bundle(const PeriodicOrbit& po, BundleSide side,
                                   const PeriodicOptions& opts) {
    const double T = po.segment.time_scale;
    Eigen::EigenSolver<MatrixXd> es(quotient_monodromy(po, opts.integrate_tol));
    Eigen::VectorXcd mu = es.eigenvalues();
    const int k = pick_bundle_index(mu, side);

    if (side == BundleSide::Unstable) {
        auto vf = integrate_variational(po.field, po.lam, po.segment.values.col(0), T,
                                        opts.integrate_tol);
        return bundle_core(po, vf, mu(k).real(), real_eigenvector(es.eigenvectors(), k), opts);
    }

    // stable side: unstable bundle of the time-reversed system, mirrored back.
    // The reversed spectrum carries the stable multiplier far more accurately
    // (as its reciprocal), so consistency is checked there.
    PeriodicOrbit rev = reversed_orbit(po);
    Eigen::EigenSolver<MatrixXd> es_rev(quotient_monodromy(rev, opts.integrate_tol));
    Eigen::VectorXcd mu_rev = es_rev.eigenvalues();
    const int kr = pick_bundle_index(mu_rev, BundleSide::Unstable);
    auto vf_rev = integrate_variational(rev.field, rev.lam, rev.segment.values.col(0), T,
                                        opts.integrate_tol);
    FloquetBundle brev = bundle_core(rev, vf_rev, mu_rev(kr).real(),
                                     real_eigenvector(es_rev.eigenvectors(), kr), opts);

    FloquetBundle fb;
    fb.bundle_segment = mirror_segment(brev.bundle_segment);
    fb.multiplier = 1.0 / brev.multiplier;
    return fb;
}

}  // namespace snaking
