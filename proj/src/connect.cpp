#include "snaking/connect.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "snaking/ode.hpp"

namespace snaking {

namespace {

int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

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

// regula falsi with the Illinois cut, interleaved with bisection so the
// bracket provably closes even when the function is flat on one side
double illinois(const std::function<double(double)>& g, double a, double b, double fa, double fb,
                double tol_x, int max_iter) {
    int side = 0;
    for (int it = 0; it < max_iter && b - a > tol_x; ++it) {
        double x;
        if (it % 2 == 1 || fa == fb) {
            x = 0.5 * (a + b);
        } else {
            x = (fa * b - fb * a) / (fa - fb);
            if (!(x > a && x < b)) x = 0.5 * (a + b);
        }
        double fx = g(x);
        if (fx == 0.0 || !std::isfinite(fx)) return x;
        if (sign_of(fx) == sign_of(fa)) {
            a = x;
            fa = fx;
            if (side == -1) fb *= 0.5;
            side = -1;
        } else {
            b = x;
            fb = fx;
            if (side == 1) fa *= 0.5;
            side = 1;
        }
    }
    return 0.5 * (a + b);
}

double golden_min(const std::function<double(double)>& g, double a, double b, int iters = 40) {
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = g(x1), f2 = g(x2);
    for (int i = 0; i < iters; ++i) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = g(x2);
        }
    }
    return 0.5 * (a + b);
}

// complex phase rotated away, largest component made positive; deterministic
// across eigensolver runs so test functions built on frames stay continuous
Vector3d canonical_real(const Eigen::Vector3cd& v) {
    int imax = 0;
    double amax = 0.0;
    for (int i = 0; i < 3; ++i)
        if (std::abs(v(i)) > amax) {
            amax = std::abs(v(i));
            imax = i;
        }
    Eigen::Vector3cd w = v / (v(imax) / std::abs(v(imax)));
    Vector3d vr = w.real();
    if (w.imag().norm() > 1e-6 * vr.norm())
        throw std::runtime_error("orbit frame direction is not real");
    vr.normalize();
    if (vr(imax) < 0.0) vr = -vr;
    return vr;
}

int deck_shift(const VectorXd& gap, const VectorXd& b) {
    const double bb = b.squaredNorm();
    if (bb == 0.0) return 0;
    return static_cast<int>(std::lround(b.dot(gap) / bb));
}

// orbit copy starting at mesh point tau0; columns past the end wrap through
// the deck map u(1+s) = R u(s) + b
OrbitSegment roll_segment(const OrbitSegment& s, double tau0, const MatrixXd& R,
                          const VectorXd& b) {
    return OrbitSegment::from_function(
        s.mesh, s.degree,
        [&](double tau) {
            const double t = tau + tau0;
            if (t <= 1.0) return s.eval(t);
            return (R * s.eval(t - 1.0) + b).eval();
        },
        s.time_scale);
}

std::vector<int> add_model_params(BvpProblem& prob, const VectorFieldSpec& field,
                                  const VectorXd& lam, bool free_params = false) {
    std::vector<int> idx;
    for (size_t i = 0; i < field.parameter_names.size(); ++i)
        idx.push_back(prob.add_param(field.parameter_names[i], lam(static_cast<int>(i)),
                                     free_params));
    return idx;
}

// transition matrix of the variational flow along a stored segment, restarted
// on the collocation orbit at every breakpoint so saddle growth cannot drift
MatrixXd transition_matrix(const VectorFieldSpec& field, const VectorXd& lam,
                           const OrbitSegment& seg, double ta, double tb, double tol) {
    const int d = field.dimension;
    MatrixXd M = MatrixXd::Identity(d, d);
    if (tb <= ta + 1e-15) return M;
    std::vector<double> cuts{ta};
    for (double mk : seg.mesh)
        if (mk > ta + 1e-14 && mk < tb - 1e-14) cuts.push_back(mk);
    cuts.push_back(tb);
    for (size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double span = (cuts[i + 1] - cuts[i]) * seg.time_scale;
        if (span <= 0.0) continue;
        VectorXd z0(d + d * d);
        z0.head(d) = seg.eval(cuts[i]);
        Eigen::Map<MatrixXd>(z0.data() + d, d, d).setIdentity();
        OdeRhs rhs = [&field, &lam, d](const VectorXd& z) {
            VectorXd u = z.head(d);
            Eigen::Map<const MatrixXd> Mz(z.data() + d, d, d);
            VectorXd dz(d + d * d);
            dz.head(d) = field.evaluate(u, lam);
            Eigen::Map<MatrixXd>(dz.data() + d, d, d) = field.jac_state(u, lam) * Mz;
            return dz;
        };
        DenseTrajectory tr = integrate_dense(rhs, z0, span, tol);
        VectorXd zT = tr.eval(span);
        M = Eigen::Map<const MatrixXd>(zT.data() + d, d, d) * M;
    }
    return M;
}

OrbitSegment take_segment(const BvpProblem& prob, const std::string& name,
                          const std::string& time_param) {
    OrbitSegment out = prob.segment(name).data;
    out.time_scale = prob.param(time_param);
    return out;
}

// leg of a connecting orbit grown by time continuation: one end pinned at
// `anchor`, the other watched until its section offset crosses zero
OrbitSegment grow_segment(const VectorFieldSpec& field, const VectorXd& lam, const Section& sec,
                          const std::string& time_name, const std::string& eta_name,
                          const VectorXd& anchor, bool anchor_left, int n_intervals, int degree,
                          double t_cap, const ConnectionOptions& opts) {
    BvpProblem prob;
    const int iT = prob.add_param(time_name, 0.0, true);
    std::vector<int> midx = add_model_params(prob, field, lam);
    const int iEta = prob.add_param(eta_name, sec.offset(anchor), true);

    prob.add_segment("flow", scaled_ode(field, iT, midx),
                     OrbitSegment::constant(n_intervals, degree, anchor, 0.0));
    prob.add_boundary_condition(
        {"pin", static_cast<int>(anchor.size()),
         [anchor, anchor_left](const Endpoints& ep, const VectorXd&) {
             return ((anchor_left ? ep.left[0] : ep.right[0]) - anchor).eval();
         }});
    prob.add_boundary_condition({"reach", 1,
                                 [sec, iEta, anchor_left](const Endpoints& ep, const VectorXd& p) {
                                     VectorXd r(1);
                                     r(0) = sec.offset(anchor_left ? ep.right[0] : ep.left[0]) -
                                            p(iEta);
                                     return r;
                                 }});
    solve(prob, opts.newton);

    ParamRootWalk walk;
    walk.primary = time_name;
    walk.watch = eta_name;
    walk.max_roots = 1;
    walk.both_directions = false;
    walk.step = opts.step;
    walk.step.direction = 1;
    walk.stop = [t_cap, time_name](const BvpProblem& p) { return p.param(time_name) > t_cap; };

    std::vector<BvpProblem::State> roots;
    try {
        roots = collect_param_roots(prob, walk);
    } catch (const NoRoot&) {
        throw SectionNotReached(t_cap);
    }
    prob.load_state(roots.front());
    return take_segment(prob, "flow", time_name);
}

}  // namespace

// --- setup -------------------------------------------------------------------

ConnectionProblem make_connection_problem(PeriodicOrbit po, FloquetBundle bundle,
                                          ConnectionSetup setup, const ConnectionOptions&) {
    ConnectionProblem cp;
    if (setup.section) {
        cp.section = setup.section(po.lam);
    } else if (setup.equilibrium) {
        // plane through the midpoint of E_far and the orbit mean, facing E_far
        Vector3d e_far = setup.equilibrium(po.lam) + setup.lift;
        Vector3d mean = Vector3d::Zero();
        const int m1 = po.segment.degree + 1;
        for (int j = 0; j < po.segment.n_intervals(); ++j)
            mean += po.segment.values.col(j * m1).head<3>();
        mean /= po.segment.n_intervals();
        cp.section.normal = (e_far - mean).normalized();
        cp.section.point = 0.5 * (e_far + mean);
    } else {
        throw std::invalid_argument("need either a section hook or an equilibrium hook");
    }
    cp.po = std::move(po);
    cp.bundle = std::move(bundle);
    cp.setup = std::move(setup);
    return cp;
}

// --- root-collecting walker ----------------------------------------------------

std::vector<BvpProblem::State> collect_param_roots(BvpProblem& prob, const ParamRootWalk& walk) {
    const std::string watch = walk.watch.empty() ? walk.primary : walk.watch;
    const int ip = prob.param_index(walk.primary);
    const BvpProblem::State start = prob.save_state();
    const double w0 = prob.param(watch) - walk.root_value;

    std::vector<BvpProblem::State> roots;
    auto known = [&roots](const VectorXd& p) {
        for (const auto& r : roots)
            if ((r.params - p).norm() <= 1e-7 * (1.0 + p.norm())) return true;
        return false;
    };

    std::vector<int> dirs{walk.step.direction >= 0 ? 1 : -1};
    if (walk.both_directions) dirs.push_back(-dirs[0]);

    for (int dir0 : dirs) {
        prob.load_state(start);
        int dir = dir0;
        double prev = sign_of(w0);
        for (int found = 0; found < walk.max_roots && static_cast<int>(roots.size()) < walk.max_roots;
             ++found) {
            bool crossed = false;
            StopConditions sc;
            sc.predicate = [&](const BvpProblem& p) {
                if (walk.stop && walk.stop(p)) return true;
                const double s = sign_of(p.param(watch) - walk.root_value);
                if (prev == 0.0) {
                    prev = s;
                    return false;
                }
                if (s != 0.0 && s != prev) {
                    crossed = true;
                    prev = s;
                    return true;
                }
                if (s != 0.0) prev = s;
                return false;
            };
            StepOptions so = walk.step;
            so.direction = dir;
            Branch br;
            try {
                br = continue_branch(prob, walk.primary, so, sc);
            } catch (const FirstStepFailure&) {
                break;
            } catch (const StepUnderflow&) {
                break;
            } catch (const SingularJacobian&) {
                break;  // branch degenerated; whatever was found so far stands
            } catch (const NonConvergence&) {
                break;
            } catch (const std::domain_error&) {
                break;  // walked out of a model chart
            }
            if (!crossed || br.stop_reason != "predicate") break;

            // land exactly on the root, then release the parameter again
            prob.set_param(watch, walk.root_value);
            prob.set_free(watch, false);
            try {
                solve(prob, so.newton);
            } catch (...) {
                prob.set_free(watch, true);
                break;
            }
            prob.set_free(watch, true);
            if (!known(prob.params())) roots.push_back(prob.save_state());

            // resume the way the branch was heading, which may have flipped at
            // a fold of the primary parameter between roots
            if (br.points.size() >= 2) {
                const double dp = br.points.back().params(ip) -
                                  br.points[br.points.size() - 2].params(ip);
                if (dp != 0.0) dir = dp > 0.0 ? 1 : -1;
            }
            prev = 0.0;
        }
    }
    if (roots.empty()) throw NoRoot("no " + watch + " root within the walk range");
    return roots;
}

// --- connection stages ---------------------------------------------------------

ConnectionProblem grow_unstable_segment(ConnectionProblem cp, const ConnectionOptions& opts) {
    if (cp.bundle.bundle_segment.values.size() == 0)
        throw std::invalid_argument("unstable bundle missing");
    VectorXd u0 = cp.po.segment.eval(0.0) + cp.delta_start * cp.bundle.bundle_segment.eval(0.0);
    cp.u_minus = grow_segment(cp.po.field, cp.po.lam, cp.section, "Tm", "eta_minus", u0, true,
                              opts.n_minus, opts.degree, opts.t_minus_cap, opts);
    if (cp.stage == ConnectionStage::Seeded) cp.stage = ConnectionStage::MinusGrown;
    return cp;
}

ConnectionProblem grow_stable_segment(ConnectionProblem cp, const ConnectionOptions& opts) {
    if (!cp.setup.equilibrium || !cp.setup.stable_dir)
        throw std::invalid_argument("equilibrium hooks missing");
    Vector3d e_far = cp.setup.equilibrium(cp.po.lam) + cp.setup.lift;
    Vector3d vs = cp.setup.stable_dir(cp.po.lam).normalized();
    VectorXd anchor = e_far + cp.eps_end * vs;
    cp.u_plus = grow_segment(cp.po.field, cp.po.lam, cp.section, "Tp", "eta_plus", anchor, false,
                             opts.n_plus, opts.degree, opts.t_plus_cap, opts);
    cp.has_u_plus = true;
    if (cp.stage == ConnectionStage::MinusGrown) cp.stage = ConnectionStage::PlusGrown;
    return cp;
}

std::vector<ConnectionProblem> close_gap(const ConnectionProblem& cp,
                                         const ConnectionOptions& opts) {
    if (!cp.has_u_plus || cp.u_minus.values.size() == 0)
        throw std::invalid_argument("both segments must be grown before closing the gap");

    VectorXd g0 = cp.u_plus.eval(0.0) - cp.u_minus.eval(1.0);
    if (g0.norm() <= opts.gap_tol) {
        ConnectionProblem done = cp;
        done.eta = 0.0;
        done.stage = ConnectionStage::Glued;
        return {done};
    }
    const Vector3d z = g0.normalized().head<3>();

    const VectorFieldSpec& field = cp.po.field;
    BvpProblem prob;
    const int iTm = prob.add_param("Tm", cp.u_minus.time_scale, true);
    const int iTp = prob.add_param("Tp", cp.u_plus.time_scale, true);
    std::vector<int> midx = add_model_params(prob, field, cp.po.lam);
    const int iDelta = prob.add_param("delta", cp.delta_start, true);
    const int iEps = prob.add_param("eps", cp.eps_end, true);
    const int iEta = prob.add_param("eta", g0.norm(), true);

    prob.add_segment("minus", scaled_ode(field, iTm, midx), cp.u_minus);
    prob.add_segment("plus", scaled_ode(field, iTp, midx), cp.u_plus);

    const VectorXd po0 = cp.po.segment.eval(0.0);
    const VectorXd w0 = cp.bundle.bundle_segment.eval(0.0);
    prob.add_boundary_condition({"launch", 3, [po0, w0, iDelta](const Endpoints& ep,
                                                                const VectorXd& p) {
                                     return (ep.left[0] - po0 - p(iDelta) * w0).eval();
                                 }});
    const Vector3d e_far = cp.setup.equilibrium(cp.po.lam) + cp.setup.lift;
    const Vector3d vs = cp.setup.stable_dir(cp.po.lam).normalized();
    prob.add_boundary_condition({"anchor", 3, [e_far, vs, iEps](const Endpoints& ep,
                                                                const VectorXd& p) {
                                     return (ep.right[1] - e_far - p(iEps) * vs).eval();
                                 }});
    prob.add_boundary_condition({"gap", 3, [z, iEta](const Endpoints& ep, const VectorXd& p) {
                                     return (ep.left[1] - ep.right[0] - p(iEta) * z).eval();
                                 }});
    const Section sec = cp.section;
    prob.add_boundary_condition({"lin_section", 1, [sec](const Endpoints& ep, const VectorXd&) {
                                     VectorXd r(1);
                                     r(0) = sec.offset(ep.right[0]);
                                     return r;
                                 }});
    solve(prob, opts.newton);

    ParamRootWalk walk;
    walk.primary = "delta";
    walk.watch = "eta";
    walk.max_roots = opts.max_gap_roots;
    walk.step = opts.step;
    const double d0 = std::abs(cp.delta_start);
    const int s0 = sign_of(cp.delta_start);
    const double dec = opts.delta_decades;
    walk.stop = [d0, s0, dec](const BvpProblem& p) {
        const double d = p.param("delta");
        if (sign_of(d) != s0) return true;
        return std::abs(std::log10(std::abs(d) / d0)) > dec;
    };

    std::vector<ConnectionProblem> out;
    for (const auto& st : collect_param_roots(prob, walk)) {
        prob.load_state(st);
        ConnectionProblem g = cp;
        g.u_minus = take_segment(prob, "minus", "Tm");
        g.u_plus = take_segment(prob, "plus", "Tp");
        g.delta_start = prob.param("delta");
        g.eps_end = prob.param("eps");
        g.gap_direction = z;
        g.eta = 0.0;
        g.stage = ConnectionStage::Glued;
        out.push_back(std::move(g));
    }
    return out;
}

ConnectionProblem torus_intersection(ConnectionProblem cp, double radius,
                                     const ConnectionOptions& opts) {
    if (!(radius > 0.0)) throw std::invalid_argument("torus radius must be positive");
    if (cp.u_minus.values.size() == 0)
        throw std::invalid_argument("unstable segment not grown");
    const bool full = cp.has_u_plus && cp.stage == ConnectionStage::Glued;

    const VectorFieldSpec& field = cp.po.field;
    const VectorXd lam = cp.po.lam;
    MatrixXd R;
    VectorXd b;
    resolve_identification(cp.po.ident, 3, R, b);

    // second orbit copy rolled so its start is the break point nearest the
    // junction; the deck count k is frozen here
    const VectorXd junction = cp.u_minus.eval(1.0);
    const OrbitSegment& pseg = cp.po.segment;
    int best_j = 0, k = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < pseg.n_intervals(); ++j) {
        VectorXd col = pseg.values.col(j * (pseg.degree + 1));
        const int kj = deck_shift(junction - col, b);
        const double dj = (junction - col - kj * b).norm();
        if (dj < best_d) {
            best_d = dj;
            best_j = j;
            k = kj;
        }
    }
    OrbitSegment hat = roll_segment(pseg, pseg.mesh[best_j], R, b);

    BvpProblem prob;
    const int iTm = prob.add_param("Tm", cp.u_minus.time_scale, true);
    const int iThat = prob.add_param("That", pseg.time_scale, true);
    std::vector<int> midx = add_model_params(prob, field, lam);
    const int iDelta = prob.add_param("delta", cp.delta_start, full);
    int iTp = -1, iEps = -1;
    if (full) {
        iTp = prob.add_param("Tp", cp.u_plus.time_scale, true);
        iEps = prob.add_param("eps", cp.eps_end, true);
    }

    prob.add_segment("minus", scaled_ode(field, iTm, midx), cp.u_minus);
    prob.add_segment("hat", scaled_ode(field, iThat, midx), hat);
    if (full) prob.add_segment("plus", scaled_ode(field, iTp, midx), cp.u_plus);

    const VectorXd po0 = pseg.eval(0.0);
    const VectorXd w0 = cp.bundle.bundle_segment.eval(0.0);
    prob.add_boundary_condition({"launch", 3, [po0, w0, iDelta](const Endpoints& ep,
                                                                const VectorXd& p) {
                                     return (ep.left[0] - po0 - p(iDelta) * w0).eval();
                                 }});
    prob.add_boundary_condition({"hat_closure", 3, [R, b](const Endpoints& ep, const VectorXd&) {
                                     return (ep.right[1] - R * ep.left[1] - b).eval();
                                 }});
    const VectorXd hat0 = hat.eval(0.0);
    const VectorXd fhat0 = field.evaluate(hat0, lam);
    prob.add_boundary_condition({"hat_phase", 1, [hat0, fhat0](const Endpoints& ep,
                                                               const VectorXd&) {
                                     VectorXd r(1);
                                     r(0) = (ep.left[1] - hat0).dot(fhat0);
                                     return r;
                                 }});
    const VectorXd kb = static_cast<double>(k) * b;
    const VectorFieldSpec fld = field;
    const VectorXd lamc = lam;
    auto flow_gap = [fld, lamc, kb](const Endpoints& ep) {
        return std::make_pair(fld.evaluate(ep.left[1], lamc),
                              (ep.right[0] - ep.left[1] - kb).eval());
    };
    const double eta1_0 = fhat0.dot(junction - hat0 - kb);
    const int iEta1 = prob.add_param("eta1", eta1_0, true);
    prob.add_boundary_condition({"section_phase", 1,
                                 [flow_gap, iEta1](const Endpoints& ep, const VectorXd& p) {
                                     auto [f, gap] = flow_gap(ep);
                                     VectorXd r(1);
                                     r(0) = f.dot(gap) - p(iEta1);
                                     return r;
                                 }});
    if (full) {
        const Vector3d e_far = cp.setup.equilibrium(lam) + cp.setup.lift;
        const Vector3d vs = cp.setup.stable_dir(lam).normalized();
        prob.add_boundary_condition({"anchor", 3, [e_far, vs, iEps](const Endpoints& ep,
                                                                    const VectorXd& p) {
                                         return (ep.right[2] - e_far - p(iEps) * vs).eval();
                                     }});
        prob.add_boundary_condition({"gap", 3, [](const Endpoints& ep, const VectorXd&) {
                                         return (ep.left[2] - ep.right[0]).eval();
                                     }});
    }
    solve(prob, opts.newton);

    // slide the junction into the Poincare section of hat(0) by walking the
    // segment time; collect crossings, keep the one closest to the orbit copy
    const double tm0 = cp.u_minus.time_scale;
    const double that0 = pseg.time_scale;
    const double tm_lo = std::max(0.5 * that0, 0.02 * tm0);
    const double tm_hi = tm0 + 0.6 * that0;
    auto dist_now = [kb](const BvpProblem& p) {
        const OrbitSegment& mn = p.segment("minus").data;
        const OrbitSegment& ht = p.segment("hat").data;
        return (mn.values.col(mn.n_columns() - 1) - ht.values.col(0) - kb).norm();
    };

    ParamRootWalk walk;
    walk.primary = "Tm";
    walk.watch = "eta1";
    walk.max_roots = opts.max_section_roots;
    walk.step = opts.step;
    walk.stop = [tm_lo, tm_hi, radius, dist_now](const BvpProblem& p) {
        const double tm = p.param("Tm");
        if (tm > tm_hi || tm < tm_lo) return true;
        return dist_now(p) < 0.25 * radius;
    };

    std::vector<BvpProblem::State> roots;
    try {
        roots = collect_param_roots(prob, walk);
    } catch (const NoRoot&) {
        throw NoSectionRoot("junction never meets the section of the orbit copy");
    }
    size_t best = 0;
    double dmin = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < roots.size(); ++i) {
        prob.load_state(roots[i]);
        const double d = dist_now(prob);
        if (d < dmin) {
            dmin = d;
            best = i;
        }
    }
    prob.load_state(roots[best]);

    // swap the phase pin for the distance condition and walk out to the radius
    prob.remove_condition("hat_phase");
    prob.set_free("eta1", false);
    const double dist0 = dist_now(prob);
    const int iEta2 = prob.add_param("eta2", dist0, true);
    prob.add_boundary_condition({"bc_radius", 1, [kb, iEta2](const Endpoints& ep,
                                                             const VectorXd& p) {
                                     VectorXd r(1);
                                     r(0) = (ep.right[0] - ep.left[1] - kb).norm() - p(iEta2);
                                     return r;
                                 }});
    if (std::abs(dist0 - radius) > 1e-12) {
        StepOptions so = opts.step;
        so.direction = radius > dist0 ? 1 : -1;
        StopConditions sc;
        (radius > dist0 ? sc.param_max : sc.param_min) = radius;
        Branch br = continue_branch(prob, "eta2", so, sc);
        if (br.stop_reason.rfind("param_bound", 0) != 0)
            throw RadiusNotReachable("distance walk stopped before the torus radius (" +
                                         br.stop_reason + ")",
                                     prob.param("eta2"));
    }

    cp.u_minus = take_segment(prob, "minus", "Tm");
    cp.hat_p = take_segment(prob, "hat", "That");
    cp.has_hat = true;
    if (full) {
        cp.u_plus = take_segment(prob, "plus", "Tp");
        cp.delta_start = prob.param("delta");
        cp.eps_end = prob.param("eps");
    }
    cp.eta = 0.0;
    cp.torus_radius = radius;
    cp.stage = ConnectionStage::OnTorus;
    return cp;
}

// --- orbit frames ----------------------------------------------------------------

OrbitFrame orbit_frame_at(const VectorFieldSpec& field, const VectorXd& lam,
                          const OrbitSegment& orbit, const Identification& ident, double tau,
                          double tol) {
    if (field.dimension != 3) throw std::invalid_argument("orbit frames are three-dimensional");
    MatrixXd R;
    VectorXd b;
    resolve_identification(ident, 3, R, b);

    // return map linearization based at orbit(tau)
    MatrixXd M_tail = transition_matrix(field, lam, orbit, tau, 1.0, tol);
    MatrixXd M_head = transition_matrix(field, lam, orbit, 0.0, tau, tol);
    MatrixXd M = M_head * R.partialPivLu().solve(M_tail);

    Eigen::EigenSolver<MatrixXd> es(M);
    Eigen::Vector3cd mu = es.eigenvalues();
    int ti = 0;
    double best = std::abs(mu(0) - 1.0);
    for (int i = 1; i < 3; ++i)
        if (std::abs(mu(i) - 1.0) < best) {
            best = std::abs(mu(i) - 1.0);
            ti = i;
        }
    int is = -1, iu = -1;
    for (int i = 0; i < 3; ++i) {
        if (i == ti) continue;
        (is < 0 ? is : iu) = i;
    }
    if (std::abs(mu(is)) > std::abs(mu(iu))) std::swap(is, iu);
    if (!(std::abs(mu(is)) < 1.0 && std::abs(mu(iu)) > 1.0))
        throw std::runtime_error("orbit is not of saddle type at this point");

    OrbitFrame fr;
    fr.v_stable = canonical_real(es.eigenvectors().col(is));
    fr.v_unstable = canonical_real(es.eigenvectors().col(iu));
    fr.mult_stable = mu(is).real();
    fr.mult_unstable = mu(iu).real();
    fr.flow = field.evaluate(orbit.eval(tau), lam).head<3>().normalized();
    return fr;
}

// --- gamma curve on the torus -----------------------------------------------------

GammaCurve assemble_gamma(std::vector<TorusObservation> obs, double radius) {
    if (obs.size() < 3) throw std::invalid_argument("need at least three torus points");
    if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
    const int n = static_cast<int>(obs.size());
    for (const auto& o : obs)
        if (std::abs((o.point - o.base).norm() - radius) > 1e-8)
            throw std::runtime_error("torus point violates the distance invariant");

    // eigenvector signs are arbitrary per solve; align along the branch
    for (int i = 1; i < n; ++i) {
        if (obs[i].v_stable.dot(obs[i - 1].v_stable) < 0.0) obs[i].v_stable = -obs[i].v_stable;
        if (obs[i].v_unstable.dot(obs[i - 1].v_unstable) < 0.0)
            obs[i].v_unstable = -obs[i].v_unstable;
    }

    std::vector<double> phi(n);
    for (int i = 0; i < n; ++i) {
        Eigen::Matrix3d A;
        A.col(0) = obs[i].v_stable;
        A.col(1) = obs[i].v_unstable;
        A.col(2) = obs[i].flow;
        Vector3d c = A.colPivHouseholderQr().solve((obs[i].point - obs[i].base).head<3>().eval());
        const double raw = std::atan2(c(1), c(0));
        if (i == 0) {
            phi[0] = raw;
        } else {
            phi[i] = raw + 2.0 * M_PI * std::round((phi[i - 1] - raw) / (2.0 * M_PI));
            if (std::abs(phi[i] - phi[i - 1]) >= M_PI)
                throw std::runtime_error("torus angle jump between consecutive samples");
        }
    }

    int imin = 0;
    for (int i = 1; i < n; ++i)
        if (obs[i].lam(1) < obs[imin].lam(1)) imin = i;
    const double shift = phi[imin];

    GammaCurve curve;
    curve.torus_radius = radius;
    curve.samples.resize(n);
    for (int i = 0; i < n; ++i) {
        curve.samples[i].phi = phi[i] - shift;
        curve.samples[i].lam = obs[i].lam;
        curve.samples[i].point = obs[i].point;
        curve.samples[i].base = obs[i].base;
        curve.samples[i].s = obs[i].s;
    }
    return curve;
}

GammaShape gamma_shape(const GammaCurve& curve) {
    int n = static_cast<int>(curve.samples.size());
    if (n < 3) throw std::invalid_argument("gamma curve too short");
    // a closed branch repeats its first sample; drop the seam for circular counts
    if ((curve.samples[n - 1].point - curve.samples[0].point).norm() <
        1e-6 * (1.0 + curve.samples[0].point.norm()))
        --n;

    GammaShape shape;
    int up = 0, down = 0;
    for (int i = 1; i < n; ++i) {
        const double d = curve.samples[i].phi - curve.samples[i - 1].phi;
        if (d > 0.0) ++up;
        if (d < 0.0) ++down;
    }
    shape.single_valued = (up == 0 || down == 0);

    double lam_min = std::numeric_limits<double>::infinity();
    double lam_max = -std::numeric_limits<double>::infinity();
    double phi_lo = std::numeric_limits<double>::infinity();
    double phi_hi = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const double cur = curve.samples[i].lam(1);
        const double prev = curve.samples[(i + n - 1) % n].lam(1);
        const double next = curve.samples[(i + 1) % n].lam(1);
        if (cur < prev && cur < next) {
            ++shape.n_minima;
            if (cur < lam_min) {
                lam_min = cur;
                shape.second_diff_at_min = next - 2.0 * cur + prev;
            }
        }
        if (cur > prev && cur > next) {
            ++shape.n_maxima;
            if (cur > lam_max) {
                lam_max = cur;
                shape.second_diff_at_max = next - 2.0 * cur + prev;
            }
        }
        phi_lo = std::min(phi_lo, curve.samples[i].phi);
        phi_hi = std::max(phi_hi, curve.samples[i].phi);
    }
    shape.phi_span = phi_hi - phi_lo;
    return shape;
}

GammaCurve continue_gamma(const ConnectionProblem& cp, const CbParametrization& cb,
                          double s_start, const ConnectionOptions& opts) {
    if (cp.stage != ConnectionStage::OnTorus || !cp.has_hat || !cp.has_u_plus)
        throw std::invalid_argument("torus intersection with both segments required");
    if (!cb.eval) throw std::invalid_argument("empty locus parametrization");

    const VectorFieldSpec field = cp.po.field;
    MatrixXd R;
    VectorXd b;
    resolve_identification(cp.po.ident, 3, R, b);
    const double sgn = cp.bundle.multiplier >= 0.0 ? 1.0 : -1.0;
    const int k = deck_shift(cp.u_minus.eval(1.0) - cp.hat_p.eval(0.0), b);
    const VectorXd kb = static_cast<double>(k) * b;
    const double r_torus = cp.torus_radius;

    BvpProblem prob;
    const int iS = prob.add_param("s", s_start, true);
    std::vector<int> midx = add_model_params(prob, field, cp.po.lam, true);
    const int iT = prob.add_param("T", cp.po.segment.time_scale, true);
    const int iLnmu = prob.add_param("lnmu", std::log(std::abs(cp.bundle.multiplier)), true);
    const int iThat = prob.add_param("That", cp.hat_p.time_scale, true);
    const int iTm = prob.add_param("Tm", cp.u_minus.time_scale, true);
    const int iTp = prob.add_param("Tp", cp.u_plus.time_scale, true);
    const int iDelta = prob.add_param("delta", cp.delta_start, true);
    const int iEps = prob.add_param("eps", cp.eps_end, true);

    // orbit and expanding bundle advance together so the launch fiber tracks
    // the family; same stacked form as the bundle solver
    const int bdeg = std::max(cp.po.segment.degree, cp.bundle.bundle_segment.degree);
    OrbitSegment stacked = OrbitSegment::from_function(
        cp.po.segment.mesh, bdeg,
        [&](double tau) {
            VectorXd z(6);
            z.head(3) = cp.po.segment.eval(tau);
            z.tail(3) = cp.bundle.bundle_segment.eval(tau);
            return z;
        },
        cp.po.segment.time_scale);
    SegmentOde stacked_ode;
    stacked_ode.dim = 6;
    {
        auto pick = [midx](const VectorXd& p) {
            VectorXd q(midx.size());
            for (size_t i = 0; i < midx.size(); ++i) q(i) = p(midx[i]);
            return q;
        };
        const VectorFieldSpec f = field;
        const int jT = iT, jL = iLnmu;
        stacked_ode.rhs = [f, pick, jT, jL](const VectorXd& z, const VectorXd& p) {
            VectorXd q = pick(p);
            VectorXd u = z.head(3), w = z.tail(3);
            VectorXd dz(6);
            dz.head(3) = p(jT) * f.evaluate(u, q);
            dz.tail(3) = p(jT) * (f.jac_state(u, q) * w) - p(jL) * w;
            return dz;
        };
    }
    prob.add_segment("orbit_bundle", stacked_ode, stacked);
    prob.add_segment("hat", scaled_ode(field, iThat, midx), cp.hat_p);
    prob.add_segment("minus", scaled_ode(field, iTm, midx), cp.u_minus);
    prob.add_segment("plus", scaled_ode(field, iTp, midx), cp.u_plus);

    prob.add_boundary_condition({"closure", 3, [R, b](const Endpoints& ep, const VectorXd&) {
                                     return (ep.right[0].head(3) - R * ep.left[0].head(3) - b)
                                         .eval();
                                 }});
    prob.add_boundary_condition({"bundle_closure", 3, [R, sgn](const Endpoints& ep,
                                                               const VectorXd&) {
                                     return (ep.right[0].tail(3) - sgn * (R * ep.left[0].tail(3)))
                                         .eval();
                                 }});
    prob.add_boundary_condition({"bundle_norm", 1, [](const Endpoints& ep, const VectorXd&) {
                                     VectorXd r(1);
                                     r(0) = ep.left[0].tail(3).squaredNorm() - 1.0;
                                     return r;
                                 }});
    auto ref = std::make_shared<OrbitSegment>(cp.po.segment);
    prob.add_integral_condition(
        {"phase", 0, [ref](double tau, const VectorXd& z, const VectorXd&) {
             return (z.head(3) - ref->eval(tau)).dot(ref->eval_derivative(tau));
         }});
    prob.add_boundary_condition({"launch", 3, [iDelta](const Endpoints& ep, const VectorXd& p) {
                                     return (ep.left[2] - ep.left[0].head(3) -
                                             p(iDelta) * ep.left[0].tail(3))
                                         .eval();
                                 }});
    auto equilibrium = cp.setup.equilibrium;
    auto stable_dir = cp.setup.stable_dir;
    const Vector3d lift = cp.setup.lift;
    const int jN1 = midx[0], jN2 = midx[1];
    prob.add_boundary_condition(
        {"anchor", 3, [equilibrium, stable_dir, lift, iEps, jN1, jN2](const Endpoints& ep,
                                                                      const VectorXd& p) {
             VectorXd nu(2);
             nu << p(jN1), p(jN2);
             Vector3d target = equilibrium(nu) + lift + p(iEps) * stable_dir(nu).normalized();
             return (ep.right[3] - target).eval();
         }});
    prob.add_boundary_condition({"gap", 3, [](const Endpoints& ep, const VectorXd&) {
                                     return (ep.left[3] - ep.right[2]).eval();
                                 }});
    prob.add_boundary_condition({"hat_closure", 3, [R, b](const Endpoints& ep, const VectorXd&) {
                                     return (ep.right[1] - R * ep.left[1] - b).eval();
                                 }});
    const VectorFieldSpec fld = field;
    prob.add_boundary_condition(
        {"section_phase", 1, [fld, kb, jN1, jN2](const Endpoints& ep, const VectorXd& p) {
             VectorXd nu(2);
             nu << p(jN1), p(jN2);
             VectorXd r(1);
             r(0) = fld.evaluate(ep.left[1], nu).dot(ep.right[2] - ep.left[1] - kb);
             return r;
         }});
    prob.add_boundary_condition({"bc_radius", 1, [kb, r_torus](const Endpoints& ep,
                                                               const VectorXd&) {
                                     VectorXd r(1);
                                     r(0) = (ep.right[2] - ep.left[1] - kb).norm() - r_torus;
                                     return r;
                                 }});
    auto locus = cb;
    prob.add_boundary_condition({"tie", 2, [locus, iS, jN1, jN2](const Endpoints&,
                                                                 const VectorXd& p) {
                                     Eigen::Vector2d t = locus.eval(p(iS));
                                     VectorXd r(2);
                                     r(0) = p(jN1) - t(0);
                                     r(1) = p(jN2) - t(1);
                                     return r;
                                 }});

    auto obs = std::make_shared<std::vector<TorusObservation>>();
    const Identification ident = cp.po.ident;
    auto capture = [obs, ref, field, ident, kb, jN1, jN2](BvpProblem& p) {
        // phase anchor follows the accepted orbit
        const OrbitSegment& ob = p.segment("orbit_bundle").data;
        OrbitSegment cur;
        cur.mesh = ob.mesh;
        cur.degree = ob.degree;
        cur.values = ob.values.topRows(3);
        cur.time_scale = p.param("T");
        *ref = cur;

        VectorXd nu(2);
        nu << p.params()(jN1), p.params()(jN2);
        OrbitSegment hat_now = p.segment("hat").data;
        hat_now.time_scale = p.param("That");
        const OrbitSegment& mn = p.segment("minus").data;

        TorusObservation o;
        o.base = hat_now.values.col(0).head<3>();
        o.point = (mn.values.col(mn.n_columns() - 1) - kb).head<3>();
        OrbitFrame fr = orbit_frame_at(field, nu, hat_now, ident, 0.0, 1e-9);
        o.v_stable = fr.v_stable;
        o.v_unstable = fr.v_unstable;
        o.flow = fr.flow;
        o.lam = Eigen::Vector2d(nu(0), nu(1));
        o.s = p.param("s");
        obs->push_back(o);
    };
    prob.post_accept = capture;

    solve(prob, opts.newton);
    capture(prob);

    StepOptions so = opts.step;
    StopConditions sc;
    Branch br = continue_branch(prob, "s", so, sc);

    GammaCurve curve = assemble_gamma(*obs, r_torus);
    curve.closed = br.closed;
    for (const auto& ev : br.events)
        if (ev.kind == EventKind::Fold) curve.folds.push_back(ev);
    return curve;
}

// --- EtoP locus --------------------------------------------------------------------

CbParametrization make_cb_parametrization(const std::vector<EtopRoot>& locus) {
    if (locus.empty()) throw std::invalid_argument("empty locus");
    const int n = static_cast<int>(locus.size());
    if (n == 1) {
        const Eigen::Vector2d v(locus[0].lam1, locus[0].lam2);
        return {[v](double) { return v; }};
    }
    std::vector<double> s(n);
    std::vector<std::array<double, 2>> y(n);
    for (int i = 0; i < n; ++i) {
        s[i] = static_cast<double>(i) / (n - 1);
        y[i] = {locus[i].lam1, locus[i].lam2};
    }

    // shape-preserving cubic slopes (Fritsch-Carlson)
    auto slopes = [&](int c) {
        std::vector<double> m(n), d(n - 1), h(n - 1);
        for (int i = 0; i + 1 < n; ++i) {
            h[i] = s[i + 1] - s[i];
            d[i] = (y[i + 1][c] - y[i][c]) / h[i];
        }
        for (int i = 1; i + 1 < n; ++i) {
            if (d[i - 1] * d[i] <= 0.0) {
                m[i] = 0.0;
            } else {
                const double w1 = 2.0 * h[i] + h[i - 1];
                const double w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        auto end_slope = [](double h0, double h1, double d0, double d1) {
            double m0 = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if (m0 * d0 <= 0.0) return 0.0;
            if (d0 * d1 <= 0.0 && std::abs(m0) > 3.0 * std::abs(d0)) return 3.0 * d0;
            return m0;
        };
        m[0] = n == 2 ? d[0] : end_slope(h[0], h[1], d[0], d[1]);
        m[n - 1] = n == 2 ? d[n - 2] : end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
        return m;
    };
    std::vector<std::vector<double>> m{slopes(0), slopes(1)};

    auto eval = [s, y, m, n](double t) {
        t = std::min(1.0, std::max(0.0, t));
        int i = std::min(n - 2, static_cast<int>(std::upper_bound(s.begin(), s.end(), t) -
                                                 s.begin()) -
                                    1);
        if (i < 0) i = 0;
        const double h = s[i + 1] - s[i];
        const double x = (t - s[i]) / h;
        const double h00 = (1.0 + 2.0 * x) * (1.0 - x) * (1.0 - x);
        const double h10 = x * (1.0 - x) * (1.0 - x);
        const double h01 = x * x * (3.0 - 2.0 * x);
        const double h11 = x * x * (x - 1.0);
        Eigen::Vector2d out;
        for (int c = 0; c < 2; ++c)
            out(c) = h00 * y[i][c] + h * h10 * m[c][i] + h01 * y[i + 1][c] + h * h11 * m[c][i + 1];
        return out;
    };
    return {eval};
}

namespace {

double etop_value(const EtopScanSetup& st, const VectorXd& lam, OrbitSegment* warm) {
    PeriodicOrbit po;
    {
        const bool have_warm = warm && warm->values.size() > 0;
        OrbitSegment guess = have_warm ? *warm : st.orbit_guess(lam);
        try {
            po = solve_periodic(st.field, lam, guess, guess, st.periodic, nullptr, st.ident);
        } catch (const std::runtime_error&) {
            if (!have_warm) throw;
            OrbitSegment cold = st.orbit_guess(lam);
            po = solve_periodic(st.field, lam, cold, cold, st.periodic, nullptr, st.ident);
        }
    }
    if (warm) *warm = po.segment;

    // flow out of E along the unstable direction, in orbit-period chunks so a
    // finite-time blow-up only truncates the trajectory
    const VectorFieldSpec& f = st.field;
    OdeRhs rhs = [&f, &lam](const VectorXd& u) { return f.evaluate(u, lam); };
    VectorXd u = st.equilibrium(lam) + st.zeta * st.unstable_dir(lam).normalized();
    const double chunk = std::max(po.segment.time_scale, 1.0);
    std::vector<DenseTrajectory> pieces;
    double t_done = 0.0;
    while (t_done < st.t_max - 1e-12) {
        double span = std::min(chunk, st.t_max - t_done);
        DenseTrajectory tr;
        bool truncated = false, ok = false;
        for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
            try {
                tr = integrate_dense(rhs, u, span, 1e-10);
                ok = true;
            } catch (const IntegrationBlowup& bl) {
                // keep the part before a finite-time escape
                span = 0.5 * std::min(span, bl.t_fail);
                truncated = true;
                if (span < 1e-6) break;
            }
        }
        if (!ok) break;
        VectorXd u_end = tr.eval(tr.t_end());
        pieces.push_back(std::move(tr));
        if (truncated || !u_end.allFinite()) break;
        u = u_end;
        t_done += span;
        if (u.head<2>().norm() > st.r_cap) break;
    }
    if (pieces.empty()) return std::numeric_limits<double>::quiet_NaN();

    const OrbitSegment& pseg = po.segment;
    MatrixXd R;
    VectorXd b;
    resolve_identification(st.ident, 3, R, b);
    const bool quotient = b.squaredNorm() > 0.0;
    const int m1 = pseg.degree + 1;
    MatrixXd cols(3, pseg.n_intervals());
    for (int j = 0; j < pseg.n_intervals(); ++j) cols.col(j) = pseg.values.col(j * m1).head<3>();

    // coarse closest approach over trajectory samples and orbit breakpoints
    int bp = -1, bj = 0, bk = 0;
    double bt = 0.0, bd = std::numeric_limits<double>::infinity();
    const int NS = 64;
    for (size_t pi = 0; pi < pieces.size(); ++pi) {
        const DenseTrajectory& tr = pieces[pi];
        for (int is = 0; is <= NS; ++is) {
            const double t = tr.t_begin() + (tr.t_end() - tr.t_begin()) * is / NS;
            VectorXd q = tr.eval(t);
            if (!q.allFinite()) continue;
            if (!quotient) {
                Eigen::Index jbest;
                const double d =
                    (cols.colwise() - q.head<3>()).colwise().norm().minCoeff(&jbest);
                if (d < bd) {
                    bd = d;
                    bp = static_cast<int>(pi);
                    bt = t;
                    bj = static_cast<int>(jbest);
                    bk = 0;
                }
            } else {
                for (int j = 0; j < cols.cols(); ++j) {
                    const int kj = deck_shift(q - cols.col(j), b);
                    const double d = (q - cols.col(j) - kj * b).norm();
                    if (d < bd) {
                        bd = d;
                        bp = static_cast<int>(pi);
                        bt = t;
                        bj = j;
                        bk = kj;
                    }
                }
            }
        }
    }
    if (bp < 0) return std::numeric_limits<double>::quiet_NaN();

    // polish (t, tau) by alternating line minimizations
    const DenseTrajectory& btr = pieces[bp];
    const VectorXd kb = static_cast<double>(bk) * b;
    double tau = pseg.mesh[bj];
    double t_star = bt;
    const double dtau = 1.5 / pseg.n_intervals();
    const double dt = (btr.t_end() - btr.t_begin()) * 1.5 / NS;
    for (int round = 0; round < 3; ++round) {
        VectorXd q = btr.eval(t_star);
        tau = golden_min(
            [&](double x) { return (q - pseg.eval(std::min(1.0, std::max(0.0, x))) - kb).norm(); },
            tau - dtau, tau + dtau);
        tau = std::min(1.0, std::max(0.0, tau));
        VectorXd pc = pseg.eval(tau) + kb;
        t_star = golden_min(
            [&](double x) {
                return (btr.eval(std::min(btr.t_end(), std::max(btr.t_begin(), x))) - pc).norm();
            },
            t_star - dt, t_star + dt);
        t_star = std::min(btr.t_end(), std::max(btr.t_begin(), t_star));
    }

    VectorXd dev = btr.eval(t_star) - pseg.eval(tau) - kb;
    if (dev.norm() > st.approach_window) return std::numeric_limits<double>::quiet_NaN();

    // signed miss distance: the unstable coefficient in the orbit frame.  The
    // frame is fixed at tau = 0 and pushed forward by the variational flow, so
    // its orientation varies continuously with both tau and the parameters
    OrbitFrame fr0 = orbit_frame_at(st.field, lam, pseg, st.ident, 0.0, 1e-10);
    MatrixXd Phi = transition_matrix(st.field, lam, pseg, 0.0, tau, 1e-10);
    Eigen::Matrix3d A;
    A.col(0) = (Phi * fr0.v_stable).normalized();
    A.col(1) = (Phi * fr0.v_unstable).normalized();
    A.col(2) = f.evaluate(pseg.eval(tau), lam).head<3>().normalized();
    Vector3d c = A.colPivHouseholderQr().solve(dev.head<3>().eval());
    return c(1);
}

}  // namespace

double etop_test_function(const EtopScanSetup& setup, const VectorXd& lam) {
    return etop_value(setup, lam, nullptr);
}

EtopRoot etop_slice_root(const EtopScanSetup& setup, double lam2, double lam1_lo,
                         double lam1_hi) {
    OrbitSegment warm;
    auto g = [&](double x) {
        VectorXd lam(2);
        lam << x, lam2;
        return etop_value(setup, lam, &warm);
    };
    const double fa = g(lam1_lo), fb = g(lam1_hi);
    if (!std::isfinite(fa) || !std::isfinite(fb))
        throw NoRoot("test function undefined on the slice bracket");
    double root;
    if (fa == 0.0) {
        root = lam1_lo;
    } else if (fb == 0.0) {
        root = lam1_hi;
    } else {
        if (sign_of(fa) == sign_of(fb))
            throw NoRoot("no sign change across the slice bracket");
        root = illinois(g, lam1_lo, lam1_hi, fa, fb, setup.tol_lam1, 100);
    }
    const double h = std::max(1e-6, 1e-4 * (lam1_hi - lam1_lo));
    const double slope = (g(root + h) - g(root - h)) / (2.0 * h);
    return {root, lam2, slope};
}

std::vector<EtopRoot> etop_scan(const EtopScanSetup& setup, const EtopBox& box) {
    const int n = std::max(1, box.n_slices);
    std::vector<double> l2(n);
    for (int i = 0; i < n; ++i)
        l2[i] = n == 1 ? box.lam2_lo
                       : box.lam2_lo + (box.lam2_hi - box.lam2_lo) * i / (n - 1);

    std::vector<std::optional<EtopRoot>> slots(n);
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                slots[i] = etop_slice_root(setup, l2[i], box.lam1_lo, box.lam1_hi);
            } catch (const std::runtime_error&) {
                // slice without a root (or a failed solve) is simply skipped
            }
        }
    };

    int workers = 0;
    if (const char* env = std::getenv("SNAKE_THREADS")) workers = std::atoi(env);
    if (workers < 1) {
        const unsigned hc = std::thread::hardware_concurrency();
        workers = hc ? static_cast<int>(hc) : 1;
    }
    workers = std::min(workers, n);
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    std::vector<EtopRoot> locus;
    for (auto& s : slots)
        if (s) locus.push_back(*s);
    return locus;
}

// --- laser front ends -----------------------------------------------------------

namespace {

// planar reduction of the saddle cycle: circle radius and angle solving the
// averaged equilibrium relations
void laser_circle(const VectorXd& lam, double& rho, double& phi) {
    const double beta = std::atan2(2.0, 1.0);
    const double a = std::asin((lam(1) - lam(0)) / std::sqrt(5.0));
    phi = beta + M_PI - a;
    const double rho2 = lam(0) + std::sin(phi);
    if (!(rho2 > 0.0)) throw std::invalid_argument("no saddle cycle estimate at these parameters");
    rho = std::sqrt(rho2);
}

OrbitSegment laser_guess(const VectorXd& lam, int n_intervals, int degree) {
    double rho, phi;
    laser_circle(lam, rho, phi);
    return OrbitSegment::from_function(
        uniform_mesh(n_intervals), degree,
        [rho, phi](double tau) {
            VectorXd u(3);
            u << rho * std::cos(2.0 * M_PI * tau), -rho * std::sin(2.0 * M_PI * tau), phi;
            return u;
        },
        2.0 * M_PI);
}

Vector3d laser_equilibrium(const VectorXd& lam) {
    return Vector3d(0.0, 0.0, std::acos(-lam(1) / 2.0));
}

// eigen-direction of the equilibrium on the requested side; at E the angle
// coordinate decouples, so these are exact axis directions
Vector3d laser_eig_dir(const VectorFieldSpec& field, const VectorXd& lam, bool stable) {
    const Vector3d e = laser_equilibrium(lam);
    MatrixXd J = field.jac_state(e, lam);
    Eigen::EigenSolver<MatrixXd> es(J);
    int pick = -1;
    double ext = stable ? std::numeric_limits<double>::max() : -std::numeric_limits<double>::max();
    for (int i = 0; i < 3; ++i) {
        const double re = es.eigenvalues()(i).real();
        if (stable ? re < ext : re > ext) {
            ext = re;
            pick = i;
        }
    }
    if (stable && ext >= 0.0) throw std::runtime_error("equilibrium has no stable direction");
    if (!stable && ext <= 0.0) throw std::runtime_error("equilibrium has no unstable direction");
    return canonical_real(es.eigenvectors().col(pick));
}

}  // namespace

PeriodicOrbit laser_periodic_orbit(const VectorXd& lam, const PeriodicOptions& opts) {
    VectorFieldSpec field = make_laser();
    OrbitSegment guess = laser_guess(lam, opts.n_intervals, opts.degree);
    return solve_periodic(field, lam, guess, guess, opts);
}

ConnectionSetup laser_connection_setup() {
    VectorFieldSpec field = make_laser();
    ConnectionSetup setup;
    setup.equilibrium = [](const VectorXd& lam) { return laser_equilibrium(lam); };
    setup.stable_dir = [field](const VectorXd& lam) { return laser_eig_dir(field, lam, true); };
    setup.lift = Vector3d(0.0, 0.0, 2.0 * M_PI);
    return setup;
}

EtopScanSetup laser_etop_setup() {
    EtopScanSetup setup;
    setup.field = make_laser();
    setup.equilibrium = [](const VectorXd& lam) { return laser_equilibrium(lam); };
    const VectorFieldSpec field = setup.field;
    setup.unstable_dir = [field](const VectorXd& lam) { return laser_eig_dir(field, lam, false); };
    setup.orbit_guess = [](const VectorXd& lam) { return laser_guess(lam, 50, 4); };
    return setup;
}

}  // namespace snaking
