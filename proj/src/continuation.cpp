#include "snaking/continuation.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace snaking {

namespace {

BranchPoint summarize(const BvpProblem& prob, const std::vector<TestFunction>& tfs, double s,
                      int iters) {
    BranchPoint bp;
    bp.params = prob.params();
    bp.arclength = s;
    bp.newton_iters = iters;
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < prob.n_segments(); ++i) {
        const auto& d = prob.segment(i).data;
        for (int j = 0; j <= d.n_intervals(); ++j) {
            sum += d.values.col(d.col_break(j)).squaredNorm();
            count += d.dimension();
        }
    }
    bp.norm = count ? std::sqrt(sum / count) : 0.0;
    Endpoints ep = prob.endpoints();
    int dim_total = 0;
    for (const auto& v : ep.left) dim_total += static_cast<int>(v.size());
    bp.left.resize(dim_total);
    bp.right.resize(dim_total);
    int off = 0;
    for (size_t i = 0; i < ep.left.size(); ++i) {
        bp.left.segment(off, ep.left[i].size()) = ep.left[i];
        bp.right.segment(off, ep.right[i].size()) = ep.right[i];
        off += static_cast<int>(ep.left[i].size());
    }
    bp.tf.resize(tfs.size());
    for (size_t i = 0; i < tfs.size(); ++i) bp.tf(i) = tfs[i].fn(prob);
    return bp;
}

/// Illinois-damped regula falsi on [a,b] with g(a)=ga, g(b)=gb, ga*gb < 0.
/// geval returns g at the abscissa (and may leave shared state there) or
/// nothing on evaluation failure.  Ensures the final evaluation happened at
/// the returned abscissa.
std::optional<double> illinois(double a, double b, double ga, double gb, double gtol,
                               const std::function<std::optional<double>(double)>& geval,
                               int max_eval = 60) {
    double x_best = std::abs(ga) < std::abs(gb) ? a : b;
    double g_best = std::min(std::abs(ga), std::abs(gb));
    double x_last = b;
    for (int it = 0; it < max_eval; ++it) {
        double den = gb - ga;
        double x = std::abs(den) > 0.0 ? b - gb * (b - a) / den : 0.5 * (a + b);
        const double lo = std::min(a, b), hi = std::max(a, b);
        const double pad = 1e-3 * (hi - lo);
        x = std::clamp(x, lo + pad, hi - pad);
        auto g = geval(x);
        if (!g) return std::nullopt;
        x_last = x;
        if (std::abs(*g) < g_best) {
            g_best = std::abs(*g);
            x_best = x;
        }
        if (std::abs(*g) <= gtol || std::abs(b - a) <= 1e-15 * std::max(1.0, std::abs(b)))
            return x;
        if (*g * gb < 0.0) {
            a = b;
            ga = gb;
        } else {
            ga *= 0.5;  // stalled side: damp so the bracket keeps shrinking
        }
        b = x;
        gb = *g;
    }
    if (x_last != x_best && !geval(x_best)) return std::nullopt;
    return x_best;
}

}  // namespace

Branch continue_branch(BvpProblem& prob, const std::string& primary_param,
                       const StepOptions& sopts, const StopConditions& stop,
                       const std::vector<TestFunction>& tfs) {
    if (sopts.h0 <= 0.0 || sopts.h_min <= 0.0 || sopts.h_max < sopts.h0)
        throw std::invalid_argument("step options must satisfy 0 < h_min, h0 <= h_max");
    const int pidx = prob.param_index(primary_param);
    const int prid = prob.reduced_param_index(primary_param);

    if (prob.residual_norm() > sopts.newton.tol_resid) {
        // re-converge the start point at its current primary-parameter value
        prob.set_free(primary_param, false);
        try {
            solve(prob, sopts.newton);
        } catch (...) {
            prob.set_free(primary_param, true);
            throw;
        }
        prob.set_free(primary_param, true);
    }

    Branch br;
    br.param_names = prob.param_names();

    auto tangent_from = [&](const VectorXd& prev) {
        VectorXd t = branch_tangent(prob, prev, sopts.newton);
        double n = t.norm();
        if (!(n > 0.0) || !t.allFinite())
            throw SingularJacobian(std::numeric_limits<double>::infinity());
        return VectorXd(t / n);
    };

    VectorXd seed = VectorXd::Zero(prob.n_reduced());
    seed(prid) = sopts.direction >= 0 ? 1.0 : -1.0;
    VectorXd t_cur;
    try {
        t_cur = tangent_from(seed);
    } catch (const SingularJacobian&) {
        throw FirstStepFailure("singular tangent at the starting point of " + primary_param);
    }

    const VectorXd x0 = prob.reduced_state();
    const VectorXd t0 = t_cur;
    BvpProblem::State S_cur = prob.save_state();
    VectorXd x_cur = x0;

    br.points.push_back(summarize(prob, tfs, 0.0, 0));

    // corrected point at arclength a from (S_from, x_from) along t_from; leaves
    // prob at that point
    auto point_at = [&](const BvpProblem::State& S_from, const VectorXd& x_from,
                        const VectorXd& t_from, double a) {
        prob.load_state(S_from);
        prob.apply_reduced_step(a * t_from);
        solve_constrained(prob, t_from, x_from, a, sopts.newton);
    };

    double h = sopts.h0;
    double s_cum = 0.0;

    for (int step = 1;; ++step) {
        if (step > sopts.max_steps) {
            br.stop_reason = "max_steps";
            break;
        }

        SolveReport rep;
        while (true) {
            prob.load_state(S_cur);
            prob.apply_reduced_step(h * t_cur);
            try {
                rep = solve_constrained(prob, t_cur, x_cur, h, sopts.newton);
                break;
            } catch (const NonConvergence&) {
            } catch (const SingularJacobian&) {
            }
            h *= 0.5;
            if (h < sopts.h_min) {
                prob.load_state(S_cur);
                if (step == 1)
                    throw FirstStepFailure("corrector failed down to h_min at the first step");
                throw StepUnderflow(h);
            }
        }

        VectorXd x_new = prob.reduced_state();
        VectorXd t_new = tangent_from(t_cur);
        BvpProblem::State S_new = prob.save_state();
        s_cum += h;

        // boundary crossing: land exactly on the bound with the parameter frozen
        const double pval = prob.params()(pidx);
        if (pval < stop.param_min || pval > stop.param_max) {
            const double bound = pval < stop.param_min ? stop.param_min : stop.param_max;
            bool landed = false;
            try {
                prob.set_param(primary_param, bound);
                prob.set_free(primary_param, false);
                solve(prob, sopts.newton);
                landed = true;
            } catch (const std::runtime_error&) {
                prob.load_state(S_new);
            }
            prob.set_free(primary_param, true);
            br.points.push_back(summarize(prob, tfs, s_cum, rep.iterations));
            BranchEvent ev;
            ev.index = static_cast<int>(br.points.size()) - 1;
            ev.kind = EventKind::Boundary;
            ev.params = prob.params();
            br.events.push_back(ev);
            br.stop_reason = landed ? "param_bound" : "param_bound_overshoot";
            break;
        }

        BranchPoint bp = summarize(prob, tfs, s_cum, rep.iterations);

        // fold: the tangent's primary component changes sign across this step
        if (t_new(prid) * t_cur(prid) < 0.0) {
            auto eval_tp = [&](double a) -> std::optional<double> {
                try {
                    point_at(S_cur, x_cur, t_cur, a);
                    return tangent_from(t_cur)(prid);
                } catch (const std::runtime_error&) {
                    return std::nullopt;
                }
            };
            auto a_star = illinois(0.0, h, t_cur(prid), t_new(prid), 1e-12, eval_tp);
            if (a_star) {
                BranchEvent ev;
                ev.index = static_cast<int>(br.points.size());
                ev.kind = EventKind::Fold;
                ev.params = prob.params();
                const double p0 = S_cur.params(pidx), p1 = ev.params(pidx),
                             p2 = S_new.params(pidx);
                const double f01 = (p1 - p0) / *a_star;
                const double f12 = (p2 - p1) / (h - *a_star);
                ev.curvature = 2.0 * (f12 - f01) / h;
                br.events.push_back(ev);
                if (stop.stop_at_fold) {
                    br.points.push_back(
                        summarize(prob, tfs, s_cum - h + *a_star, rep.iterations));
                    br.stop_reason = "fold";
                    break;
                }
            } else if (stop.stop_at_fold) {
                prob.load_state(S_new);
                br.points.push_back(bp);
                br.stop_reason = "fold_unrefined";
                break;
            }
            prob.load_state(S_new);
        }

        // test-function roots between the previous point and this one
        for (size_t i = 0; i < tfs.size(); ++i) {
            const double ga = br.points.back().tf(i), gb = bp.tf(i);
            if (!std::isfinite(ga) || !std::isfinite(gb) || !(ga * gb < 0.0)) continue;
            auto eval_tf = [&](double a) -> std::optional<double> {
                try {
                    point_at(S_cur, x_cur, t_cur, a);
                    return tfs[i].fn(prob);
                } catch (const std::runtime_error&) {
                    return std::nullopt;
                }
            };
            if (illinois(0.0, h, ga, gb, 1e-9, eval_tf)) {
                BranchEvent ev;
                ev.index = static_cast<int>(br.points.size());
                ev.kind = EventKind::TfRoot;
                ev.tf_index = static_cast<int>(i);
                ev.params = prob.params();
                br.events.push_back(ev);
            }
            prob.load_state(S_new);
        }

        br.points.push_back(std::move(bp));

        if (step >= 10 && (x_new - x0).norm() <= h && t_new.dot(t0) > 0.5) {
            br.closed = true;
            br.stop_reason = "closed";
            break;
        }
        if (stop.predicate && stop.predicate(prob)) {
            br.stop_reason = "predicate";
            break;
        }

        if (prob.post_accept) {
            // the hook may rotate reference data or touch the state; re-snapshot
            prob.post_accept(prob);
            S_new = prob.save_state();
            x_new = prob.reduced_state();
        }
        if (rep.iterations <= 3) h = std::min(h * 1.3, sopts.h_max);
        S_cur = std::move(S_new);
        x_cur = std::move(x_new);
        t_cur = std::move(t_new);
    }
    return br;
}

std::vector<BranchEvent> detect_folds(const Branch& br, const std::string& primary_param) {
    int pidx = -1;
    for (size_t i = 0; i < br.param_names.size(); ++i)
        if (br.param_names[i] == primary_param) pidx = static_cast<int>(i);
    if (pidx < 0) throw std::invalid_argument("branch has no parameter " + primary_param);

    std::vector<BranchEvent> out;
    std::vector<bool> used(br.events.size(), false);
    const auto& P = br.points;
    for (size_t k = 1; k + 1 < P.size(); ++k) {
        const double d0 = P[k].params(pidx) - P[k - 1].params(pidx);
        const double d1 = P[k + 1].params(pidx) - P[k].params(pidx);
        if (d0 == 0.0 || d1 == 0.0 || d0 * d1 > 0.0) continue;

        BranchEvent ev;
        ev.kind = EventKind::Fold;
        ev.index = static_cast<int>(k);

        // prefer the matching event refined during continuation
        int best = -1;
        for (size_t e = 0; e < br.events.size(); ++e) {
            if (used[e] || br.events[e].kind != EventKind::Fold) continue;
            if (std::abs(br.events[e].index - static_cast<int>(k)) <= 1 &&
                (best < 0 ||
                 std::abs(br.events[e].index - static_cast<int>(k)) <
                     std::abs(br.events[best].index - static_cast<int>(k))))
                best = static_cast<int>(e);
        }
        if (best >= 0) {
            used[best] = true;
            ev.params = br.events[best].params;
            ev.curvature = br.events[best].curvature;
        } else {
            // quadratic fit of every parameter against arclength, vertex of the
            // primary one
            const double s0 = P[k - 1].arclength, s1 = P[k].arclength, s2 = P[k + 1].arclength;
            const double p0 = P[k - 1].params(pidx), p1 = P[k].params(pidx),
                         p2 = P[k + 1].params(pidx);
            const double f01 = (p1 - p0) / (s1 - s0);
            const double f12 = (p2 - p1) / (s2 - s1);
            const double f012 = (f12 - f01) / (s2 - s0);
            ev.curvature = 2.0 * f012;
            const double sv = f012 != 0.0 ? 0.5 * (s0 + s1) - f01 / (2.0 * f012) : s1;
            auto L = [&](double sa, double sb, double sc) {
                return (sv - sb) * (sv - sc) / ((sa - sb) * (sa - sc));
            };
            ev.params = L(s0, s1, s2) * P[k - 1].params + L(s1, s0, s2) * P[k].params +
                        L(s2, s0, s1) * P[k + 1].params;
        }
        out.push_back(std::move(ev));
    }
    return out;
}

std::vector<BranchPoint> locate_test_root(BvpProblem& prob, const Branch& br, int tf_index,
                                          const std::vector<TestFunction>& tfs,
                                          const std::string& primary_param,
                                          const NewtonOptions& opts) {
    if (tf_index < 0 || tf_index >= static_cast<int>(tfs.size()))
        throw std::invalid_argument("test function index out of range");
    const int pidx = prob.param_index(primary_param);

    struct Bracket {
        double pa, pb, ga, gb;
    };
    std::vector<Bracket> brackets;
    for (size_t k = 1; k < br.points.size(); ++k) {
        const double ga = br.points[k - 1].tf(tf_index), gb = br.points[k].tf(tf_index);
        if (std::isfinite(ga) && std::isfinite(gb) && ga * gb < 0.0)
            brackets.push_back(
                {br.points[k - 1].params(pidx), br.points[k].params(pidx), ga, gb});
    }
    if (brackets.empty())
        throw NoSignChange("test function " + tfs[tf_index].name +
                           " does not change sign along the branch");

    const bool was_free = prob.is_free(primary_param);
    prob.set_free(primary_param, false);
    auto solve_at = [&](double p) -> std::optional<double> {
        try {
            prob.set_param(primary_param, p);
            solve(prob, opts);
            return tfs[tf_index].fn(prob);
        } catch (const std::runtime_error&) {
            return std::nullopt;
        }
    };

    std::vector<BranchPoint> roots;
    // work backwards so each bracket starts near the problem's current state
    for (auto it = brackets.rbegin(); it != brackets.rend(); ++it) {
        const double p_here = prob.params()(pidx);
        for (int r = 1; r <= 4; ++r) solve_at(p_here + (it->pb - p_here) * r / 4.0);
        auto root = illinois(it->pa, it->pb, it->ga, it->gb, 1e-9, solve_at);
        if (root) roots.push_back(summarize(prob, tfs, 0.0, 0));
    }
    prob.set_free(primary_param, was_free);
    std::reverse(roots.begin(), roots.end());
    return roots;
}

}  // namespace snaking
