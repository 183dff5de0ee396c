#include "snaking/collocation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace snaking {

namespace {
constexpr double kFdStep = 1e-7;
}

MatrixXd SegmentOde::jacobian_u(const VectorXd& u, const VectorXd& p) const {
    if (jac_u) return jac_u(u, p);
    MatrixXd J(dim, dim);
    VectorXd up = u, um = u;
    for (int j = 0; j < dim; ++j) {
        double h = kFdStep * std::max(1.0, std::abs(u(j)));
        up(j) += h;
        um(j) -= h;
        J.col(j) = (rhs(up, p) - rhs(um, p)) / (2.0 * h);
        up(j) = u(j);
        um(j) = u(j);
    }
    return J;
}

MatrixXd SegmentOde::jacobian_p(const VectorXd& u, const VectorXd& p) const {
    if (jac_p) return jac_p(u, p);
    MatrixXd J(dim, p.size());
    VectorXd pp = p, pm = p;
    for (int j = 0; j < p.size(); ++j) {
        double h = kFdStep * std::max(1.0, std::abs(p(j)));
        pp(j) += h;
        pm(j) -= h;
        J.col(j) = (rhs(u, pp) - rhs(u, pm)) / (2.0 * h);
        pp(j) = p(j);
        pm(j) = p(j);
    }
    return J;
}

SegmentOde scaled_ode(const VectorFieldSpec& field, int ts_param,
                      const std::vector<int>& model_param_indices) {
    SegmentOde ode;
    ode.dim = field.dimension;
    auto select = [model_param_indices](const VectorXd& p) {
        VectorXd q(model_param_indices.size());
        for (size_t i = 0; i < model_param_indices.size(); ++i) q(i) = p(model_param_indices[i]);
        return q;
    };
    ode.rhs = [field, ts_param, select](const VectorXd& u, const VectorXd& p) -> VectorXd {
        return p(ts_param) * field.evaluate(u, select(p));
    };
    ode.jac_u = [field, ts_param, select](const VectorXd& u, const VectorXd& p) -> MatrixXd {
        return p(ts_param) * field.jac_state(u, select(p));
    };
    ode.jac_p = [field, ts_param, select, model_param_indices](const VectorXd& u,
                                                              const VectorXd& p) -> MatrixXd {
        VectorXd q = select(p);
        MatrixXd J = MatrixXd::Zero(field.dimension, p.size());
        J.col(ts_param) = field.evaluate(u, q);
        if (!model_param_indices.empty()) {
            MatrixXd Jq = field.jac_params(u, q);
            for (size_t i = 0; i < model_param_indices.size(); ++i)
                J.col(model_param_indices[i]) = p(ts_param) * Jq.col(i);
        }
        return J;
    };
    return ode;
}

// BvpProblem ------------------------------------------------------------------

int BvpProblem::add_param(const std::string& name, double value, bool free_param) {
    for (const auto& n : param_names_)
        if (n == name) throw std::invalid_argument("duplicate parameter " + name);
    param_names_.push_back(name);
    VectorXd p(params_.size() + 1);
    p.head(params_.size()) = params_;
    p(p.size() - 1) = value;
    params_ = p;
    free_.push_back(free_param);
    return static_cast<int>(params_.size()) - 1;
}

int BvpProblem::param_index(const std::string& name) const {
    for (size_t i = 0; i < param_names_.size(); ++i)
        if (param_names_[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("unknown parameter " + name);
}

void BvpProblem::set_free(const std::string& name, bool free_param) {
    free_[param_index(name)] = free_param;
}

int BvpProblem::add_segment(const std::string& name, SegmentOde ode, OrbitSegment data) {
    if (ode.dim != data.dimension())
        throw std::invalid_argument("segment dimension mismatch for " + name);
    segments_.push_back({name, std::move(ode), std::move(data)});
    return static_cast<int>(segments_.size()) - 1;
}

BvpProblem::Segment& BvpProblem::segment(const std::string& name) {
    for (auto& s : segments_)
        if (s.name == name) return s;
    throw std::invalid_argument("unknown segment " + name);
}

const BvpProblem::Segment& BvpProblem::segment(const std::string& name) const {
    for (const auto& s : segments_)
        if (s.name == name) return s;
    throw std::invalid_argument("unknown segment " + name);
}

void BvpProblem::remove_condition(const std::string& name) {
    for (auto it = bcs_.begin(); it != bcs_.end(); ++it)
        if (it->name == name) {
            bcs_.erase(it);
            return;
        }
    for (auto it = ics_.begin(); it != ics_.end(); ++it)
        if (it->name == name) {
            ics_.erase(it);
            return;
        }
    throw std::invalid_argument("no condition named " + name);
}

std::vector<int> BvpProblem::free_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < free_.size(); ++i)
        if (free_[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

int BvpProblem::n_free() const { return static_cast<int>(free_indices().size()); }

Endpoints BvpProblem::endpoints() const {
    Endpoints ep;
    for (const auto& s : segments_) {
        ep.left.push_back(s.data.values.col(0));
        ep.right.push_back(s.data.values.col(s.data.n_columns() - 1));
    }
    return ep;
}

int BvpProblem::n_conditions() const {
    int n = static_cast<int>(ics_.size());
    for (const auto& bc : bcs_) n += bc.count;
    return n;
}

int BvpProblem::n_reduced_nodal() const {
    int n = 0;
    for (const auto& s : segments_) n += (s.data.n_intervals() + 1) * s.ode.dim;
    return n;
}

int BvpProblem::n_reduced() const { return n_reduced_nodal() + n_free(); }

VectorXd BvpProblem::reduced_state() const {
    VectorXd x(n_reduced());
    int off = 0;
    for (const auto& s : segments_) {
        const int d = s.ode.dim;
        for (int j = 0; j <= s.data.n_intervals(); ++j) {
            x.segment(off, d) = s.data.values.col(s.data.col_break(j));
            off += d;
        }
    }
    for (int idx : free_indices()) x(off++) = params_(idx);
    return x;
}

int BvpProblem::reduced_param_index(const std::string& name) const {
    const int idx = param_index(name);
    if (!free_[idx]) throw std::invalid_argument(name + " is not free");
    int pos = 0;
    for (int i = 0; i < idx; ++i)
        if (free_[i]) ++pos;
    return n_reduced_nodal() + pos;
}

void BvpProblem::apply_reduced_step(const VectorXd& dx) {
    int off = 0;
    for (auto& s : segments_) {
        const int d = s.ode.dim, m = s.data.degree, N = s.data.n_intervals();
        const auto& B = collocation_basis(m);
        for (int j = 0; j < N; ++j) {
            VectorXd dl = dx.segment(off + j * d, d);
            VectorXd dr = dx.segment(off + (j + 1) * d, d);
            for (int i = 0; i < m; ++i)
                s.data.values.col(s.data.col_stage(j, i)) +=
                    (1.0 - B.c(i)) * dl + B.c(i) * dr;
        }
        for (int j = 0; j <= N; ++j)
            s.data.values.col(s.data.col_break(j)) += dx.segment(off + j * d, d);
        off += (N + 1) * d;
    }
    for (int idx : free_indices()) params_(idx) += dx(off++);
}

BvpProblem::State BvpProblem::save_state() const {
    State s;
    for (const auto& seg : segments_) s.values.push_back(seg.data.values);
    s.params = params_;
    return s;
}

void BvpProblem::load_state(const State& s) {
    for (size_t i = 0; i < segments_.size(); ++i) segments_[i].data.values = s.values[i];
    params_ = s.params;
}

VectorXd BvpProblem::residuals() const {
    std::vector<double> out;
    for (const auto& s : segments_) {
        const auto& B = collocation_basis(s.data.degree);
        const int d = s.ode.dim, m = s.data.degree, N = s.data.n_intervals();
        for (int j = 0; j < N; ++j) {
            const double h = s.data.mesh[j + 1] - s.data.mesh[j];
            for (int i = 0; i < m; ++i) {
                VectorXd g = B.D(i, 0) * s.data.values.col(s.data.col_break(j));
                for (int k = 0; k < m; ++k)
                    g += B.D(i, k + 1) * s.data.values.col(s.data.col_stage(j, k));
                g -= h * s.ode.rhs(s.data.values.col(s.data.col_stage(j, i)), params_);
                for (int r = 0; r < d; ++r) out.push_back(g(r));
            }
            VectorXd c = B.E(0) * s.data.values.col(s.data.col_break(j)) -
                         s.data.values.col(s.data.col_break(j + 1));
            for (int k = 0; k < m; ++k)
                c += B.E(k + 1) * s.data.values.col(s.data.col_stage(j, k));
            for (int r = 0; r < d; ++r) out.push_back(c(r));
        }
    }
    Endpoints ep = endpoints();
    for (const auto& bc : bcs_) {
        VectorXd v = bc.fn(ep, params_);
        if (v.size() != bc.count)
            throw std::logic_error("boundary condition " + bc.name + " returned wrong size");
        for (int r = 0; r < v.size(); ++r) out.push_back(v(r));
    }
    for (const auto& ic : ics_) {
        const auto& s = segments_[ic.segment];
        const auto& B = collocation_basis(s.data.degree);
        double sum = 0.0;
        for (int j = 0; j < s.data.n_intervals(); ++j) {
            const double h = s.data.mesh[j + 1] - s.data.mesh[j];
            for (int i = 0; i < s.data.degree; ++i)
                sum += h * B.w_quad(i) *
                       ic.integrand(s.data.tau_stage(j, i),
                                    s.data.values.col(s.data.col_stage(j, i)), params_);
        }
        out.push_back(sum);
    }
    return Eigen::Map<VectorXd>(out.data(), out.size());
}

double BvpProblem::residual_norm() const {
    VectorXd r = residuals();
    return r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
}

// condensed linearization -------------------------------------------------------

class CollocSystem {
  public:
    explicit CollocSystem(BvpProblem& prob) : prob_(prob), free_idx_(prob.free_indices()) {
        n_free_ = static_cast<int>(free_idx_.size());
        seg_off_.resize(prob.n_segments());
        cont_off_.resize(prob.n_segments());
        int off = 0, roff = 0;
        for (int s = 0; s < prob.n_segments(); ++s) {
            seg_off_[s] = off;
            cont_off_[s] = roff;
            const auto& seg = prob.segment(s);
            off += (seg.data.n_intervals() + 1) * seg.ode.dim;
            roff += seg.data.n_intervals() * seg.ode.dim;
        }
        nodal_ = off;
        n_cont_ = roff;
        n_red_ = nodal_ + n_free_;
    }

    int n_reduced() const { return n_red_; }

    /// Assemble and LU-factor the reduced system with an optional border row
    /// (over reduced coordinates).  Returns false never; throws on singularity.
    void factor(const VectorXd* border, const NewtonOptions& opts);

    /// Reduced right-hand side matching factor(): [-continuity*; -bc; -ic; rhs_bot]
    /// built from the current residuals; rhs_bot only used when bordered.
    VectorXd newton_rhs(double rhs_bot) const;

    VectorXd solve_reduced(const VectorXd& rhs) const { return lu_.solve(rhs); }

    /// Apply a damped reduced step: updates breakpoints, free params, and stages.
    void apply(const VectorXd& delta_red, double alpha);

  private:
    struct IntervalBlock {
        Eigen::PartialPivLU<MatrixXd> luA;
        MatrixXd XB;   // A^{-1} B  (md x d)
        MatrixXd XP;   // A^{-1} P  (md x n_free)
        VectorXd xr;   // A^{-1} r_stage
    };

    BvpProblem& prob_;
    std::vector<int> free_idx_;
    int n_free_ = 0, nodal_ = 0, n_cont_ = 0, n_red_ = 0;
    std::vector<int> seg_off_, cont_off_;
    std::vector<std::vector<IntervalBlock>> blocks_;
    MatrixXd M_;
    Eigen::PartialPivLU<MatrixXd> lu_;
    VectorXd red_resid_;  // continuity*, bc, ic residuals (condensed)

    int bp_col(int s, int j) const { return seg_off_[s] + j * prob_.segment(s).ode.dim; }
    int param_col(int f) const { return nodal_ + f; }
};

void CollocSystem::factor(const VectorXd* border, const NewtonOptions& opts) {
    const int n_rows = n_cont_ + prob_.n_conditions() + (border ? 1 : 0);
    if (n_rows != n_red_)
        throw std::logic_error("system not square: " + std::to_string(n_rows) + " conditions vs " +
                               std::to_string(n_red_) + " reduced unknowns");
    M_ = MatrixXd::Zero(n_red_, n_red_);
    std::vector<double> rres;

    blocks_.assign(prob_.n_segments(), {});
    for (int s = 0; s < prob_.n_segments(); ++s) {
        auto& seg = prob_.segment(s);
        const auto& B = collocation_basis(seg.data.degree);
        const int d = seg.ode.dim, m = seg.data.degree, N = seg.data.n_intervals();
        blocks_[s].resize(N);
        MatrixXd Etil(d, m * d);
        for (int i = 0; i < m; ++i)
            Etil.middleCols(i * d, d) = B.E(i + 1) * MatrixXd::Identity(d, d);

        for (int j = 0; j < N; ++j) {
            const double h = seg.data.mesh[j + 1] - seg.data.mesh[j];
            MatrixXd A = MatrixXd::Zero(m * d, m * d);
            MatrixXd Bj = MatrixXd::Zero(m * d, d);
            MatrixXd P = MatrixXd::Zero(m * d, n_free_);
            VectorXd r(m * d);
            for (int i = 0; i < m; ++i) {
                const VectorXd Ui = seg.data.values.col(seg.data.col_stage(j, i));
                MatrixXd Ji = seg.ode.jacobian_u(Ui, prob_.params_);
                MatrixXd Jp = seg.ode.jacobian_p(Ui, prob_.params_);
                for (int k = 0; k < m; ++k) {
                    A.block(i * d, k * d, d, d) =
                        B.D(i, k + 1) * MatrixXd::Identity(d, d);
                }
                A.block(i * d, i * d, d, d) -= h * Ji;
                Bj.block(i * d, 0, d, d) = B.D(i, 0) * MatrixXd::Identity(d, d);
                for (int f = 0; f < n_free_; ++f) P.block(i * d, f, d, 1) = -h * Jp.col(free_idx_[f]);
                VectorXd g = B.D(i, 0) * seg.data.values.col(seg.data.col_break(j));
                for (int k = 0; k < m; ++k)
                    g += B.D(i, k + 1) * seg.data.values.col(seg.data.col_stage(j, k));
                g -= h * seg.ode.rhs(Ui, prob_.params_);
                r.segment(i * d, d) = g;
            }
            auto& blk = blocks_[s][j];
            blk.luA.compute(A);
            blk.XB = blk.luA.solve(Bj);
            blk.XP = n_free_ ? MatrixXd(blk.luA.solve(P)) : MatrixXd(m * d, 0);
            blk.xr = blk.luA.solve(r);

            // condensed continuity rows
            const int row = cont_off_[s] + j * d;
            M_.block(row, bp_col(s, j), d, d) =
                B.E(0) * MatrixXd::Identity(d, d) - Etil * blk.XB;
            M_.block(row, bp_col(s, j + 1), d, d) = -MatrixXd::Identity(d, d);
            if (n_free_) M_.block(row, nodal_, d, n_free_) = -Etil * blk.XP;

            VectorXd c = B.E(0) * seg.data.values.col(seg.data.col_break(j)) -
                         seg.data.values.col(seg.data.col_break(j + 1));
            for (int k = 0; k < m; ++k)
                c += B.E(k + 1) * seg.data.values.col(seg.data.col_stage(j, k));
            VectorXd cred = c - Etil * blk.xr;
            for (int rr = 0; rr < d; ++rr) rres.push_back(cred(rr));
        }
    }
    // ensure rres has placeholder slots in assembly order; continuity rows were
    // pushed per segment already in row order since segments are processed in order
    // (cont_off_ is increasing), so rres aligns with rows [0, n_cont_).

    // boundary conditions: finite differences w.r.t. endpoint breakpoints and params
    int row = n_cont_;
    Endpoints ep = prob_.endpoints();
    for (const auto& bc : prob_.bcs_) {
        VectorXd r0 = bc.fn(ep, prob_.params_);
        for (int s = 0; s < prob_.n_segments(); ++s) {
            const int d = prob_.segment(s).ode.dim;
            const int N = prob_.segment(s).data.n_intervals();
            for (int side = 0; side < 2; ++side) {
                VectorXd& slot = side == 0 ? ep.left[s] : ep.right[s];
                const int col0 = bp_col(s, side == 0 ? 0 : N);
                for (int c = 0; c < d; ++c) {
                    const double save = slot(c);
                    const double hstep = kFdStep * std::max(1.0, std::abs(save));
                    slot(c) = save + hstep;
                    VectorXd rp = bc.fn(ep, prob_.params_);
                    slot(c) = save - hstep;
                    VectorXd rm = bc.fn(ep, prob_.params_);
                    slot(c) = save;
                    M_.block(row, col0 + c, bc.count, 1) = (rp - rm) / (2.0 * hstep);
                }
            }
        }
        for (int f = 0; f < n_free_; ++f) {
            double& pv = prob_.params_(free_idx_[f]);
            const double save = pv;
            const double hstep = kFdStep * std::max(1.0, std::abs(save));
            pv = save + hstep;
            VectorXd rp = bc.fn(ep, prob_.params_);
            pv = save - hstep;
            VectorXd rm = bc.fn(ep, prob_.params_);
            pv = save;
            M_.block(row, param_col(f), bc.count, 1) = (rp - rm) / (2.0 * hstep);
        }
        for (int rr = 0; rr < bc.count; ++rr) rres.push_back(r0(rr));
        row += bc.count;
    }

    // integral conditions: quadrature over collocation sites; stage gradients by FD
    for (const auto& ic : prob_.ics_) {
        auto& seg = prob_.segment(ic.segment);
        const auto& B = collocation_basis(seg.data.degree);
        const int d = seg.ode.dim, m = seg.data.degree, N = seg.data.n_intervals();
        double value = 0.0;
        Eigen::RowVectorXd prow = Eigen::RowVectorXd::Zero(n_free_);
        for (int j = 0; j < N; ++j) {
            const double h = seg.data.mesh[j + 1] - seg.data.mesh[j];
            Eigen::RowVectorXd G(m * d);
            for (int i = 0; i < m; ++i) {
                const double tau = seg.data.tau_stage(j, i);
                VectorXd Ui = seg.data.values.col(seg.data.col_stage(j, i));
                value += h * B.w_quad(i) * ic.integrand(tau, Ui, prob_.params_);
                for (int c = 0; c < d; ++c) {
                    const double save = Ui(c);
                    const double hstep = kFdStep * std::max(1.0, std::abs(save));
                    Ui(c) = save + hstep;
                    const double fp = ic.integrand(tau, Ui, prob_.params_);
                    Ui(c) = save - hstep;
                    const double fm = ic.integrand(tau, Ui, prob_.params_);
                    Ui(c) = save;
                    G(i * d + c) = h * B.w_quad(i) * (fp - fm) / (2.0 * hstep);
                }
            }
            const auto& blk = blocks_[ic.segment][j];
            M_.block(row, bp_col(ic.segment, j), 1, d) -= G * blk.XB;
            if (n_free_) M_.block(row, nodal_, 1, n_free_) -= G * blk.XP;
            value -= G.dot(blk.xr);
        }
        for (int f = 0; f < n_free_; ++f) {
            double& pv = prob_.params_(free_idx_[f]);
            const double save = pv;
            const double hstep = kFdStep * std::max(1.0, std::abs(save));
            auto quad = [&]() {
                double s2 = 0.0;
                for (int j = 0; j < N; ++j) {
                    const double h = seg.data.mesh[j + 1] - seg.data.mesh[j];
                    for (int i = 0; i < m; ++i)
                        s2 += h * B.w_quad(i) *
                              ic.integrand(seg.data.tau_stage(j, i),
                                           seg.data.values.col(seg.data.col_stage(j, i)),
                                           prob_.params_);
                }
                return s2;
            };
            pv = save + hstep;
            const double fp = quad();
            pv = save - hstep;
            const double fm = quad();
            pv = save;
            prow(f) += (fp - fm) / (2.0 * hstep);
        }
        if (n_free_) M_.block(row, nodal_, 1, n_free_) += prow;
        rres.push_back(value);
        row += 1;
    }

    if (border) {
        M_.row(row) = border->transpose();
        // border residual supplied separately via newton_rhs
    }

    red_resid_ = Eigen::Map<VectorXd>(rres.data(), rres.size());

    lu_.compute(M_);
    // condition estimate (1-norm, Hager): reject near-singular systems
    const double anorm = M_.cwiseAbs().colwise().sum().maxCoeff();
    VectorXd x = VectorXd::Constant(n_red_, 1.0 / n_red_);
    double est = 0.0;
    for (int it = 0; it < 5; ++it) {
        VectorXd y = lu_.solve(x);
        est = y.lpNorm<1>();
        VectorXd xi = y.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
        VectorXd z = lu_.transpose().solve(xi);
        int jmax;
        const double zmax = z.cwiseAbs().maxCoeff(&jmax);
        if (zmax <= z.dot(x)) break;
        x = VectorXd::Zero(n_red_);
        x(jmax) = 1.0;
    }
    const double cond = anorm * est;
    if (!std::isfinite(cond) || cond > opts.cond_limit) throw SingularJacobian(cond);
}

VectorXd CollocSystem::newton_rhs(double rhs_bot) const {
    VectorXd rhs(n_red_);
    rhs.head(red_resid_.size()) = -red_resid_;
    if (red_resid_.size() < n_red_) rhs(n_red_ - 1) = rhs_bot;
    return rhs;
}

void CollocSystem::apply(const VectorXd& delta_red, double alpha) {
    for (int s = 0; s < prob_.n_segments(); ++s) {
        auto& seg = prob_.segment(s);
        const int d = seg.ode.dim, m = seg.data.degree, N = seg.data.n_intervals();
        for (int j = 0; j < N; ++j) {
            const auto& blk = blocks_[s][j];
            VectorXd du_j = delta_red.segment(bp_col(s, j), d);
            VectorXd dU = -blk.xr - blk.XB * du_j;
            if (n_free_) dU -= blk.XP * delta_red.tail(n_free_);
            for (int i = 0; i < m; ++i)
                seg.data.values.col(seg.data.col_stage(j, i)) += alpha * dU.segment(i * d, d);
        }
        for (int j = 0; j <= N; ++j)
            seg.data.values.col(seg.data.col_break(j)) +=
                alpha * delta_red.segment(bp_col(s, j), d);
    }
    for (int f = 0; f < n_free_; ++f) prob_.params_(free_idx_[f]) += alpha * delta_red(nodal_ + f);
}

// Newton drivers ---------------------------------------------------------------

namespace {

bool values_bounded(const BvpProblem& p, double bound) {
    for (int i = 0; i < p.n_segments(); ++i) {
        const auto& v = p.segment(i).data.values;
        if (!v.allFinite() || v.cwiseAbs().maxCoeff() > bound) return false;
    }
    return p.params().allFinite();
}

SolveReport newton_loop(BvpProblem& prob, const VectorXd* w, const VectorXd* ref, double c,
                        const NewtonOptions& opts) {
    auto total_residual = [&]() {
        double rn = prob.residual_norm();
        if (w) rn = std::max(rn, std::abs(w->dot(prob.reduced_state() - *ref) - c));
        return rn;
    };

    double rn = total_residual();
    if (rn <= opts.tol_resid) return {0, rn};

    for (int iter = 1; iter <= opts.max_iter; ++iter) {
        CollocSystem sys(prob);
        sys.factor(w, opts);
        const double border_resid = w ? -(w->dot(prob.reduced_state() - *ref) - c) : 0.0;
        VectorXd delta = sys.solve_reduced(sys.newton_rhs(border_resid));

        BvpProblem::State saved = prob.save_state();
        double alpha = 1.0;
        bool accepted = false;
        while (alpha >= opts.min_damping) {
            sys.apply(delta, alpha);
            if (values_bounded(prob, opts.value_bound)) {
                const double rn_new = total_residual();
                if (rn_new <= opts.tol_resid || rn_new < (1.0 - 1e-4 * alpha) * rn) {
                    rn = rn_new;
                    accepted = true;
                    break;
                }
            }
            prob.load_state(saved);
            alpha *= 0.5;
        }
        if (!accepted) throw NonConvergence("newton damping exhausted", rn);
        if (opts.verbose)
            std::fprintf(stderr, "    newton iter %d residual %.3e (alpha %.4f)\n", iter, rn,
                         alpha);
        if (rn <= opts.tol_resid) return {iter, rn};
    }
    throw NonConvergence("newton did not converge in max_iter", rn);
}

}  // namespace

SolveReport solve(BvpProblem& prob, const NewtonOptions& opts) {
    return newton_loop(prob, nullptr, nullptr, 0.0, opts);
}

SolveReport solve_constrained(BvpProblem& prob, const VectorXd& w, const VectorXd& ref, double c,
                              const NewtonOptions& opts) {
    return newton_loop(prob, &w, &ref, c, opts);
}

VectorXd branch_tangent(BvpProblem& prob, const VectorXd& prev, const NewtonOptions& opts) {
    CollocSystem sys(prob);
    sys.factor(&prev, opts);
    VectorXd rhs = VectorXd::Zero(sys.n_reduced());
    rhs(sys.n_reduced() - 1) = 1.0;
    return sys.solve_reduced(rhs);
}

}  // namespace snaking
