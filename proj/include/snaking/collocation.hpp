#pragma once

#include <memory>
#include <string>

#include "snaking/models.hpp"
#include "snaking/segment.hpp"

namespace snaking {

struct NonConvergence : std::runtime_error {
    double residual;
    NonConvergence(const std::string& what, double r) : std::runtime_error(what), residual(r) {}
};
struct SingularJacobian : std::runtime_error {
    double cond_estimate;
    SingularJacobian(double c)
        : std::runtime_error("jacobian condition estimate " + std::to_string(c) +
                             " exceeds limit"),
          cond_estimate(c) {}
};

/// Right-hand side of one segment in scaled time: u' = rhs(u, p) on [0,1],
/// where p is the full problem parameter vector (time scale folded in by the
/// builder; see scaled_ode).
struct SegmentOde {
    int dim = 0;
    std::function<VectorXd(const VectorXd&, const VectorXd&)> rhs;
    std::function<MatrixXd(const VectorXd&, const VectorXd&)> jac_u;  // optional
    std::function<MatrixXd(const VectorXd&, const VectorXd&)> jac_p;  // optional

    MatrixXd jacobian_u(const VectorXd& u, const VectorXd& p) const;
    MatrixXd jacobian_p(const VectorXd& u, const VectorXd& p) const;
};

/// rhs = p[ts_param] * field(u, p[selected model params])
SegmentOde scaled_ode(const VectorFieldSpec& field, int ts_param,
                      const std::vector<int>& model_param_indices);

struct Endpoints {
    std::vector<VectorXd> left;   // u(0) per segment
    std::vector<VectorXd> right;  // u(1) per segment
};

struct BoundaryCondition {
    std::string name;
    int count = 1;
    std::function<VectorXd(const Endpoints&, const VectorXd& params)> fn;
};

struct IntegralCondition {
    std::string name;
    int segment = 0;
    std::function<double(double tau, const VectorXd& u, const VectorXd& params)> integrand;
};

struct NewtonOptions {
    double tol_resid = 1e-10;   // infinity norm over all residuals
    int max_iter = 20;
    double min_damping = 1.0 / 256.0;
    double cond_limit = 1e14;
    double value_bound = 1e8;   // reject iterates outside this box
    bool verbose = false;
};

struct SolveReport {
    int iterations = 0;
    double residual = 0.0;
};

/// Multi-segment collocation boundary value problem.  The Newton system is
/// square: sum of segment dimensions + number of free parameters must equal
/// the number of boundary plus integral conditions.
class BvpProblem {
  public:
    struct Segment {
        std::string name;
        SegmentOde ode;
        OrbitSegment data;
    };

    int add_param(const std::string& name, double value, bool free_param = false);
    int param_index(const std::string& name) const;
    double param(const std::string& name) const { return params_(param_index(name)); }
    void set_param(const std::string& name, double v) { params_(param_index(name)) = v; }
    void set_free(const std::string& name, bool free_param);
    bool is_free(const std::string& name) const { return free_[param_index(name)]; }

    int add_segment(const std::string& name, SegmentOde ode, OrbitSegment data);
    Segment& segment(int i) { return segments_[i]; }
    const Segment& segment(int i) const { return segments_[i]; }
    Segment& segment(const std::string& name);
    const Segment& segment(const std::string& name) const;
    int n_segments() const { return static_cast<int>(segments_.size()); }

    void add_boundary_condition(BoundaryCondition bc) { bcs_.push_back(std::move(bc)); }
    void add_integral_condition(IntegralCondition ic) { ics_.push_back(std::move(ic)); }
    void remove_condition(const std::string& name);

    const VectorXd& params() const { return params_; }
    VectorXd& params() { return params_; }
    const std::vector<std::string>& param_names() const { return param_names_; }
    std::vector<int> free_indices() const;
    int n_free() const;

    Endpoints endpoints() const;

    /// residuals in assembly order: per segment collocation+continuity, then bc, then ic
    VectorXd residuals() const;
    double residual_norm() const;

    int n_conditions() const;       // bc + ic rows
    int n_reduced() const;          // breakpoint unknowns + free parameters
    int n_reduced_nodal() const;    // breakpoint unknowns only

    /// reduced coordinates: [breakpoint values of all segments..., free params]
    VectorXd reduced_state() const;

    /// index of a free parameter inside the reduced coordinate vector
    int reduced_param_index(const std::string& name) const;

    /// add dx (reduced coordinates) to the current state; stage values are
    /// shifted by the linear interpolant of the breakpoint deltas
    void apply_reduced_step(const VectorXd& dx);

    struct State {
        std::vector<MatrixXd> values;
        VectorXd params;
    };
    State save_state() const;
    void load_state(const State& s);

    /// hook run by continuation after each accepted step (e.g. phase reference update)
    std::function<void(BvpProblem&)> post_accept;

  private:
    friend class CollocSystem;
    std::vector<Segment> segments_;
    std::vector<std::string> param_names_;
    VectorXd params_;
    std::vector<bool> free_;
    std::vector<BoundaryCondition> bcs_;
    std::vector<IntegralCondition> ics_;
};

/// Newton solve of {residuals = 0}.  Throws NonConvergence / SingularJacobian.
SolveReport solve(BvpProblem& prob, const NewtonOptions& opts = {});

/// Newton solve of {residuals = 0, <reduced_state - ref, w> = c} (pseudo-arclength
/// corrector).  w, ref live in reduced coordinates.
SolveReport solve_constrained(BvpProblem& prob, const VectorXd& w, const VectorXd& ref, double c,
                              const NewtonOptions& opts = {});

/// Unit-free null vector of the residual Jacobian in reduced coordinates
/// (requires exactly one more unknown than conditions).  `prev` fixes the
/// bordering row and the orientation; pass a roughly-aligned direction.
VectorXd branch_tangent(BvpProblem& prob, const VectorXd& prev, const NewtonOptions& opts = {});

}  // namespace snaking
