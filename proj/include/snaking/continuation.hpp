#pragma once

#include <limits>

#include "snaking/collocation.hpp"

namespace snaking {

struct FirstStepFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StepUnderflow : std::runtime_error {
    double h;
    explicit StepUnderflow(double h_)
        : std::runtime_error("arclength step underflow, h = " + std::to_string(h_)), h(h_) {}
};
struct NoSignChange : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Scalar diagnostic along a branch; roots are located by re-solving the BVP.
struct TestFunction {
    std::string name;
    std::function<double(const BvpProblem&)> fn;
};

struct StepOptions {
    double h0 = 0.05;
    double h_min = 1e-10;
    double h_max = 0.5;
    int max_steps = 2000;
    int direction = 1;  // sign of the initial tangent's primary-parameter component
    NewtonOptions newton;
};

struct StopConditions {
    double param_min = -std::numeric_limits<double>::infinity();
    double param_max = std::numeric_limits<double>::infinity();
    bool stop_at_fold = false;
    std::function<bool(const BvpProblem&)> predicate;  // optional extra stop test
};

enum class EventKind { Fold, TfRoot, Boundary };

struct BranchPoint {
    VectorXd params;      // full parameter vector (free and frozen)
    double norm = 0.0;    // rms of the breakpoint values over all segments
    VectorXd left;        // concatenated segment left endpoints
    VectorXd right;       // concatenated segment right endpoints
    VectorXd tf;          // test function values
    double arclength = 0.0;
    int newton_iters = 0;
};

struct BranchEvent {
    int index = 0;  // branch point index at/after the event
    EventKind kind = EventKind::Fold;
    VectorXd params;  // refined full parameter vector
    int tf_index = -1;
    double curvature = 0.0;  // second difference of the primary parameter (folds)
};

struct Branch {
    std::vector<std::string> param_names;
    std::vector<BranchPoint> points;
    std::vector<BranchEvent> events;
    bool closed = false;
    std::string stop_reason;
};

/// Pseudo-arclength continuation of a solved problem in its free parameters.
/// `primary_param` names the parameter used for stop bounds, fold bookkeeping
/// and the initial direction.  Folds and test-function roots are refined
/// online while the neighbouring corrector states are still available; crossing
/// a parameter bound triggers a frozen-parameter solve that lands exactly on
/// the bound.  Throws FirstStepFailure / StepUnderflow.
Branch continue_branch(BvpProblem& prob, const std::string& primary_param,
                       const StepOptions& sopts = {}, const StopConditions& stop = {},
                       const std::vector<TestFunction>& tfs = {});

/// Folds of the stored branch: sign changes of the primary-parameter arclength
/// derivative.  Events recorded during continuation are reused (they carry the
/// re-solved location); otherwise a quadratic fit through the three bracketing
/// points refines the stationary point.
std::vector<BranchEvent> detect_folds(const Branch& br, const std::string& primary_param);

/// Re-solve the family at every sign change of test function `tf_index`,
/// walking the frozen primary parameter and bisecting to |tf| <= 1e-9.
/// The problem must carry the state of the branch end point.  Throws
/// NoSignChange when the branch has no bracket.
std::vector<BranchPoint> locate_test_root(BvpProblem& prob, const Branch& br, int tf_index,
                                          const std::vector<TestFunction>& tfs,
                                          const std::string& primary_param,
                                          const NewtonOptions& opts = {});

}  // namespace snaking
