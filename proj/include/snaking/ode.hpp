#pragma once

#include <array>
#include <optional>
#include <stdexcept>

#include "snaking/models.hpp"
#include "snaking/segment.hpp"

namespace snaking {

/// Step-size underflow (typically finite-time blow-up); carries the failure time.
struct IntegrationBlowup : std::runtime_error {
    double t_fail;
    explicit IntegrationBlowup(double t);
};

using OdeRhs = std::function<VectorXd(const VectorXd&)>;

/// Dense Runge-Kutta trajectory: continuous interpolant over accepted steps.
class DenseTrajectory {
  public:
    double t_begin() const { return t_.front(); }
    double t_end() const { return t_.back(); }
    VectorXd eval(double t) const;
    int n_steps() const { return static_cast<int>(t_.size()) - 1; }

  private:
    friend DenseTrajectory integrate_dense(const OdeRhs&, const VectorXd&, double, double);
    std::vector<double> t_;                           // accepted step boundaries
    std::vector<std::array<VectorXd, 5>> coef_;       // interpolant coefficients per step
};

/// Dormand-Prince 5(4) with mixed absolute/relative tolerance `tol` per step.
DenseTrajectory integrate_dense(const OdeRhs& rhs, const VectorXd& u0, double t_span, double tol);

/// Integrate and sample the dense output onto a uniform collocation mesh.
OrbitSegment integrate(const VectorFieldSpec& field, const VectorXd& u0, const VectorXd& lam,
                       double t_span, double tol, int n_out = 0, int degree = 4);

struct EventHit {
    double t;
    VectorXd u;
};

/// First root of `event` along the trajectory of `rhs` within (0, t_max].
/// Returns nothing when no sign change occurs before t_max.
std::optional<EventHit> integrate_until(const OdeRhs& rhs, const VectorXd& u0, double t_max,
                                        double tol,
                                        const std::function<double(const VectorXd&)>& event);

}  // namespace snaking
