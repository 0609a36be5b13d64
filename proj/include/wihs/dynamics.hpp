// dynamics.hpp — two independent evaluators of the angular flow
// theta_dot = a(theta) omega(I): adaptive Runge-Kutta integration and the
// exact conjugated path theta(t) = Psi^{-1}(Psi(theta0) + a_bar omega(I) t).
#pragma once

#include <vector>

#include "wihs/conjugacy.hpp"
#include "wihs/model.hpp"

namespace wihs {

/// Integrate theta_dot = a(theta) omega(I) from the lift theta0 to t_end
/// (t_end may be negative). Returns the unwrapped lift.
Vec integrate_direct(const SystemModel& model, const Vec& I, const Vec& theta0_lift,
                     double t_end, double tol);

/// psi_inverse(psi(theta0) + a_bar omega(I) t); cost independent of t.
Vec flow_conjugated(const Conjugacy& conj, const Vec& theta0_lift, double t);

/// Max over t_grid of the torus distance between the two evaluators.
double linearity_defect(const SystemModel& model, const Conjugacy& conj,
                        const Vec& theta0, const std::vector<double>& t_grid,
                        double tol);

} // namespace wihs
