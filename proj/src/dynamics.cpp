#include "wihs/dynamics.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_odeiv2.h>

#include <cmath>
#include <mutex>

namespace wihs {

namespace {

struct RhsParams {
    const SystemModel* model;
    Vec omega;
};

int rhs(double /*t*/, const double y[], double dydt[], void* params) {
    const auto* p = static_cast<const RhsParams*>(params);
    const int N = p->model->dim();
    Vec theta(N);
    for (int k = 0; k < N; ++k) theta[k] = y[k];
    const double a = p->model->a_exact(theta);
    for (int k = 0; k < N; ++k) dydt[k] = a * p->omega[k];
    return GSL_SUCCESS;
}

void disable_gsl_abort() {
    static std::once_flag flag;
    std::call_once(flag, [] { gsl_set_error_handler_off(); });
}

} // namespace

Vec integrate_direct(const SystemModel& model, const Vec& I, const Vec& theta0_lift,
                     double t_end, double tol) {
    if (!(tol >= 1e-13 && tol <= 1e-6))
        throw DomainError("integrate_direct: tol must lie in [1e-13, 1e-6]");
    disable_gsl_abort();

    RhsParams params{&model, model.omega(I)};
    const int N = model.dim();
    gsl_odeiv2_system sys{rhs, nullptr, static_cast<std::size_t>(N), &params};

    const double h0 = (t_end >= 0.0 ? 1.0 : -1.0) * 1e-3;
    gsl_odeiv2_driver* driver = gsl_odeiv2_driver_alloc_y_new(
        &sys, gsl_odeiv2_step_rk8pd, h0, tol * 0.1, tol * 0.1);
    if (driver == nullptr) throw std::bad_alloc();
    gsl_odeiv2_driver_set_hmin(driver, 0.0);

    double y[3] = {0, 0, 0};
    for (int k = 0; k < N; ++k) y[k] = theta0_lift[k];
    double t = 0.0;
    const int status = gsl_odeiv2_driver_apply(driver, &t, t_end, y);
    gsl_odeiv2_driver_free(driver);
    if (status != GSL_SUCCESS)
        throw StiffnessError("integrate_direct: step control failed (gsl status " +
                             std::to_string(status) + ")");
    Vec out(N);
    for (int k = 0; k < N; ++k) out[k] = y[k];
    return out;
}

Vec flow_conjugated(const Conjugacy& conj, const Vec& theta0_lift, double t) {
    const Vec phi = conj.psi(theta0_lift) + conj.a_bar() * t * conj.omega();
    return conj.psi_inverse(phi);
}

double linearity_defect(const SystemModel& model, const Conjugacy& conj,
                        const Vec& theta0, const std::vector<double>& t_grid,
                        double tol) {
    double worst = 0.0;
    for (double t : t_grid) {
        const Vec direct = integrate_direct(model, conj.action(), theta0, t, tol);
        const Vec conjugated = flow_conjugated(conj, theta0, t);
        worst = std::max(worst, torus_distance(direct, conjugated));
    }
    return worst;
}

} // namespace wihs
