// conjugacy.hpp — the action-dependent angle change Psi_I(theta) =
// theta + omega(I) v_I(theta): evaluation, Jacobian data, Newton inverse,
// action-derivative, and the pushforward density.
#pragma once

#include <functional>
#include <memory>

#include "wihs/cohomology.hpp"
#include "wihs/model.hpp"

namespace wihs {

struct InverseOptions {
    double tol = 1e-12;
    int max_iter = 50;
    double damping = 0.5;
};

class Conjugacy {
public:
    /// Solves the cohomological equation at I and certifies det DPsi > 0 on
    /// the nominal grid (throws DiffeomorphismViolation otherwise).
    Conjugacy(std::shared_ptr<const SystemModel> model, const Vec& I,
              const SolveOptions& solve_opts = {});

    const Vec& action() const { return I_; }
    const Vec& omega() const { return omega_; }
    double a_bar() const { return model_->a_bar(); }
    const CohomologySolution& solution() const { return sol_; }
    const SystemModel& model() const { return *model_; }
    double min_det() const { return min_det_; }

    /// theta + omega(I) v(theta), acting on lifts (commutes with 2*pi shifts).
    Vec psi(const Vec& theta_lift) const;

    /// 1 + omega.grad v(theta); throws DiffeomorphismViolation if <= 0.
    double jacobian_det(const Vec& theta) const;

    /// (2 pi)^{-N} integral of det DPsi by grid quadrature (contract: 1).
    double degree_check(int grid_refinement = 2) const;

    /// Damped Newton on the lift, seeded at phi. Uses the rank-one structure
    /// DPsi = Id + omega (grad v)^T, inverted in closed form.
    Vec psi_inverse(const Vec& phi_lift, const InverseOptions& opts = {}) const;
    Vec psi_inverse(const Vec& phi_lift, double tol) const {
        InverseOptions o;
        o.tol = tol;
        return psi_inverse(phi_lift, o);
    }

    /// Domega(I) v(theta) + omega(I) (x) dI_v(theta)  (N x N).
    Mat d_I_psi(const Vec& theta) const;

    /// a_bar^{-1} f0(I, psi_inverse(phi)).
    double pushforward_density(const std::function<double(const Vec&)>& f0_at_I,
                               const Vec& phi) const;

private:
    std::shared_ptr<const SystemModel> model_;
    Vec I_;
    Vec omega_;
    Mat domega_;
    CohomologySolution sol_;
    double min_det_ = 0.0;
};

/// Aggregate audit over an I grid (CLI `conjugacy-audit` payload).
struct ConjugacyAudit {
    double min_det = 0.0;
    double max_jacobian_identity_error = 0.0; ///< sup |det - a_bar/a| on the 2K grid
    double degree = 0.0;                      ///< worst-case deviation reported as value
    double max_degree_error = 0.0;
    double C_psi = 0.0;                       ///< sup spectral norm of dI Psi
    double roundtrip_p99 = 0.0;               ///< 99th pct of |psi^{-1}(psi(x)) - x|
};

ConjugacyAudit conjugacy_audit(const SystemModel& model, int I_grid_n = 5,
                               int theta_refinement = 2, int roundtrip_samples = 1000,
                               std::uint64_t seed = 3);

} // namespace wihs
