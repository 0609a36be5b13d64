#include "wihs/conjugacy.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "wihs/quadrature.hpp"
#include "wihs/rng.hpp"

namespace wihs {

Conjugacy::Conjugacy(std::shared_ptr<const SystemModel> model, const Vec& I,
                     const SolveOptions& solve_opts)
    : model_(std::move(model)), I_(I) {
    omega_ = model_->omega(I_);
    domega_ = model_->d_omega(I_);
    sol_ = solve_v(*model_, I_, solve_opts);

    // det DPsi = 1 + omega.grad v = 1 + b on the band; certify positivity on
    // the nominal grid.
    const TorusGrid grid(model_->dim(), 2 * model_->band() + 1);
    double min_det = std::numeric_limits<double>::infinity();
    Vec gv(model_->dim());
    double vv = 0.0;
    grid.for_each([&](std::size_t, const Vec& th) {
        sol_.v.value_and_gradient_real(th, vv, gv);
        min_det = std::min(min_det, 1.0 + omega_.dot(gv));
    });
    min_det_ = min_det;
    if (!(min_det_ > 0.0)) {
        std::ostringstream os;
        os << "conjugacy: det DPsi = " << min_det_
           << " <= 0 on the audit grid (band/aliasing failure)";
        throw DiffeomorphismViolation(os.str());
    }
}

Vec Conjugacy::psi(const Vec& theta_lift) const {
    const double v = sol_.v.eval_real(theta_lift);
    return theta_lift + omega_ * v;
}

double Conjugacy::jacobian_det(const Vec& theta) const {
    double v = 0.0;
    Vec gv(model_->dim());
    sol_.v.value_and_gradient_real(theta, v, gv);
    const double det = 1.0 + omega_.dot(gv);
    if (!(det > 0.0))
        throw DiffeomorphismViolation("jacobian_det: nonpositive value " +
                                      std::to_string(det));
    return det;
}

double Conjugacy::degree_check(int grid_refinement) const {
    const int per_axis = std::max(1, grid_refinement) * (2 * model_->band() + 1);
    const TorusGrid grid(model_->dim(), per_axis);
    double acc = 0.0;
    Vec gv(model_->dim());
    double v = 0.0;
    grid.for_each([&](std::size_t, const Vec& th) {
        sol_.v.value_and_gradient_real(th, v, gv);
        acc += 1.0 + omega_.dot(gv);
    });
    return acc / static_cast<double>(grid.total_nodes());
}

Vec Conjugacy::psi_inverse(const Vec& phi_lift, const InverseOptions& opts) const {
    const int N = model_->dim();
    Vec theta = phi_lift;
    Vec gv(N);
    double v = 0.0;

    auto residual = [&](const Vec& th, Vec& r) {
        const double val = sol_.v.eval_real(th);
        r = phi_lift - th - omega_ * val;
        return r.cwiseAbs().maxCoeff();
    };

    Vec r(N), r_new(N);
    double rnorm = residual(theta, r);
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        if (rnorm <= opts.tol) return theta;
        sol_.v.value_and_gradient_real(theta, v, gv);
        // DPsi = Id + omega gv^T; Sherman-Morrison inverse applied to r.
        const double denom = 1.0 + gv.dot(omega_);
        if (!(denom > 0.0))
            throw DiffeomorphismViolation("psi_inverse: nonpositive Jacobian at iterate");
        Vec step = r - omega_ * (gv.dot(r) / denom);
        double scale = 1.0;
        for (;;) {
            Vec cand = theta + scale * step;
            const double rn = residual(cand, r_new);
            if (rn < rnorm || scale < 1e-6) {
                theta = cand;
                r = r_new;
                rnorm = rn;
                break;
            }
            scale *= opts.damping;
        }
    }
    if (rnorm <= opts.tol) return theta;
    throw InversionFailure("psi_inverse: no convergence in " +
                           std::to_string(opts.max_iter) +
                           " iterations (last residual " + std::to_string(rnorm) + ")");
}

Mat Conjugacy::d_I_psi(const Vec& theta) const {
    const int N = model_->dim();
    const double v = sol_.v.eval_real(theta);
    Vec div(N);
    for (int j = 0; j < N; ++j) div[j] = sol_.dI_v[static_cast<std::size_t>(j)].eval_real(theta);
    Mat out = domega_ * v;
    out += omega_ * div.transpose();
    return out;
}

double Conjugacy::pushforward_density(const std::function<double(const Vec&)>& f0_at_I,
                                      const Vec& phi) const {
    const Vec theta = psi_inverse(phi);
    const double f = f0_at_I(wrap_angles(theta));
    if (f < 0.0) throw DensityError("pushforward_density: negative density value");
    return f / model_->a_bar();
}

ConjugacyAudit conjugacy_audit(const SystemModel& model, int I_grid_n,
                               int theta_refinement, int roundtrip_samples,
                               std::uint64_t seed) {
    auto shared = std::make_shared<SystemModel>(model);
    const int N = model.dim();
    ConjugacyAudit audit;
    audit.min_det = std::numeric_limits<double>::infinity();
    double worst_degree = 1.0;

    std::vector<Vec> I_points;
    {
        // uniform inclusive grid over the box
        std::vector<int> idx(static_cast<std::size_t>(N), 0);
        Vec I(N);
        for (;;) {
            for (int k = 0; k < N; ++k) {
                const double f =
                    I_grid_n == 1 ? 0.5
                                  : static_cast<double>(idx[static_cast<std::size_t>(k)]) /
                                        (I_grid_n - 1);
                I[k] = model.box().lo[k] + f * (model.box().hi[k] - model.box().lo[k]);
            }
            I_points.push_back(I);
            int k = N - 1;
            for (; k >= 0; --k) {
                if (++idx[static_cast<std::size_t>(k)] < I_grid_n) break;
                idx[static_cast<std::size_t>(k)] = 0;
            }
            if (k < 0) break;
        }
    }

    const int per_axis = theta_refinement * (2 * model.band() + 1);
    const TorusGrid theta_grid(N, per_axis);
    const std::vector<double> a_vals = model.a_series().to_grid(per_axis);

    std::vector<double> roundtrip;
    roundtrip.reserve(static_cast<std::size_t>(roundtrip_samples) * I_points.size());

    for (const Vec& I : I_points) {
        Conjugacy conj(shared, I);
        audit.min_det = std::min(audit.min_det, conj.min_det());

        double vv = 0.0;
        Vec gv(N);
        theta_grid.for_each([&](std::size_t flat, const Vec& th) {
            conj.solution().v.value_and_gradient_real(th, vv, gv);
            const double det = 1.0 + conj.omega().dot(gv);
            const double rhs = model.a_bar() / a_vals[flat];
            audit.max_jacobian_identity_error =
                std::max(audit.max_jacobian_identity_error, std::abs(det - rhs));
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(conj.d_I_psi(th));
            audit.C_psi = std::max(audit.C_psi, svd.singularValues().maxCoeff());
        });

        const double deg = conj.degree_check(theta_refinement);
        if (std::abs(deg - 1.0) > std::abs(worst_degree - 1.0)) worst_degree = deg;

        CounterRng rng(seed, 0xc0ffee);
        for (int s = 0; s < roundtrip_samples; ++s) {
            Vec th(N);
            for (int k = 0; k < N; ++k) th[k] = rng.next_double(0.0, two_pi);
            const Vec back = conj.psi_inverse(conj.psi(th));
            roundtrip.push_back((back - th).cwiseAbs().maxCoeff());
        }
    }
    audit.degree = worst_degree;
    audit.max_degree_error = std::abs(worst_degree - 1.0);
    std::sort(roundtrip.begin(), roundtrip.end());
    const std::size_t idx99 =
        std::min(roundtrip.size() - 1,
                 static_cast<std::size_t>(0.99 * static_cast<double>(roundtrip.size())));
    audit.roundtrip_p99 = roundtrip.empty() ? 0.0 : roundtrip[idx99];
    return audit;
}

} // namespace wihs
