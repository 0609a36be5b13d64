// quadrature.hpp — Gauss-Legendre rules, periodic torus grids, Chebyshev
// tensor interpolation on a box, and the small test statistics used by the
// sampling audits.
#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "wihs/types.hpp"

namespace wihs {

/// Gauss-Legendre nodes/weights on [a, b].
struct GaussLegendre {
    std::vector<double> x, w;
    GaussLegendre() = default;
    GaussLegendre(int n, double a, double b);
};

/// Tensor Gauss-Legendre rule over an action box; iterates deterministically
/// in row-major node order (axis 0 slowest).
struct BoxQuadrature {
    std::vector<GaussLegendre> axes;

    BoxQuadrature(const ActionBox& box, int nodes_per_axis);
    BoxQuadrature(const ActionBox& box, const std::vector<int>& nodes_per_axis);

    std::size_t total_nodes() const;

    /// fn(I, weight) for every tensor node.
    void for_each(const std::function<void(const Vec&, double)>& fn) const;

    double integrate(const std::function<double(const Vec&)>& fn) const;
};

/// Uniform periodic grid on T^N: nodes theta_j = 2*pi*j/m, quadrature weight
/// (2*pi/m)^N per node (trapezoid = spectral accuracy for periodic smooth f).
struct TorusGrid {
    int dim;
    int per_axis;

    TorusGrid(int dim_, int per_axis_) : dim(dim_), per_axis(per_axis_) {}

    std::size_t total_nodes() const {
        std::size_t t = 1;
        for (int k = 0; k < dim; ++k) t *= static_cast<std::size_t>(per_axis);
        return t;
    }

    double node_weight() const {
        double w = 1.0;
        for (int k = 0; k < dim; ++k) w *= two_pi / per_axis;
        return w;
    }

    /// fn(flat_index, theta) in row-major order.
    void for_each(const std::function<void(std::size_t, const Vec&)>& fn) const;

    double integrate(const std::function<double(const Vec&)>& fn) const;
    Complex integrate_complex(const std::function<Complex(const Vec&)>& fn) const;
};

/// Chebyshev interpolant on [lo, hi]^N (tensor Chebyshev-Gauss nodes),
/// complex-valued. Exact spectral accuracy for analytic integrands; used to
/// make oscillatory-quadrature amplitudes cheap to evaluate.
class ChebInterp {
public:
    ChebInterp() = default;

    /// Build from values at the tensor Chebyshev-Gauss nodes (degree per
    /// axis), fn evaluated lazily by index order.
    static ChebInterp build(const ActionBox& box, int degree,
                            const std::function<Complex(const Vec&)>& fn);

    /// Nodes of the tensor grid in evaluation order (for batch builds).
    static std::vector<Vec> nodes(const ActionBox& box, int degree, int dim);

    /// Build from precomputed values in the order produced by nodes().
    static ChebInterp from_values(const ActionBox& box, int degree, int dim,
                                  std::vector<Complex> values);

    Complex eval(const Vec& I) const;

    int degree() const { return degree_; }
    const std::vector<Complex>& coeffs() const { return coeffs_; }
    double max_abs_coeff_tail() const; ///< max |c| on the top shell (accuracy proxy)
    double max_abs_value() const;      ///< sup of |values| over build nodes

    /// 1D weighted Chebyshev phase sums over a Gauss-Legendre rule:
    ///   out[p] = sum_j w_j T_p(u(x_j)) e^{i xi x_j}
    /// with u the affine map of [a,b] to [-1,1]. Contracting these against
    /// the tensor coefficients reproduces the plain tensor GL sum of
    /// interp(I) e^{i xi . I} exactly (reassociated).
    static std::vector<Complex> phase_weighted_rows(const GaussLegendre& rule,
                                                    double a, double b, int degree,
                                                    double xi);

    const ActionBox& box() const { return box_; }
    int dim() const { return dim_; }

private:
    ActionBox box_;
    int dim_ = 0;
    int degree_ = 0;
    std::vector<Complex> coeffs_; // tensor Chebyshev coefficients, row-major
    double max_abs_value_ = 0.0;
};

// --- test statistics ----------------------------------------------------

/// Survival function of the chi-squared distribution (p-value of `stat`).
double chi2_survival(double stat, int dof);

/// Asymptotic two-sided Kolmogorov-Smirnov p-value for a sorted sample
/// against a CDF evaluator.
double ks_p_value(std::vector<double> samples, const std::function<double(double)>& cdf);

/// Chi-squared uniformity test on [0, 2pi)^dim with `bins_per_axis` bins per
/// axis; returns the p-value.
double chi2_uniform_p(const std::vector<Vec>& points, int bins_per_axis);

} // namespace wihs
