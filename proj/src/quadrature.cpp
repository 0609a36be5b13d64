#include "wihs/quadrature.hpp"

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <memory>

namespace wihs {

GaussLegendre::GaussLegendre(int n, double a, double b) {
    if (n < 1) throw DomainError("GaussLegendre: need at least one node");
    std::unique_ptr<gsl_integration_glfixed_table,
                    decltype(&gsl_integration_glfixed_table_free)>
        table(gsl_integration_glfixed_table_alloc(static_cast<std::size_t>(n)),
              &gsl_integration_glfixed_table_free);
    x.resize(n);
    w.resize(n);
    for (int i = 0; i < n; ++i) {
        double xi, wi;
        gsl_integration_glfixed_point(a, b, static_cast<std::size_t>(i), &xi, &wi,
                                      table.get());
        x[i] = xi;
        w[i] = wi;
    }
}

BoxQuadrature::BoxQuadrature(const ActionBox& box, int nodes_per_axis)
    : BoxQuadrature(box, std::vector<int>(static_cast<std::size_t>(box.dim()),
                                          nodes_per_axis)) {}

BoxQuadrature::BoxQuadrature(const ActionBox& box,
                             const std::vector<int>& nodes_per_axis) {
    box.validate();
    if (static_cast<int>(nodes_per_axis.size()) != box.dim())
        throw DimensionError("BoxQuadrature: nodes_per_axis size mismatch");
    axes.reserve(nodes_per_axis.size());
    for (int k = 0; k < box.dim(); ++k)
        axes.emplace_back(nodes_per_axis[static_cast<std::size_t>(k)], box.lo[k],
                          box.hi[k]);
}

std::size_t BoxQuadrature::total_nodes() const {
    std::size_t t = 1;
    for (const auto& ax : axes) t *= ax.x.size();
    return t;
}

void BoxQuadrature::for_each(const std::function<void(const Vec&, double)>& fn) const {
    const int dim = static_cast<int>(axes.size());
    std::vector<std::size_t> idx(static_cast<std::size_t>(dim), 0);
    Vec I(dim);
    for (;;) {
        double w = 1.0;
        for (int k = 0; k < dim; ++k) {
            I[k] = axes[static_cast<std::size_t>(k)].x[idx[static_cast<std::size_t>(k)]];
            w *= axes[static_cast<std::size_t>(k)].w[idx[static_cast<std::size_t>(k)]];
        }
        fn(I, w);
        int k = dim - 1;
        for (; k >= 0; --k) {
            if (++idx[static_cast<std::size_t>(k)] <
                axes[static_cast<std::size_t>(k)].x.size())
                break;
            idx[static_cast<std::size_t>(k)] = 0;
        }
        if (k < 0) break;
    }
}

double BoxQuadrature::integrate(const std::function<double(const Vec&)>& fn) const {
    double acc = 0.0;
    for_each([&](const Vec& I, double w) { acc += w * fn(I); });
    return acc;
}

void TorusGrid::for_each(const std::function<void(std::size_t, const Vec&)>& fn) const {
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    Vec theta(dim);
    std::size_t flat = 0;
    for (;;) {
        for (int k = 0; k < dim; ++k)
            theta[k] = two_pi * idx[static_cast<std::size_t>(k)] / per_axis;
        fn(flat++, theta);
        int k = dim - 1;
        for (; k >= 0; --k) {
            if (++idx[static_cast<std::size_t>(k)] < per_axis) break;
            idx[static_cast<std::size_t>(k)] = 0;
        }
        if (k < 0) break;
    }
}

double TorusGrid::integrate(const std::function<double(const Vec&)>& fn) const {
    double acc = 0.0;
    for_each([&](std::size_t, const Vec& th) { acc += fn(th); });
    return acc * node_weight();
}

Complex TorusGrid::integrate_complex(const std::function<Complex(const Vec&)>& fn) const {
    Complex acc(0.0, 0.0);
    for_each([&](std::size_t, const Vec& th) { acc += fn(th); });
    return acc * node_weight();
}

// --- Chebyshev ------------------------------------------------------------

namespace {

// Chebyshev-Gauss abscissae (roots of T_d) on [-1, 1], j = 0..d-1.
double cheb_node(int j, int d) { return std::cos(std::numbers::pi * (j + 0.5) / d); }

void cheb_eval_basis(double u, int d, double* T) {
    T[0] = 1.0;
    if (d > 1) T[1] = u;
    for (int p = 2; p < d; ++p) T[p] = 2.0 * u * T[p - 1] - T[p - 2];
}

} // namespace

std::vector<Vec> ChebInterp::nodes(const ActionBox& box, int degree, int dim) {
    std::vector<Vec> out;
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    Vec I(dim);
    for (;;) {
        for (int k = 0; k < dim; ++k) {
            const double u = cheb_node(idx[static_cast<std::size_t>(k)], degree);
            I[k] = 0.5 * (box.lo[k] + box.hi[k]) + 0.5 * (box.hi[k] - box.lo[k]) * u;
        }
        out.push_back(I);
        int k = dim - 1;
        for (; k >= 0; --k) {
            if (++idx[static_cast<std::size_t>(k)] < degree) break;
            idx[static_cast<std::size_t>(k)] = 0;
        }
        if (k < 0) break;
    }
    return out;
}

ChebInterp ChebInterp::from_values(const ActionBox& box, int degree, int dim,
                                   std::vector<Complex> values) {
    if (degree < 2 || degree > 64)
        throw DomainError("ChebInterp: degree must be in [2, 64]");
    std::size_t expected = 1;
    for (int k = 0; k < dim; ++k) expected *= static_cast<std::size_t>(degree);
    if (values.size() != expected)
        throw ShapeError("ChebInterp: value count mismatch");

    ChebInterp interp;
    interp.box_ = box;
    interp.dim_ = dim;
    interp.degree_ = degree;
    for (const auto& v : values)
        interp.max_abs_value_ = std::max(interp.max_abs_value_, std::abs(v));

    // DCT per axis: c_p = (2 - delta_{p0})/d * sum_j f(x_j) cos(p*pi*(j+0.5)/d).
    std::vector<Complex> work = std::move(values);
    std::size_t stride = 1;
    std::vector<double> cosines(static_cast<std::size_t>(degree) *
                                static_cast<std::size_t>(degree));
    for (int p = 0; p < degree; ++p)
        for (int j = 0; j < degree; ++j)
            cosines[static_cast<std::size_t>(p) * degree + j] =
                std::cos(std::numbers::pi * p * (j + 0.5) / degree);

    for (int axis = dim - 1; axis >= 0; --axis) {
        const std::size_t block = stride * static_cast<std::size_t>(degree);
        std::vector<Complex> line(static_cast<std::size_t>(degree));
        for (std::size_t outer = 0; outer * block < work.size(); ++outer) {
            for (std::size_t inner = 0; inner < stride; ++inner) {
                const std::size_t base = outer * block + inner;
                for (int p = 0; p < degree; ++p) {
                    Complex acc(0.0, 0.0);
                    for (int j = 0; j < degree; ++j)
                        acc += work[base + static_cast<std::size_t>(j) * stride] *
                               cosines[static_cast<std::size_t>(p) * degree + j];
                    line[static_cast<std::size_t>(p)] =
                        acc * ((p == 0 ? 1.0 : 2.0) / degree);
                }
                for (int p = 0; p < degree; ++p)
                    work[base + static_cast<std::size_t>(p) * stride] =
                        line[static_cast<std::size_t>(p)];
            }
        }
        stride = block;
    }
    interp.coeffs_ = std::move(work);
    return interp;
}

ChebInterp ChebInterp::build(const ActionBox& box, int degree,
                             const std::function<Complex(const Vec&)>& fn) {
    const int dim = box.dim();
    std::vector<Complex> values;
    for (const Vec& I : nodes(box, degree, dim)) values.push_back(fn(I));
    return from_values(box, degree, dim, std::move(values));
}

Complex ChebInterp::eval(const Vec& I) const {
    if (I.size() != dim_) throw DimensionError("ChebInterp: dimension mismatch");
    double T[3][64];
    for (int k = 0; k < dim_; ++k) {
        double u = (2.0 * I[k] - box_.lo[k] - box_.hi[k]) / (box_.hi[k] - box_.lo[k]);
        u = std::clamp(u, -1.0, 1.0);
        cheb_eval_basis(u, degree_, T[k]);
    }
    // Contract innermost axis first.
    const int d = degree_;
    std::vector<Complex> acc(coeffs_);
    std::size_t len = acc.size();
    for (int axis = dim_ - 1; axis >= 0; --axis) {
        const std::size_t lines = len / static_cast<std::size_t>(d);
        for (std::size_t l = 0; l < lines; ++l) {
            Complex s(0.0, 0.0);
            for (int p = 0; p < d; ++p)
                s += acc[l * static_cast<std::size_t>(d) + static_cast<std::size_t>(p)] *
                     T[axis][p];
            acc[l] = s;
        }
        len = lines;
    }
    return acc[0];
}

double ChebInterp::max_abs_coeff_tail() const {
    // Max |c| over the top shell (any axis index == degree-1).
    double worst = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(dim_), 0);
    for (std::size_t flat = 0; flat < coeffs_.size(); ++flat) {
        std::size_t rem = flat;
        bool top = false;
        for (int k = dim_ - 1; k >= 0; --k) {
            const int i = static_cast<int>(rem % static_cast<std::size_t>(degree_));
            rem /= static_cast<std::size_t>(degree_);
            if (i == degree_ - 1) top = true;
        }
        if (top) worst = std::max(worst, std::abs(coeffs_[flat]));
    }
    return worst;
}

double ChebInterp::max_abs_value() const { return max_abs_value_; }

std::vector<Complex> ChebInterp::phase_weighted_rows(const GaussLegendre& rule,
                                                     double a, double b, int degree,
                                                     double xi) {
    std::vector<Complex> rows(static_cast<std::size_t>(degree), Complex(0.0, 0.0));
    std::vector<double> T(static_cast<std::size_t>(degree));
    for (std::size_t j = 0; j < rule.x.size(); ++j) {
        const double x = rule.x[j];
        const double u = (2.0 * x - a - b) / (b - a);
        cheb_eval_basis(u, degree, T.data());
        const Complex ph = rule.w[j] * Complex(std::cos(xi * x), std::sin(xi * x));
        for (int p = 0; p < degree; ++p)
            rows[static_cast<std::size_t>(p)] += T[static_cast<std::size_t>(p)] * ph;
    }
    return rows;
}

// --- test statistics -------------------------------------------------------

double chi2_survival(double stat, int dof) {
    return gsl_cdf_chisq_Q(stat, static_cast<double>(dof));
}

double ks_p_value(std::vector<double> samples,
                  const std::function<double(double)>& cdf) {
    if (samples.empty()) throw InsufficientDataError("ks_p_value: empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double F = cdf(samples[i]);
        d = std::max(d, std::abs((i + 1.0) / n - F));
        d = std::max(d, std::abs(F - i / n));
    }
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
        p += term;
        if (std::abs(term) < 1e-12) break;
    }
    return std::clamp(p, 0.0, 1.0);
}

double chi2_uniform_p(const std::vector<Vec>& points, int bins_per_axis) {
    if (points.empty()) throw InsufficientDataError("chi2_uniform_p: no points");
    const int dim = static_cast<int>(points.front().size());
    std::size_t n_bins = 1;
    for (int k = 0; k < dim; ++k) n_bins *= static_cast<std::size_t>(bins_per_axis);
    std::vector<long> counts(n_bins, 0);
    for (const Vec& p : points) {
        std::size_t bin = 0;
        for (int k = 0; k < dim; ++k) {
            int b = static_cast<int>(wrap_angle(p[k]) / two_pi * bins_per_axis);
            b = std::clamp(b, 0, bins_per_axis - 1);
            bin = bin * static_cast<std::size_t>(bins_per_axis) + static_cast<std::size_t>(b);
        }
        ++counts[bin];
    }
    const double expected = static_cast<double>(points.size()) / static_cast<double>(n_bins);
    double stat = 0.0;
    for (long c : counts) {
        const double d = c - expected;
        stat += d * d / expected;
    }
    return chi2_survival(stat, static_cast<int>(n_bins) - 1);
}

} // namespace wihs
