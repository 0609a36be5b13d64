#include "wihs/model.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <sstream>

#include "wihs/quadrature.hpp"
#include "wihs/rng.hpp"

namespace wihs {

double Polynomial::eval(const Vec& I) const {
    if (I.size() != dim) throw DimensionError("Polynomial::eval: dimension mismatch");
    double acc = 0.0;
    for (const auto& t : terms) {
        double v = t.coeff;
        for (int k = 0; k < dim; ++k)
            for (int e = 0; e < t.exponents[k]; ++e) v *= I[k];
        acc += v;
    }
    return acc;
}

Vec Polynomial::gradient(const Vec& I) const {
    if (I.size() != dim) throw DimensionError("Polynomial::gradient: dimension mismatch");
    Vec g = Vec::Zero(dim);
    for (const auto& t : terms) {
        for (int k = 0; k < dim; ++k) {
            if (t.exponents[k] == 0) continue;
            double v = t.coeff * t.exponents[k];
            for (int j = 0; j < dim; ++j) {
                const int e = t.exponents[j] - (j == k ? 1 : 0);
                for (int r = 0; r < e; ++r) v *= I[j];
            }
            g[k] += v;
        }
    }
    return g;
}

Mat Polynomial::hessian(const Vec& I) const {
    if (I.size() != dim) throw DimensionError("Polynomial::hessian: dimension mismatch");
    Mat h = Mat::Zero(dim, dim);
    for (const auto& t : terms) {
        for (int k = 0; k < dim; ++k) {
            for (int l = 0; l < dim; ++l) {
                IVec e = t.exponents;
                double factor = t.coeff;
                factor *= e[k];
                if (e[k] == 0) continue;
                e[k] -= 1;
                factor *= e[l];
                if (factor == 0.0 || e[l] == 0) continue;
                e[l] -= 1;
                double v = factor;
                for (int j = 0; j < dim; ++j)
                    for (int r = 0; r < e[j]; ++r) v *= I[j];
                h(k, l) += v;
            }
        }
    }
    return h;
}

int Polynomial::degree() const {
    int d = 0;
    for (const auto& t : terms) {
        int s = 0;
        for (int k = 0; k < dim; ++k) s += t.exponents[k];
        d = std::max(d, s);
    }
    return d;
}

Vec SystemModel::omega(const Vec& I) const {
    if (!box_.contains(I))
        throw DomainError("omega: action outside the closure of Omega");
    return hamiltonian_.gradient(I);
}

Mat SystemModel::d_omega(const Vec& I) const {
    if (!box_.contains(I))
        throw DomainError("d_omega: action outside the closure of Omega");
    return hamiltonian_.hessian(I);
}

namespace {

// Uniform inclusive grid over the box, grid_n points per axis.
std::vector<Vec> action_grid(const ActionBox& box, int grid_n) {
    const int dim = box.dim();
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    std::vector<Vec> out;
    Vec I(dim);
    for (;;) {
        for (int k = 0; k < dim; ++k) {
            const double f = grid_n == 1
                                 ? 0.5
                                 : static_cast<double>(idx[static_cast<std::size_t>(k)]) /
                                       (grid_n - 1);
            I[k] = box.lo[k] + f * (box.hi[k] - box.lo[k]);
        }
        out.push_back(I);
        int k = dim - 1;
        for (; k >= 0; --k) {
            if (++idx[static_cast<std::size_t>(k)] < grid_n) break;
            idx[static_cast<std::size_t>(k)] = 0;
        }
        if (k < 0) break;
    }
    return out;
}

std::string format_mode(const IVec& n) {
    std::ostringstream os;
    os << "(";
    for (Eigen::Index k = 0; k < n.size(); ++k) os << (k ? "," : "") << n[k];
    os << ")";
    return os.str();
}

// Random zero-mean Hermitian series of the given band, coefficients decaying
// like (1+|n|_inf)^{-2}; deterministic in the seed.
TorusSeries random_real_series(int dim, int band, std::uint64_t seed) {
    CounterRng rng(seed, 0x5eedba5e);
    std::vector<std::pair<IVec, Complex>> modes;
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    const int M = 2 * band + 1;
    IVec n(dim);
    for (int flat = 0;; ++flat) {
        std::size_t rem = static_cast<std::size_t>(flat);
        for (int k = dim - 1; k >= 0; --k) {
            n[k] = static_cast<int>(rem % static_cast<std::size_t>(M)) - band;
            rem /= static_cast<std::size_t>(M);
        }
        if (rem > 0) break;
        // half-space only; mirror handled by hermitian completion
        int lead = 0;
        for (int k = 0; k < dim; ++k)
            if (n[k] != 0) {
                lead = n[k];
                break;
            }
        int shell = 0;
        for (int k = 0; k < dim; ++k) shell = std::max(shell, std::abs(n[k]));
        if (lead <= 0 || shell == 0) continue;
        const double scale = std::pow(1.0 + shell, -2.0);
        const Complex c(rng.next_symmetric() * scale, rng.next_symmetric() * scale);
        modes.emplace_back(n, c);
    }
    return TorusSeries::from_modes(dim, band, modes, /*hermitian_complete=*/true);
}

} // namespace

SystemModel build_model(const ModelSpec& spec) {
    if (spec.dim < 1 || spec.dim > 3)
        throw DimensionError("build_model: dim must be in [1, 3]");
    spec.box.validate();
    if (spec.box.dim() != spec.dim)
        throw DimensionError("build_model: Omega dimension mismatch");
    if (spec.hamiltonian.dim != spec.dim)
        throw DimensionError("build_model: Hamiltonian dimension mismatch");
    if (spec.band < 1) throw DomainError("build_model: band must be >= 1");

    SystemModel model;
    model.name_ = spec.name;
    model.dim_ = spec.dim;
    model.band_ = spec.band;
    model.box_ = spec.box;
    model.hamiltonian_ = spec.hamiltonian;

    const int N = spec.dim;
    const int K = spec.band;
    const TorusGrid grid(N, 2 * K + 1);

    // Exact weight evaluator on arbitrary points (used for the grid and the
    // 2K aliasing measurement).
    std::function<double(const Vec&)> m_exact;
    switch (spec.weight.kind) {
        case WeightSpec::Kind::One:
            m_exact = [](const Vec&) { return 1.0; };
            break;
        case WeightSpec::Kind::MCoeffs: {
            auto series = TorusSeries::from_modes(N, K, spec.weight.modes);
            if (!series.hermitian())
                throw DomainError("build_model: weight coefficients are not Hermitian");
            m_exact = [series](const Vec& th) { return series.eval_real(th); };
            break;
        }
        case WeightSpec::Kind::RhoCoeffs: {
            auto series = TorusSeries::from_modes(N, K, spec.weight.modes);
            if (!series.hermitian())
                throw DomainError("build_model: rho coefficients are not Hermitian");
            m_exact = [series, N](const Vec& th) {
                return std::pow(series.eval_real(th), N);
            };
            break;
        }
        case WeightSpec::Kind::ExpRandom: {
            TorusSeries u = random_real_series(N, spec.weight.rand_band,
                                               spec.weight.rand_seed);
            // Scale so that min over the grid of m = exp(s u) equals rand_min.
            double umin = 0.0;
            grid.for_each([&](std::size_t, const Vec& th) {
                umin = std::min(umin, u.eval_real(th));
            });
            if (umin >= 0.0)
                throw PositivityError("build_model: degenerate random weight draw");
            const double s = std::log(spec.weight.rand_min) / umin;
            m_exact = [u, s](const Vec& th) { return std::exp(s * u.eval_real(th)); };
            break;
        }
    }

    std::vector<double> m_vals(grid.total_nodes());
    grid.for_each([&](std::size_t i, const Vec& th) { m_vals[i] = m_exact(th); });
    double m_min = m_vals[0];
    for (double v : m_vals) m_min = std::min(m_min, v);
    if (!(m_min > 0.0))
        throw PositivityError("build_model: weight m is not strictly positive on the grid (min = " +
                              std::to_string(m_min) + ")");

    std::vector<double> a_vals(m_vals.size()), rho_vals(m_vals.size());
    for (std::size_t i = 0; i < m_vals.size(); ++i) {
        a_vals[i] = std::pow(m_vals[i], -1.0 / N);
        rho_vals[i] = std::pow(m_vals[i], 1.0 / N);
    }
    model.m_ = TorusSeries::from_grid(N, K, m_vals);
    model.a_ = TorusSeries::from_grid(N, K, a_vals);
    model.rho_ = TorusSeries::from_grid(N, K, rho_vals);

    // a_bar = (2 pi)^N / integral(rho) with the band-exact quadrature
    // integral(rho) = (2 pi)^N rho_0.
    const double rho0 = model.rho_.coeff0().real();
    model.a_bar_ = 1.0 / rho0;

    // b = a_bar * rho - 1, mean forced to zero.
    const double a_bar = model.a_bar_;
    model.b_ = model.rho_.map_modes([a_bar](const IVec& n, Complex c) -> Complex {
        bool zero = true;
        for (Eigen::Index k = 0; k < n.size(); ++k) zero = zero && n[k] == 0;
        if (zero) return Complex(0.0, 0.0);
        return a_bar * c;
    });

    // Aliasing measure: rho series vs the exact m^{1/N} on the 2K grid.
    const TorusGrid fine(N, 2 * (2 * K + 1));
    double alias = 0.0;
    fine.for_each([&](std::size_t, const Vec& th) {
        alias = std::max(alias, std::abs(model.rho_.eval_real(th) -
                                         std::pow(m_exact(th), 1.0 / N)));
    });
    model.aliasing_sup_ = alias;
    return model;
}

ResonanceAudit SystemModel::resonance_audit_report(int K, int grid_n, double tau) const {
    if (K < 1) throw DomainError("resonance_audit: K must be >= 1");
    if (grid_n < 2) throw DomainError("resonance_audit: grid_n must be >= 2");
    if (tau < dim_ - 1)
        throw DomainError("resonance_audit: tau must be >= N-1");

    ResonanceAudit audit;
    audit.tau = tau;
    audit.K_audit = K;

    const auto grid = action_grid(box_, grid_n);
    audit.grid_points = grid.size();

    double alpha = std::numeric_limits<double>::infinity();
    double min_div = std::numeric_limits<double>::infinity();
    double lambda = std::numeric_limits<double>::infinity();
    Vec worst_I = grid.front();
    IVec worst_n = IVec::Zero(dim_);

    const int M = 2 * K + 1;
    std::size_t n_modes = 1;
    for (int k = 0; k < dim_; ++k) n_modes *= static_cast<std::size_t>(M);

    IVec n(dim_);
    for (const Vec& I : grid) {
        const Vec om = hamiltonian_.gradient(I);
        for (std::size_t flat = 0; flat < n_modes; ++flat) {
            std::size_t rem = flat;
            int shell = 0;
            double dot = 0.0;
            for (int k = dim_ - 1; k >= 0; --k) {
                n[k] = static_cast<int>(rem % static_cast<std::size_t>(M)) - K;
                rem /= static_cast<std::size_t>(M);
                shell = std::max(shell, std::abs(n[k]));
                dot += n[k] * om[k];
            }
            if (shell == 0) continue;
            const double div = std::abs(dot);
            const double weighted = div * std::pow(static_cast<double>(shell), tau);
            if (div < min_div) {
                min_div = div;
                worst_I = I;
                worst_n = n;
            }
            alpha = std::min(alpha, weighted);
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(hamiltonian_.hessian(I));
        lambda = std::min(lambda, svd.singularValues().minCoeff());
    }
    audit.alpha_eff = alpha;
    audit.lambda_eff = lambda;
    audit.min_divisor = min_div;
    audit.worst_I = worst_I;
    audit.worst_n = worst_n;
    return audit;
}

ResonanceAudit SystemModel::resonance_audit(int K, int grid_n, double tau) const {
    ResonanceAudit audit = resonance_audit_report(K, grid_n, tau);
    if (audit.alpha_eff <= 1e-12) {
        std::ostringstream os;
        os << "resonance failure: |n.omega(I)| = " << audit.min_divisor << " at n = "
           << format_mode(audit.worst_n) << ", I = (";
        for (int k = 0; k < dim_; ++k) os << (k ? "," : "") << audit.worst_I[k];
        os << ")";
        throw ResonanceFailure(os.str());
    }
    if (audit.lambda_eff <= 1e-12)
        throw DegeneracyFailure("degeneracy failure: sigma_min(Domega) = " +
                                std::to_string(audit.lambda_eff));
    return audit;
}

double SystemModel::omega_image_diameter() const {
    // omega over the corner set; for affine gradients this is exact, for
    // higher degree it is refined with an interior grid.
    const int probe = hamiltonian_.gradient_is_affine() ? 2 : 9;
    const auto grid = action_grid(box_, probe);
    Vec lo = hamiltonian_.gradient(grid.front());
    Vec hi = lo;
    for (const Vec& I : grid) {
        const Vec om = hamiltonian_.gradient(I);
        lo = lo.cwiseMin(om);
        hi = hi.cwiseMax(om);
    }
    return (hi - lo).norm();
}

// --- reference systems ------------------------------------------------------

namespace {
Polynomial quadratic_hamiltonian(int dim) {
    Polynomial H;
    H.dim = dim;
    for (int k = 0; k < dim; ++k) {
        Polynomial::Term t;
        t.coeff = 0.5;
        t.exponents = IVec::Zero(dim);
        t.exponents[k] = 2;
        H.terms.push_back(t);
    }
    return H;
}

IVec make_n(std::initializer_list<int> vals) {
    IVec n(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index i = 0;
    for (int v : vals) n[i++] = v;
    return n;
}
} // namespace

ModelSpec sys_a_spec(int band) {
    ModelSpec spec;
    spec.name = "SYS-A";
    spec.dim = 1;
    spec.box.lo = Vec::Constant(1, 1.0);
    spec.box.hi = Vec::Constant(1, 2.0);
    spec.hamiltonian = quadratic_hamiltonian(1);
    spec.band = band;
    spec.weight.kind = WeightSpec::Kind::MCoeffs;
    spec.weight.modes = {{make_n({0}), Complex(1.0, 0.0)},
                         {make_n({1}), Complex(0.25, 0.0)},
                         {make_n({-1}), Complex(0.25, 0.0)}};
    return spec;
}

ModelSpec sys_b_spec(int band) {
    ModelSpec spec;
    spec.name = "SYS-B";
    spec.dim = 2;
    spec.box.lo = Vec(2);
    spec.box.hi = Vec(2);
    spec.box.lo << 1.0, 1.55;
    spec.box.hi << 1.2, 1.70;
    spec.hamiltonian = quadratic_hamiltonian(2);
    spec.band = band;
    spec.weight.kind = WeightSpec::Kind::RhoCoeffs;
    // rho = 1 + 0.3 cos(theta1) + 0.2 sin(theta1 + theta2)
    spec.weight.modes = {{make_n({0, 0}), Complex(1.0, 0.0)},
                         {make_n({1, 0}), Complex(0.15, 0.0)},
                         {make_n({-1, 0}), Complex(0.15, 0.0)},
                         {make_n({1, 1}), Complex(0.0, -0.1)},
                         {make_n({-1, -1}), Complex(0.0, 0.1)}};
    return spec;
}

ModelSpec sys_c_spec(int band) {
    ModelSpec spec;
    spec.name = "SYS-C";
    spec.dim = 2;
    spec.box.lo = Vec(2);
    spec.box.hi = Vec(2);
    spec.box.lo << 1.0, 1.55;
    spec.box.hi << 1.2, 1.70;
    spec.hamiltonian = quadratic_hamiltonian(2);
    spec.band = band;
    spec.weight.kind = WeightSpec::Kind::ExpRandom;
    spec.weight.rand_band = 4;
    spec.weight.rand_seed = 42;
    spec.weight.rand_min = 0.3;
    return spec;
}

ModelSpec unweighted_spec(int dim, int band) {
    ModelSpec spec;
    spec.name = "UNWEIGHTED";
    spec.dim = dim;
    spec.box.lo = Vec::Constant(dim, 1.0);
    spec.box.hi = Vec::Constant(dim, 2.0);
    spec.hamiltonian = quadratic_hamiltonian(dim);
    spec.band = band;
    spec.weight.kind = WeightSpec::Kind::One;
    return spec;
}

} // namespace wihs
