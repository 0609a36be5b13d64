#include "wihs/cohomology.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "wihs/quadrature.hpp"
#include "wihs/rng.hpp"

namespace wihs {

namespace {
std::string mode_str(const IVec& n) {
    std::ostringstream os;
    os << "(";
    for (Eigen::Index k = 0; k < n.size(); ++k) os << (k ? "," : "") << n[k];
    os << ")";
    return os.str();
}
} // namespace

CohomologySolution solve_v(const SystemModel& model, const Vec& I,
                           const SolveOptions& opts) {
    if (!model.box().contains(I))
        throw DomainError("solve_v: action outside the closure of Omega");
    const Vec omega = model.omega(I);
    const Mat domega = model.d_omega(I);
    const int N = model.dim();

    CohomologySolution sol;
    sol.action_I = I;
    sol.min_divisor = std::numeric_limits<double>::infinity();

    const TorusSeries& b = model.b_series();
    sol.v = b.map_modes([&](const IVec& n, Complex c) -> Complex {
        bool zero = true;
        for (int k = 0; k < N; ++k) zero = zero && n[k] == 0;
        if (zero) return Complex(0.0, 0.0);
        double dot = 0.0;
        for (int k = 0; k < N; ++k) dot += n[k] * omega[k];
        sol.min_divisor = std::min(sol.min_divisor, std::abs(dot));
        if (c == Complex(0.0, 0.0)) return c;
        if (std::abs(dot) < opts.divisor_threshold)
            throw SmallDivisorError("solve_v: |n.omega(I)| = " + std::to_string(std::abs(dot)) +
                                    " below threshold at n = " + mode_str(n));
        return c / Complex(0.0, dot);
    });

    sol.dI_v.reserve(static_cast<std::size_t>(N));
    for (int j = 0; j < N; ++j) {
        sol.dI_v.push_back(b.map_modes([&](const IVec& n, Complex c) -> Complex {
            if (c == Complex(0.0, 0.0)) return c;
            double dot = 0.0, dj = 0.0;
            for (int k = 0; k < N; ++k) {
                dot += n[k] * omega[k];
                dj += domega(k, j) * n[k]; // (Domega^T n)_j
            }
            if (std::abs(dot) < opts.divisor_threshold) return Complex(0.0, 0.0);
            // d/dI of b_n/(i n.omega): the 1/i must ride along with the
            // quotient rule (FD-checked).
            return -c * dj / (Complex(0.0, 1.0) * dot * dot);
        }));
    }

    sol.residual_sup = residual(sol, model, opts.residual_refinement);
    return sol;
}

double residual(const CohomologySolution& sol, const SystemModel& model,
                int refinement) {
    if (refinement < 1) throw DomainError("residual: refinement must be >= 1");
    const int N = model.dim();
    const Vec omega = model.omega(sol.action_I);
    const int per_axis = refinement * (2 * model.band() + 1);

    // omega.grad v is itself a band-limited series; compare its grid values
    // against b on the refined grid.
    TorusSeries lhs = sol.v.map_modes([&](const IVec& n, Complex c) -> Complex {
        double dot = 0.0;
        for (int k = 0; k < N; ++k) dot += n[k] * omega[k];
        return Complex(0.0, dot) * c;
    });
    const std::vector<double> lhs_vals = lhs.to_grid(per_axis);
    const std::vector<double> b_vals = model.b_series().to_grid(per_axis);
    double sup = 0.0;
    for (std::size_t i = 0; i < lhs_vals.size(); ++i)
        sup = std::max(sup, std::abs(lhs_vals[i] - b_vals[i]));
    return sup;
}

UniquenessReport uniqueness_check(const SystemModel& model, const Vec& I, int trials,
                                  std::uint64_t seed, double divisor_threshold) {
    if (!model.box().contains(I))
        throw DomainError("uniqueness_check: action outside the closure of Omega");
    const Vec omega = model.omega(I);
    const int N = model.dim();
    const int K = model.band();

    UniquenessReport report;
    // Kernel of omega.grad on the band: modes with |n.omega| below threshold.
    const int M = 2 * K + 1;
    std::size_t n_modes = 1;
    for (int k = 0; k < N; ++k) n_modes *= static_cast<std::size_t>(M);
    IVec n(N);
    for (std::size_t flat = 0; flat < n_modes; ++flat) {
        std::size_t rem = flat;
        int shell = 0;
        double dot = 0.0;
        for (int k = N - 1; k >= 0; --k) {
            n[k] = static_cast<int>(rem % static_cast<std::size_t>(M)) - K;
            rem /= static_cast<std::size_t>(M);
            shell = std::max(shell, std::abs(n[k]));
            dot += n[k] * omega[k];
        }
        if (shell > 0 && std::abs(dot) < divisor_threshold)
            report.kernel_modes.push_back(n);
    }

    for (int t = 0; t < trials; ++t) {
        CounterRng rng(seed, static_cast<std::uint64_t>(t));
        // Random zero-mean series projected onto {omega.grad w = 0}: only the
        // kernel modes survive the projection.
        double norm2 = 0.0;
        for (std::size_t i = 0; i < report.kernel_modes.size(); ++i) {
            const Complex c(rng.next_symmetric(), rng.next_symmetric());
            norm2 += std::norm(c);
        }
        report.max_surviving_norm =
            std::max(report.max_surviving_norm, std::sqrt(norm2));
    }
    report.unique = report.kernel_modes.empty() && report.max_surviving_norm == 0.0;
    return report;
}

} // namespace wihs
