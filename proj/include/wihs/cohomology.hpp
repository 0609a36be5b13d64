// cohomology.hpp — solve omega(I).grad v = b with zero mean by mode-wise
// division, provide the analytic action-derivative of the solution, and
// certify residuals on a refined grid.
#pragma once

#include <optional>
#include <vector>

#include "wihs/model.hpp"

namespace wihs {

struct CohomologySolution {
    Vec action_I;
    TorusSeries v;                  ///< zero-mean solution
    std::vector<TorusSeries> dI_v;  ///< component j: coefficients of dv/dI_j
    double residual_sup = 0.0;      ///< sup |omega.grad v - b| on the refined grid
    double min_divisor = 0.0;       ///< min |n.omega(I)| over the band
};

struct SolveOptions {
    double divisor_threshold = 1e-12;
    int residual_refinement = 2; ///< grid refinement factor for the residual
};

/// Coefficients v_n = b_n / (i n.omega(I)), v_0 = 0;
/// dI_v coefficients -b_n (Domega(I)^T n) / (n.omega(I))^2.
CohomologySolution solve_v(const SystemModel& model, const Vec& I,
                           const SolveOptions& opts = {});

/// Sup over the refinement*(2K+1) grid of |omega(I).grad v - b|.
double residual(const CohomologySolution& sol, const SystemModel& model,
                int refinement);

struct UniquenessReport {
    bool unique = true;
    std::vector<IVec> kernel_modes; ///< modes with |n.omega(I)| below threshold
    double max_surviving_norm = 0.0;

    explicit operator bool() const { return unique; }
};

/// Random zero-mean series are projected onto the kernel of omega.grad on the
/// band; uniqueness holds iff nothing survives.
UniquenessReport uniqueness_check(const SystemModel& model, const Vec& I, int trials,
                                  std::uint64_t seed = 7,
                                  double divisor_threshold = 1e-12);

} // namespace wihs
