// model.hpp — the weighted system (m, H, Omega) with its derived fields
// a = m^{-1/N}, rho = m^{1/N}, a_bar, b = a_bar/a - 1, the frequency map
// omega = grad H and its derivative, and the numerical nonresonance /
// nondegeneracy audit.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wihs/torus_series.hpp"
#include "wihs/types.hpp"

namespace wihs {

/// Polynomial in the action variables, stored as a monomial table.
struct Polynomial {
    struct Term {
        double coeff;
        IVec exponents; // one entry per action axis
    };

    int dim = 0;
    std::vector<Term> terms;

    double eval(const Vec& I) const;
    Vec gradient(const Vec& I) const;
    Mat hessian(const Vec& I) const;
    int degree() const;
    /// True when every term has total degree <= 2 (gradient affine in I).
    bool gradient_is_affine() const { return degree() <= 2; }
};

/// How the weight m is specified.
struct WeightSpec {
    enum class Kind { One, MCoeffs, RhoCoeffs, ExpRandom };
    Kind kind = Kind::One;
    std::vector<std::pair<IVec, Complex>> modes; // for MCoeffs / RhoCoeffs
    int rand_band = 4;                           // for ExpRandom
    std::uint64_t rand_seed = 42;
    double rand_min = 0.3; // min of m after scaling
};

struct ModelSpec {
    std::string name;
    int dim = 0;
    ActionBox box;
    Polynomial hamiltonian;
    WeightSpec weight;
    int band = 16;
};

struct ResonanceAudit {
    double alpha_eff = 0.0;  ///< min |n.omega(I)| |n|_inf^tau over grid x band
    double tau = 0.0;
    double lambda_eff = 0.0; ///< min sigma_min(Domega(I)) over grid
    int K_audit = 0;
    std::size_t grid_points = 0;
    double min_divisor = 0.0; ///< min |n.omega(I)| (no |n|^tau factor)
    Vec worst_I;              ///< argmin of the divisor
    IVec worst_n;
};

class SystemModel {
public:
    const std::string& name() const { return name_; }
    int dim() const { return dim_; }
    int band() const { return band_; }
    const ActionBox& box() const { return box_; }
    const Polynomial& hamiltonian() const { return hamiltonian_; }

    const TorusSeries& m_series() const { return m_; }
    const TorusSeries& a_series() const { return a_; }
    const TorusSeries& rho_series() const { return rho_; }
    const TorusSeries& b_series() const { return b_; }
    double a_bar() const { return a_bar_; }

    /// rho evaluated from its band-limited series (the model's exact rho).
    double rho(const Vec& theta) const { return rho_.eval_real(theta); }

    /// Angular speed factor a = 1/rho, evaluated exactly from the stored
    /// band-limited rho so the ODE flow and the conjugacy describe the same
    /// system (the band-K a-series is kept for diagnostics).
    double a_exact(const Vec& theta) const { return 1.0 / rho_.eval_real(theta); }

    Vec grad_a_exact(const Vec& theta) const {
        const double r = rho_.eval_real(theta);
        return -rho_.gradient_real(theta) / (r * r);
    }

    Vec omega(const Vec& I) const;
    Mat d_omega(const Vec& I) const;

    /// Per spec: alpha_eff = min |n.omega(I)| |n|_inf^tau over an I grid and
    /// 0 < |n|_inf <= K. Throws ResonanceFailure / DegeneracyFailure when an
    /// effective constant collapses below 1e-12.
    ResonanceAudit resonance_audit(int K, int grid_n, double tau) const;

    /// Same audit but reporting instead of throwing (for CLI/report use).
    ResonanceAudit resonance_audit_report(int K, int grid_n, double tau) const;

    /// Max |rho_series - m^{1/N}| on the 2K-refined grid (aliasing measure);
    /// zero for band-limited weights, meaningful for closed-form ones.
    double aliasing_sup() const { return aliasing_sup_; }

    /// Image of the box corners under omega, bounding box diameter (used for
    /// oscillatory node counts).
    double omega_image_diameter() const;

    friend SystemModel build_model(const ModelSpec& spec);

private:
    std::string name_;
    int dim_ = 0;
    int band_ = 16;
    ActionBox box_;
    Polynomial hamiltonian_;
    TorusSeries m_, a_, rho_, b_;
    double a_bar_ = 1.0;
    double aliasing_sup_ = 0.0;
};

SystemModel build_model(const ModelSpec& spec);

// Reference systems used across the test and acceptance suites.
ModelSpec sys_a_spec(int band = 24);
ModelSpec sys_b_spec(int band = 24);
ModelSpec sys_c_spec(int band = 32);
ModelSpec unweighted_spec(int dim, int band = 16); // m == 1, H = |I|^2/2, Omega=[1,2]^N

} // namespace wihs
