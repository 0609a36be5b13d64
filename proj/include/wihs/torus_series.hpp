// torus_series.hpp — truncated multivariate Fourier series on T^N.
//
// A series stores the full complex coefficient cube |n|_inf <= K (dense,
// row-major, axis 0 slowest) plus a compact nonzero list used by the
// evaluation hot paths. Instances are immutable after construction; all
// "mutating" operations return new series.
#pragma once

#include <complex>
#include <functional>
#include <span>
#include <vector>

#include "wihs/types.hpp"

namespace wihs {

/// Least-squares fit of log|c_n| against log(1+|n|_inf), one representative
/// (max modulus) per shell.
struct DecayFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0; ///< RMS of the log-fit residuals
    int shells_used = 0;
};

class TorusSeries {
public:
    TorusSeries() = default;

    /// Zero series of the given dimension and band.
    TorusSeries(int dim, int band);

    /// Build from an explicit mode list. Unlisted modes are zero. When
    /// `hermitian_complete` is set, each listed mode (n, c) also installs
    /// (-n, conj(c)) so real functions can be declared by half-space.
    static TorusSeries from_modes(int dim, int band,
                                  std::span<const std::pair<IVec, Complex>> modes,
                                  bool hermitian_complete = false);

    /// Unique band-limited interpolant of real samples on the regular grid
    /// theta_j = 2*pi*j/(2K+1), j in [0, 2K]^N, row-major (axis 0 slowest).
    static TorusSeries from_grid(int dim, int band, std::span<const double> samples);

    int dim() const { return dim_; }
    int band() const { return band_; }
    int points_per_axis() const { return 2 * band_ + 1; }
    std::size_t size() const { return coeffs_.size(); }
    bool hermitian() const { return hermitian_; }
    std::size_t nonzero_count() const { return nz_.size(); }

    Complex coeff(const IVec& n) const;
    Complex coeff0() const { return coeffs_.empty() ? Complex{} : coeffs_[zero_offset_]; }
    const std::vector<Complex>& raw() const { return coeffs_; }

    /// Sum_n c_n e^{i n.theta}. Angles are reduced mod 2*pi internally.
    Complex eval(const Vec& theta) const;

    /// Real-part evaluation; requires a Hermitian series.
    double eval_real(const Vec& theta) const;

    /// Component k: Sum_n (i n_k) c_n e^{i n.theta}.
    CVec gradient(const Vec& theta) const;
    Vec gradient_real(const Vec& theta) const;

    /// One-pass value + gradient of a Hermitian series (Newton hot path).
    void value_and_gradient_real(const Vec& theta, double& value, Vec& grad) const;

    /// Values on the regular grid with `per_axis` points per axis
    /// (default: the nominal 2K+1 grid). Requires a Hermitian series.
    std::vector<double> to_grid(int per_axis = 0) const;

    /// New series with coefficients fn(n, c) (applied to every slot).
    TorusSeries map_modes(const std::function<Complex(const IVec&, Complex)>& fn) const;

    /// Termwise derivative along `axis`: coefficients i n_axis c_n.
    TorusSeries derivative(int axis) const;

    TorusSeries scaled(Complex factor) const;

    /// Enforce c_{-n} = conj(c_n) by averaging; returns a Hermitian series.
    TorusSeries symmetrized() const;

    double max_asymmetry() const; ///< max |c_n - conj(c_{-n})|

    double sum_abs() const;
    double sum_abs2() const; ///< Parseval sum of |c_n|^2

    DecayFit decay_audit() const;

    /// Iterate stored nonzero modes in a fixed (offset) order.
    template <typename Fn>
    void for_each_nonzero(Fn&& fn) const {
        for (const auto& e : nz_) {
            IVec n(dim_);
            for (int k = 0; k < dim_; ++k) n[k] = e.n[k];
            fn(n, e.c);
        }
    }

private:
    struct Entry {
        int n[3];
        Complex c;
    };

    std::size_t offset(const IVec& n) const;
    void finalize(); // rebuild nonzero list + hermitian flag

    int dim_ = 0;
    int band_ = 0;
    std::size_t zero_offset_ = 0;
    std::size_t strides_[3] = {0, 0, 0};
    std::vector<Complex> coeffs_;
    std::vector<Entry> nz_;
    bool hermitian_ = false;
};

} // namespace wihs
