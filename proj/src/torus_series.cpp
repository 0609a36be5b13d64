#include "wihs/torus_series.hpp"

#include <algorithm>
#include <cmath>

namespace wihs {

namespace {

constexpr std::size_t kSparseEvalThreshold = 96;

std::size_t cube_size(int dim, int band) {
    std::size_t m = static_cast<std::size_t>(2 * band + 1);
    std::size_t s = 1;
    for (int k = 0; k < dim; ++k) s *= m;
    return s;
}

// One DFT along `axis` of a dense cube with dims[k] points per axis.
// Exponent convention (M = max(m_in, m_out)):
//   forward  (coefficients from grid): sign=-1, freq index r-shift, scale=1/M
//   inverse  (grid from coefficients): sign=+1, mode index j-shift
// After the call dims[axis] = m_out.
void dft_axis(std::vector<Complex>& data, int dim, int axis, int dims[3],
              int m_out, int sign, int shift, bool shift_on_input, double scale) {
    const int m_in = dims[axis];
    const int M = std::max(m_in, m_out);
    std::vector<Complex> twiddle(M);
    for (int r = 0; r < M; ++r) {
        const double ang = sign * two_pi * r / M;
        twiddle[r] = Complex(std::cos(ang), std::sin(ang));
    }

    auto strides_of = [&](const int d[3], std::size_t out[3]) {
        std::size_t s = 1;
        for (int k = dim - 1; k >= 0; --k) {
            out[k] = s;
            s *= static_cast<std::size_t>(d[k]);
        }
        return s;
    };
    std::size_t in_strides[3];
    const std::size_t total = strides_of(dims, in_strides);
    int out_dims[3] = {dims[0], dims[1], dims[2]};
    out_dims[axis] = m_out;
    std::size_t out_strides[3];
    const std::size_t out_total = strides_of(out_dims, out_strides);

    const std::size_t stride = in_strides[axis];
    const std::size_t block = stride * static_cast<std::size_t>(m_in);
    const std::size_t out_stride = out_strides[axis];
    const std::size_t out_block = out_stride * static_cast<std::size_t>(m_out);

    std::vector<Complex> result(out_total);
    for (std::size_t outer = 0; outer * block < total; ++outer) {
        for (std::size_t inner = 0; inner < stride; ++inner) {
            const std::size_t base = outer * block + inner;
            const std::size_t out_base = outer * out_block + inner;
            for (int r = 0; r < m_out; ++r) {
                Complex acc(0.0, 0.0);
                const long freq = shift_on_input ? static_cast<long>(r)
                                                 : static_cast<long>(r) - shift;
                for (int j = 0; j < m_in; ++j) {
                    const long idx = shift_on_input ? static_cast<long>(j) - shift
                                                    : static_cast<long>(j);
                    long t = (idx * freq) % M;
                    if (t < 0) t += M;
                    acc += data[base + static_cast<std::size_t>(j) * stride] * twiddle[t];
                }
                result[out_base + static_cast<std::size_t>(r) * out_stride] = scale * acc;
            }
        }
    }
    data.swap(result);
    dims[axis] = m_out;
}

} // namespace

TorusSeries::TorusSeries(int dim, int band) : dim_(dim), band_(band) {
    if (dim < 1 || dim > 3)
        throw DimensionError("TorusSeries: dim must be in [1, 3], got " + std::to_string(dim));
    if (band < 1)
        throw DimensionError("TorusSeries: band must be >= 1");
    coeffs_.assign(cube_size(dim, band), Complex(0.0, 0.0));
    std::size_t s = 1;
    for (int k = dim - 1; k >= 0; --k) {
        strides_[k] = s;
        s *= static_cast<std::size_t>(2 * band + 1);
    }
    zero_offset_ = 0;
    for (int k = 0; k < dim; ++k) zero_offset_ += static_cast<std::size_t>(band) * strides_[k];
    hermitian_ = true; // zero series
}

std::size_t TorusSeries::offset(const IVec& n) const {
    if (n.size() != dim_)
        throw DimensionError("TorusSeries: index dimension mismatch");
    std::size_t off = 0;
    for (int k = 0; k < dim_; ++k) {
        if (n[k] < -band_ || n[k] > band_)
            throw DimensionError("TorusSeries: mode outside band |n|_inf <= " +
                                 std::to_string(band_));
        off += static_cast<std::size_t>(n[k] + band_) * strides_[k];
    }
    return off;
}

void TorusSeries::finalize() {
    nz_.clear();
    const int M = points_per_axis();
    IVec n(dim_);
    for (std::size_t off = 0; off < coeffs_.size(); ++off) {
        if (coeffs_[off] == Complex(0.0, 0.0)) continue;
        std::size_t rem = off;
        Entry e{};
        for (int k = 0; k < dim_; ++k) {
            e.n[k] = static_cast<int>(rem / strides_[k]) % M - band_;
            rem %= strides_[k];
        }
        e.c = coeffs_[off];
        nz_.push_back(e);
    }
    hermitian_ = max_asymmetry() <= 1e-12 * (1.0 + sum_abs());
}

double TorusSeries::max_asymmetry() const {
    double worst = 0.0;
    IVec n(dim_), mn(dim_);
    for (const auto& e : nz_) {
        for (int k = 0; k < dim_; ++k) {
            n[k] = e.n[k];
            mn[k] = -e.n[k];
        }
        const Complex mirror = coeffs_[offset(mn)];
        worst = std::max(worst, std::abs(e.c - std::conj(mirror)));
    }
    return worst;
}

TorusSeries TorusSeries::from_modes(int dim, int band,
                                    std::span<const std::pair<IVec, Complex>> modes,
                                    bool hermitian_complete) {
    TorusSeries s(dim, band);
    for (const auto& [n, c] : modes) {
        s.coeffs_[s.offset(n)] += c;
        if (hermitian_complete) {
            bool self = true;
            for (int k = 0; k < dim; ++k) self = self && n[k] == 0;
            if (!self) {
                IVec mn = -n;
                s.coeffs_[s.offset(mn)] += std::conj(c);
            }
        }
    }
    s.finalize();
    return s;
}

TorusSeries TorusSeries::from_grid(int dim, int band, std::span<const double> samples) {
    TorusSeries s(dim, band);
    if (samples.size() != s.coeffs_.size())
        throw ShapeError("from_grid: expected " + std::to_string(s.coeffs_.size()) +
                         " samples, got " + std::to_string(samples.size()));
    const int M = s.points_per_axis();
    std::vector<Complex> work(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) work[i] = Complex(samples[i], 0.0);
    int dims[3] = {M, M, M};
    for (int axis = 0; axis < dim; ++axis)
        dft_axis(work, dim, axis, dims, M, -1, band, false, 1.0 / M);
    s.coeffs_ = std::move(work);
    // Grid data is real, so the transform is Hermitian up to roundoff;
    // symmetrize to make it exact and snap transform dust to zero so
    // band-limited inputs keep sparse coefficient sets.
    s.finalize();
    TorusSeries sym = s.symmetrized();
    double max_abs = 0.0;
    for (const Complex& c : sym.coeffs_) max_abs = std::max(max_abs, std::abs(c));
    const double snap = 1e-15 * max_abs;
    return sym.map_modes([snap](const IVec&, Complex c) {
        return std::abs(c) <= snap ? Complex(0.0, 0.0) : c;
    });
}

std::vector<double> TorusSeries::to_grid(int per_axis) const {
    if (per_axis <= 0) per_axis = points_per_axis();
    if (per_axis < points_per_axis())
        throw ShapeError("to_grid: refinement below band resolution");
    if (!hermitian_)
        throw DomainError("to_grid: series is not Hermitian (not a real function)");
    std::vector<Complex> work = coeffs_;
    const int M_in = points_per_axis();
    int dims[3] = {M_in, M_in, M_in};
    for (int axis = 0; axis < dim_; ++axis)
        dft_axis(work, dim_, axis, dims, per_axis, +1, band_, true, 1.0);
    std::vector<double> out(work.size());
    for (std::size_t i = 0; i < work.size(); ++i) out[i] = work[i].real();
    return out;
}

Complex TorusSeries::coeff(const IVec& n) const { return coeffs_[offset(n)]; }

Complex TorusSeries::eval(const Vec& theta) const {
    if (theta.size() != dim_)
        throw DimensionError("eval: theta dimension mismatch");
    double th[3] = {0, 0, 0};
    for (int k = 0; k < dim_; ++k) th[k] = wrap_angle(theta[k]);

    Complex acc(0.0, 0.0);
    if (nz_.size() <= kSparseEvalThreshold) {
        for (const auto& e : nz_) {
            double phase = 0.0;
            for (int k = 0; k < dim_; ++k) phase += e.n[k] * th[k];
            acc += e.c * Complex(std::cos(phase), std::sin(phase));
        }
        return acc;
    }
    // Per-axis power tables z_k^n, n in [-K, K].
    const int M = points_per_axis();
    std::vector<Complex> table(static_cast<std::size_t>(dim_) * M);
    for (int k = 0; k < dim_; ++k) {
        Complex* t = table.data() + static_cast<std::size_t>(k) * M;
        const Complex z(std::cos(th[k]), std::sin(th[k]));
        t[band_] = Complex(1.0, 0.0);
        for (int n = 1; n <= band_; ++n) {
            t[band_ + n] = t[band_ + n - 1] * z;
            t[band_ - n] = std::conj(t[band_ + n]);
        }
    }
    for (const auto& e : nz_) {
        Complex ph = table[static_cast<std::size_t>(e.n[0] + band_)];
        for (int k = 1; k < dim_; ++k)
            ph *= table[static_cast<std::size_t>(k) * M + (e.n[k] + band_)];
        acc += e.c * ph;
    }
    return acc;
}

double TorusSeries::eval_real(const Vec& theta) const {
    if (!hermitian_)
        throw DomainError("eval_real: series is not Hermitian");
    return eval(theta).real();
}

CVec TorusSeries::gradient(const Vec& theta) const {
    if (theta.size() != dim_)
        throw DimensionError("gradient: theta dimension mismatch");
    double th[3] = {0, 0, 0};
    for (int k = 0; k < dim_; ++k) th[k] = wrap_angle(theta[k]);
    CVec g = CVec::Zero(dim_);
    const Complex iu(0.0, 1.0);
    if (nz_.size() <= kSparseEvalThreshold) {
        for (const auto& e : nz_) {
            double phase = 0.0;
            for (int k = 0; k < dim_; ++k) phase += e.n[k] * th[k];
            const Complex term = e.c * Complex(std::cos(phase), std::sin(phase)) * iu;
            for (int k = 0; k < dim_; ++k) g[k] += term * static_cast<double>(e.n[k]);
        }
        return g;
    }
    const int M = points_per_axis();
    std::vector<Complex> table(static_cast<std::size_t>(dim_) * M);
    for (int k = 0; k < dim_; ++k) {
        Complex* t = table.data() + static_cast<std::size_t>(k) * M;
        const Complex z(std::cos(th[k]), std::sin(th[k]));
        t[band_] = Complex(1.0, 0.0);
        for (int n = 1; n <= band_; ++n) {
            t[band_ + n] = t[band_ + n - 1] * z;
            t[band_ - n] = std::conj(t[band_ + n]);
        }
    }
    for (const auto& e : nz_) {
        Complex ph = table[static_cast<std::size_t>(e.n[0] + band_)];
        for (int k = 1; k < dim_; ++k)
            ph *= table[static_cast<std::size_t>(k) * M + (e.n[k] + band_)];
        const Complex term = e.c * ph * iu;
        for (int k = 0; k < dim_; ++k) g[k] += term * static_cast<double>(e.n[k]);
    }
    return g;
}

Vec TorusSeries::gradient_real(const Vec& theta) const {
    if (!hermitian_)
        throw DomainError("gradient_real: series is not Hermitian");
    CVec g = gradient(theta);
    Vec out(dim_);
    for (int k = 0; k < dim_; ++k) out[k] = g[k].real();
    return out;
}

void TorusSeries::value_and_gradient_real(const Vec& theta, double& value, Vec& grad) const {
    if (!hermitian_)
        throw DomainError("value_and_gradient_real: series is not Hermitian");
    double th[3] = {0, 0, 0};
    for (int k = 0; k < dim_; ++k) th[k] = wrap_angle(theta[k]);
    double v = 0.0;
    double g[3] = {0, 0, 0};
    if (nz_.size() <= kSparseEvalThreshold) {
        for (const auto& e : nz_) {
            double phase = 0.0;
            for (int k = 0; k < dim_; ++k) phase += e.n[k] * th[k];
            const double cr = std::cos(phase), sr = std::sin(phase);
            // Re(c e^{ip}) and Re(i n_k c e^{ip}) = -n_k Im(c e^{ip})
            const double re = e.c.real() * cr - e.c.imag() * sr;
            const double im = e.c.real() * sr + e.c.imag() * cr;
            v += re;
            for (int k = 0; k < dim_; ++k) g[k] -= e.n[k] * im;
        }
    } else {
        const int M = points_per_axis();
        std::vector<Complex> table(static_cast<std::size_t>(dim_) * M);
        for (int k = 0; k < dim_; ++k) {
            Complex* t = table.data() + static_cast<std::size_t>(k) * M;
            const Complex z(std::cos(th[k]), std::sin(th[k]));
            t[band_] = Complex(1.0, 0.0);
            for (int n = 1; n <= band_; ++n) {
                t[band_ + n] = t[band_ + n - 1] * z;
                t[band_ - n] = std::conj(t[band_ + n]);
            }
        }
        for (const auto& e : nz_) {
            Complex ph = table[static_cast<std::size_t>(e.n[0] + band_)];
            for (int k = 1; k < dim_; ++k)
                ph *= table[static_cast<std::size_t>(k) * M + (e.n[k] + band_)];
            const Complex term = e.c * ph;
            v += term.real();
            for (int k = 0; k < dim_; ++k) g[k] -= e.n[k] * term.imag();
        }
    }
    value = v;
    if (grad.size() != dim_) grad.resize(dim_);
    for (int k = 0; k < dim_; ++k) grad[k] = g[k];
}

TorusSeries TorusSeries::map_modes(
    const std::function<Complex(const IVec&, Complex)>& fn) const {
    TorusSeries out(dim_, band_);
    const int M = points_per_axis();
    IVec n(dim_);
    for (std::size_t off = 0; off < coeffs_.size(); ++off) {
        std::size_t rem = off;
        for (int k = 0; k < dim_; ++k) {
            n[k] = static_cast<int>(rem / strides_[k]) % M - band_;
            rem %= strides_[k];
        }
        out.coeffs_[off] = fn(n, coeffs_[off]);
    }
    out.finalize();
    return out;
}

TorusSeries TorusSeries::derivative(int axis) const {
    if (axis < 0 || axis >= dim_)
        throw DimensionError("derivative: axis out of range");
    return map_modes([axis](const IVec& n, Complex c) {
        return Complex(0.0, 1.0) * static_cast<double>(n[axis]) * c;
    });
}

TorusSeries TorusSeries::scaled(Complex factor) const {
    return map_modes([factor](const IVec&, Complex c) { return factor * c; });
}

TorusSeries TorusSeries::symmetrized() const {
    TorusSeries out(dim_, band_);
    const int M = points_per_axis();
    IVec n(dim_), mn(dim_);
    for (std::size_t off = 0; off < coeffs_.size(); ++off) {
        std::size_t rem = off;
        for (int k = 0; k < dim_; ++k) {
            n[k] = static_cast<int>(rem / strides_[k]) % M - band_;
            rem %= strides_[k];
        }
        mn = -n;
        const Complex c = 0.5 * (coeffs_[off] + std::conj(coeffs_[offset(mn)]));
        out.coeffs_[off] = c;
    }
    out.finalize();
    return out;
}

double TorusSeries::sum_abs() const {
    double s = 0.0;
    for (const auto& e : nz_) s += std::abs(e.c);
    return s;
}

double TorusSeries::sum_abs2() const {
    double s = 0.0;
    for (const auto& e : nz_) s += std::norm(e.c);
    return s;
}

DecayFit TorusSeries::decay_audit() const {
    std::vector<double> rep(static_cast<std::size_t>(band_) + 1, 0.0);
    for (const auto& e : nz_) {
        int shell = 0;
        for (int k = 0; k < dim_; ++k) shell = std::max(shell, std::abs(e.n[k]));
        rep[shell] = std::max(rep[shell], std::abs(e.c));
    }
    std::vector<double> xs, ys;
    for (int s = 0; s <= band_; ++s) {
        if (rep[s] > 0.0) {
            xs.push_back(std::log(1.0 + s));
            ys.push_back(std::log(rep[s]));
        }
    }
    if (xs.size() < 2)
        throw InsufficientDataError("decay_audit: fewer than 2 nonzero shells");
    const std::size_t m = xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = m * sxx - sx * sx;
    DecayFit fit;
    fit.slope = (m * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / m;
    double rss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
        rss += r * r;
    }
    fit.residual = std::sqrt(rss / m);
    fit.shells_used = static_cast<int>(m);
    return fit;
}

} // namespace wihs
