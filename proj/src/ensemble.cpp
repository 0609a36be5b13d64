#include "wihs/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "wihs/parallel.hpp"
#include "wihs/rng.hpp"

namespace wihs {

// --- InitialDensity ----------------------------------------------------------

namespace {

double bump_profile(double u) {
    if (std::abs(u) >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - u * u));
}

double bump_profile_d(double u) {
    if (std::abs(u) >= 1.0) return 0.0;
    const double s = 1.0 - u * u;
    return bump_profile(u) * (-2.0 * u / (s * s));
}

} // namespace

double InitialDensity::g_raw(const Vec& I) const {
    if (kind_ != Kind::Bump) return 1.0;
    double g = 1.0;
    for (int k = 0; k < box_.dim(); ++k) {
        const double w = box_.hi[k] - box_.lo[k];
        const double c = 0.5 * (box_.lo[k] + box_.hi[k]);
        const double hw = 0.5 * w * (1.0 - 2.0 * margin_);
        g *= bump_profile((I[k] - c) / hw);
    }
    return g;
}

Vec InitialDensity::dg_raw(const Vec& I) const {
    Vec d = Vec::Zero(box_.dim());
    if (kind_ != Kind::Bump) return d;
    for (int k = 0; k < box_.dim(); ++k) {
        double prod = 1.0;
        for (int j = 0; j < box_.dim(); ++j) {
            const double w = box_.hi[j] - box_.lo[j];
            const double c = 0.5 * (box_.lo[j] + box_.hi[j]);
            const double hw = 0.5 * w * (1.0 - 2.0 * margin_);
            const double u = (I[j] - c) / hw;
            prod *= (j == k) ? bump_profile_d(u) / hw : bump_profile(u);
        }
        d[k] = prod;
    }
    return d;
}

double InitialDensity::h_eval(const Vec& theta) const {
    return has_h_ ? h_.eval_real(theta) : 1.0;
}

double InitialDensity::eval(const Vec& I, const Vec& theta) const {
    return norm_ * g_raw(I) * h_eval(theta);
}

Vec InitialDensity::grad_I(const Vec& I, const Vec& theta) const {
    return norm_ * h_eval(theta) * dg_raw(I);
}

double InitialDensity::g_norm(const Vec& I) const { return norm_ * g_raw(I); }

Vec InitialDensity::dg_norm(const Vec& I) const { return norm_ * dg_raw(I); }

namespace {

InitialDensity normalize_density(InitialDensity d, const SystemModel& model,
                                 int quad_nodes) {
    // integral f0 dmu* = (integral g dI)(integral h rho dtheta) = 1
    BoxQuadrature quad(model.box(), 64);
    const double gI = quad.integrate([&](const Vec& I) { return d.g_norm(I); });
    const TorusGrid grid(model.dim(), quad_nodes);
    double htheta = 0.0;
    grid.for_each([&](std::size_t, const Vec& th) {
        const double h = d.h_eval(th);
        if (h < 0.0) throw DensityError("InitialDensity: theta factor is negative");
        htheta += h * model.rho(th);
    });
    htheta *= grid.node_weight();
    const double total = gI * htheta;
    if (!(total > 0.0))
        throw DensityError("InitialDensity: normalization integral vanishes");
    return d.rescaled(1.0 / total);
}

} // namespace

InitialDensity InitialDensity::uniform(const SystemModel& model, int quad_nodes) {
    InitialDensity d;
    d.kind_ = Kind::MuStarUniform;
    d.box_ = model.box();
    return normalize_density(std::move(d), model, quad_nodes);
}

InitialDensity InitialDensity::bump(const SystemModel& model, TorusSeries h,
                                    double margin, int quad_nodes) {
    if (!(margin > 0.0 && margin < 0.5))
        throw DomainError("InitialDensity::bump: margin must lie in (0, 0.5)");
    InitialDensity d;
    d.kind_ = Kind::Bump;
    d.box_ = model.box();
    d.margin_ = margin;
    if (h.dim() == model.dim()) {
        d.h_ = std::move(h);
        d.has_h_ = true;
    }
    return normalize_density(std::move(d), model, quad_nodes);
}

InitialDensity InitialDensity::tilt(const SystemModel& model, TorusSeries h,
                                    int quad_nodes) {
    InitialDensity d;
    d.kind_ = Kind::Tilt;
    d.box_ = model.box();
    if (h.dim() == model.dim()) {
        d.h_ = std::move(h);
        d.has_h_ = true;
    }
    return normalize_density(std::move(d), model, quad_nodes);
}

InitialDensity InitialDensity::rescaled(double factor) const {
    InitialDensity out = *this;
    out.norm_ *= factor;
    return out;
}

// --- Observable ---------------------------------------------------------------

double Observable::action_eval(const Vec& I) const {
    return action_factor.terms.empty() ? 1.0 : action_factor.eval(I);
}

double Observable::eval(const Vec& I, const Vec& theta) const {
    return action_eval(I) * series.eval_real(theta);
}

namespace {
IVec axis_mode(int dim, int axis, int value) {
    IVec n = IVec::Zero(dim);
    n[axis] = value;
    return n;
}
} // namespace

Observable observable_cos_axis(int dim, int axis, int band) {
    std::vector<std::pair<IVec, Complex>> modes = {
        {axis_mode(dim, axis, 1), Complex(0.5, 0.0)}};
    Observable g;
    g.series = TorusSeries::from_modes(dim, band, modes, true);
    return g;
}

Observable observable_sin_axis(int dim, int axis, int band) {
    std::vector<std::pair<IVec, Complex>> modes = {
        {axis_mode(dim, axis, 1), Complex(0.0, -0.5)}};
    Observable g;
    g.series = TorusSeries::from_modes(dim, band, modes, true);
    return g;
}

Observable observable_cos_sum(int dim, int band) {
    IVec n = IVec::Constant(dim, 1);
    std::vector<std::pair<IVec, Complex>> modes = {{n, Complex(0.5, 0.0)}};
    Observable g;
    g.series = TorusSeries::from_modes(dim, band, modes, true);
    return g;
}

Observable observable_constant(int dim, double value) {
    std::vector<std::pair<IVec, Complex>> modes = {
        {IVec::Zero(dim), Complex(value, 0.0)}};
    Observable g;
    g.series = TorusSeries::from_modes(dim, 1, modes);
    return g;
}

Observable observable_random_band(int dim, int band, std::uint64_t seed) {
    CounterRng rng(seed, 0x0b5e7fab1eULL);
    std::vector<std::pair<IVec, Complex>> modes;
    modes.emplace_back(IVec::Zero(dim), Complex(0.3, 0.0));
    const int M = 2 * band + 1;
    std::size_t total = 1;
    for (int k = 0; k < dim; ++k) total *= static_cast<std::size_t>(M);
    IVec n(dim);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        for (int k = dim - 1; k >= 0; --k) {
            n[k] = static_cast<int>(rem % static_cast<std::size_t>(M)) - band;
            rem /= static_cast<std::size_t>(M);
        }
        int lead = 0;
        int shell = 0;
        for (int k = 0; k < dim; ++k) {
            if (lead == 0 && n[k] != 0) lead = n[k];
            shell = std::max(shell, std::abs(n[k]));
        }
        if (lead <= 0) continue;
        const double scale = 0.5 * std::pow(1.0 + shell, -2.0);
        modes.emplace_back(n, Complex(rng.next_symmetric() * scale,
                                      rng.next_symmetric() * scale));
    }
    Observable g;
    g.series = TorusSeries::from_modes(dim, band, modes, true);
    return g;
}

// --- AngularFlow ----------------------------------------------------------------

AngularFlow::AngularFlow(std::shared_ptr<const SystemModel> model)
    : model_(std::move(model)) {
    dim_ = model_->dim();
    a_bar_ = model_->a_bar();
    model_->b_series().for_each_nonzero([&](const IVec& n, Complex c) {
        Mode m{};
        for (int k = 0; k < dim_; ++k) m.n[k] = n[k];
        m.b = c;
        modes_.push_back(m);
    });
}

void AngularFlow::set_action(State& st, const Vec& I) const {
    st.omega = model_->omega(I);
    st.vcoef.resize(modes_.size());
    for (std::size_t i = 0; i < modes_.size(); ++i) {
        double dot = 0.0;
        for (int k = 0; k < dim_; ++k) dot += modes_[i].n[k] * st.omega[k];
        if (std::abs(dot) < 1e-12)
            throw SmallDivisorError("AngularFlow: resonant divisor at sampled action");
        st.vcoef[i] = modes_[i].b / Complex(0.0, dot);
    }
}

double AngularFlow::v(const State& st, const Vec& theta) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < modes_.size(); ++i) {
        double phase = 0.0;
        for (int k = 0; k < dim_; ++k) phase += modes_[i].n[k] * theta[k];
        acc += st.vcoef[i].real() * std::cos(phase) -
               st.vcoef[i].imag() * std::sin(phase);
    }
    return acc;
}

void AngularFlow::v_and_grad(const State& st, const Vec& theta, double& value,
                             Vec& grad) const {
    double acc = 0.0;
    double g[3] = {0, 0, 0};
    for (std::size_t i = 0; i < modes_.size(); ++i) {
        double phase = 0.0;
        for (int k = 0; k < dim_; ++k) phase += modes_[i].n[k] * theta[k];
        const double cr = std::cos(phase), sr = std::sin(phase);
        const double re = st.vcoef[i].real() * cr - st.vcoef[i].imag() * sr;
        const double im = st.vcoef[i].real() * sr + st.vcoef[i].imag() * cr;
        acc += re;
        for (int k = 0; k < dim_; ++k) g[k] -= modes_[i].n[k] * im;
    }
    value = acc;
    if (grad.size() != dim_) grad.resize(dim_);
    for (int k = 0; k < dim_; ++k) grad[k] = g[k];
}

Vec AngularFlow::psi(const State& st, const Vec& theta_lift) const {
    return theta_lift + st.omega * v(st, theta_lift);
}

Vec AngularFlow::psi_inverse(const State& st, const Vec& phi_lift, double tol,
                             int max_iter) const {
    Vec theta = phi_lift;
    Vec gv(dim_), r(dim_), r_new(dim_);
    double vv = 0.0;

    auto residual = [&](const Vec& th, Vec& out) {
        out = phi_lift - th - st.omega * v(st, th);
        return out.cwiseAbs().maxCoeff();
    };

    double rnorm = residual(theta, r);
    for (int iter = 0; iter < max_iter; ++iter) {
        if (rnorm <= tol) return theta;
        v_and_grad(st, theta, vv, gv);
        const double denom = 1.0 + gv.dot(st.omega);
        if (!(denom > 0.0))
            throw DiffeomorphismViolation("AngularFlow: nonpositive Jacobian");
        const Vec step = r - st.omega * (gv.dot(r) / denom);
        double scale = 1.0;
        for (;;) {
            const Vec cand = theta + scale * step;
            const double rn = residual(cand, r_new);
            if (rn < rnorm || scale < 1e-6) {
                theta = cand;
                r = r_new;
                rnorm = rn;
                break;
            }
            scale *= 0.5;
        }
    }
    if (rnorm <= tol) return theta;
    throw InversionFailure("AngularFlow: inverse did not converge (residual " +
                           std::to_string(rnorm) + ")");
}

Vec AngularFlow::flow(const State& st, const Vec& theta0_lift, double t) const {
    const Vec phi = psi(st, theta0_lift) + a_bar_ * t * st.omega;
    return psi_inverse(st, phi);
}

// --- sampling ---------------------------------------------------------------------

namespace {

double envelope_f0_rho(const SystemModel& model, const InitialDensity& f0) {
    double max_g = 0.0;
    {
        const int probe = 33;
        std::vector<int> idx(static_cast<std::size_t>(model.dim()), 0);
        Vec I(model.dim());
        for (;;) {
            for (int k = 0; k < model.dim(); ++k) {
                const double f =
                    static_cast<double>(idx[static_cast<std::size_t>(k)]) / (probe - 1);
                I[k] = model.box().lo[k] + f * (model.box().hi[k] - model.box().lo[k]);
            }
            max_g = std::max(max_g, f0.g_norm(I));
            int k = model.dim() - 1;
            for (; k >= 0; --k) {
                if (++idx[static_cast<std::size_t>(k)] < probe) break;
                idx[static_cast<std::size_t>(k)] = 0;
            }
            if (k < 0) break;
        }
    }
    const TorusGrid grid(model.dim(), 4 * model.band() + 3);
    double max_h_rho = 0.0;
    grid.for_each([&](std::size_t, const Vec& th) {
        max_h_rho = std::max(max_h_rho, f0.h_eval(th) * model.rho(th));
    });
    return 1.2 * max_g * max_h_rho;
}

} // namespace

std::vector<Sample> sample_initial(const SystemModel& model, const InitialDensity& f0,
                                   long count, std::uint64_t seed) {
    if (count < 0) throw DomainError("sample_initial: negative count");
    std::vector<Sample> out(static_cast<std::size_t>(count));
    if (count == 0) return out;
    const double env = envelope_f0_rho(model, f0);
    const int N = model.dim();
    const ActionBox& box = model.box();

    parallel_chunks(static_cast<std::size_t>(count), 4096,
                    [&](std::size_t, std::size_t b, std::size_t e) {
                        for (std::size_t i = b; i < e; ++i) {
                            CounterRng rng(seed, i);
                            Sample s;
                            s.I.resize(N);
                            s.theta.resize(N);
                            for (long attempt = 0;; ++attempt) {
                                if (attempt > 2000000)
                                    throw EnvelopeError(
                                        "sample_initial: acceptance rate ~ 0");
                                for (int k = 0; k < N; ++k)
                                    s.I[k] = rng.next_double(box.lo[k], box.hi[k]);
                                for (int k = 0; k < N; ++k)
                                    s.theta[k] = rng.next_double(0.0, two_pi);
                                const double val =
                                    f0.eval(s.I, s.theta) * model.rho(s.theta);
                                if (val > env)
                                    throw EnvelopeError(
                                        "sample_initial: envelope violated; refit "
                                        "required (value " +
                                        std::to_string(val) + " > " +
                                        std::to_string(env) + ")");
                                if (rng.next_double() * env <= val) break;
                            }
                            out[i] = s;
                        }
                    });
    return out;
}

std::vector<Sample> sample_mu_star(const SystemModel& model, long count,
                                   std::uint64_t seed, bool theta_uniform) {
    if (count < 0) throw DomainError("sample_mu_star: negative count");
    std::vector<Sample> out(static_cast<std::size_t>(count));
    if (count == 0) return out;
    const int N = model.dim();
    const ActionBox& box = model.box();
    const TorusGrid grid(N, 4 * model.band() + 3);
    double max_rho = 0.0;
    grid.for_each([&](std::size_t, const Vec& th) {
        max_rho = std::max(max_rho, model.rho(th));
    });
    const double env = 1.2 * max_rho;

    parallel_chunks(static_cast<std::size_t>(count), 4096,
                    [&](std::size_t, std::size_t b, std::size_t e) {
                        for (std::size_t i = b; i < e; ++i) {
                            CounterRng rng(seed, i);
                            Sample s;
                            s.I.resize(N);
                            s.theta.resize(N);
                            for (int k = 0; k < N; ++k)
                                s.I[k] = rng.next_double(box.lo[k], box.hi[k]);
                            if (theta_uniform) {
                                for (int k = 0; k < N; ++k)
                                    s.theta[k] = rng.next_double(0.0, two_pi);
                            } else {
                                for (;;) {
                                    for (int k = 0; k < N; ++k)
                                        s.theta[k] = rng.next_double(0.0, two_pi);
                                    if (rng.next_double() * env <= model.rho(s.theta))
                                        break;
                                }
                            }
                            out[i] = s;
                        }
                    });
    return out;
}

// --- marginals ----------------------------------------------------------------------

MarginalW marginal_W(const SystemModel& model, const InitialDensity& f0, const Vec& I,
                     int quad_nodes) {
    const TorusGrid grid(model.dim(), quad_nodes);
    MarginalW out;
    grid.for_each([&](std::size_t, const Vec& th) {
        const double f = f0.eval(I, th);
        if (f < 0.0) throw DensityError("marginal_W: negative density sample");
        const double rho = model.rho(th);
        out.W += f * rho;
        out.W1 += f0.grad_I(I, th).norm() * rho;
    });
    out.W *= grid.node_weight();
    out.W1 *= grid.node_weight();
    return out;
}

// --- stationary-phase field ------------------------------------------------------------

Vec v_field(const SystemModel& model, const IVec& n, const Vec& I) {
    const Mat dom = model.d_omega(I);
    Vec dn = Vec::Zero(model.dim());
    for (int j = 0; j < model.dim(); ++j)
        for (int k = 0; k < model.dim(); ++k) dn[j] += dom(k, j) * n[k];
    const double norm2 = dn.squaredNorm();
    if (norm2 < 1e-24) throw DegeneracyFailure("v_field: Domega^T n vanishes");
    return dn / (norm2 * model.a_bar());
}

// --- ModeCache ---------------------------------------------------------------------------

std::size_t ModeCache::flat_index(const IVec& n) const {
    const int M = 2 * band_ + 1;
    std::size_t off = 0;
    for (int k = 0; k < dim_; ++k) {
        if (n[k] < -band_ || n[k] > band_)
            throw DimensionError("ModeCache: mode outside band");
        off = off * static_cast<std::size_t>(M) + static_cast<std::size_t>(n[k] + band_);
    }
    return off;
}

ModeCache::ModeCache(std::shared_ptr<const SystemModel> model, const EnsembleSpec& spec)
    : model_(std::move(model)), spec_(spec), flow_(model_) {
    band_ = spec_.mode_band;
    dim_ = model_->dim();
    const int B = band_;
    const int M = 2 * B + 1;
    const int d = spec_.cheb_degree;
    const int tn = spec_.quad_nodes;

    std::size_t n_modes = 1, n_nodes = 1;
    for (int k = 0; k < dim_; ++k) {
        n_modes *= static_cast<std::size_t>(M);
        n_nodes *= static_cast<std::size_t>(d);
    }

    const auto nodes = ChebInterp::nodes(model_->box(), d, dim_);

    const TorusGrid grid(dim_, tn);
    const std::size_t n_theta = grid.total_nodes();
    std::vector<double> rho_vals(n_theta), h_vals(n_theta), g_theta(n_theta);
    std::vector<Vec> thetas(n_theta, Vec(dim_));
    grid.for_each([&](std::size_t p, const Vec& th) {
        thetas[p] = th;
        rho_vals[p] = model_->rho(th);
        h_vals[p] = spec_.f0.h_eval(th);
        g_theta[p] = spec_.G.series.eval_real(th);
    });
    const double wtheta = grid.node_weight();
    const double abar = model_->a_bar();
    double twopi_n = 1.0;
    for (int k = 0; k < dim_; ++k) twopi_n *= two_pi;

    std::vector<std::vector<Complex>> M_vals(n_modes, std::vector<Complex>(n_nodes));
    std::vector<std::vector<Complex>> G_vals(n_modes, std::vector<Complex>(n_nodes));

    parallel_chunks(n_nodes, 4, [&](std::size_t, std::size_t lo, std::size_t hi) {
        AngularFlow::State st;
        std::vector<Complex> pow_tables(static_cast<std::size_t>(dim_) * M);
        std::vector<Complex> Macc(n_modes), Gacc(n_modes);
        for (std::size_t j = lo; j < hi; ++j) {
            const Vec& I = nodes[j];
            flow_.set_action(st, I);
            const double gI = spec_.f0.g_norm(I);
            const double Gact = spec_.G.action_eval(I);
            std::fill(Macc.begin(), Macc.end(), Complex(0, 0));
            std::fill(Gacc.begin(), Gacc.end(), Complex(0, 0));
            for (std::size_t p = 0; p < n_theta; ++p) {
                const Vec& th = thetas[p];
                const double vv = flow_.v(st, th);
                for (int k = 0; k < dim_; ++k) {
                    const double psi_k = th[k] + st.omega[k] * vv;
                    Complex* tab = pow_tables.data() + static_cast<std::size_t>(k) * M;
                    const Complex z(std::cos(psi_k), std::sin(psi_k));
                    tab[B] = Complex(1.0, 0.0);
                    for (int m = 1; m <= B; ++m) {
                        tab[B + m] = tab[B + m - 1] * z;
                        tab[B - m] = std::conj(tab[B + m]);
                    }
                }
                const double f_rho = gI * h_vals[p] * rho_vals[p];
                const double G_rho = Gact * g_theta[p] * rho_vals[p];
                const Complex* t0 = pow_tables.data();
                if (dim_ == 1) {
                    for (int i0 = 0; i0 < M; ++i0) {
                        const Complex e = t0[i0];
                        Macc[static_cast<std::size_t>(i0)] += e * f_rho;
                        Gacc[static_cast<std::size_t>(i0)] += std::conj(e) * G_rho;
                    }
                } else if (dim_ == 2) {
                    const Complex* t1 = t0 + M;
                    std::size_t flat = 0;
                    for (int i0 = 0; i0 < M; ++i0) {
                        const Complex row = t0[i0];
                        for (int i1 = 0; i1 < M; ++i1, ++flat) {
                            const Complex e = row * t1[i1];
                            Macc[flat] += e * f_rho;
                            Gacc[flat] += std::conj(e) * G_rho;
                        }
                    }
                } else {
                    const Complex* t1 = t0 + M;
                    const Complex* t2 = t1 + M;
                    std::size_t flat = 0;
                    for (int i0 = 0; i0 < M; ++i0)
                        for (int i1 = 0; i1 < M; ++i1) {
                            const Complex row = t0[i0] * t1[i1];
                            for (int i2 = 0; i2 < M; ++i2, ++flat) {
                                const Complex e = row * t2[i2];
                                Macc[flat] += e * f_rho;
                                Gacc[flat] += std::conj(e) * G_rho;
                            }
                        }
                }
            }
            for (std::size_t f = 0; f < n_modes; ++f) {
                M_vals[f][j] = Macc[f] * wtheta;
                G_vals[f][j] = Gacc[f] * wtheta * abar / twopi_n;
            }
        }
    });

    M_interp_.resize(n_modes);
    G_interp_.resize(n_modes);
    A_interp_.resize(n_modes);
    amplitude_.assign(n_modes, 0.0);
    const double vol = model_->box().volume();
    for (std::size_t f = 0; f < n_modes; ++f) {
        std::vector<Complex> A(n_nodes);
        for (std::size_t j = 0; j < n_nodes; ++j) A[j] = M_vals[f][j] * G_vals[f][j];
        M_interp_[f] =
            ChebInterp::from_values(model_->box(), d, dim_, std::move(M_vals[f]));
        G_interp_[f] =
            ChebInterp::from_values(model_->box(), d, dim_, std::move(G_vals[f]));
        A_interp_[f] = ChebInterp::from_values(model_->box(), d, dim_, std::move(A));
        amplitude_[f] = vol * A_interp_[f].max_abs_value();
    }

    IVec n(dim_);
    for (std::size_t f = 0; f < n_modes; ++f) {
        std::size_t rem = f;
        for (int k = dim_ - 1; k >= 0; --k) {
            n[k] = static_cast<int>(rem % static_cast<std::size_t>(M)) - B;
            rem /= static_cast<std::size_t>(M);
        }
        int lead = 0;
        for (int k = 0; k < dim_; ++k)
            if (n[k] != 0) {
                lead = n[k];
                break;
            }
        if (lead > 0) half_modes_.push_back(n);
    }

    phase_affine_ = model_->hamiltonian().gradient_is_affine();
    box_center_ = model_->box().center();
    omega_center_ = model_->omega(box_center_);
    domega_const_ = model_->d_omega(box_center_);

    // interpolation health probe against the direct theta-quadrature
    CounterRng rng(0xA11D, 0);
    double amax = 0.0;
    for (double a : amplitude_) amax = std::max(amax, a);
    if (amax > 0.0) {
        IVec probe_mode = IVec::Zero(dim_);
        probe_mode[0] = std::min(2, B);
        for (int probe = 0; probe < 5; ++probe) {
            Vec I(dim_);
            for (int k = 0; k < dim_; ++k)
                I[k] = rng.next_double(model_->box().lo[k], model_->box().hi[k]);
            const Complex direct = M_direct(probe_mode, I) * Gn_direct(probe_mode, I);
            const Complex interp = A(probe_mode, I);
            interp_err_ =
                std::max(interp_err_, std::abs(direct - interp) / (amax / vol));
        }
    }
}

Complex ModeCache::theta_quadrature(const IVec& n, const Vec& I, bool want_G) const {
    const TorusGrid grid(dim_, spec_.quad_nodes);
    AngularFlow::State st;
    flow_.set_action(st, I);
    const double gI = spec_.f0.g_norm(I);
    const double Gact = spec_.G.action_eval(I);
    Complex acc(0.0, 0.0);
    grid.for_each([&](std::size_t, const Vec& th) {
        const double vv = flow_.v(st, th);
        double phase = 0.0;
        for (int k = 0; k < dim_; ++k) phase += n[k] * (th[k] + st.omega[k] * vv);
        const double rho = model_->rho(th);
        if (want_G) {
            acc += Complex(std::cos(phase), -std::sin(phase)) *
                   (Gact * spec_.G.series.eval_real(th) * rho);
        } else {
            acc += Complex(std::cos(phase), std::sin(phase)) *
                   (gI * spec_.f0.h_eval(th) * rho);
        }
    });
    acc *= grid.node_weight();
    if (want_G) {
        double twopi_n = 1.0;
        for (int k = 0; k < dim_; ++k) twopi_n *= two_pi;
        acc *= model_->a_bar() / twopi_n;
    }
    return acc;
}

Complex ModeCache::M(const IVec& n, const Vec& I) const {
    return M_interp_[flat_index(n)].eval(I);
}

Complex ModeCache::Gn(const IVec& n, const Vec& I) const {
    return G_interp_[flat_index(n)].eval(I);
}

Complex ModeCache::A(const IVec& n, const Vec& I) const {
    return A_interp_[flat_index(n)].eval(I);
}

double ModeCache::Phi(const IVec& n, const Vec& I) const {
    const Vec om = model_->omega(I);
    double dot = 0.0;
    for (int k = 0; k < dim_; ++k) dot += n[k] * om[k];
    return model_->a_bar() * dot;
}

Complex ModeCache::M_direct(const IVec& n, const Vec& I) const {
    return theta_quadrature(n, I, false);
}

Complex ModeCache::Gn_direct(const IVec& n, const Vec& I) const {
    return theta_quadrature(n, I, true);
}

double ModeCache::mode_amplitude(const IVec& n) const {
    return amplitude_[flat_index(n)];
}

bool ModeCache::mode_skipped(const IVec& n) const {
    return amplitude_[flat_index(n)] < skip_threshold_;
}

namespace {

// Gauss-Legendre rules keyed by (size, interval); the mutex protects the map
// only, the values are pure functions of the key.
const GaussLegendre& cached_rule(int size, double a, double b) {
    struct Key {
        int n;
        double a, b;
        bool operator<(const Key& o) const {
            if (n != o.n) return n < o.n;
            if (a != o.a) return a < o.a;
            return b < o.b;
        }
    };
    static std::map<Key, GaussLegendre> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto [it, inserted] = cache.try_emplace(Key{size, a, b});
    if (inserted) it->second = GaussLegendre(size, a, b);
    return it->second;
}

int rounded_node_count(double t_scale) {
    const double raw = 10.0 + 2.0 * std::ceil(t_scale);
    if (raw > static_cast<double>(1 << 20))
        throw OscillatoryQuadratureError("mode_integral: node requirement " +
                                         std::to_string(raw) +
                                         " per axis exceeds the supported budget");
    int p = 32;
    while (p < static_cast<int>(raw)) p *= 2;
    return p;
}

} // namespace

Complex ModeCache::mode_integral(const IVec& n, double t) const {
    bool all_zero = true;
    for (int k = 0; k < dim_; ++k) all_zero = all_zero && n[k] == 0;
    if (all_zero) throw DomainError("mode_integral: n must be nonzero");

    const double nnorm = std::sqrt(static_cast<double>(n.squaredNorm()));
    const double diam = model_->omega_image_diameter();
    const int P = rounded_node_count(std::abs(t) * model_->a_bar() * nnorm * diam);
    const ChebInterp& interp = A_interp_[flat_index(n)];
    const int d = interp.degree();

    if (phase_affine_) {
        // Phi_n(I) = a_bar [n.omega(c) + (Domega^T n).(I - c)]: the tensor GL
        // sum factorizes into per-axis phase-weighted Chebyshev rows.
        Vec dn = Vec::Zero(dim_);
        for (int j = 0; j < dim_; ++j)
            for (int k = 0; k < dim_; ++k) dn[j] += domega_const_(k, j) * n[k];
        double ndotc = 0.0, cdot = 0.0;
        for (int k = 0; k < dim_; ++k) {
            ndotc += n[k] * omega_center_[k];
            cdot += dn[k] * box_center_[k];
        }
        const double abar = model_->a_bar();
        const double const_phase = t * abar * (ndotc - cdot);
        std::vector<std::vector<Complex>> rows(static_cast<std::size_t>(dim_));
        for (int k = 0; k < dim_; ++k) {
            const double xi = t * abar * dn[k];
            const auto& rule = cached_rule(P, model_->box().lo[k], model_->box().hi[k]);
            rows[static_cast<std::size_t>(k)] = ChebInterp::phase_weighted_rows(
                rule, model_->box().lo[k], model_->box().hi[k], d, xi);
        }
        const auto& C = interp.coeffs();
        Complex acc(0.0, 0.0);
        if (dim_ == 1) {
            for (int p = 0; p < d; ++p)
                acc += C[static_cast<std::size_t>(p)] *
                       rows[0][static_cast<std::size_t>(p)];
        } else if (dim_ == 2) {
            std::size_t flat = 0;
            for (int p = 0; p < d; ++p) {
                Complex inner(0.0, 0.0);
                for (int q = 0; q < d; ++q, ++flat)
                    inner += C[flat] * rows[1][static_cast<std::size_t>(q)];
                acc += rows[0][static_cast<std::size_t>(p)] * inner;
            }
        } else {
            std::size_t flat = 0;
            for (int p = 0; p < d; ++p) {
                Complex mid(0.0, 0.0);
                for (int q = 0; q < d; ++q) {
                    Complex inner(0.0, 0.0);
                    for (int r = 0; r < d; ++r, ++flat)
                        inner += C[flat] * rows[2][static_cast<std::size_t>(r)];
                    mid += rows[1][static_cast<std::size_t>(q)] * inner;
                }
                acc += rows[0][static_cast<std::size_t>(p)] * mid;
            }
        }
        return acc * Complex(std::cos(const_phase), std::sin(const_phase));
    }

    // General phase: plain tensor sum with the interpolated amplitude.
    std::vector<const GaussLegendre*> rules;
    for (int k = 0; k < dim_; ++k)
        rules.push_back(&cached_rule(P, model_->box().lo[k], model_->box().hi[k]));
    std::vector<std::size_t> idx(static_cast<std::size_t>(dim_), 0);
    Vec I(dim_);
    Complex acc(0.0, 0.0);
    for (;;) {
        double w = 1.0;
        for (int k = 0; k < dim_; ++k) {
            I[k] =
                rules[static_cast<std::size_t>(k)]->x[idx[static_cast<std::size_t>(k)]];
            w *= rules[static_cast<std::size_t>(k)]->w[idx[static_cast<std::size_t>(k)]];
        }
        const double phase = t * Phi(n, I);
        acc += w * interp.eval(I) * Complex(std::cos(phase), std::sin(phase));
        int k = dim_ - 1;
        for (; k >= 0; --k) {
            if (++idx[static_cast<std::size_t>(k)] <
                rules[static_cast<std::size_t>(k)]->x.size())
                break;
            idx[static_cast<std::size_t>(k)] = 0;
        }
        if (k < 0) break;
    }
    return acc;
}

double ModeCache::diff_from_eq(double t) const {
    double acc = 0.0;
    for (const IVec& n : half_modes_) {
        if (mode_skipped(n)) continue;
        acc += 2.0 * mode_integral(n, t).real();
    }
    return acc;
}

double ModeCache::expect_eq_modes() const {
    const IVec zero = IVec::Zero(dim_);
    const ChebInterp& A0 = A_interp_[flat_index(zero)];
    const int nodes = std::max(48, spec_.cheb_degree + 8);
    std::vector<const GaussLegendre*> rules;
    for (int k = 0; k < dim_; ++k)
        rules.push_back(&cached_rule(nodes, model_->box().lo[k], model_->box().hi[k]));
    std::vector<std::size_t> idx(static_cast<std::size_t>(dim_), 0);
    Vec I(dim_);
    double acc = 0.0;
    for (;;) {
        double w = 1.0;
        for (int k = 0; k < dim_; ++k) {
            I[k] =
                rules[static_cast<std::size_t>(k)]->x[idx[static_cast<std::size_t>(k)]];
            w *= rules[static_cast<std::size_t>(k)]->w[idx[static_cast<std::size_t>(k)]];
        }
        acc += w * A0.eval(I).real();
        int k = dim_ - 1;
        for (; k >= 0; --k) {
            if (++idx[static_cast<std::size_t>(k)] <
                rules[static_cast<std::size_t>(k)]->x.size())
                break;
            idx[static_cast<std::size_t>(k)] = 0;
        }
        if (k < 0) break;
    }
    return acc;
}

// --- expectations ---------------------------------------------------------------------

ExpectT expect_t(const ModeCache& cache, const std::vector<Sample>& samples, double t) {
    ExpectT out;
    out.quad = cache.expect_eq_modes() + cache.diff_from_eq(t);
    if (samples.empty()) return out;

    auto model_ptr = std::shared_ptr<const SystemModel>(&cache.model(),
                                                        [](const SystemModel*) {});
    AngularFlow flow(model_ptr);
    const Observable& G = cache.spec().G;
    struct Acc {
        double s = 0.0, s2 = 0.0;
    };
    const std::size_t n = samples.size();
    const std::size_t chunk = 4096;
    std::vector<Acc> partials((n + chunk - 1) / chunk);
    parallel_chunks(n, chunk, [&](std::size_t c, std::size_t b, std::size_t e) {
        AngularFlow::State st;
        Acc acc;
        for (std::size_t i = b; i < e; ++i) {
            flow.set_action(st, samples[i].I);
            const Vec theta_t = flow.flow(st, samples[i].theta, t);
            const double g = G.eval(samples[i].I, theta_t);
            acc.s += g;
            acc.s2 += g * g;
        }
        partials[c] = acc;
    });
    double s = 0.0, s2 = 0.0;
    for (const Acc& p : partials) {
        s += p.s;
        s2 += p.s2;
    }
    const double mean = s / static_cast<double>(n);
    const double var = std::max(
        0.0, (s2 - static_cast<double>(n) * mean * mean) / (static_cast<double>(n) - 1.0));
    out.mc = mean;
    out.stderr_mc = std::sqrt(var / static_cast<double>(n));
    return out;
}

double expect_eq(const SystemModel& model, const InitialDensity& f0, const Observable& G,
                 int theta_nodes, int action_nodes) {
    const TorusGrid grid(model.dim(), theta_nodes);
    double z_rho = 0.0;
    grid.for_each([&](std::size_t, const Vec& th) { z_rho += model.rho(th); });
    z_rho *= grid.node_weight();

    BoxQuadrature quad(model.box(), action_nodes);
    double acc = 0.0;
    quad.for_each([&](const Vec& I, double w) {
        double g_rho = 0.0;
        grid.for_each([&](std::size_t, const Vec& th) {
            g_rho += G.eval(I, th) * model.rho(th);
        });
        g_rho *= grid.node_weight();
        const double W = marginal_W(model, f0, I, theta_nodes).W;
        acc += w * (g_rho / z_rho) * W;
    });
    return acc;
}

double expect_t_direct(const SystemModel& model, const InitialDensity& f0,
                       const Observable& G, double t, int theta_nodes,
                       int action_nodes) {
    auto model_ptr =
        std::shared_ptr<const SystemModel>(&model, [](const SystemModel*) {});
    AngularFlow flow(model_ptr);
    const TorusGrid grid(model.dim(), theta_nodes);
    BoxQuadrature quad(model.box(), action_nodes);
    double acc = 0.0;
    AngularFlow::State st;
    quad.for_each([&](const Vec& I, double w) {
        flow.set_action(st, I);
        double inner = 0.0;
        grid.for_each([&](std::size_t, const Vec& th) {
            const Vec theta_t = flow.flow(st, th, t);
            inner += G.eval(I, theta_t) * f0.eval(I, th) * model.rho(th);
        });
        acc += w * inner * grid.node_weight();
    });
    return acc;
}

// --- invariance audit --------------------------------------------------------------------

InvarianceReport invariance_audit(
    const SystemModel& model,
    const std::vector<std::pair<std::string, Observable>>& test_fns,
    const std::vector<double>& t_list, long n_samples, std::uint64_t seed,
    bool theta_uniform) {
    const auto samples = sample_mu_star(model, n_samples, seed, theta_uniform);
    auto model_ptr =
        std::shared_ptr<const SystemModel>(&model, [](const SystemModel*) {});
    AngularFlow flow(model_ptr);

    InvarianceReport report;
    struct Acc {
        double d = 0.0, d2 = 0.0, m0 = 0.0, mt = 0.0;
    };
    const std::size_t n = samples.size();
    const std::size_t chunk = 4096;

    for (const auto& [name, fn] : test_fns) {
        for (double t : t_list) {
            std::vector<Acc> partials((n + chunk - 1) / chunk);
            parallel_chunks(n, chunk, [&](std::size_t c, std::size_t b, std::size_t e) {
                AngularFlow::State st;
                Acc acc;
                for (std::size_t i = b; i < e; ++i) {
                    flow.set_action(st, samples[i].I);
                    const Vec theta_t = flow.flow(st, samples[i].theta, t);
                    const double f0v = fn.eval(samples[i].I, samples[i].theta);
                    const double ftv = fn.eval(samples[i].I, theta_t);
                    acc.m0 += f0v;
                    acc.mt += ftv;
                    acc.d += ftv - f0v;
                    acc.d2 += (ftv - f0v) * (ftv - f0v);
                }
                partials[c] = acc;
            });
            Acc total;
            for (const Acc& p : partials) {
                total.d += p.d;
                total.d2 += p.d2;
                total.m0 += p.m0;
                total.mt += p.mt;
            }
            InvarianceRow row;
            row.fn = name;
            row.t = t;
            row.mean_initial = total.m0 / static_cast<double>(n);
            row.mean_evolved = total.mt / static_cast<double>(n);
            row.diff = total.d / static_cast<double>(n);
            const double var =
                std::max(0.0, (total.d2 - static_cast<double>(n) * row.diff * row.diff) /
                                  (static_cast<double>(n) - 1.0));
            row.sigma = std::sqrt(var / static_cast<double>(n));
            row.z = row.sigma > 0.0
                        ? std::abs(row.diff) / row.sigma
                        : (row.diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
            report.max_z = std::max(report.max_z, row.z);
            report.rows.push_back(row);
        }
    }
    return report;
}

} // namespace wihs
