// ensemble.hpp — initial densities, ensemble transport under the conjugated
// flow, Monte Carlo and quadrature expectations, the weighted equilibrium,
// per-mode oscillatory integrals I_n(t), and the invariance audit.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wihs/conjugacy.hpp"
#include "wihs/model.hpp"
#include "wihs/quadrature.hpp"

namespace wihs {

// --- initial densities -------------------------------------------------------

/// Product density f0(I, theta) = norm * g(I) * h(theta) with the
/// normalization integral f0 dmu* = 1 fixed at construction.
class InitialDensity {
public:
    enum class Kind {
        MuStarUniform, ///< g = 1, h = 1: f0 uniform w.r.t. mu* (equilibrium)
        Bump,          ///< g = smooth bump supported in the interior of Omega
        Tilt           ///< g = 1, h a positive trigonometric tilt
    };

    static InitialDensity uniform(const SystemModel& model, int quad_nodes = 65);
    static InitialDensity bump(const SystemModel& model, TorusSeries h,
                               double margin = 0.1, int quad_nodes = 65);
    static InitialDensity tilt(const SystemModel& model, TorusSeries h,
                               int quad_nodes = 65);

    Kind kind() const { return kind_; }

    double eval(const Vec& I, const Vec& theta) const;
    Vec grad_I(const Vec& I, const Vec& theta) const;

    /// normalized action factor norm * g(I) and its gradient
    double g_norm(const Vec& I) const;
    Vec dg_norm(const Vec& I) const;
    /// theta factor h(theta) (unnormalized)
    double h_eval(const Vec& theta) const;
    const TorusSeries& h_series() const { return h_; }
    bool has_theta_factor() const { return has_h_; }

    double norm_constant() const { return norm_; }

    /// Copy with the normalization constant multiplied by `factor`.
    InitialDensity rescaled(double factor) const;

    /// Uninitialized density (dimensionless); build via the factories.
    InitialDensity() = default;

private:
    double g_raw(const Vec& I) const;
    Vec dg_raw(const Vec& I) const;

    Kind kind_ = Kind::MuStarUniform;
    ActionBox box_;
    TorusSeries h_;
    bool has_h_ = false;
    double margin_ = 0.1;
    double norm_ = 1.0;
};

// --- observables --------------------------------------------------------------

/// Observable G(I, theta) = action_factor(I) * series(theta).
struct Observable {
    TorusSeries series;
    Polynomial action_factor; ///< empty terms => 1

    double eval(const Vec& I, const Vec& theta) const;
    bool theta_only() const { return action_factor.terms.empty(); }
    double action_eval(const Vec& I) const;
};

Observable observable_cos_axis(int dim, int axis, int band = 1);
Observable observable_sin_axis(int dim, int axis, int band = 1);
Observable observable_cos_sum(int dim, int band = 1); // cos(theta_1 + ... )
Observable observable_constant(int dim, double value);
Observable observable_random_band(int dim, int band, std::uint64_t seed);

// --- ensemble specification ----------------------------------------------------

struct EnsembleSpec {
    InitialDensity f0;
    Observable G;
    long n_samples = 100000;
    int quad_nodes = 65;     ///< theta-quadrature nodes per axis
    std::uint64_t seed = 1;
    int mode_band = 8;       ///< band of the conjugated-angle mode expansion
    int cheb_degree = 24;    ///< action interpolation degree per axis
    int n_audit_band = 3;    ///< |n|_inf band for per-mode decay audits
};

// --- fast conjugated transport -------------------------------------------------

/// Evaluates the conjugated flow directly from the nonzero modes of b, so a
/// fresh action costs O(nnz(b)) and no series objects are built per sample.
class AngularFlow {
public:
    explicit AngularFlow(std::shared_ptr<const SystemModel> model);

    struct State {
        Vec omega;
        std::vector<Complex> vcoef; ///< b_n / (i n.omega(I)) per stored mode
    };

    void set_action(State& st, const Vec& I) const;

    double v(const State& st, const Vec& theta) const;
    void v_and_grad(const State& st, const Vec& theta, double& value, Vec& grad) const;

    Vec psi(const State& st, const Vec& theta_lift) const;
    Vec psi_inverse(const State& st, const Vec& phi_lift, double tol = 1e-12,
                    int max_iter = 50) const;
    /// psi_inverse(psi(theta0) + a_bar omega t)
    Vec flow(const State& st, const Vec& theta0_lift, double t) const;

    const SystemModel& model() const { return *model_; }

private:
    std::shared_ptr<const SystemModel> model_;
    struct Mode {
        int n[3];
        Complex b;
    };
    std::vector<Mode> modes_;
    double a_bar_ = 1.0;
    int dim_ = 1;
};

// --- sampling -------------------------------------------------------------------

struct Sample {
    Vec I;
    Vec theta;
};

/// Rejection sampling from f0(I,theta) rho(theta) dI dtheta; reproducible and
/// order-independent under a fixed seed (counter-based streams per index).
std::vector<Sample> sample_initial(const SystemModel& model, const InitialDensity& f0,
                                   long count, std::uint64_t seed);

/// Samples from the normalized invariant measure mu* (theta ~ rho/Z_rho,
/// I uniform); with `theta_uniform` the angles are Lebesgue-uniform instead
/// (the non-invariant counterexample).
std::vector<Sample> sample_mu_star(const SystemModel& model, long count,
                                   std::uint64_t seed, bool theta_uniform = false);

// --- marginals -------------------------------------------------------------------

struct MarginalW {
    double W = 0.0;  ///< integral of f0 rho over T^N
    double W1 = 0.0; ///< integral of |grad_I f0| rho
};

MarginalW marginal_W(const SystemModel& model, const InitialDensity& f0, const Vec& I,
                     int quad_nodes = 65);

// --- stationary-phase vector field ------------------------------------------------

/// V_n(I) = Domega(I)^T n / |Domega(I)^T n|^2 * a_bar^{-1}; satisfies
/// V_n . grad Phi_n = 1 with Phi_n = a_bar (n.omega).
Vec v_field(const SystemModel& model, const IVec& n, const Vec& I);

// --- mode data and oscillatory integrals -------------------------------------------

/// Per-action Fourier data of the evolved ensemble:
///   M_n(I) = integral e^{i n.Psi_I(theta)} f0(I,theta) rho(theta) dtheta
///   G_n(I) = a_bar (2pi)^{-N} integral G(I,theta) rho(theta) e^{-i n.Psi_I} dtheta
/// (the observable's expansion in the conjugated angle), A_n = G_n M_n, and
/// the phase Phi_n(I) = a_bar (n.omega(I)).
class ModeCache {
public:
    ModeCache(std::shared_ptr<const SystemModel> model, const EnsembleSpec& spec);

    const SystemModel& model() const { return *model_; }
    const EnsembleSpec& spec() const { return spec_; }
    int mode_band() const { return band_; }

    Complex M(const IVec& n, const Vec& I) const;   // interpolated
    Complex Gn(const IVec& n, const Vec& I) const;  // interpolated
    Complex A(const IVec& n, const Vec& I) const;   // interpolated
    double Phi(const IVec& n, const Vec& I) const;

    /// Direct theta-quadrature evaluation (no interpolation); used by audits.
    Complex M_direct(const IVec& n, const Vec& I) const;
    Complex Gn_direct(const IVec& n, const Vec& I) const;

    /// Oscillatory integral I_n(t) over Omega by plain tensor Gauss-Legendre
    /// with node count 10 + 2 ceil(t a_bar |n|_2 diam(omega(Omega))) per axis
    /// (rounded up to the cached rule sizes).
    Complex mode_integral(const IVec& n, double t) const;

    /// 2 Re sum over half-space modes of I_n(t)  ( = <G>_t - <G>_eq ).
    double diff_from_eq(double t) const;

    /// integral of G_0(I) M_0(I) dI (equilibrium via the mode route).
    double expect_eq_modes() const;

    /// sup over build nodes of |A_n|, and whether the mode participates.
    double mode_amplitude(const IVec& n) const;
    bool mode_skipped(const IVec& n) const;

    /// max relative interpolation error of A_n over probe actions.
    double interpolation_error() const { return interp_err_; }

    /// all nonzero modes of the half-space (lexicographically positive).
    const std::vector<IVec>& half_modes() const { return half_modes_; }

    double skip_threshold() const { return skip_threshold_; }

private:
    std::size_t flat_index(const IVec& n) const;
    Complex theta_quadrature(const IVec& n, const Vec& I, bool want_G) const;

    std::shared_ptr<const SystemModel> model_;
    EnsembleSpec spec_;
    AngularFlow flow_;
    int band_ = 8;
    int dim_ = 1;
    double skip_threshold_ = 1e-13;
    std::vector<ChebInterp> M_interp_, G_interp_, A_interp_;
    std::vector<double> amplitude_; ///< |Omega| * sup|A_n| per flat mode
    std::vector<IVec> half_modes_;
    double interp_err_ = 0.0;
    bool phase_affine_ = false;
    Mat domega_const_;  // valid when phase_affine_
    Vec omega_center_;
    Vec box_center_;
};

// --- expectations -----------------------------------------------------------------

struct ExpectT {
    double mc = 0.0;
    double stderr_mc = 0.0;
    double quad = 0.0;
};

/// MC transport of the sample set through the conjugated flow plus the
/// mode-quadrature estimate of the same expectation.
ExpectT expect_t(const ModeCache& cache, const std::vector<Sample>& samples, double t);

/// Equilibrium expectation via the P_eq formula (theta-quadrature of
/// G rho / Z_rho against W(I) dI); agrees with cache.expect_eq_modes().
double expect_eq(const SystemModel& model, const InitialDensity& f0, const Observable& G,
                 int theta_nodes = 65, int action_nodes = 33);

/// Direct tensor-quadrature oracle for <G>_t (flow evaluated pointwise);
/// used by tests at small t.
double expect_t_direct(const SystemModel& model, const InitialDensity& f0,
                       const Observable& G, double t, int theta_nodes = 33,
                       int action_nodes = 17);

// --- invariance audit ----------------------------------------------------------------

struct InvarianceRow {
    std::string fn;
    double t = 0.0;
    double mean_initial = 0.0;
    double mean_evolved = 0.0;
    double diff = 0.0;
    double sigma = 0.0; ///< stderr of the paired difference
    double z = 0.0;
};

struct InvarianceReport {
    std::vector<InvarianceRow> rows;
    double max_z = 0.0;
    bool pass(double tol_sigma) const { return max_z <= tol_sigma; }
};

InvarianceReport invariance_audit(const SystemModel& model,
                                  const std::vector<std::pair<std::string, Observable>>& test_fns,
                                  const std::vector<double>& t_list, long n_samples,
                                  std::uint64_t seed, bool theta_uniform = false);

} // namespace wihs
