#include <doctest.h>

#include <cmath>

#include "wihs/model.hpp"
#include "wihs/quadrature.hpp"
#include "wihs/rng.hpp"

using namespace wihs;

namespace {

Vec pt(std::initializer_list<double> vals) {
    Vec v(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index i = 0;
    for (double x : vals) v[i++] = x;
    return v;
}

Polynomial coupled_hamiltonian() {
    // H = I1^2/2 + I1 I2/4 + I2^2/2
    Polynomial H;
    H.dim = 2;
    IVec e(2);
    e << 2, 0;
    H.terms.push_back({0.5, e});
    e << 1, 1;
    H.terms.push_back({0.25, e});
    e << 0, 2;
    H.terms.push_back({0.5, e});
    return H;
}

} // namespace

TEST_CASE("build_model: unweighted reduction m == 1") {
    auto model = build_model(unweighted_spec(1));
    CHECK(model.a_bar() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(model.b_series().sum_abs() <= 1e-13);
    CHECK(model.a_series().nonzero_count() == 1);
    CHECK(model.rho_series().nonzero_count() == 1);
    CHECK(model.rho(pt({0.3})) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("build_model: SYS-A derivations") {
    auto model = build_model(sys_a_spec());
    CHECK(model.a_bar() == doctest::Approx(1.0).epsilon(1e-12));
    // rho = m for N=1
    CHECK(model.rho(pt({0.9})) ==
          doctest::Approx(1.0 + 0.5 * std::cos(0.9)).epsilon(1e-12));
    // b = 0.5 cos(theta)
    IVec n1(1);
    n1 << 1;
    CHECK(std::abs(model.b_series().coeff(n1) - Complex(0.25, 0.0)) <= 1e-13);
    CHECK(std::abs(model.b_series().coeff0()) <= 1e-12);
    // a = 1/rho
    CHECK(model.a_exact(pt({2.5})) ==
          doctest::Approx(1.0 / (1.0 + 0.5 * std::cos(2.5))).epsilon(1e-12));
}

TEST_CASE("build_model: SYS-B derivations") {
    auto model = build_model(sys_b_spec());
    CHECK(model.a_bar() == doctest::Approx(1.0).epsilon(1e-12));
    // b = 0.3 cos(theta1) + 0.2 sin(theta1+theta2)
    const double t1 = 1.1, t2 = 2.3;
    const double expected = 0.3 * std::cos(t1) + 0.2 * std::sin(t1 + t2);
    CHECK(model.b_series().eval_real(pt({t1, t2})) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("build_model: nonpositive weight rejected") {
    ModelSpec spec = sys_a_spec();
    // m = 1 + 1.2 cos(theta) dips negative
    spec.weight.modes[1].second = Complex(0.6, 0.0);
    spec.weight.modes[2].second = Complex(0.6, 0.0);
    CHECK_THROWS_AS(build_model(spec), PositivityError);
}

TEST_CASE("build_model: empty Omega box rejected") {
    ModelSpec spec = sys_a_spec();
    spec.box.hi[0] = spec.box.lo[0];
    CHECK_THROWS_AS(build_model(spec), DomainError);
}

TEST_CASE("omega: identity frequency map for H = |I|^2/2") {
    auto model = build_model(sys_a_spec());
    CHECK(model.omega(pt({1.5}))[0] == doctest::Approx(1.5).epsilon(1e-15));

    auto model2 = build_model(sys_b_spec());
    const Vec om = model2.omega(pt({1.0, 1.618}));
    CHECK(om[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(om[1] == doctest::Approx(1.618).epsilon(1e-15));
}

TEST_CASE("omega: coupled Hamiltonian hand gradient") {
    ModelSpec spec = unweighted_spec(2);
    spec.hamiltonian = coupled_hamiltonian();
    auto model = build_model(spec);
    const Vec om = model.omega(pt({1.0, 1.0}));
    CHECK(om[0] == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(om[1] == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("omega: action outside the closure is rejected") {
    auto model = build_model(sys_a_spec());
    CHECK_THROWS_AS(model.omega(pt({2.5})), DomainError);
}

TEST_CASE("d_omega: identity Hessian and coupled Hessian") {
    auto model = build_model(sys_b_spec());
    const Mat h = model.d_omega(pt({1.1, 1.6}));
    CHECK(h(0, 0) == doctest::Approx(1.0));
    CHECK(h(0, 1) == doctest::Approx(0.0));

    ModelSpec spec = unweighted_spec(2);
    spec.hamiltonian = coupled_hamiltonian();
    auto model2 = build_model(spec);
    const Mat h2 = model2.d_omega(pt({1.3, 1.7}));
    CHECK(h2(0, 0) == doctest::Approx(1.0));
    CHECK(h2(0, 1) == doctest::Approx(0.25));
    CHECK(h2(1, 0) == doctest::Approx(0.25));
    CHECK(h2(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("d_omega matches finite differences of omega at random actions") {
    ModelSpec spec = unweighted_spec(2);
    spec.hamiltonian = coupled_hamiltonian();
    // cubic term makes the Hessian nonconstant
    IVec e(2);
    e << 3, 0;
    spec.hamiltonian.terms.push_back({0.1, e});
    auto model = build_model(spec);
    CounterRng rng(17, 0);
    const double h = 1e-6;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        Vec I = pt({rng.next_double(1.05, 1.95), rng.next_double(1.05, 1.95)});
        const Mat hess = model.d_omega(I);
        for (int k = 0; k < 2; ++k) {
            Vec Ip = I, Im = I;
            Ip[k] += h;
            Im[k] -= h;
            const Vec fd = (model.omega(Ip) - model.omega(Im)) / (2 * h);
            for (int j = 0; j < 2; ++j) worst = std::max(worst, std::abs(fd[j] - hess(j, k)));
        }
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("resonance_audit: SYS-A effective constants") {
    auto model = build_model(sys_a_spec());
    const ResonanceAudit audit = model.resonance_audit(16, 9, 1.0);
    CHECK(audit.alpha_eff >= 1.0);
    CHECK(audit.lambda_eff == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("resonance_audit: exact rational resonance is detected and named") {
    ModelSpec spec = unweighted_spec(2);
    spec.box.lo = pt({0.9, 1.4});
    spec.box.hi = pt({1.1, 1.6});
    auto model = build_model(spec);
    // grid_n = 3 hits I = (1.0, 1.5); n = (3, -2) gives n.I = 0
    CHECK_THROWS_AS(model.resonance_audit(4, 3, 1.0), ResonanceFailure);
    try {
        model.resonance_audit(4, 3, 1.0);
    } catch (const ResonanceFailure& e) {
        const std::string msg = e.what();
        const bool named = msg.find("(3,-2)") != std::string::npos ||
                           msg.find("(-3,2)") != std::string::npos;
        CHECK(named);
    }
}

TEST_CASE("resonance_audit: tau below N-1 rejected") {
    auto model = build_model(sys_b_spec());
    CHECK_THROWS_AS(model.resonance_audit(4, 3, 0.5), DomainError);
}

TEST_CASE("a * rho = 1 pointwise on the audit grid") {
    for (const auto& spec : {sys_a_spec(), sys_b_spec(), sys_c_spec()}) {
        auto model = build_model(spec);
        const auto a_vals = model.a_series().to_grid();
        const auto rho_vals = model.rho_series().to_grid();
        double worst = 0.0;
        for (std::size_t i = 0; i < a_vals.size(); ++i)
            worst = std::max(worst, std::abs(a_vals[i] * rho_vals[i] - 1.0));
        CHECK(worst <= 1e-10);
    }
}

TEST_CASE("b has zero mean for all reference systems") {
    for (const auto& spec : {sys_a_spec(), sys_b_spec(), sys_c_spec()}) {
        auto model = build_model(spec);
        CHECK(std::abs(model.b_series().coeff0()) <= 1e-12);
    }
}

TEST_CASE("a_bar is stable under doubling the band for band-limited m") {
    auto m1 = build_model(sys_b_spec(12));
    auto m2 = build_model(sys_b_spec(24));
    CHECK(std::abs(m1.a_bar() - m2.a_bar()) <= 1e-10);
}

TEST_CASE("a_bar times grid mean of 1/a equals one") {
    for (const auto& spec : {sys_a_spec(), sys_c_spec()}) {
        auto model = build_model(spec);
        const auto rho_vals = model.rho_series().to_grid(); // 1/a on the grid
        double mean = 0.0;
        for (double v : rho_vals) mean += v;
        mean /= static_cast<double>(rho_vals.size());
        CHECK(model.a_bar() * mean == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("SYS-C weight is reproducible and respects the positivity floor") {
    auto m1 = build_model(sys_c_spec());
    auto m2 = build_model(sys_c_spec());
    CHECK(m1.rho_series().sum_abs() == m2.rho_series().sum_abs());
    const auto vals = m1.m_series().to_grid();
    double mn = vals[0];
    for (double v : vals) mn = std::min(mn, v);
    CHECK(mn >= 0.3 - 1e-9);
    CHECK(m1.aliasing_sup() < 1e-6);
    CHECK(m1.aliasing_sup() > 0.0);
}
