// types.hpp — small vector/matrix aliases and the torus geometry helpers.
//
// All runtime dimensions are N <= 3; the Eigen aliases below are
// stack-allocated (max-size 3) so hot loops never touch the heap.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>

#include "wihs/errors.hpp"

namespace wihs {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

using Vec  = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using CVec = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using IVec = Eigen::Matrix<int, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using Mat  = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

using Complex = std::complex<double>;

/// Reduce a single angle to [0, 2pi).
inline double wrap_angle(double x) {
    double r = std::fmod(x, two_pi);
    if (r < 0.0) r += two_pi;
    return r;
}

/// Distance on the circle between two angles (lifts allowed).
inline double circle_distance(double a, double b) {
    double d = wrap_angle(a - b);
    return std::min(d, two_pi - d);
}

/// Max over axes of the per-axis circle distance.
inline double torus_distance(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw DimensionError("torus_distance: dimension mismatch");
    double m = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k)
        m = std::max(m, circle_distance(a[k], b[k]));
    return m;
}

inline Vec wrap_angles(Vec theta) {
    for (Eigen::Index k = 0; k < theta.size(); ++k) theta[k] = wrap_angle(theta[k]);
    return theta;
}

/// Axis-aligned action box Omega subset R^N.
struct ActionBox {
    Vec lo, hi;

    int dim() const { return static_cast<int>(lo.size()); }

    void validate() const {
        if (lo.size() != hi.size() || lo.size() == 0)
            throw DomainError("ActionBox: empty or mismatched bounds");
        for (Eigen::Index k = 0; k < lo.size(); ++k)
            if (!(lo[k] < hi[k]))
                throw DomainError("ActionBox: lower >= upper on axis " + std::to_string(k));
    }

    bool contains(const Vec& I, double tol = 1e-12) const {
        if (I.size() != lo.size()) return false;
        for (Eigen::Index k = 0; k < lo.size(); ++k)
            if (I[k] < lo[k] - tol || I[k] > hi[k] + tol) return false;
        return true;
    }

    double volume() const {
        double v = 1.0;
        for (Eigen::Index k = 0; k < lo.size(); ++k) v *= hi[k] - lo[k];
        return v;
    }

    Vec width() const { return hi - lo; }

    Vec center() const { return 0.5 * (lo + hi); }
};

} // namespace wihs
