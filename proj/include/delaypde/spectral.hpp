#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "delaypde/coefficient.hpp"
#include "delaypde/errors.hpp"
#include "delaypde/tridiag.hpp"

namespace delaypde {
namespace spectral {

/// Threshold below which a boundary angle is treated as exactly Dirichlet.
inline constexpr double kDirichletAngleTol = 1e-14;

/// Sturm-Liouville problem  A f = -(p f')' + q f  on (0, 1) with boundary
/// conditions parameterized by angles theta in [0, pi/2]:
///
///   cos(theta1) f(0) - sin(theta1) f'(0) = 0
///   cos(theta2) f(1) + sin(theta2) f'(1) = 0
///
/// theta = 0 is Dirichlet, theta = pi/2 is Neumann, anything between is Robin
/// with a nonnegative cotangent, which keeps the operator nonnegative for
/// q >= 0.  `q_c` records how much constant reaction was folded into q by the
/// caller; the dynamics modules consume it, the operator itself does not.
struct SLProblem {
    Coefficient p = Coefficient::constant(1.0);
    Coefficient q = Coefficient::constant(1.0);
    double q_c = 0.0;
    double theta1 = 0.0;
    double theta2 = 0.0;
    int grid_points = 2001;

    bool dirichlet_left() const { return theta1 < kDirichletAngleTol; }
    bool dirichlet_right() const { return theta2 < kDirichletAngleTol; }

    void validate() const {
        const double half_pi = std::acos(-1.0) / 2.0;
        if (!(theta1 >= 0.0 && theta1 <= half_pi + 1e-12))
            throw ValidationError("theta1 must lie in [0, pi/2]");
        if (!(theta2 >= 0.0 && theta2 <= half_pi + 1e-12))
            throw ValidationError("theta2 must lie in [0, pi/2]");
        if (grid_points < 3) throw ValidationError("grid_points must be at least 3");
        for (int i = 0; i < grid_points; ++i) {
            const double x = static_cast<double>(i) / (grid_points - 1);
            if (!(p(x) > 0.0)) throw ValidationError("p must be strictly positive on [0, 1]");
            if (!(q(x) >= 0.0)) throw ValidationError("q must be nonnegative on [0, 1]");
        }
    }
};

/// Discrete eigenbasis of the Sturm-Liouville operator.  Mode indices are
/// 1-based throughout the public API, matching the usual lambda_1 <= lambda_2
/// ordering of the underlying theory.
///
/// Eigenfunctions are stored on the full grid (zeros at Dirichlet endpoints),
/// normalized to unit trapezoid L2 norm, signed so the first interior sample
/// is positive.  Because the discretization is symmetric under the trapezoid
/// weights, discrete modes are orthonormal in that inner product to rounding.
struct EigenBasis {
    int grid_points = 0;
    double delta = 0.0;
    std::vector<double> xs;       ///< grid abscissae, size grid_points
    std::vector<double> weights;  ///< trapezoid weights (excluding delta factor)
    std::vector<double> lambdas;  ///< ascending eigenvalues, size n_modes
    std::vector<double> modes;    ///< row-major n_modes x grid_points
    std::vector<double> trace0;   ///< phi_n(0)
    std::vector<double> dtrace0;  ///< phi_n'(0)
    std::vector<double> trace1;   ///< phi_n(1)
    std::vector<double> dtrace1;  ///< phi_n'(1)
    double theta1 = 0.0, theta2 = 0.0;

    int count() const { return static_cast<int>(lambdas.size()); }
    double lambda(int n) const { return lambdas.at(n - 1); }
    const double* mode(int n) const { return &modes.at(static_cast<std::size_t>(n - 1) * grid_points); }
    double phi0(int n) const { return trace0.at(n - 1); }
    double dphi0(int n) const { return dtrace0.at(n - 1); }
    double phi1(int n) const { return trace1.at(n - 1); }
    double dphi1(int n) const { return dtrace1.at(n - 1); }

    /// Trapezoid inner product of two full-grid samples.
    double inner(const std::vector<double>& f, const std::vector<double>& g) const {
        if (f.size() != xs.size() || g.size() != xs.size())
            throw ValidationError("inner product: sample length does not match the basis grid");
        double s = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) s += weights[i] * f[i] * g[i];
        return s * delta;
    }

    double norm_sq(const std::vector<double>& f) const { return inner(f, f); }
};

/// Modal coefficient <f, phi_n> by trapezoid quadrature on the basis grid.
inline double project(const std::vector<double>& f, const EigenBasis& basis, int n) {
    if (n < 1 || n > basis.count())
        throw ValidationError("project: mode index out of range");
    if (static_cast<int>(f.size()) != basis.grid_points)
        throw ValidationError("project: sample length does not match the basis grid");
    const double* phi = basis.mode(n);
    double s = 0.0;
    for (int i = 0; i < basis.grid_points; ++i) s += basis.weights[i] * f[i] * phi[i];
    return s * basis.delta;
}

/// Grid resolution adequate for computing `n_modes` modes: enough points that
/// the second-order eigenvalue error stays inside the Weyl sandwich margin.
/// The margin can shrink like 1/n (half-integer mode families), so with
/// m = 1.4 n^{3/2} the relative eigenvalue shift (pi n / m)^2 / 12 stays at
/// roughly 0.42 of the margin for every n.
inline int suggested_grid_for_modes(int n_modes) {
    const double pts = 1.4 * std::pow(static_cast<double>(n_modes), 1.5);
    return std::max(801, static_cast<int>(std::ceil(pts)) | 1);
}

/// Computes the first `n_modes` eigenpairs of `problem`.
///
/// Discretization: second-order central fluxes with the Robin conditions
/// folded into half-cell boundary rows (ghost-point elimination).  The
/// resulting operator is self-adjoint under the trapezoid weights; a diagonal
/// similarity produces a symmetric tridiagonal matrix, whose eigenvalues come
/// from QL iterations with implicit shifts and whose eigenvectors come from
/// inverse iteration at the converged eigenvalues.
inline EigenBasis compute_eigenbasis(const SLProblem& problem, int n_modes) {
    problem.validate();
    const int m = problem.grid_points;
    const double delta = 1.0 / (m - 1);

    const bool dir_l = problem.dirichlet_left();
    const bool dir_r = problem.dirichlet_right();
    const int i0 = dir_l ? 1 : 0;
    const int i1 = dir_r ? m - 2 : m - 1;
    const int n_act = i1 - i0 + 1;
    if (n_modes < 1) throw ValidationError("compute_eigenbasis: n_modes must be positive");
    if (n_modes > n_act)
        throw ValidationError("compute_eigenbasis: n_modes exceeds grid resolution (" +
                              std::to_string(n_act) + " active nodes)");

    // Half-point diffusion samples p_{i+1/2} for i = 0..m-2.
    std::vector<double> phalf(m - 1);
    for (int i = 0; i < m - 1; ++i) phalf[i] = problem.p((i + 0.5) * delta);
    std::vector<double> qs(m);
    for (int i = 0; i < m; ++i) qs[i] = problem.q(static_cast<double>(i) / (m - 1));

    // Active-node weights: trapezoid half-weight at included boundary nodes.
    std::vector<double> w(n_act, 1.0);
    if (!dir_l) w.front() = 0.5;
    if (!dir_r) w.back() = 0.5;

    const double inv_d2 = 1.0 / (delta * delta);
    std::vector<double> diag(n_act), off(std::max(n_act - 1, 0));
    for (int a = 0; a < n_act; ++a) {
        const int i = i0 + a;
        if (i == 0) { // Robin/Neumann row at x = 0 (half cell)
            const double kappa = std::cos(problem.theta1) / std::sin(problem.theta1);
            diag[a] = 2.0 * phalf[0] * inv_d2 + (2.0 / delta) * problem.p(0.0) * kappa + qs[0];
        } else if (i == m - 1) { // Robin/Neumann row at x = 1
            const double kappa = std::cos(problem.theta2) / std::sin(problem.theta2);
            diag[a] = 2.0 * phalf[m - 2] * inv_d2 + (2.0 / delta) * problem.p(1.0) * kappa + qs[m - 1];
        } else {
            diag[a] = (phalf[i - 1] + phalf[i]) * inv_d2 + qs[i];
        }
        if (a < n_act - 1) {
            // Symmetric flux between active nodes a and a+1 under the weights.
            const double s = -phalf[i] * inv_d2;
            off[a] = s / std::sqrt(w[a] * w[a + 1]);
        }
    }

    std::vector<double> evals = diag, scratch = off;
    tridiag_eigenvalues(evals, scratch);

    EigenBasis basis;
    basis.grid_points = m;
    basis.delta = delta;
    basis.theta1 = problem.theta1;
    basis.theta2 = problem.theta2;
    basis.xs.resize(m);
    for (int i = 0; i < m; ++i) basis.xs[i] = static_cast<double>(i) / (m - 1);
    basis.weights.assign(m, 1.0);
    basis.weights.front() = 0.5;
    basis.weights.back() = 0.5;
    basis.lambdas.assign(evals.begin(), evals.begin() + n_modes);
    for (int n = 1; n < n_modes; ++n)
        if (!(basis.lambdas[n] > basis.lambdas[n - 1]))
            throw NumericalError("compute_eigenbasis: eigenvalues not strictly increasing at n = " +
                                 std::to_string(n + 1));

    basis.modes.assign(static_cast<std::size_t>(n_modes) * m, 0.0);
    basis.trace0.resize(n_modes);
    basis.dtrace0.resize(n_modes);
    basis.trace1.resize(n_modes);
    basis.dtrace1.resize(n_modes);

    const double inv_sqrt_delta = 1.0 / std::sqrt(delta);
    for (int n = 0; n < n_modes; ++n) {
        auto g = tridiag_eigenvector(diag, off, basis.lambdas[n]);
        double* phi = &basis.modes[static_cast<std::size_t>(n) * m];
        for (int a = 0; a < n_act; ++a)
            phi[i0 + a] = g[a] * inv_sqrt_delta / std::sqrt(w[a]);
        if (phi[1] < 0.0)
            for (int i = 0; i < m; ++i) phi[i] = -phi[i];

        basis.trace0[n] = phi[0];
        basis.trace1[n] = phi[m - 1];
        // One-sided second-order derivative estimates, then exact enforcement
        // of the Robin relation where the boundary condition provides one.
        double d0 = (-3.0 * phi[0] + 4.0 * phi[1] - phi[2]) / (2.0 * delta);
        double d1 = (3.0 * phi[m - 1] - 4.0 * phi[m - 2] + phi[m - 3]) / (2.0 * delta);
        if (!dir_l) d0 = (std::cos(problem.theta1) / std::sin(problem.theta1)) * phi[0];
        if (!dir_r) d1 = -(std::cos(problem.theta2) / std::sin(problem.theta2)) * phi[m - 1];
        basis.dtrace0[n] = d0;
        basis.dtrace1[n] = d1;
    }
    return basis;
}

/// Weyl sandwich report: pi^2 (n-1)^2 p_min <= lambda_n <= pi^2 n^2 p_max + q_max
/// for every computed mode, with the coefficient extremes sampled on the grid.
struct WeylReport {
    bool pass = true;
    int first_violation = 0; ///< 1-based mode index, 0 if none
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<double> margin; ///< min(lambda - lower, upper - lambda)
};

inline WeylReport validate_weyl_bounds(const EigenBasis& basis, const SLProblem& problem) {
    const int m = problem.grid_points;
    double p_min = 1e300, p_max = -1e300, q_max = -1e300;
    for (int i = 0; i < m; ++i) {
        const double x = static_cast<double>(i) / (m - 1);
        p_min = std::min(p_min, problem.p(x));
        p_max = std::max(p_max, problem.p(x));
        q_max = std::max(q_max, problem.q(x));
    }
    const double pi2 = std::acos(-1.0) * std::acos(-1.0);
    WeylReport rep;
    const int n_modes = basis.count();
    rep.lower.resize(n_modes);
    rep.upper.resize(n_modes);
    rep.margin.resize(n_modes);
    for (int n = 1; n <= n_modes; ++n) {
        rep.lower[n - 1] = pi2 * (n - 1.0) * (n - 1.0) * p_min;
        rep.upper[n - 1] = pi2 * n * n * p_max + q_max;
        const double lam = basis.lambda(n);
        rep.margin[n - 1] = std::min(lam - rep.lower[n - 1], rep.upper[n - 1] - lam);
        if (rep.margin[n - 1] < 0.0 && rep.pass) {
            rep.pass = false;
            rep.first_violation = n;
        }
    }
    return rep;
}

} // namespace spectral
} // namespace delaypde
