#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "delaypde/dense_matrix.hpp"
#include "delaypde/errors.hpp"
#include "delaypde/linalg.hpp"
#include "delaypde/spectral.hpp"

namespace delaypde {
namespace model {

/// Boundary measurement taken at x = 0.
enum class Measurement {
    dirichlet, ///< y(t) = z(t, 0), needs theta1 in (0, pi/2]
    neumann,   ///< y(t) = z_x(t, 0), needs theta1 in [0, pi/2)
};

/// Reaction-diffusion plant with a single discrete state delay,
///
///   z_t = (p z_x)_x - qtilde z + c z(t - h, x),   qtilde = q - q_c,
///
/// actuated through the boundary condition at x = 1:
///   cos(theta2) z(t, 1) + sin(theta2) z_x(t, 1) = u(t).
///
/// The caller supplies the split (q, q_c): q > 0 feeds the spectral operator
/// and q_c carries the destabilizing constant part of the reaction.
struct DelayPlant {
    spectral::SLProblem sl;
    double c = 0.0;
    double h = 1.0;
    Measurement measurement = Measurement::dirichlet;

    void validate() const {
        sl.validate();
        if (!(h > 0.0)) throw ValidationError("delay h must be positive");
        if (!std::isfinite(c)) throw ValidationError("delay coefficient c must be finite");
        if (measurement == Measurement::dirichlet && sl.dirichlet_left())
            throw ValidationError("Dirichlet measurement needs theta1 > 0 (z(t,0) vanishes otherwise)");
        const double half_pi = std::acos(-1.0) / 2.0;
        if (measurement == Measurement::neumann && sl.theta1 > half_pi - 1e-12)
            throw ValidationError("Neumann measurement needs theta1 < pi/2 (z_x(t,0) vanishes otherwise)");
    }
};

/// Modal image of a DelayPlant: eigenbasis plus every per-mode coefficient
/// the controller, certifier, and simulator consume.
///
/// With w = z + b u the actuated condition becomes homogeneous; a = (A - q_c) b
/// applied with the shifted reaction, giving the two equivalent input readings
///   beta_n = p(1) { -cos(theta2) phi_n'(1) + sin(theta2) phi_n(1) }
///          = a_n + (-lambda_n + q_c) b_n.
/// The first comes from boundary traces, the second from interior quadrature;
/// their agreement is a cross-check of the whole discretization and is
/// exposed via beta_consistency().
struct ModalPlant {
    spectral::EigenBasis basis;
    double c = 0.0;
    double h = 1.0;
    double q_c = 0.0;
    Measurement measurement = Measurement::dirichlet;

    std::vector<double> beta;    ///< trace formula, per mode
    std::vector<double> a_mod;   ///< <a, phi_n>
    std::vector<double> b_mod;   ///< <b, phi_n>
    std::vector<double> a_grid;  ///< a(x) samples on the basis grid
    std::vector<double> b_grid;  ///< b(x) samples on the basis grid

    int count() const { return basis.count(); }
    double lambda(int n) const { return basis.lambda(n); }
    /// Drift of mode n in the shifted reaction frame.
    double drift(int n) const { return -basis.lambda(n) + q_c; }

    /// Raw measurement coefficient of mode n.
    double meas_coeff(int n) const {
        return measurement == Measurement::dirichlet ? basis.phi0(n) : basis.dphi0(n);
    }
    /// Tail-scaled measurement coefficient of mode n.
    double ctilde(int n) const {
        const double lam = basis.lambda(n);
        return measurement == Measurement::dirichlet ? basis.phi0(n) / std::sqrt(lam)
                                                     : basis.dphi0(n) / lam;
    }

    double a_quadrature_norm_sq() const { return basis.norm_sq(a_grid); }
    double b_quadrature_norm_sq() const { return basis.norm_sq(b_grid); }

    /// Worst relative mismatch between the two beta formulas over all modes.
    double beta_consistency() const {
        double worst = 0.0;
        for (int n = 1; n <= count(); ++n) {
            const double alt = a_mod[n - 1] + drift(n) * b_mod[n - 1];
            worst = std::max(worst, std::abs(beta[n - 1] - alt) / (1.0 + std::abs(beta[n - 1])));
        }
        return worst;
    }
};

inline ModalPlant build_modal_plant(const DelayPlant& plant, int n_modes) {
    plant.validate();
    ModalPlant mp;
    mp.basis = spectral::compute_eigenbasis(plant.sl, n_modes);
    mp.c = plant.c;
    mp.h = plant.h;
    mp.q_c = plant.sl.q_c;
    mp.measurement = plant.measurement;

    const int m = mp.basis.grid_points;
    const double den = std::cos(plant.sl.theta2) + 2.0 * std::sin(plant.sl.theta2);
    auto ps = plant.sl.p.sample(m);
    auto dps = plant.sl.p.sample_derivative(m);
    auto qs = plant.sl.q.sample(m);
    mp.a_grid.resize(m);
    mp.b_grid.resize(m);
    for (int i = 0; i < m; ++i) {
        const double x = mp.basis.xs[i];
        const double qtilde = qs[i] - plant.sl.q_c;
        mp.a_grid[i] = (2.0 * ps[i] + 2.0 * x * dps[i] - x * x * qtilde) / den;
        mp.b_grid[i] = -x * x / den;
    }

    const double p1 = plant.sl.p(1.0);
    mp.beta.resize(n_modes);
    mp.a_mod.resize(n_modes);
    mp.b_mod.resize(n_modes);
    for (int n = 1; n <= n_modes; ++n) {
        mp.beta[n - 1] = p1 * (-std::cos(plant.sl.theta2) * mp.basis.dphi1(n) +
                               std::sin(plant.sl.theta2) * mp.basis.phi1(n));
        mp.a_mod[n - 1] = spectral::project(mp.a_grid, mp.basis, n);
        mp.b_mod[n - 1] = spectral::project(mp.b_grid, mp.basis, n);
    }
    return mp;
}

/// Number of modes whose delayed dynamics are not already decaying:
/// #{ n : -lambda_n + q_c + |c| >= 0 }.  Modes beyond this count satisfy the
/// delay-robust margin delta = lambda_{N0+1} - q_c - |c| > 0 by construction.
inline int minimal_controlled_modes(const ModalPlant& mp) {
    int n0 = 0;
    for (int n = 1; n <= mp.count(); ++n)
        if (mp.drift(n) + std::abs(mp.c) >= 0.0) n0 = n;
    if (n0 == mp.count())
        throw ValidationError("all computed modes are delay-critical; recompute with more modes");
    return n0;
}

/// Stability margin of the first uncontrolled mode.
inline double delta_margin(const ModalPlant& mp, int n0) {
    if (n0 < 0 || n0 + 1 > mp.count())
        throw ValidationError("delta_margin: need at least n0 + 1 computed modes");
    return mp.basis.lambda(n0 + 1) - mp.q_c - std::abs(mp.c);
}

struct Gains {
    DenseMatrix K; ///< 1 x n0 state-feedback row, u = K zhat
    DenseMatrix L; ///< n0 x 1 innovation column
    int n0 = 0;
};

/// Pole-placement synthesis on the controlled block.  Targets sit a margin
/// rho to the left of -|c| so that the closed loop stays contractive under
/// the delayed coupling; pairs get an imaginary part sigma, an odd leftover
/// target stays real.  The same pattern serves the observer via duality.
inline Gains synthesize_gains(const ModalPlant& mp, int n0, double rho = 0.5, double sigma = 0.5) {
    if (n0 < 1) throw ValidationError("synthesize_gains: need at least one controlled mode");
    if (n0 > mp.count()) throw ValidationError("synthesize_gains: n0 exceeds computed modes");
    if (!(rho > 0.0)) throw ValidationError("synthesize_gains: rho must be positive");

    DenseMatrix A0(n0, n0), B0(n0, 1), C0(1, n0);
    for (int n = 1; n <= n0; ++n) {
        A0(n - 1, n - 1) = mp.drift(n);
        B0(n - 1, 0) = mp.beta[n - 1];
        C0(0, n - 1) = mp.meas_coeff(n);
        if (std::abs(mp.beta[n - 1]) < 1e-12)
            throw ValidationError("mode " + std::to_string(n) + " is unreachable from the boundary input");
        if (std::abs(mp.meas_coeff(n)) < 1e-12)
            throw ValidationError("mode " + std::to_string(n) + " is invisible to the measurement");
    }

    std::vector<std::complex<double>> targets;
    const double base = std::abs(mp.c);
    int pairs = n0 / 2;
    for (int m = 1; m <= pairs; ++m) {
        targets.emplace_back(-(base + rho * m), sigma);
        targets.emplace_back(-(base + rho * m), -sigma);
    }
    if (n0 % 2 == 1) targets.emplace_back(-(base + rho * (pairs + 1)), 0.0);

    Gains g;
    g.n0 = n0;
    g.K = place_poles_siso(A0, B0, targets, PlacementMode::feedback);
    g.L = place_poles_siso(A0, transpose(C0), targets, PlacementMode::observer);
    return g;
}

/// Spectral tail data consumed by the certifier for a given retained count N:
/// the next eigenvalue, the squared L2 remainders of the shape functions, and
/// the measurement tail constant
///   Dirichlet: M_phi      = sum_{n > N} phi_n(0)^2  / lambda_n
///   Neumann:   M_phi(eps) = sum_{n > N} phi_n'(0)^2 / lambda_n^{3/2 + eps}.
/// Terms up to n_series are computed from a deep eigenbasis; the remainder is
/// covered by an analytic majorant built from a trace envelope (factor-two
/// safety margin on the top computed half) and the Weyl lower bound.
struct TailData {
    double lambda_next = 0.0;
    double r_a_sq = 0.0;
    double r_b_sq = 0.0;
    double m_phi = 0.0;
    double majorant = 0.0; ///< analytic part already included in m_phi
    int n_series = 0;
    double eps = 0.0; ///< Neumann tail exponent actually used
};

inline TailData compute_tail_data(const DelayPlant& plant, int n_retained, double eps = 0.125,
                                  int n_series = 0) {
    plant.validate();
    if (n_retained < 1) throw ValidationError("compute_tail_data: n_retained must be positive");
    if (n_series <= 0) n_series = std::max(10 * n_retained, 200);
    if (n_series <= n_retained + 8)
        throw ValidationError("compute_tail_data: n_series leaves too few tail terms");
    const bool neumann = plant.measurement == Measurement::neumann;
    if (neumann && !(eps > 0.0 && eps < 0.5))
        throw ValidationError("compute_tail_data: Neumann tail exponent must lie in (0, 1/2)");

    spectral::SLProblem deep = plant.sl;
    deep.grid_points = std::max(deep.grid_points, spectral::suggested_grid_for_modes(n_series));
    auto basis = spectral::compute_eigenbasis(deep, n_series);
    auto weyl = spectral::validate_weyl_bounds(basis, deep);
    if (!weyl.pass)
        throw NumericalError("compute_tail_data: deep basis violates the Weyl sandwich at mode " +
                             std::to_string(weyl.first_violation));

    TailData td;
    td.n_series = n_series;
    td.eps = neumann ? eps : 0.0;
    td.lambda_next = basis.lambda(n_retained + 1);

    // Shape-function remainders from the same deep basis.
    const double den = std::cos(plant.sl.theta2) + 2.0 * std::sin(plant.sl.theta2);
    const int m = basis.grid_points;
    std::vector<double> a_grid(m), b_grid(m);
    auto ps = plant.sl.p.sample(m);
    auto dps = plant.sl.p.sample_derivative(m);
    auto qs = plant.sl.q.sample(m);
    for (int i = 0; i < m; ++i) {
        const double x = basis.xs[i];
        a_grid[i] = (2.0 * ps[i] + 2.0 * x * dps[i] - x * x * (qs[i] - plant.sl.q_c)) / den;
        b_grid[i] = -x * x / den;
    }
    double ra = basis.norm_sq(a_grid), rb = basis.norm_sq(b_grid);
    for (int n = 1; n <= n_retained; ++n) {
        const double an = spectral::project(a_grid, basis, n);
        const double bn = spectral::project(b_grid, basis, n);
        ra -= an * an;
        rb -= bn * bn;
    }
    td.r_a_sq = std::max(ra, 0.0);
    td.r_b_sq = std::max(rb, 0.0);

    double p_min = 1e300;
    for (int i = 0; i < m; ++i) p_min = std::min(p_min, ps[i]);

    // Computed portion of the measurement tail constant.  Each term carries a
    // (1 + lambda delta^2 / p_min) inflation, an upper bound on the relative
    // second-order discretization error of trace and eigenvalue, so the sum
    // stays on the conservative side.
    const double d2 = basis.delta * basis.delta;
    double sum = 0.0;
    for (int n = n_retained + 1; n <= n_series; ++n) {
        const double lam = basis.lambda(n);
        const double inflate = 1.0 + lam * d2 / p_min;
        if (neumann) {
            const double t = basis.dphi0(n);
            sum += inflate * t * t / std::pow(lam, 1.5 + eps);
        } else {
            const double t = basis.phi0(n);
            sum += inflate * t * t / lam;
        }
    }

    // Trace envelope from the top computed half, doubled for safety, then an
    // integral bound on everything past n_series using lambda_n >= pi^2 (n-1)^2 p_min.
    double env = 0.0;
    for (int n = (n_retained + n_series) / 2; n <= n_series; ++n) {
        const double s = neumann ? std::abs(basis.dphi0(n)) / std::sqrt(basis.lambda(n))
                                 : std::abs(basis.phi0(n));
        env = std::max(env, s);
    }
    env *= 2.0;
    const double pi2p = std::acos(-1.0) * std::acos(-1.0) * p_min;
    const double M = static_cast<double>(n_series);
    td.majorant = neumann ? env * env * std::pow(pi2p, -0.5 - eps) * std::pow(M - 1.0, -2.0 * eps) / (2.0 * eps)
                          : env * env / (pi2p * (M - 1.0));
    td.m_phi = sum + td.majorant;
    return td;
}

/// Finite-dimensional closed-loop data for the certifier.  The extended state
/// is X0 = (zhat_{1..n0}, e_{1..n0}); the retained-but-uncontrolled modes are
/// carried in an H1-scaled block of size N - n0, and the measurement residue
/// of everything past N enters as a scalar bounded through m_phi.
struct ClosedLoop {
    int n0 = 0;
    int n_ret = 0; ///< N
    DenseMatrix F1{1, 1};     ///< 2n0 x 2n0
    DenseMatrix F2{1, 1};     ///< 2n0 x (N - n0), zero-width stored as empty flag below
    DenseMatrix F3{1, 1};     ///< (N - n0) diag
    DenseMatrix Lcol{1, 1};   ///< 2n0 x 1, col(L, -L)
    DenseMatrix Ktilde{1, 1}; ///< 1 x 2n0, [K 0]
    DenseMatrix Erow{1, 1};   ///< 1 x (2n0 + (N - n0) + 1), Ktilde [F1 F2 Lcol]
    bool has_mid = false;     ///< N > n0
    double abs_c = 0.0;
    double q_c = 0.0;
    double lambda_next = 0.0;
    double r_a_sq = 0.0, r_b_sq = 0.0, m_phi = 0.0, eps = 0.0;
    Measurement measurement = Measurement::dirichlet;
};

/// Combined controller/observation-error block [[A0 + B0 K, L C0], [0, A0 - L C0]].
inline DenseMatrix controlled_block(const ModalPlant& mp, const Gains& gains) {
    const int n0 = gains.n0;
    if (n0 < 1) throw ValidationError("controlled_block: need n0 >= 1");
    if (n0 > mp.count()) throw ValidationError("controlled_block: n0 exceeds computed modes");
    if (gains.K.rows != 1 || gains.K.cols != n0 || gains.L.rows != n0 || gains.L.cols != 1)
        throw ValidationError("controlled_block: gain dimensions do not match n0");
    const int d = 2 * n0;
    DenseMatrix f1(d, d);
    for (int i = 0; i < n0; ++i) {
        f1(i, i) = mp.drift(i + 1);
        f1(n0 + i, n0 + i) = mp.drift(i + 1);
        for (int j = 0; j < n0; ++j) {
            f1(i, j) += mp.beta[i] * gains.K(0, j);                // B0 K
            f1(i, n0 + j) += gains.L(i, 0) * mp.meas_coeff(j + 1); // L C0
            f1(n0 + i, n0 + j) -= gains.L(i, 0) * mp.meas_coeff(j + 1);
        }
    }
    return f1;
}

inline ClosedLoop build_closed_loop(const ModalPlant& mp, const Gains& gains, int n_ret,
                                    const TailData& tail) {
    const int n0 = gains.n0;
    if (n0 < 1) throw ValidationError("build_closed_loop: need n0 >= 1");
    if (n_ret < n0) throw ValidationError("build_closed_loop: N must be at least n0");
    if (n_ret > mp.count()) throw ValidationError("build_closed_loop: N exceeds computed modes");
    if (gains.K.rows != 1 || gains.K.cols != n0 || gains.L.rows != n0 || gains.L.cols != 1)
        throw ValidationError("build_closed_loop: gain dimensions do not match n0");

    ClosedLoop cl;
    cl.n0 = n0;
    cl.n_ret = n_ret;
    cl.abs_c = std::abs(mp.c);
    cl.q_c = mp.q_c;
    cl.lambda_next = tail.lambda_next;
    cl.r_a_sq = tail.r_a_sq;
    cl.r_b_sq = tail.r_b_sq;
    cl.m_phi = tail.m_phi;
    cl.eps = tail.eps;
    cl.measurement = mp.measurement;
    cl.has_mid = n_ret > n0;

    const int d = 2 * n0;
    cl.F1 = controlled_block(mp, gains);

    cl.Lcol = DenseMatrix(d, 1);
    for (int i = 0; i < n0; ++i) {
        cl.Lcol(i, 0) = gains.L(i, 0);
        cl.Lcol(n0 + i, 0) = -gains.L(i, 0);
    }

    cl.Ktilde = DenseMatrix(1, d);
    for (int j = 0; j < n0; ++j) cl.Ktilde(0, j) = gains.K(0, j);

    const int mid = n_ret - n0;
    if (cl.has_mid) {
        cl.F3 = DenseMatrix(mid, mid);
        cl.F2 = DenseMatrix(d, mid);
        for (int j = 0; j < mid; ++j) {
            cl.F3(j, j) = mp.drift(n0 + 1 + j);
            const double ct = mp.ctilde(n0 + 1 + j);
            for (int i = 0; i < n0; ++i) {
                cl.F2(i, j) = gains.L(i, 0) * ct;
                cl.F2(n0 + i, j) = -gains.L(i, 0) * ct;
            }
        }
    }

    // Erow = Ktilde [F1 F2 Lcol]: the u-rate row against (X0, X1, zeta).
    cl.Erow = DenseMatrix(1, d + mid + 1);
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += cl.Ktilde(0, k) * cl.F1(k, j);
        cl.Erow(0, j) = s;
    }
    for (int j = 0; j < mid; ++j) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += cl.Ktilde(0, k) * cl.F2(k, j);
        cl.Erow(0, d + j) = s;
    }
    {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += cl.Ktilde(0, k) * cl.Lcol(k, 0);
        cl.Erow(0, d + mid) = s;
    }
    return cl;
}

} // namespace model
} // namespace delaypde
