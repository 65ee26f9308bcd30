#pragma once

// Structurally independent rebuild of the feasibility constraint blocks, used
// to cross-check certify::assemble.  Every entry comes straight from the
// scalar formulas with long double accumulators and column-grouped loops, and
// the control row is recomputed from Kt [F1 F2 L] instead of reusing the one
// stored in the closed-loop record.

#include <cmath>
#include <random>
#include <vector>

#include "delaypde/certify.hpp"
#include "delaypde/dense_matrix.hpp"
#include "delaypde/model.hpp"

namespace refcheck {

using delaypde::DenseMatrix;
using delaypde::certify::Certificate;
using delaypde::certify::Multipliers;
using delaypde::model::ClosedLoop;
using delaypde::model::Measurement;

struct Blocks {
    DenseMatrix Psi{1, 1};
    DenseMatrix Theta1{1, 1};
    DenseMatrix Theta2{1, 1};
    double Theta3 = 0.0, Theta4 = 0.0, Theta5 = 0.0;
    bool has_mid = false;
    bool has_theta5 = false;
};

inline Blocks assemble(const ClosedLoop& cl, const Certificate& ct, const Multipliers& mult) {
    const int d = 2 * cl.n0;
    const int mid = cl.n_ret - cl.n0;
    const int full = d + mid + 1;
    const long double ac = cl.abs_c;
    const long double gam = ct.gamma;
    const long double frak = 1.0L - 0.5L * (ac / mult.alpha1 + 1.0L / mult.alpha2 +
                                            1.0L / mult.alpha3 + ac / mult.alpha4);

    std::vector<long double> e(full, 0.0L);
    for (int j = 0; j < full; ++j) {
        long double s = 0.0L;
        for (int i = 0; i < d; ++i) {
            const long double col = j < d             ? cl.F1(i, j)
                                    : j < d + mid     ? cl.F2(i, j - d)
                                                      : cl.Lcol(i, 0);
            s += static_cast<long double>(cl.Ktilde(0, i)) * col;
        }
        e[j] = s;
    }

    const long double we = 2.0L * mult.alpha3 * gam * cl.r_b_sq;
    const long double wa = mult.alpha2 * gam * cl.r_a_sq;
    const long double w1 = (2.0L * mult.alpha3 * ac + mult.alpha4) * gam * ac * cl.r_b_sq;

    Blocks out;
    out.has_mid = mid > 0;
    out.has_theta5 = cl.measurement == Measurement::neumann;

    out.Psi = DenseMatrix(full, full);
    for (int j = 0; j < full; ++j)
        for (int i = 0; i < full; ++i) {
            long double v = we * e[i] * e[j];
            if (i < d && j < d) {
                for (int k = 0; k < d; ++k)
                    v += static_cast<long double>(cl.F1(k, i)) * ct.P(k, j) +
                         static_cast<long double>(ct.P(i, k)) * cl.F1(k, j);
                v += ac * ct.P(i, j) + ct.Q1(i, j) +
                     wa * static_cast<long double>(cl.Ktilde(0, i)) * cl.Ktilde(0, j);
            } else if (i < d && j < full - 1) {
                for (int k = 0; k < d; ++k)
                    v += static_cast<long double>(ct.P(i, k)) * cl.F2(k, j - d);
            } else if (j < d && i < full - 1) {
                for (int k = 0; k < d; ++k)
                    v += static_cast<long double>(ct.P(j, k)) * cl.F2(k, i - d);
            } else if (i < full - 1 && j < full - 1) {
                v += ct.Q2(i - d, j - d);
                if (i == j) v += static_cast<long double>(ct.r1) * (2.0L * cl.F3(i - d, i - d) + ac);
            } else if (i < d || j < d) {
                const int r = i < d ? i : j;
                for (int k = 0; k < d; ++k)
                    v += static_cast<long double>(ct.P(r, k)) * cl.Lcol(k, 0);
            } else if (i == j) {
                v -= ct.beta;
            }
            out.Psi(i, j) = static_cast<double>(v);
        }

    out.Theta1 = DenseMatrix(d, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i)
            out.Theta1(i, j) = static_cast<double>(
                ac * ct.P(i, j) - static_cast<long double>(ct.Q1(i, j)) +
                w1 * static_cast<long double>(cl.Ktilde(0, i)) * cl.Ktilde(0, j));

    if (mid > 0) {
        out.Theta2 = DenseMatrix(mid, mid);
        for (int j = 0; j < mid; ++j)
            for (int i = 0; i < mid; ++i)
                out.Theta2(i, j) = static_cast<double>(
                    (i == j ? static_cast<long double>(ct.r1) * ac : 0.0L) -
                    static_cast<long double>(ct.Q2(i, j)));
    }

    out.Theta3 = static_cast<double>(gam * mult.alpha1 * ac - static_cast<long double>(ct.r2));

    const long double lam = cl.lambda_next;
    if (out.has_theta5) {
        const long double le = cl.eps;
        out.Theta4 = static_cast<double>(
            2.0L * gam * (-frak * lam + cl.q_c) +
            static_cast<long double>(ct.beta) * cl.m_phi * std::pow(lam, 0.5L + le) +
            static_cast<long double>(ct.r2) / lam);
        out.Theta5 = static_cast<double>(
            2.0L * gam * frak -
            static_cast<long double>(ct.beta) * cl.m_phi / std::pow(lam, 0.5L - le));
    } else {
        out.Theta4 = static_cast<double>(2.0L * gam * (-frak * lam + cl.q_c) +
                                         static_cast<long double>(ct.beta) * cl.m_phi +
                                         static_cast<long double>(ct.r2) / lam);
    }
    return out;
}

// Randomized synthetic closed-loop/certificate/multiplier triples for the
// agreement tests.  Magnitudes stay around unity so entry comparisons can use
// a plain scaled tolerance; the multipliers always leave positive contraction.
struct Instance {
    ClosedLoop cl;
    Certificate ct;
    Multipliers mult;
};

inline DenseMatrix random_matrix(std::mt19937& rng, int r, int c, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    DenseMatrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
}

inline DenseMatrix random_spd(std::mt19937& rng, int n, double ridge) {
    auto a = random_matrix(rng, n, n, -1.0, 1.0);
    DenseMatrix s = delaypde::transpose(a) * a;
    for (int i = 0; i < n; ++i) s(i, i) += ridge;
    return s;
}

inline Instance random_instance(std::mt19937& rng, int n0, int mid, Measurement meas) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Instance inst;
    auto& cl = inst.cl;
    cl.n0 = n0;
    cl.n_ret = n0 + mid;
    const int d = 2 * n0;
    cl.F1 = random_matrix(rng, d, d, -3.0, 3.0);
    if (mid > 0) {
        cl.F2 = random_matrix(rng, d, mid, -2.0, 2.0);
        cl.F3 = DenseMatrix(mid, mid);
        for (int i = 0; i < mid; ++i) cl.F3(i, i) = -(1.0 + 40.0 * u01(rng));
    }
    cl.Lcol = random_matrix(rng, d, 1, -2.0, 2.0);
    cl.Ktilde = DenseMatrix(1, d);
    for (int i = 0; i < n0; ++i) cl.Ktilde(0, i) = -2.0 + 4.0 * u01(rng);
    cl.has_mid = mid > 0;
    cl.abs_c = 0.3 + 4.0 * u01(rng);
    cl.q_c = -1.0 + 3.0 * u01(rng);
    cl.lambda_next = 20.0 + 200.0 * u01(rng);
    cl.r_a_sq = 10.0 * u01(rng);
    cl.r_b_sq = 10.0 * u01(rng);
    cl.m_phi = 0.02 + u01(rng);
    cl.eps = 0.125;
    cl.measurement = meas;

    const int full = d + mid + 1;
    DenseMatrix concat(d, full);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) concat(i, j) = cl.F1(i, j);
        for (int j = 0; j < mid; ++j) concat(i, d + j) = cl.F2(i, j);
        concat(i, full - 1) = cl.Lcol(i, 0);
    }
    cl.Erow = cl.Ktilde * concat;

    auto& ct = inst.ct;
    ct.P = random_spd(rng, d, 0.1);
    ct.Q1 = random_spd(rng, d, 0.0);
    if (mid > 0) ct.Q2 = random_spd(rng, mid, 0.0);
    ct.r1 = 0.1 + 5.0 * u01(rng);
    ct.r2 = 0.1 + 5.0 * u01(rng);
    ct.beta = 0.1 + 10.0 * u01(rng);
    ct.gamma = 0.05 + 2.0 * u01(rng);

    auto& m = inst.mult;
    m.alpha1 = 4.0 * cl.abs_c * (0.8 + 0.7 * u01(rng));
    m.alpha4 = 4.0 * cl.abs_c * (0.8 + 0.7 * u01(rng));
    m.alpha2 = 4.0 * (0.8 + 0.7 * u01(rng));
    m.alpha3 = 4.0 * (0.8 + 0.7 * u01(rng));
    return inst;
}

} // namespace refcheck
