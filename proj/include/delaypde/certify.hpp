#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "delaypde/dense_matrix.hpp"
#include "delaypde/errors.hpp"
#include "delaypde/linalg.hpp"
#include "delaypde/model.hpp"

namespace delaypde {
namespace certify {

/// Completion multipliers of the Lyapunov-Krasovskii derivative bound.  The
/// delayed cross terms are split by Young's inequality with weights alpha_i,
/// which cost a contraction factor
///   frak_c = 1 - (|c|/alpha1 + 1/alpha2 + 1/alpha3 + |c|/alpha4)/2
/// on the tail dissipation; the defaults alpha1 = alpha4 = 4|c|,
/// alpha2 = alpha3 = 4 leave frak_c = 1/2.
struct Multipliers {
    double alpha1 = 1.0, alpha2 = 4.0, alpha3 = 4.0, alpha4 = 1.0;

    static Multipliers defaults(double abs_c) {
        Multipliers m;
        m.alpha2 = m.alpha3 = 4.0;
        m.alpha1 = m.alpha4 = abs_c > 1e-12 ? 4.0 * abs_c : 1.0;
        return m;
    }

    double contraction(double abs_c) const {
        return 1.0 - 0.5 * (abs_c / alpha1 + 1.0 / alpha2 + 1.0 / alpha3 + abs_c / alpha4);
    }

    void validate(double abs_c) const {
        if (!(alpha1 > 0.0 && alpha2 > 0.0 && alpha3 > 0.0 && alpha4 > 0.0))
            throw ValidationError("multipliers must be positive");
        if (!(contraction(abs_c) > 0.0))
            throw ValidationError("multipliers leave no tail contraction (frak_c <= 0)");
    }
};

/// Decision variables of the stability certificate.  All constraints are
/// jointly homogeneous of degree one in (P, Q1, Q2, r1, r2, beta, gamma), so
/// certificates form a cone and any positive rescaling of a feasible point
/// stays feasible.
struct Certificate {
    DenseMatrix P{1, 1};  ///< 2 n0, symmetric positive definite
    DenseMatrix Q1{1, 1}; ///< 2 n0, symmetric positive semidefinite
    DenseMatrix Q2{1, 1}; ///< N - n0 (ignored when N == n0)
    double r1 = 0.0, r2 = 0.0, beta = 0.0, gamma = 0.0;
};

/// Assembled constraint blocks.  Feasibility means
///   Psi < 0,  Theta1 < 0,  Theta2 < 0,  Theta3 < 0,  Theta4 < 0,
/// plus Theta5 > 0 for the Neumann measurement, with P > 0, Q1, Q2 >= 0 and
/// positive scalars.
struct ConstraintSet {
    DenseMatrix Psi{1, 1};
    DenseMatrix Theta1{1, 1};
    DenseMatrix Theta2{1, 1};
    double Theta3 = 0.0, Theta4 = 0.0, Theta5 = 0.0;
    bool has_mid = false;
    bool has_theta5 = false;
};

namespace detail {

inline void require_symmetric(const DenseMatrix& s, const char* what) {
    if (s.rows != s.cols) throw ValidationError(std::string(what) + " must be square");
    if (asymmetry(s) > 1e-8 * (1.0 + s.norm_max()))
        throw ValidationError(std::string(what) + " is not symmetric");
}

/// Rank-one d x d outer product of a 1 x d row.
inline DenseMatrix outer_of_row(const DenseMatrix& row) {
    DenseMatrix m(row.cols, row.cols);
    for (int i = 0; i < row.cols; ++i)
        for (int j = 0; j < row.cols; ++j) m(i, j) = row(0, i) * row(0, j);
    return m;
}

} // namespace detail

inline ConstraintSet assemble(const model::ClosedLoop& cl, const Certificate& ct,
                              const Multipliers& mult) {
    const int d = 2 * cl.n0;
    const int mid = cl.n_ret - cl.n0;
    const int full = d + mid + 1;
    mult.validate(cl.abs_c);
    detail::require_symmetric(ct.P, "P");
    detail::require_symmetric(ct.Q1, "Q1");
    if (ct.P.rows != d || ct.Q1.rows != d)
        throw ValidationError("certificate blocks P, Q1 must have size 2 n0");
    if (mid > 0) {
        detail::require_symmetric(ct.Q2, "Q2");
        if (ct.Q2.rows != mid) throw ValidationError("certificate block Q2 must have size N - n0");
    }

    const double ac = cl.abs_c;
    const double frak_c = mult.contraction(ac);
    const double lam = cl.lambda_next;
    const auto KtK = detail::outer_of_row(cl.Ktilde);

    ConstraintSet cs;
    cs.has_mid = mid > 0;
    cs.has_theta5 = cl.measurement == model::Measurement::neumann;

    // Psi1 = F1' P + P F1 + |c| P + Q1 + alpha2 gamma ||R_N a||^2 Kt' Kt
    DenseMatrix psi1 = transpose(cl.F1) * ct.P + ct.P * cl.F1;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            psi1(i, j) += ac * ct.P(i, j) + ct.Q1(i, j) +
                          mult.alpha2 * ct.gamma * cl.r_a_sq * KtK(i, j);

    cs.Psi = DenseMatrix(full, full);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) cs.Psi(i, j) = psi1(i, j);
    if (mid > 0) {
        DenseMatrix pf2 = ct.P * cl.F2;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < mid; ++j) {
                cs.Psi(i, d + j) = pf2(i, j);
                cs.Psi(d + j, i) = pf2(i, j);
            }
        for (int i = 0; i < mid; ++i)
            for (int j = 0; j < mid; ++j) {
                double v = ct.Q2(i, j);
                if (i == j) v += ct.r1 * (2.0 * cl.F3(i, i) + ac);
                cs.Psi(d + i, d + j) = v;
            }
    }
    {
        DenseMatrix pl = ct.P * cl.Lcol;
        for (int i = 0; i < d; ++i) {
            cs.Psi(i, full - 1) = pl(i, 0);
            cs.Psi(full - 1, i) = pl(i, 0);
        }
        cs.Psi(full - 1, full - 1) = -ct.beta;
    }
    {
        const double w = 2.0 * mult.alpha3 * ct.gamma * cl.r_b_sq;
        for (int i = 0; i < full; ++i)
            for (int j = 0; j < full; ++j) cs.Psi(i, j) += w * cl.Erow(0, i) * cl.Erow(0, j);
    }

    // Theta1 = |c| P - Q1 + (2 alpha3 |c| + alpha4) gamma |c| ||R_N b||^2 Kt' Kt
    cs.Theta1 = DenseMatrix(d, d);
    const double w1 = (2.0 * mult.alpha3 * ac + mult.alpha4) * ct.gamma * ac * cl.r_b_sq;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            cs.Theta1(i, j) = ac * ct.P(i, j) - ct.Q1(i, j) + w1 * KtK(i, j);

    if (mid > 0) {
        cs.Theta2 = DenseMatrix(mid, mid);
        for (int i = 0; i < mid; ++i)
            for (int j = 0; j < mid; ++j)
                cs.Theta2(i, j) = (i == j ? ct.r1 * ac : 0.0) - ct.Q2(i, j);
    }

    cs.Theta3 = ct.gamma * mult.alpha1 * ac - ct.r2;

    if (cs.has_theta5) {
        const double e = cl.eps;
        cs.Theta4 = 2.0 * ct.gamma * (-frak_c * lam + cl.q_c) +
                    ct.beta * cl.m_phi * std::pow(lam, 0.5 + e) + ct.r2 / lam;
        cs.Theta5 = 2.0 * ct.gamma * frak_c - ct.beta * cl.m_phi / std::pow(lam, 0.5 - e);
    } else {
        cs.Theta4 = 2.0 * ct.gamma * (-frak_c * lam + cl.q_c) + ct.beta * cl.m_phi + ct.r2 / lam;
    }
    return cs;
}

/// One verified constraint: feasibility requires value <= allowed.
struct ConstraintMargin {
    std::string name;
    double value = 0.0;
    double allowed = 0.0;
    bool ok = false;
};

struct CheckReport {
    bool feasible = false;
    std::vector<ConstraintMargin> margins;
    double worst_excess = -1e300; ///< max(value - allowed); <= 0 iff feasible

    const ConstraintMargin* find(const std::string& name) const {
        for (const auto& m : margins)
            if (m.name == name) return &m;
        return nullptr;
    }
};

/// Verifies a certificate against the closed-loop data with strict margins:
/// each negativity constraint must clear an epsilon proportional to its own
/// magnitude, so "feasible" is stable under tiny perturbations of the data.
inline CheckReport check_certificate(const model::ClosedLoop& cl, const Certificate& ct,
                                     const Multipliers& mult) {
    auto cs = assemble(cl, ct, mult);
    CheckReport rep;
    auto push = [&rep](std::string name, double value, double allowed) {
        ConstraintMargin m;
        m.name = std::move(name);
        m.value = value;
        m.allowed = allowed;
        m.ok = value <= allowed;
        rep.worst_excess = std::max(rep.worst_excess, value - allowed);
        rep.margins.push_back(std::move(m));
    };
    auto strict = [](const DenseMatrix& m) { return 1e-7 * (1.0 + m.norm_max()); };

    // P > 0 by Cholesky and by eigenvalue margin.
    const bool chol_ok = cholesky_spd(ct.P);
    auto p_eigs = symmetric_eigenvalues(ct.P);
    push("P_pos", -(chol_ok ? p_eigs.front() : -1.0), -1e-7 * (1.0 + ct.P.norm_max()));

    auto q1_eigs = symmetric_eigenvalues(ct.Q1);
    push("Q1_psd", -q1_eigs.front(), 1e-9 * (1.0 + ct.Q1.norm_max()));
    if (cs.has_mid) {
        auto q2_eigs = symmetric_eigenvalues(ct.Q2);
        push("Q2_psd", -q2_eigs.front(), 1e-9 * (1.0 + ct.Q2.norm_max()));
    }

    push("Psi", symmetric_eigenvalues(cs.Psi).back(), -strict(cs.Psi));
    push("Theta1", symmetric_eigenvalues(cs.Theta1).back(), -strict(cs.Theta1));
    if (cs.has_mid) push("Theta2", symmetric_eigenvalues(cs.Theta2).back(), -strict(cs.Theta2));

    const double s3 = 1e-7 * (1.0 + ct.gamma * mult.alpha1 * cl.abs_c + ct.r2);
    push("Theta3", cs.Theta3, -s3);
    const double s4 = 1e-7 * (1.0 + std::abs(cs.Theta4));
    push("Theta4", cs.Theta4, -s4);
    if (cs.has_theta5) {
        const double s5 = 1e-7 * (1.0 + std::abs(cs.Theta5));
        push("Theta5", -cs.Theta5, -s5);
    }

    push("r1_pos", -ct.r1, 0.0);
    push("r2_pos", -ct.r2, 0.0);
    push("beta_pos", -ct.beta, 0.0);
    push("gamma_pos", -ct.gamma, 0.0);

    rep.feasible = true;
    for (const auto& m : rep.margins) rep.feasible = rep.feasible && m.ok;
    return rep;
}

/// Verifies that the per-mode tail decay terms are dominated by Theta4 for
/// every mode past N, via the monotone-chain argument rather than sampling
/// alone: the Dirichlet rate is decreasing in lambda, the Neumann rate is
/// squeezed through Theta5.  A few sampled lambdas double-check the algebra.
struct TailDomination {
    bool holds = false;
    double worst_slack = 0.0; ///< max sampled Gamma - Theta4, <= 0 when holds
};

inline TailDomination check_tail_domination(const model::ClosedLoop& cl, const Certificate& ct,
                                            const Multipliers& mult) {
    const double frak_c = mult.contraction(cl.abs_c);
    const bool neumann = cl.measurement == model::Measurement::neumann;
    auto cs = assemble(cl, ct, mult);

    TailDomination td;
    if (neumann && !(cs.Theta5 > 0.0)) return td; // chain needs Theta5 > 0

    auto gamma_rate = [&](double lam) {
        if (neumann)
            return 2.0 * ct.gamma * (-frak_c * lam + cl.q_c) +
                   ct.beta * cl.m_phi * std::pow(lam, 0.5 + cl.eps) + ct.r2 / lam;
        return 2.0 * ct.gamma * (-frak_c * lam + cl.q_c) + ct.beta * cl.m_phi + ct.r2 / lam;
    };

    td.holds = true;
    td.worst_slack = -1e300;
    const double tol = 1e-9 * (1.0 + std::abs(cs.Theta4));
    for (double f : {1.0, 1.5, 2.0, 4.0, 10.0, 100.0, 1e4}) {
        const double slack = gamma_rate(cl.lambda_next * f) - cs.Theta4;
        td.worst_slack = std::max(td.worst_slack, slack);
        if (slack > tol) td.holds = false;
    }
    return td;
}

/// Tuning knobs of the constructive candidate.  The base point follows the
/// closed-form recipe; the multipliers scan the homogeneous cone along the
/// directions that matter for the coupled block Psi.
struct CandidateTuning {
    double beta_mult = 1.0;
    double gamma_mult = 1.0;
    double r2_mult = 1.0;
    double tau_r = 0.1;
};

/// Closed-form candidate built from the Lyapunov solution of the finite
/// block.  Requires F1 + |c| I Hurwitz and a positive margin
/// delta = lambda_{n0+1} - q_c - |c|; by construction Theta1, Theta2, Theta3
/// are then negative and Psi's middle block sits below -beta I.  The coupled
/// Psi and the tail constraints Theta4/Theta5 remain to be checked.
inline Certificate constructive_candidate(const model::ClosedLoop& cl, const Multipliers& mult,
                                          const CandidateTuning& tune = {}) {
    const int d = 2 * cl.n0;
    const double ac = cl.abs_c;
    if (!(ac > 1e-12))
        throw ValidationError("certification targets a nonzero delay coupling");
    mult.validate(ac);

    DenseMatrix f1c = cl.F1;
    for (int i = 0; i < d; ++i) f1c(i, i) += ac;
    if (!(spectral_abscissa(f1c) < 0.0))
        throw NumericalError("constructive candidate: F1 + |c| I is not Hurwitz");

    Certificate ct;
    ct.P = solve_lyapunov(f1c, DenseMatrix::identity(d));

    const double n_ret = static_cast<double>(cl.n_ret);
    const bool neumann = cl.measurement == model::Measurement::neumann;
    const double beta0 = neumann ? std::pow(n_ret, 0.125) : std::sqrt(n_ret);
    const double gamma0 = neumann ? std::pow(n_ret, -0.1875) : 1.0 / n_ret;
    ct.beta = beta0 * tune.beta_mult;
    ct.gamma = gamma0 * tune.gamma_mult;

    const double delta = cl.has_mid ? -(cl.F3(0, 0) + ac) : (cl.lambda_next - cl.q_c - ac);
    if (!(delta > 0.0))
        throw NumericalError("constructive candidate: no margin past the controlled modes");
    ct.r1 = ct.beta / delta;

    const int mid = cl.n_ret - cl.n0;
    if (mid > 0) {
        ct.Q2 = DenseMatrix(mid, mid);
        const double q2diag = (1.0 + delta / ac) * ct.r1 * ac;
        for (int i = 0; i < mid; ++i) ct.Q2(i, i) = q2diag;
    }

    const double pmax = symmetric_eigenvalues(ct.P).back();
    const double eps1 = 1.0 / (2.0 * ac * pmax);
    const double w1 = (2.0 * mult.alpha3 * ac + mult.alpha4) * ct.gamma * cl.r_b_sq;
    ct.Q1 = DenseMatrix(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            ct.Q1(i, j) = (1.0 + eps1) * ac *
                          (ct.P(i, j) + w1 * cl.Ktilde(0, i) * cl.Ktilde(0, j));

    ct.r2 = (1.0 + tune.tau_r) * ct.gamma * mult.alpha1 * ac * tune.r2_mult;
    return ct;
}

struct SearchOptions {
    std::vector<int> ladder;                 ///< retained counts to try; auto when empty
    std::vector<double> beta_mults = {1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7};
    std::vector<double> gamma_mults = {0.3, 1.0, 3.0, 10.0, 30.0, 100.0};
    std::vector<double> r2_mults = {1.0, 10.0, 100.0};
    double tau_r = 0.1;
    double eps_neumann = 0.125;
    int max_n = 64;
    /// Multiplier overrides; negative entries keep the standard values.
    double alpha1 = -1.0;
    double alpha2 = -1.0;
    double alpha3 = -1.0;
    double alpha4 = -1.0;
};

struct SearchResult {
    bool feasible = false;
    int n_ret = 0;
    int n0 = 0;
    int trials = 0;
    Certificate cert;
    Multipliers mult;
    CheckReport report;
    model::ClosedLoop loop;
    double best_excess = 1e300; ///< smallest constraint excess seen, over all trials
    std::string note;
};

/// Scans retained counts and candidate tunings for a verified certificate.
/// Returns on the first feasible point; otherwise reports the least-violating
/// trial for diagnostics.  The modal plant must carry at least max_n + 1
/// modes so every ladder entry has its next eigenvalue available.
inline SearchResult search_certificate(const model::DelayPlant& plant, const model::ModalPlant& mp,
                                       const model::Gains& gains, SearchOptions opts = {}) {
    SearchResult out;
    out.n0 = gains.n0;
    out.mult = Multipliers::defaults(std::abs(mp.c));
    if (opts.alpha1 > 0.0) out.mult.alpha1 = opts.alpha1;
    if (opts.alpha2 > 0.0) out.mult.alpha2 = opts.alpha2;
    if (opts.alpha3 > 0.0) out.mult.alpha3 = opts.alpha3;
    if (opts.alpha4 > 0.0) out.mult.alpha4 = opts.alpha4;
    out.mult.validate(std::abs(mp.c));

    std::vector<int> ladder = opts.ladder;
    if (ladder.empty()) ladder = {4, 8, 12, 16, 24, 32, 48, 64};
    for (int n_ret : ladder) {
        if (n_ret <= gains.n0 || n_ret > opts.max_n) continue;
        if (n_ret + 1 > mp.count()) break;
        model::TailData tail;
        try {
            tail = model::compute_tail_data(plant, n_ret, opts.eps_neumann);
        } catch (const NumericalError&) {
            continue;
        }
        auto cl = model::build_closed_loop(mp, gains, n_ret, tail);

        CandidateTuning tune;
        tune.tau_r = opts.tau_r;
        for (double bm : opts.beta_mults)
            for (double gm : opts.gamma_mults)
                for (double rm : opts.r2_mults) {
                    tune.beta_mult = bm;
                    tune.gamma_mult = gm;
                    tune.r2_mult = rm;
                    Certificate ct;
                    try {
                        ct = constructive_candidate(cl, out.mult, tune);
                    } catch (const NumericalError&) {
                        out.note = "candidate construction failed at N = " + std::to_string(n_ret);
                        goto next_n; // Hurwitz/margin failure is N-independent of tuning
                    }
                    ++out.trials;
                    auto rep = check_certificate(cl, ct, out.mult);
                    if (rep.worst_excess < out.best_excess) {
                        out.best_excess = rep.worst_excess;
                        out.n_ret = n_ret;
                        out.cert = ct;
                        out.report = rep;
                        out.loop = cl;
                    }
                    if (rep.feasible) {
                        out.feasible = true;
                        out.n_ret = n_ret;
                        out.cert = ct;
                        out.report = rep;
                        out.loop = cl;
                        return out;
                    }
                }
    next_n:;
    }
    return out;
}

} // namespace certify
} // namespace delaypde
