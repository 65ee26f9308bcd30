#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "delaypde/dense_matrix.hpp"
#include "delaypde/errors.hpp"
#include "delaypde/tridiag.hpp"

namespace delaypde {

// ---------------------------------------------------------------------------
// General (nonsymmetric) eigenvalues: balance + Householder reduction to
// Hessenberg form + Francis double-shift QR.  Only eigenvalues are needed
// anywhere in this library (spectral-abscissa checks, pole-placement
// verification, Hurwitz tests), which keeps the implementation compact.
// ---------------------------------------------------------------------------

namespace detail {

inline void balance_in_place(DenseMatrix& a) {
    const int n = a.rows;
    const double radix = 2.0, sqrdx = radix * radix;
    bool done = false;
    int guard = 0;
    while (!done && guard++ < 100) {
        done = true;
        for (int i = 0; i < n; ++i) {
            double r = 0.0, c = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                c += std::abs(a(j, i));
                r += std::abs(a(i, j));
            }
            if (c != 0.0 && r != 0.0) {
                double g = r / radix, f = 1.0;
                const double s = c + r;
                while (c < g) { f *= radix; c *= sqrdx; }
                g = r * radix;
                while (c > g) { f /= radix; c /= sqrdx; }
                if ((c + r) / f < 0.95 * s) {
                    done = false;
                    const double ginv = 1.0 / f;
                    for (int j = 0; j < n; ++j) a(i, j) *= ginv;
                    for (int j = 0; j < n; ++j) a(j, i) *= f;
                }
            }
        }
    }
}

/// Householder similarity reduction to upper Hessenberg form (in place).
/// For symmetric input the result is numerically tridiagonal, which the dense
/// symmetric eigensolver below exploits.
inline void hessenberg_in_place(DenseMatrix& a) {
    const int n = a.rows;
    std::vector<double> v(n), w(n);
    for (int k = 0; k < n - 2; ++k) {
        double xnorm = 0.0;
        for (int i = k + 1; i < n; ++i) xnorm = std::max(xnorm, std::abs(a(i, k)));
        if (xnorm == 0.0) continue;
        double s = 0.0;
        for (int i = k + 1; i < n; ++i) {
            v[i] = a(i, k) / xnorm;
            s += v[i] * v[i];
        }
        double alpha = -std::copysign(std::sqrt(s), v[k + 1]);
        const double vk = v[k + 1] - alpha;
        double vnorm2 = s - v[k + 1] * v[k + 1] + vk * vk;
        if (vnorm2 == 0.0) continue;
        v[k + 1] = vk;
        // Apply (I - 2 v v^T / v^T v) from left and right.
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int i = k + 1; i < n; ++i) dot += v[i] * a(i, j);
            const double f = 2.0 * dot / vnorm2;
            for (int i = k + 1; i < n; ++i) a(i, j) -= f * v[i];
        }
        for (int i = 0; i < n; ++i) {
            double dot = 0.0;
            for (int j = k + 1; j < n; ++j) dot += a(i, j) * v[j];
            const double f = 2.0 * dot / vnorm2;
            for (int j = k + 1; j < n; ++j) a(i, j) -= f * v[j];
        }
        for (int i = k + 2; i < n; ++i) a(i, k) = 0.0;
        a(k + 1, k) = alpha * xnorm;
    }
}

inline double sign_like(double a, double b) { return b >= 0.0 ? std::abs(a) : -std::abs(a); }

/// Francis double-shift QR on an upper Hessenberg matrix.  Destroys `a`.
/// Iteration budget: 30 sweeps per eigenvalue and a global cap of 100*n,
/// whichever bites first; exceeding either raises NumericalError with the
/// count of eigenvalues recovered so far.
inline void hqr_in_place(DenseMatrix& a, std::vector<std::complex<double>>& out) {
    const int n = a.rows;
    const double eps = std::numeric_limits<double>::epsilon();
    int total_iters = 0;
    const int total_cap = 100 * n;
    double anorm = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::abs(a(i, j));
    if (anorm == 0.0) {
        out.assign(n, {0.0, 0.0});
        return;
    }
    int nn = n - 1;
    double t = 0.0;
    out.assign(n, {0.0, 0.0});
    while (nn >= 0) {
        int its = 0;
        int l;
        do {
            for (l = nn; l >= 1; --l) {
                double s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
                if (s == 0.0) s = anorm;
                if (std::abs(a(l, l - 1)) <= eps * s) {
                    a(l, l - 1) = 0.0;
                    break;
                }
            }
            double x = a(nn, nn);
            if (l == nn) {
                out[nn--] = {x + t, 0.0};
            } else {
                double y = a(nn - 1, nn - 1);
                double w = a(nn, nn - 1) * a(nn - 1, nn);
                if (l == nn - 1) {
                    double p = 0.5 * (y - x);
                    double q = p * p + w;
                    double z = std::sqrt(std::abs(q));
                    x += t;
                    if (q >= 0.0) {
                        z = p + sign_like(z, p);
                        double r1 = x + z;
                        double r2 = (z != 0.0) ? x - w / z : x + z;
                        out[nn - 1] = {r1, 0.0};
                        out[nn] = {r2, 0.0};
                    } else {
                        out[nn - 1] = {x + p, z};
                        out[nn] = {x + p, -z};
                    }
                    nn -= 2;
                } else {
                    if (its == 30 || ++total_iters > total_cap)
                        throw NumericalError(
                            "eig_general: QR iteration cap exceeded with " +
                            std::to_string(n - 1 - nn) + " of " + std::to_string(n) +
                            " eigenvalues deflated");
                    if (its == 10 || its == 20) {
                        t += x;
                        for (int i = 0; i <= nn; ++i) a(i, i) -= x;
                        double s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
                        y = x = 0.75 * s;
                        w = -0.4375 * s * s;
                    }
                    ++its;
                    int m;
                    double p = 0.0, q = 0.0, r = 0.0, z = 0.0;
                    for (m = nn - 2; m >= l; --m) {
                        z = a(m, m);
                        double rr = x - z;
                        double ss = y - z;
                        p = (rr * ss - w) / a(m + 1, m) + a(m, m + 1);
                        q = a(m + 1, m + 1) - z - rr - ss;
                        r = a(m + 2, m + 1);
                        double sc = std::abs(p) + std::abs(q) + std::abs(r);
                        p /= sc;
                        q /= sc;
                        r /= sc;
                        if (m == l) break;
                        const double u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
                        const double v = std::abs(p) * (std::abs(a(m - 1, m - 1)) + std::abs(z) +
                                                        std::abs(a(m + 1, m + 1)));
                        if (u <= eps * v) break;
                    }
                    for (int i = m + 2; i <= nn; ++i) {
                        a(i, i - 2) = 0.0;
                        if (i != m + 2) a(i, i - 3) = 0.0;
                    }
                    for (int k = m; k <= nn - 1; ++k) {
                        if (k != m) {
                            p = a(k, k - 1);
                            q = a(k + 1, k - 1);
                            r = (k < nn - 1) ? a(k + 2, k - 1) : 0.0;
                            x = std::abs(p) + std::abs(q) + std::abs(r);
                            if (x != 0.0) { p /= x; q /= x; r /= x; }
                        }
                        double s = sign_like(std::sqrt(p * p + q * q + r * r), p);
                        if (s == 0.0) continue;
                        if (k == m) {
                            if (l != m) a(k, k - 1) = -a(k, k - 1);
                        } else {
                            a(k, k - 1) = -s * x;
                        }
                        p += s;
                        x = p / s;
                        double yy = q / s;
                        z = r / s;
                        q /= p;
                        r /= p;
                        for (int j = k; j <= nn; ++j) {
                            double pp = a(k, j) + q * a(k + 1, j);
                            if (k < nn - 1) {
                                pp += r * a(k + 2, j);
                                a(k + 2, j) -= pp * z;
                            }
                            a(k + 1, j) -= pp * yy;
                            a(k, j) -= pp * x;
                        }
                        const int mmin = std::min(nn, k + 3);
                        for (int i = l; i <= mmin; ++i) {
                            double pp = x * a(i, k) + yy * a(i, k + 1);
                            if (k < nn - 1) {
                                pp += z * a(i, k + 2);
                                a(i, k + 2) -= pp * r;
                            }
                            a(i, k + 1) -= pp * q;
                            a(i, k) -= pp;
                        }
                    }
                }
            }
        } while (l < nn - 1 && nn >= 0);
    }
}

} // namespace detail

/// All eigenvalues of a general real square matrix, unordered apart from a
/// final sort by (real, imag) for reproducibility.
inline std::vector<std::complex<double>> eig_general(DenseMatrix a) {
    if (a.rows != a.cols) throw ValidationError("eig_general: matrix not square");
    if (!a.is_finite()) throw ValidationError("eig_general: non-finite entries");
    if (a.rows == 1) return {std::complex<double>(a(0, 0), 0.0)};
    detail::balance_in_place(a);
    detail::hessenberg_in_place(a);
    std::vector<std::complex<double>> ev;
    detail::hqr_in_place(a, ev);
    std::sort(ev.begin(), ev.end(), [](const auto& x, const auto& y) {
        if (x.real() != y.real()) return x.real() < y.real();
        return x.imag() < y.imag();
    });
    return ev;
}

/// Spectral abscissa max Re(mu_i).
inline double spectral_abscissa(const DenseMatrix& a) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& z : eig_general(a)) m = std::max(m, z.real());
    return m;
}

/// Eigenvalues of a symmetric matrix (ascending).  Householder reduction of
/// the symmetric matrix yields a tridiagonal form; the QL solver finishes.
inline std::vector<double> symmetric_eigenvalues(const DenseMatrix& s) {
    if (s.rows != s.cols) throw ValidationError("symmetric_eigenvalues: matrix not square");
    const double tol = 1e-10 * (1.0 + s.norm_max());
    if (asymmetry(s) > tol)
        throw ValidationError("symmetric_eigenvalues: input asymmetric beyond tolerance");
    DenseMatrix a = symmetrize(s);
    if (a.rows == 1) return {a(0, 0)};
    detail::hessenberg_in_place(a);
    const int n = a.rows;
    std::vector<double> d(n), e(n - 1);
    for (int i = 0; i < n; ++i) d[i] = a(i, i);
    for (int i = 0; i < n - 1; ++i) e[i] = 0.5 * (a(i + 1, i) + a(i, i + 1));
    tridiag_eigenvalues(d, e);
    return d;
}

/// Definiteness verdict used by the feasibility checks.
struct DefinitenessReport {
    bool negative_definite = false; ///< true iff S + margin*I admits -(Cholesky)
    double max_eigenvalue = 0.0;    ///< largest eigenvalue of the symmetrized S
};

/// Tests S <= -margin*I by attempting a Cholesky factorization of
/// -S - margin*I, and reports the largest eigenvalue of S alongside.
/// Default margin: 1e-9 * max-abs entry, so "negative definite" always means
/// strictly negative with a scale-aware gap.
inline DefinitenessReport is_negative_definite(const DenseMatrix& s, double margin = -1.0) {
    if (s.rows != s.cols) throw ValidationError("is_negative_definite: matrix not square");
    const double tol = 1e-8 * (1.0 + s.norm_max());
    if (asymmetry(s) > tol)
        throw ValidationError("is_negative_definite: input asymmetric beyond tolerance");
    if (margin < 0.0) margin = 1e-9 * s.norm_max();
    DenseMatrix m = symmetrize(s);
    DenseMatrix shifted(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j)
            shifted(i, j) = -m(i, j) - (i == j ? margin : 0.0);
    DefinitenessReport rep;
    rep.negative_definite = cholesky_spd(shifted);
    const auto ev = symmetric_eigenvalues(m);
    rep.max_eigenvalue = ev.back();
    return rep;
}

// ---------------------------------------------------------------------------
// Lyapunov equation A^T P + P A = -Q via Kronecker vectorization.  Fine for
// the small coupled blocks this library produces (dimension tens at most).
// ---------------------------------------------------------------------------

inline DenseMatrix solve_lyapunov(const DenseMatrix& a, const DenseMatrix& q) {
    if (a.rows != a.cols || q.rows != q.cols || a.rows != q.rows)
        throw ValidationError("solve_lyapunov: shape mismatch");
    const double tol = 1e-9 * (1.0 + q.norm_max());
    if (asymmetry(q) > tol) throw ValidationError("solve_lyapunov: Q asymmetric");
    if (spectral_abscissa(a) >= 0.0)
        throw NumericalError("solve_lyapunov: A is not Hurwitz");
    const int n = a.rows;
    const int nn = n * n;
    // Column-major vec(P): index (row k, col l) -> l*n + k.
    DenseMatrix m(nn, nn);
    std::vector<double> rhs(nn);
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) {
            const int row = l * n + k;
            for (int i = 0; i < n; ++i) {
                m(row, l * n + i) += a(i, k); // (A^T P)_{kl}
                m(row, i * n + k) += a(i, l); // (P A)_{kl}
            }
            rhs[row] = -q(k, l);
        }
    const auto f = lu_factor(std::move(m));
    const auto v = lu_solve(f, rhs);
    DenseMatrix p(n, n);
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) p(k, l) = v[l * n + k];
    p = symmetrize(p);
    // Residual check guards against ill-conditioned vectorized systems.
    DenseMatrix res = transpose(a) * p + p * a + q;
    if (res.norm_max() > 1e-8 * (1.0 + q.norm_max()))
        throw NumericalError("solve_lyapunov: residual check failed");
    return p;
}

// ---------------------------------------------------------------------------
// Controllability and single-input/single-output pole placement.
// ---------------------------------------------------------------------------

/// Rank report for the controllability (or, transposed, observability) matrix
/// [B, AB, ..., A^{n-1}B], computed with a column-pivoted Householder QR after
/// normalizing columns.  `smallest_scaled_pivot` is the usual QR proxy for the
/// smallest singular value of the scaled matrix.
struct KalmanRankReport {
    int rank = 0;
    double smallest_scaled_pivot = 0.0;
};

inline KalmanRankReport kalman_rank(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != a.cols) throw ValidationError("kalman_rank: A not square");
    if (b.rows != a.rows) throw ValidationError("kalman_rank: B row mismatch");
    const int n = a.rows, mb = b.cols;
    DenseMatrix k(n, n * mb);
    DenseMatrix block = b;
    for (int p = 0; p < n; ++p) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < mb; ++j) k(i, p * mb + j) = block(i, j);
        block = a * block;
    }
    // Column normalization keeps the pivot magnitudes scale-free.
    for (int j = 0; j < k.cols; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += k(i, j) * k(i, j);
        s = std::sqrt(s);
        if (s > 0.0)
            for (int i = 0; i < n; ++i) k(i, j) /= s;
    }
    const int cols = k.cols;
    std::vector<int> perm(cols);
    for (int j = 0; j < cols; ++j) perm[j] = j;
    std::vector<double> diag;
    const int steps = std::min(n, cols);
    for (int step = 0; step < steps; ++step) {
        int best = step;
        double best_norm = -1.0;
        for (int j = step; j < cols; ++j) {
            double s = 0.0;
            for (int i = step; i < n; ++i) s += k(i, j) * k(i, j);
            if (s > best_norm) { best_norm = s; best = j; }
        }
        if (best != step) {
            for (int i = 0; i < n; ++i) std::swap(k(i, step), k(i, best));
            std::swap(perm[step], perm[best]);
        }
        double xnorm = std::sqrt(best_norm);
        diag.push_back(xnorm);
        if (xnorm == 0.0) continue;
        // Householder annihilation below the diagonal of this column.
        std::vector<double> v(n, 0.0);
        double s = 0.0;
        for (int i = step; i < n; ++i) { v[i] = k(i, step); s += v[i] * v[i]; }
        double alpha = -std::copysign(std::sqrt(s), v[step]);
        v[step] -= alpha;
        double vn2 = 0.0;
        for (int i = step; i < n; ++i) vn2 += v[i] * v[i];
        if (vn2 == 0.0) continue;
        for (int j = step; j < cols; ++j) {
            double dot = 0.0;
            for (int i = step; i < n; ++i) dot += v[i] * k(i, j);
            const double f = 2.0 * dot / vn2;
            for (int i = step; i < n; ++i) k(i, j) -= f * v[i];
        }
        diag.back() = std::abs(k(step, step));
    }
    KalmanRankReport rep;
    const double ref = diag.empty() ? 0.0 : diag.front();
    const double thresh = std::max(n, cols) * std::numeric_limits<double>::epsilon() * ref;
    for (double dgn : diag)
        if (dgn > thresh) ++rep.rank;
    rep.smallest_scaled_pivot = diag.empty() ? 0.0 : diag.back() / (ref > 0.0 ? ref : 1.0);
    return rep;
}

/// Pole placement for single-input (feedback) or single-output (observer)
/// pairs via Ackermann's formula.  Targets must be closed under conjugation.
///
/// feedback: returns a 1-by-n row K with eig(A + b K) = targets.
/// observer: call with (A^T, c^T); returns an n-by-1 column L with
///           eig(A - L c) = targets.
enum class PlacementMode { feedback, observer };

inline DenseMatrix place_poles_siso(const DenseMatrix& a, const DenseMatrix& b,
                                    const std::vector<std::complex<double>>& targets,
                                    PlacementMode mode) {
    if (a.rows != a.cols) throw ValidationError("place_poles_siso: A not square");
    const int n = a.rows;
    if (b.rows != n || b.cols != 1)
        throw ValidationError("place_poles_siso: input vector must be n-by-1");
    if (static_cast<int>(targets.size()) != n)
        throw ValidationError("place_poles_siso: need exactly n targets");
    // Closure under conjugation: multiset of conjugates equals the multiset.
    {
        std::vector<std::complex<double>> sorted = targets, conj = targets;
        for (auto& z : conj) z = std::conj(z);
        auto lt = [](const std::complex<double>& x, const std::complex<double>& y) {
            if (x.real() != y.real()) return x.real() < y.real();
            return x.imag() < y.imag();
        };
        std::sort(sorted.begin(), sorted.end(), lt);
        std::sort(conj.begin(), conj.end(), lt);
        for (int i = 0; i < n; ++i)
            if (std::abs(sorted[i] - conj[i]) > 1e-12 * (1.0 + std::abs(sorted[i])))
                throw ValidationError("place_poles_siso: targets not closed under conjugation");
    }
    const auto ctrb = kalman_rank(a, b);
    if (ctrb.rank < n)
        throw ValidationError("place_poles_siso: pair not controllable (rank " +
                              std::to_string(ctrb.rank) + " of " + std::to_string(n) + ")");
    // Desired monic characteristic polynomial, coefficients ascending.
    std::vector<std::complex<double>> poly{1.0};
    for (const auto& t : targets) {
        std::vector<std::complex<double>> next(poly.size() + 1, 0.0);
        for (std::size_t i = 0; i < poly.size(); ++i) {
            next[i + 1] += poly[i];
            next[i] -= t * poly[i];
        }
        poly = std::move(next);
    }
    std::vector<double> coeff(poly.size());
    for (std::size_t i = 0; i < poly.size(); ++i) {
        if (std::abs(poly[i].imag()) > 1e-9 * (1.0 + std::abs(poly[i])))
            throw NumericalError("place_poles_siso: characteristic polynomial not real");
        coeff[i] = poly[i].real();
    }
    // phi(A) = A^n + c_{n-1} A^{n-1} + ... + c_0 I.
    DenseMatrix phi(n, n);
    {
        DenseMatrix power = DenseMatrix::identity(n);
        for (int d = 0; d <= n; ++d) {
            const double cd = (d == n) ? 1.0 : coeff[d];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) phi(i, j) += cd * power(i, j);
            if (d < n) power = power * a;
        }
    }
    // Controllability matrix and the Ackermann row e_n^T Ctrb^{-1} phi(A).
    DenseMatrix ctrbm(n, n);
    {
        DenseMatrix col = b;
        for (int p = 0; p < n; ++p) {
            for (int i = 0; i < n; ++i) ctrbm(i, p) = col(i, 0);
            col = a * col;
        }
    }
    LuFactors f;
    try {
        f = lu_factor(transpose(ctrbm));
    } catch (const NumericalError&) {
        throw ValidationError("place_poles_siso: controllability matrix numerically singular");
    }
    std::vector<double> en(n, 0.0);
    en[n - 1] = 1.0;
    const auto y = lu_solve(f, en); // solves Ctrb^T y = e_n, i.e. y^T = e_n^T Ctrb^{-1}
    DenseMatrix gain(1, n);
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += y[i] * phi(i, j);
        gain(0, j) = -s; // sign convention: closed loop is A + b*gain
    }
    // Verify placement against the requested targets.
    DenseMatrix closed = a;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) closed(i, j) += b(i, 0) * gain(0, j);
    auto achieved = eig_general(closed);
    std::vector<std::complex<double>> want = targets;
    auto lt = [](const std::complex<double>& x, const std::complex<double>& y) {
        if (x.real() != y.real()) return x.real() < y.real();
        return x.imag() < y.imag();
    };
    std::sort(want.begin(), want.end(), lt);
    for (int i = 0; i < n; ++i)
        if (std::abs(achieved[i] - want[i]) > 1e-6 * (1.0 + std::abs(want[i])))
            throw NumericalError("place_poles_siso: placement verification failed");
    if (mode == PlacementMode::feedback) return gain;
    // Observer mode: caller passed (A^T, c^T); gain solves eig(A^T + c^T gain).
    // The observer gain L = -gain^T gives eig(A - L c) = targets.
    DenseMatrix l(n, 1);
    for (int i = 0; i < n; ++i) l(i, 0) = -gain(0, i);
    return l;
}

} // namespace delaypde
