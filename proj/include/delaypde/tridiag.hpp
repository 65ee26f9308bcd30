#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "delaypde/errors.hpp"

namespace delaypde {

/// Symmetric tridiagonal eigenvalue solver: QL iterations with implicit
/// (Wilkinson) shifts.  `d` holds the diagonal, `e` the n-1 subdiagonal
/// entries; on return `d` holds the eigenvalues in ascending order.
///
/// This is the workhorse behind both the Sturm-Liouville discretization and
/// the dense symmetric eigensolver, so it has to stay robust for n in the
/// thousands.  Eigenvectors are deliberately not accumulated here; callers
/// that need a few of them use inverse_iteration below, which is much cheaper
/// than rotating a full n-by-n basis through every sweep.
inline void tridiag_eigenvalues(std::vector<double>& d, std::vector<double>& e,
                                int max_sweeps_per_eigenvalue = 50) {
    const int n = static_cast<int>(d.size());
    if (n == 0) throw ValidationError("tridiag_eigenvalues: empty matrix");
    if (static_cast<int>(e.size()) < n - 1)
        throw ValidationError("tridiag_eigenvalues: subdiagonal length mismatch");
    e.resize(n, 0.0); // scratch slot e[n-1]

    const double eps = std::numeric_limits<double>::epsilon();
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= eps * dd) break;
            }
            if (m != l) {
                if (iter++ == max_sweeps_per_eigenvalue)
                    throw NumericalError("tridiag_eigenvalues: no convergence after " +
                                         std::to_string(iter) + " sweeps at index " +
                                         std::to_string(l));
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                int i;
                for (i = m - 1; i >= l; --i) {
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) { // recover gracefully and restart the sweep
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                }
                if (r == 0.0 && i >= l) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
    std::sort(d.begin(), d.end());
}

/// Solves (T - lambda I) x = b for a symmetric tridiagonal T given by (d, e),
/// using Gaussian elimination with partial pivoting (one fill-in band).
/// Intended for the nearly singular systems that arise in inverse iteration.
inline std::vector<double> tridiag_shifted_solve(const std::vector<double>& d,
                                                 const std::vector<double>& e, double lambda,
                                                 std::vector<double> b) {
    const int n = static_cast<int>(d.size());
    std::vector<double> diag(n), sup1(n, 0.0), sup2(n, 0.0), sub(n, 0.0);
    for (int i = 0; i < n; ++i) diag[i] = d[i] - lambda;
    for (int i = 0; i < n - 1; ++i) {
        sub[i] = e[i];  // entry (i+1, i)
        sup1[i] = e[i]; // entry (i, i+1)
    }
    const double tiny = std::numeric_limits<double>::min() * 16.0;
    for (int k = 0; k < n - 1; ++k) {
        if (std::abs(sub[k]) > std::abs(diag[k])) {
            // pivot: swap row k with row k+1
            std::swap(diag[k], sub[k]);
            std::swap(sup1[k], diag[k + 1]);
            if (k < n - 2) std::swap(sup2[k], sup1[k + 1]);
            std::swap(b[k], b[k + 1]);
        }
        if (std::abs(diag[k]) < tiny) diag[k] = std::copysign(tiny, diag[k] == 0.0 ? 1.0 : diag[k]);
        const double m = sub[k] / diag[k];
        diag[k + 1] -= m * sup1[k];
        if (k < n - 2) sup1[k + 1] -= m * sup2[k];
        b[k + 1] -= m * b[k];
    }
    if (std::abs(diag[n - 1]) < tiny)
        diag[n - 1] = std::copysign(tiny, diag[n - 1] == 0.0 ? 1.0 : diag[n - 1]);
    std::vector<double> x(n);
    for (int i = n - 1; i >= 0; --i) {
        double v = b[i];
        if (i + 1 < n) v -= sup1[i] * x[i + 1];
        if (i + 2 < n) v -= sup2[i] * x[i + 2];
        x[i] = v / diag[i];
    }
    return x;
}

/// Eigenvector of a symmetric tridiagonal matrix for an eigenvalue already
/// computed to full accuracy.  Two rounds of inverse iteration from a fixed
/// deterministic start are ample when eigenvalues are simple and well
/// separated, which is guaranteed for the Sturm-Liouville operators this
/// library targets.  The returned vector has unit Euclidean norm.
inline std::vector<double> tridiag_eigenvector(const std::vector<double>& d,
                                               const std::vector<double>& e, double lambda) {
    const int n = static_cast<int>(d.size());
    double scale = std::abs(lambda);
    for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(d[i]) + 2.0 * (i < n - 1 ? std::abs(e[i]) : 0.0));
    // Perturb the shift off exact singularity of the factorization.
    const double mu = lambda + scale * std::numeric_limits<double>::epsilon() * 8.0;

    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = 1.0 + 1e-3 * std::sin(1.0 + 7.0 * i);
    auto normalize = [&x]() {
        double s = 0.0;
        for (double v : x) s += v * v;
        s = std::sqrt(s);
        if (s == 0.0) throw NumericalError("tridiag_eigenvector: zero iterate");
        for (double& v : x) v /= s;
    };
    normalize();
    for (int round = 0; round < 3; ++round) {
        x = tridiag_shifted_solve(d, e, mu, std::move(x));
        normalize();
        if (round == 0) continue; // one round can leave foreign-mode residue
        double res = 0.0;
        for (int i = 0; i < n; ++i) {
            double r = (d[i] - lambda) * x[i];
            if (i > 0) r += e[i - 1] * x[i - 1];
            if (i < n - 1) r += e[i] * x[i + 1];
            res = std::max(res, std::abs(r));
        }
        // Near the eps * |T| floor the iterate cannot improve further.
        if (res <= scale * 1e-14) break;
    }
    return x;
}

} // namespace delaypde
