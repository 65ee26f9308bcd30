#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "delaypde/errors.hpp"

namespace delaypde {

/// Dense real matrix, row-major storage.  Small sizes only: everything in this
/// toolkit that is dense is a truncated-model block or a certificate variable,
/// so no attempt is made at cache blocking or expression templates.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    DenseMatrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {
        if (r <= 0 || c <= 0) throw ValidationError("DenseMatrix: dimensions must be positive");
    }

    static DenseMatrix identity(int n) {
        DenseMatrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    /// Row-major initializer, e.g. DenseMatrix::from_rows({{1,2},{3,4}}).
    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows_in) {
        const int r = static_cast<int>(rows_in.size());
        const int c = r > 0 ? static_cast<int>(rows_in.begin()->size()) : 0;
        DenseMatrix m(r, c);
        int i = 0;
        for (const auto& row : rows_in) {
            if (static_cast<int>(row.size()) != c)
                throw ValidationError("DenseMatrix: ragged initializer");
            int j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    bool is_finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double norm_max() const {
        double m = 0.0;
        for (double v : a) m = std::max(m, std::abs(v));
        return m;
    }
};

inline DenseMatrix operator+(const DenseMatrix& x, const DenseMatrix& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw ValidationError("matrix add: shape mismatch");
    DenseMatrix r = x;
    for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] += y.a[i];
    return r;
}

inline DenseMatrix operator-(const DenseMatrix& x, const DenseMatrix& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw ValidationError("matrix sub: shape mismatch");
    DenseMatrix r = x;
    for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] -= y.a[i];
    return r;
}

inline DenseMatrix operator*(double s, const DenseMatrix& x) {
    DenseMatrix r = x;
    for (double& v : r.a) v *= s;
    return r;
}

inline DenseMatrix operator*(const DenseMatrix& x, const DenseMatrix& y) {
    if (x.cols != y.rows) throw ValidationError("matrix mul: shape mismatch");
    DenseMatrix r(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int k = 0; k < x.cols; ++k) {
            const double xv = x(i, k);
            if (xv == 0.0) continue;
            for (int j = 0; j < y.cols; ++j) r(i, j) += xv * y(k, j);
        }
    return r;
}

inline DenseMatrix transpose(const DenseMatrix& x) {
    DenseMatrix r(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) r(j, i) = x(i, j);
    return r;
}

inline DenseMatrix symmetrize(const DenseMatrix& x) {
    if (x.rows != x.cols) throw ValidationError("symmetrize: matrix not square");
    DenseMatrix r(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) r(i, j) = 0.5 * (x(i, j) + x(j, i));
    return r;
}

/// Asymmetry measure relative to the matrix scale; used by routines that
/// require symmetric input.
inline double asymmetry(const DenseMatrix& x) {
    if (x.rows != x.cols) throw ValidationError("asymmetry: matrix not square");
    double m = 0.0;
    for (int i = 0; i < x.rows; ++i)
        for (int j = i + 1; j < x.cols; ++j) m = std::max(m, std::abs(x(i, j) - x(j, i)));
    return m;
}

/// LU factorization with partial pivoting, kept together with its solve step.
/// Throws NumericalError on (numerical) singularity.
struct LuFactors {
    DenseMatrix lu;
    std::vector<int> perm;
    int sign = 1;
};

inline LuFactors lu_factor(DenseMatrix m) {
    if (m.rows != m.cols) throw ValidationError("lu_factor: matrix not square");
    const int n = m.rows;
    LuFactors f{std::move(m), std::vector<int>(n), 1};
    DenseMatrix& a = f.lu;
    for (int i = 0; i < n; ++i) f.perm[i] = i;
    for (int k = 0; k < n; ++k) {
        int piv = k;
        double best = std::abs(a(k, k));
        for (int i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > best) { best = std::abs(a(i, k)); piv = i; }
        if (best == 0.0) throw NumericalError("lu_factor: singular matrix");
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
            std::swap(f.perm[k], f.perm[piv]);
            f.sign = -f.sign;
        }
        for (int i = k + 1; i < n; ++i) {
            a(i, k) /= a(k, k);
            const double lik = a(i, k);
            if (lik == 0.0) continue;
            for (int j = k + 1; j < n; ++j) a(i, j) -= lik * a(k, j);
        }
    }
    return f;
}

inline std::vector<double> lu_solve(const LuFactors& f, const std::vector<double>& b) {
    const int n = f.lu.rows;
    if (static_cast<int>(b.size()) != n) throw ValidationError("lu_solve: rhs length mismatch");
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = b[f.perm[i]];
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) x[i] -= f.lu(i, j) * x[j];
    for (int i = n - 1; i >= 0; --i) {
        for (int j = i + 1; j < n; ++j) x[i] -= f.lu(i, j) * x[j];
        x[i] /= f.lu(i, i);
    }
    return x;
}

/// Attempts the Cholesky factorization of a symmetric matrix.  Returns false
/// (without throwing) when the matrix is not positive definite; this is the
/// primitive behind all definiteness checks in the certificate path.
inline bool cholesky_spd(const DenseMatrix& s, DenseMatrix* factor = nullptr) {
    if (s.rows != s.cols) throw ValidationError("cholesky_spd: matrix not square");
    const int n = s.rows;
    DenseMatrix l(n, n);
    for (int j = 0; j < n; ++j) {
        double d = s(j, j);
        for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0) || !std::isfinite(d)) return false;
        l(j, j) = std::sqrt(d);
        for (int i = j + 1; i < n; ++i) {
            double v = 0.5 * (s(i, j) + s(j, i));
            for (int k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
            l(i, j) = v / l(j, j);
        }
    }
    if (factor) *factor = std::move(l);
    return true;
}

} // namespace delaypde
