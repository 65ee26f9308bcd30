#pragma once

// Export of the certificate feasibility problem in SDPA sparse format
// (.dat-s), so an external semidefinite solver can cross-check the built-in
// search.  The constraints are jointly linear and homogeneous in the decision
// variables, so every coefficient matrix F_k is obtained exactly by
// evaluating the assembly at a unit coordinate vector, and the only constant
// term is the strictness shift eps (harmless: feasible points form a cone, so
// any strictly feasible certificate scales to clear eps).

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "delaypde/certify.hpp"
#include "delaypde/dense_matrix.hpp"
#include "delaypde/errors.hpp"
#include "delaypde/model.hpp"

namespace delaypde {
namespace sdpa {

/// Decision-vector layout: vech(P) then vech(Q1) then vech(Q2) then
/// r1, r2, beta, gamma.  vech walks the upper triangle row by row; an
/// off-diagonal variable stands for the symmetric entry pair.
struct VarLayout {
    int d = 0;   ///< 2 n0
    int mid = 0; ///< N - n0
    int n_p = 0, n_q1 = 0, n_q2 = 0;
    int total = 0;

    explicit VarLayout(const model::ClosedLoop& cl) {
        d = 2 * cl.n0;
        mid = cl.n_ret - cl.n0;
        n_p = d * (d + 1) / 2;
        n_q1 = n_p;
        n_q2 = mid * (mid + 1) / 2;
        total = n_p + n_q1 + n_q2 + 4;
    }
};

/// Expands a decision vector into certificate blocks (inverse of vech_point).
inline certify::Certificate unvech(const std::vector<double>& y, const VarLayout& lay) {
    if (static_cast<int>(y.size()) != lay.total)
        throw ValidationError("unvech: decision vector length mismatch");
    certify::Certificate ct;
    int k = 0;
    auto fill = [&](int n) {
        DenseMatrix m(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                m(i, j) = y[k];
                m(j, i) = y[k];
                ++k;
            }
        return m;
    };
    ct.P = fill(lay.d);
    ct.Q1 = fill(lay.d);
    if (lay.mid > 0) ct.Q2 = fill(lay.mid);
    ct.r1 = y[k++];
    ct.r2 = y[k++];
    ct.beta = y[k++];
    ct.gamma = y[k++];
    return ct;
}

/// Flattens a certificate into the decision-vector layout.
inline std::vector<double> vech_point(const certify::Certificate& ct, const VarLayout& lay) {
    std::vector<double> y;
    y.reserve(lay.total);
    auto take = [&](const DenseMatrix& m, int n) {
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) y.push_back(0.5 * (m(i, j) + m(j, i)));
    };
    take(ct.P, lay.d);
    take(ct.Q1, lay.d);
    if (lay.mid > 0) take(ct.Q2, lay.mid);
    y.push_back(ct.r1);
    y.push_back(ct.r2);
    y.push_back(ct.beta);
    y.push_back(ct.gamma);
    return y;
}

/// Positive-semidefinite blocks of the exported problem, in order.  Matrix
/// blocks carry -Psi, -Theta1, -Theta2, P, Q1, Q2; one diagonal block holds
/// the scalar constraints -Theta3, -Theta4, (Theta5,) r1, r2, beta, gamma.
struct BlockLayout {
    std::vector<int> sizes; ///< SDPA convention: negative size = diagonal block
    int psi = 0, theta1 = 0, theta2 = -1, p = 0, q1 = 0, q2 = -1, scalars = 0;
    int n_scalars = 0;
    bool has_theta5 = false;

    BlockLayout(const model::ClosedLoop& cl) {
        const int d = 2 * cl.n0;
        const int mid = cl.n_ret - cl.n0;
        const int full = d + mid + 1;
        has_theta5 = cl.measurement == model::Measurement::neumann;
        n_scalars = (has_theta5 ? 3 : 2) + 4;
        int idx = 0;
        psi = idx++;
        sizes.push_back(full);
        theta1 = idx++;
        sizes.push_back(d);
        if (mid > 0) {
            theta2 = idx++;
            sizes.push_back(mid);
        }
        p = idx++;
        sizes.push_back(d);
        q1 = idx++;
        sizes.push_back(d);
        if (mid > 0) {
            q2 = idx++;
            sizes.push_back(mid);
        }
        scalars = idx++;
        sizes.push_back(-n_scalars);
    }
};

struct Entry {
    int mat = 0;   ///< 0 = F0, 1..m = coefficient of variable mat
    int block = 0; ///< 1-based block index
    int i = 0, j = 0; ///< 1-based, i <= j
    double value = 0.0;
};

struct Problem {
    VarLayout vars;
    BlockLayout blocks;
    std::vector<Entry> entries;
    double eps = 1e-6;

    Problem(const VarLayout& v, const BlockLayout& b) : vars(v), blocks(b) {}
};

namespace detail {

inline void append_block(std::vector<Entry>& out, int mat, int block_1based,
                         const DenseMatrix& m, double drop_below) {
    for (int i = 0; i < m.rows; ++i)
        for (int j = i; j < m.cols; ++j)
            if (std::abs(m(i, j)) > drop_below)
                out.push_back({mat, block_1based, i + 1, j + 1, m(i, j)});
}

} // namespace detail

/// Builds the full coefficient list by evaluating the constraint assembly at
/// every unit decision vector.
inline Problem build_problem(const model::ClosedLoop& cl, const certify::Multipliers& mult,
                             double eps = 1e-6) {
    VarLayout vars(cl);
    BlockLayout blocks(cl);
    Problem pb(vars, blocks);
    pb.eps = eps;

    std::vector<double> y(vars.total, 0.0);
    for (int k = 0; k < vars.total; ++k) {
        y.assign(vars.total, 0.0);
        y[k] = 1.0;
        auto ct = unvech(y, vars);
        auto cs = certify::assemble(cl, ct, mult);
        const int mat = k + 1;

        detail::append_block(pb.entries, mat, blocks.psi + 1, -1.0 * cs.Psi, 0.0);
        detail::append_block(pb.entries, mat, blocks.theta1 + 1, -1.0 * cs.Theta1, 0.0);
        if (blocks.theta2 >= 0)
            detail::append_block(pb.entries, mat, blocks.theta2 + 1, -1.0 * cs.Theta2, 0.0);
        detail::append_block(pb.entries, mat, blocks.p + 1, ct.P, 0.0);
        detail::append_block(pb.entries, mat, blocks.q1 + 1, ct.Q1, 0.0);
        if (blocks.q2 >= 0) detail::append_block(pb.entries, mat, blocks.q2 + 1, ct.Q2, 0.0);

        int s = 1;
        auto scalar = [&](double v) {
            if (std::abs(v) > 0.0) pb.entries.push_back({mat, blocks.scalars + 1, s, s, v});
            ++s;
        };
        scalar(-cs.Theta3);
        scalar(-cs.Theta4);
        if (blocks.has_theta5) scalar(cs.Theta5);
        scalar(ct.r1);
        scalar(ct.r2);
        scalar(ct.beta);
        scalar(ct.gamma);
    }

    // F0: strictness shifts.  X = sum y_k F_k - F0 >= 0 encodes
    // -Psi - eps I >= 0 and friends; P gets the same shift, Q1/Q2 stay at
    // plain semidefiniteness.
    auto shift_identity = [&](int block_idx, int size) {
        for (int i = 1; i <= size; ++i) pb.entries.push_back({0, block_idx + 1, i, i, eps});
    };
    shift_identity(blocks.psi, blocks.sizes[blocks.psi]);
    shift_identity(blocks.theta1, blocks.sizes[blocks.theta1]);
    if (blocks.theta2 >= 0) shift_identity(blocks.theta2, blocks.sizes[blocks.theta2]);
    shift_identity(blocks.p, blocks.sizes[blocks.p]);
    shift_identity(blocks.scalars, blocks.n_scalars);
    return pb;
}

/// Writes the problem as SDPA sparse (.dat-s) with a zero objective: any
/// feasible point of the exported problem is a valid strict certificate.
inline void write_sparse(const Problem& pb, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    out << "\"feasibility export; vars = vech(P), vech(Q1), vech(Q2), r1, r2, beta, gamma\"\n";
    out << "\"blocks = -Psi, -Theta1, [-Theta2,] P, Q1, [Q2,] diag(-Theta3, -Theta4,"
        << (pb.blocks.has_theta5 ? " Theta5," : "") << " r1, r2, beta, gamma)\"\n";
    out << pb.vars.total << " = mDIM\n";
    out << pb.blocks.sizes.size() << " = nBLOCK\n";
    for (std::size_t b = 0; b < pb.blocks.sizes.size(); ++b)
        out << pb.blocks.sizes[b] << (b + 1 < pb.blocks.sizes.size() ? " " : " = bLOCKsTRUCT\n");
    for (int k = 0; k < pb.vars.total; ++k) out << "0" << (k + 1 < pb.vars.total ? " " : "\n");
    char buf[160];
    for (const auto& e : pb.entries) {
        std::snprintf(buf, sizeof buf, "%d %d %d %d %.17g\n", e.mat, e.block, e.i, e.j, e.value);
        out << buf;
    }
    if (!out) throw NumericalError("write failure on " + path);
}

struct ParsedFile {
    int m = 0;
    std::vector<int> block_sizes;
    std::vector<double> objective;
    std::vector<Entry> entries;
};

/// Minimal reader for the files written above (comments, mDIM/nBLOCK layout,
/// entry lines).  Used to confirm the export round-trips.
inline ParsedFile read_sparse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    ParsedFile pf;
    std::string line;
    int stage = 0; // 0: mDIM, 1: nBLOCK, 2: bLOCKsTRUCT, 3: objective, 4: entries
    while (std::getline(in, line)) {
        std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        if (line[first] == '"' || line[first] == '*') continue;
        std::istringstream ls(line);
        if (stage == 0) {
            ls >> pf.m;
            stage = 1;
        } else if (stage == 1) {
            int nb = 0;
            ls >> nb;
            pf.block_sizes.reserve(nb);
            stage = 2;
        } else if (stage == 2) {
            int v;
            while (ls >> v) pf.block_sizes.push_back(v);
            stage = 3;
        } else if (stage == 3) {
            double v;
            while (ls >> v) pf.objective.push_back(v);
            stage = 4;
        } else {
            Entry e;
            if (ls >> e.mat >> e.block >> e.i >> e.j >> e.value) pf.entries.push_back(e);
        }
    }
    if (pf.m <= 0 || pf.block_sizes.empty())
        throw ValidationError("file " + path + " is not SDPA sparse");
    return pf;
}

/// Evaluates X_b(y) = sum_k y_k F_k,b - F0,b for each block of a parsed file.
inline std::vector<DenseMatrix> evaluate(const ParsedFile& pf, const std::vector<double>& y) {
    if (static_cast<int>(y.size()) != pf.m)
        throw ValidationError("evaluate: decision vector length mismatch");
    std::vector<DenseMatrix> blocks;
    blocks.reserve(pf.block_sizes.size());
    for (int s : pf.block_sizes) blocks.emplace_back(std::abs(s), std::abs(s));
    for (const auto& e : pf.entries) {
        const double w = e.mat == 0 ? -1.0 : y[e.mat - 1];
        auto& b = blocks[e.block - 1];
        b(e.i - 1, e.j - 1) += w * e.value;
        if (e.i != e.j) b(e.j - 1, e.i - 1) += w * e.value;
    }
    return blocks;
}

} // namespace sdpa
} // namespace delaypde
