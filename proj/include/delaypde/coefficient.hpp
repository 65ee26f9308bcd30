#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "delaypde/errors.hpp"

namespace delaypde {

/// Spatial coefficient function on [0, 1].  Three sources are supported:
///   - constant c
///   - polynomial with ascending coefficients c0 + c1 x + c2 x^2 + ...
///   - sampled table (two-column CSV "x,value"), linearly interpolated
/// Closed forms carry analytic derivatives; tables fall back to fourth-order
/// finite differences on the evaluation grid (one-sided at the ends).
class Coefficient {
public:
    static Coefficient constant(double c) {
        Coefficient f;
        f.kind_ = Kind::polynomial;
        f.coeffs_ = {c};
        return f;
    }

    static Coefficient polynomial(std::vector<double> coeffs) {
        if (coeffs.empty()) throw ValidationError("coefficient: empty polynomial");
        Coefficient f;
        f.kind_ = Kind::polynomial;
        f.coeffs_ = std::move(coeffs);
        return f;
    }

    static Coefficient table(std::vector<double> xs, std::vector<double> vals) {
        if (xs.size() != vals.size() || xs.size() < 2)
            throw ValidationError("coefficient table: need at least two (x, value) rows");
        for (std::size_t i = 1; i < xs.size(); ++i)
            if (!(xs[i] > xs[i - 1]))
                throw ValidationError("coefficient table: x column must be strictly increasing");
        if (xs.front() > 1e-9 || xs.back() < 1.0 - 1e-9)
            throw ValidationError("coefficient table: x range must cover [0, 1]");
        Coefficient f;
        f.kind_ = Kind::table;
        f.xs_ = std::move(xs);
        f.vals_ = std::move(vals);
        return f;
    }

    static Coefficient table_from_csv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("coefficient table: cannot open '" + path + "'");
        std::vector<double> xs, vals;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream row(line);
            double x, v;
            if (row >> x >> v) {
                xs.push_back(x);
                vals.push_back(v);
            } else if (xs.empty()) {
                continue; // tolerate a single header row
            } else {
                throw ValidationError("coefficient table: malformed row '" + line + "'");
            }
        }
        return table(std::move(xs), std::move(vals));
    }

    double operator()(double x) const {
        if (kind_ == Kind::polynomial) {
            double v = 0.0;
            for (std::size_t i = coeffs_.size(); i-- > 0;) v = v * x + coeffs_[i];
            return v;
        }
        return interp(x);
    }

    bool has_analytic_derivative() const { return kind_ == Kind::polynomial; }

    /// Analytic derivative; only valid for closed forms.
    double derivative(double x) const {
        if (kind_ != Kind::polynomial)
            throw ValidationError("coefficient: analytic derivative unavailable for tables");
        double v = 0.0;
        for (std::size_t i = coeffs_.size(); i-- > 1;) v = v * x + i * coeffs_[i];
        return v;
    }

    /// Samples the function on a uniform grid of `m` points over [0, 1].
    std::vector<double> sample(int m) const {
        std::vector<double> out(m);
        for (int i = 0; i < m; ++i) out[i] = (*this)(static_cast<double>(i) / (m - 1));
        return out;
    }

    /// Derivative sampled on the same grid: analytic when available, otherwise
    /// fourth-order central differences with one-sided stencils at the ends.
    std::vector<double> sample_derivative(int m) const {
        std::vector<double> out(m);
        if (has_analytic_derivative()) {
            for (int i = 0; i < m; ++i) out[i] = derivative(static_cast<double>(i) / (m - 1));
            return out;
        }
        const auto f = sample(m);
        const double h = 1.0 / (m - 1);
        auto at = [&f](int i) { return f[i]; };
        for (int i = 0; i < m; ++i) {
            if (i >= 2 && i <= m - 3) {
                out[i] = (-at(i + 2) + 8 * at(i + 1) - 8 * at(i - 1) + at(i - 2)) / (12 * h);
            } else if (i < 2) {
                out[i] = (-25 * at(i) + 48 * at(i + 1) - 36 * at(i + 2) + 16 * at(i + 3) -
                          3 * at(i + 4)) /
                         (12 * h);
            } else {
                out[i] = (25 * at(i) - 48 * at(i - 1) + 36 * at(i - 2) - 16 * at(i - 3) +
                          3 * at(i - 4)) /
                         (12 * h);
            }
        }
        return out;
    }

private:
    enum class Kind { polynomial, table };
    Kind kind_ = Kind::polynomial;
    std::vector<double> coeffs_;
    std::vector<double> xs_, vals_;

    double interp(double x) const {
        if (x <= xs_.front()) return vals_.front();
        if (x >= xs_.back()) return vals_.back();
        const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
        const std::size_t hi = it - xs_.begin();
        const std::size_t lo = hi - 1;
        const double w = (x - xs_[lo]) / (xs_[hi] - xs_[lo]);
        return (1.0 - w) * vals_[lo] + w * vals_[hi];
    }
};

} // namespace delaypde
