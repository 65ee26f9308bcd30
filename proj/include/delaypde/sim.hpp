#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "delaypde/errors.hpp"
#include "delaypde/model.hpp"
#include "delaypde/spectral.hpp"

namespace delaypde {
namespace sim {

// ---------------------------------------------------------------------------
// Fixed-step RK4 for x'(t) = f(t, x(t), x(t - h)).
//
// The step is chosen so the delay is a whole number of steps; the two interior
// stages then share one cubic interpolation of the history at t + dt/2 - h,
// while the end stages read stored nodes directly.  Solutions of delay
// equations lose one derivative order at each multiple of the delay, so the
// interpolation stencil is shifted off the nodes t = k h for k <= 3; past
// that the remaining jumps are too high-order to matter for a cubic.
// ---------------------------------------------------------------------------

struct DdeOptions {
    double t_final = 10.0;
    double dt = 1e-3;             ///< suggested; refined so the delay divides exactly
    int min_delay_steps = 10;
    int store_stride = 0;         ///< 0: aim for roughly 10000 stored samples
    double overflow_limit = 1e12; ///< stop (without throwing) when any |x_i| passes this
};

struct DdeResult {
    std::vector<double> times;
    std::vector<std::vector<double>> states; ///< one row per stored sample
    double dt = 0.0;
    long long steps = 0; ///< steps actually taken
    int delay_steps = 0;
    std::string early_stop_reason; ///< empty on a completed run
};

using DdeRhs = std::function<void(double t, const double* x, const double* x_del, double* dx)>;
using DdePrehistory = std::function<void(double tau, double* x)>;

inline DdeResult integrate_dde(int dim, double delay, const DdeRhs& rhs,
                               const DdePrehistory& prehistory, const DdeOptions& opt) {
    if (dim < 1) throw ValidationError("integrate_dde: empty state");
    if (!(delay > 0.0)) throw ValidationError("integrate_dde: delay must be positive");
    if (!(opt.t_final > 0.0)) throw ValidationError("integrate_dde: horizon must be positive");
    if (!(opt.dt > 0.0)) throw ValidationError("integrate_dde: step must be positive");
    if (!rhs || !prehistory) throw ValidationError("integrate_dde: missing callbacks");

    const long long hs =
        std::max<long long>(opt.min_delay_steps, std::llround(delay / opt.dt));
    const double dt = delay / static_cast<double>(hs);
    const long long steps =
        static_cast<long long>(std::ceil(opt.t_final / dt - 1e-12));
    const long long cap = hs + 6;

    std::vector<double> ring(static_cast<std::size_t>(cap) * dim);
    auto slot = [&](long long node) {
        return static_cast<std::size_t>((node + hs) % cap) * static_cast<std::size_t>(dim);
    };
    for (long long j = -hs; j <= 0; ++j)
        prehistory(static_cast<double>(j) * dt, ring.data() + slot(j));

    const long long stride = opt.store_stride > 0
                                 ? opt.store_stride
                                 : std::max<long long>(1, steps / 10000);
    DdeResult out;
    out.dt = dt;
    out.delay_steps = static_cast<int>(hs);
    out.steps = steps;
    auto record = [&](long long node) {
        out.times.push_back(static_cast<double>(node) * dt);
        const double* p = ring.data() + slot(node);
        out.states.emplace_back(p, p + dim);
    };
    record(0);

    std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), xs(dim), xdm(dim);
    for (long long m = 0; m < steps; ++m) {
        const double t = static_cast<double>(m) * dt;
        const double* x = ring.data() + slot(m);

        // History at t + dt/2 - h: 4-point Lagrange around the bracketing
        // nodes, shifted one-sided when a derivative jump sits on either of
        // them (jumps land on nodes because the delay divides the grid).
        long long start = m - hs - 1;
        for (int k = 0; k <= 3; ++k) {
            const long long kn = static_cast<long long>(k) * hs;
            if (kn == m - hs) start = m - hs;
            else if (kn == m - hs + 1) start = m - hs - 2;
        }
        if (start < -hs) start = -hs;
        const double xi = static_cast<double>(m - hs - start) + 0.5;
        double wgt[4];
        for (int a = 0; a < 4; ++a) {
            double w = 1.0;
            for (int b = 0; b < 4; ++b)
                if (b != a) w *= (xi - b) / static_cast<double>(a - b);
            wgt[a] = w;
        }
        const double* s0 = ring.data() + slot(start);
        const double* s1 = ring.data() + slot(start + 1);
        const double* s2 = ring.data() + slot(start + 2);
        const double* s3 = ring.data() + slot(start + 3);
        for (int i = 0; i < dim; ++i)
            xdm[i] = wgt[0] * s0[i] + wgt[1] * s1[i] + wgt[2] * s2[i] + wgt[3] * s3[i];

        const double* d1 = ring.data() + slot(m - hs);
        const double* d4 = ring.data() + slot(m + 1 - hs);
        rhs(t, x, d1, k1.data());
        for (int i = 0; i < dim; ++i) xs[i] = x[i] + 0.5 * dt * k1[i];
        rhs(t + 0.5 * dt, xs.data(), xdm.data(), k2.data());
        for (int i = 0; i < dim; ++i) xs[i] = x[i] + 0.5 * dt * k2[i];
        rhs(t + 0.5 * dt, xs.data(), xdm.data(), k3.data());
        for (int i = 0; i < dim; ++i) xs[i] = x[i] + dt * k3[i];
        rhs(t + dt, xs.data(), d4, k4.data());

        double* xn = ring.data() + slot(m + 1);
        bool blown = false;
        for (int i = 0; i < dim; ++i) {
            xn[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if (!(std::abs(xn[i]) <= opt.overflow_limit)) blown = true;
        }
        if (blown) {
            record(m + 1);
            out.steps = m + 1;
            out.early_stop_reason =
                "state magnitude exceeded the overflow limit near t = " + std::to_string(t + dt);
            return out;
        }
        if ((m + 1) % stride == 0 || m + 1 == steps) record(m + 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Closed-loop modal simulation: M plant modes driven through the boundary,
// an N-mode copy with output injection on the first n0 modes, both seeing
// the same delayed self-coupling.  The output and the energies use the
// shifted coefficients w_n = z_n + b_n u, whose series carries the boundary
// data and so converges much faster than the raw one.
// ---------------------------------------------------------------------------

enum class ObserverInit {
    zeros,         ///< estimator starts from rest over the whole history window
    compatibility, ///< estimator history copies the plant's first N coefficients
};

struct SimConfig {
    int plant_modes = 100; ///< M
    double t_final = 10.0;
    double dt = 1e-3; ///< cap; also limited by 2 / lambda_M and the delay split
    int store_stride = 0;
    ObserverInit observer_init = ObserverInit::zeros;
    std::vector<double> zhat0; ///< optional constant estimator history, size N
    std::function<double(double x, double tau)> ic; ///< z0, tau in [-h, 0]
    bool ic_static = false;    ///< initial state does not depend on tau
    int prehistory_samples = 513;
    double overflow_limit = 1e12;
};

struct SimResult {
    std::vector<double> times;
    std::vector<double> u, y, h1_sq, l2_sq, err_sq;
    std::vector<std::vector<double>> z;    ///< per sample: M plant coefficients
    std::vector<std::vector<double>> zhat; ///< per sample: N estimator coefficients
    double dt = 0.0;
    long long steps = 0;
    int delay_steps = 0;
    int plant_modes = 0, observer_modes = 0;
    std::string early_stop_reason;
    /// Residual of the actuated-end condition against u(0) at start time;
    /// a large value announces a derivative jump launched at t = 0.
    double ic_boundary_mismatch = 0.0;
};

namespace detail {

/// Uniformly sampled history rows over [-h, 0] with cubic interpolation in
/// tau; queries snap to sample rows when they land on one.
struct TauTable {
    double h = 1.0;
    int cols = 0;
    std::vector<double> rows; ///< samples * cols

    int samples() const { return cols == 0 ? 0 : static_cast<int>(rows.size()) / cols; }

    void gather(double tau, double* out) const {
        const int s = samples();
        const double* base = rows.data();
        if (s == 1) {
            std::copy(base, base + cols, out);
            return;
        }
        const double dtau = h / static_cast<double>(s - 1);
        double pos = std::clamp((tau + h) / dtau, 0.0, static_cast<double>(s - 1));
        const double snapped = std::round(pos);
        if (std::abs(pos - snapped) < 1e-9) {
            const double* r = base + static_cast<std::size_t>(snapped) * cols;
            std::copy(r, r + cols, out);
            return;
        }
        int lo = std::clamp(static_cast<int>(std::floor(pos)) - 1, 0, s - 4);
        const double xi = pos - lo;
        double wgt[4];
        for (int a = 0; a < 4; ++a) {
            double w = 1.0;
            for (int b = 0; b < 4; ++b)
                if (b != a) w *= (xi - b) / static_cast<double>(a - b);
            wgt[a] = w;
        }
        for (int c = 0; c < cols; ++c) {
            const double* r = base + static_cast<std::size_t>(lo) * cols + c;
            out[c] = wgt[0] * r[0] + wgt[1] * r[static_cast<std::size_t>(cols)] +
                     wgt[2] * r[2 * static_cast<std::size_t>(cols)] +
                     wgt[3] * r[3 * static_cast<std::size_t>(cols)];
        }
    }
};

} // namespace detail

inline SimResult simulate_closed_loop(const model::ModalPlant& mp, const model::Gains& gains,
                                      int n_obs, const SimConfig& cfg) {
    const int m_modes = cfg.plant_modes;
    if (m_modes < 1 || m_modes > mp.count())
        throw ValidationError("simulate: plant truncation out of range");
    if (n_obs < 1 || n_obs > mp.count())
        throw ValidationError("simulate: estimator size out of range");
    if (gains.n0 < 1 || gains.n0 > n_obs)
        throw ValidationError("simulate: gains exceed the estimator");
    if (gains.K.rows != 1 || gains.K.cols != gains.n0 || gains.L.rows != gains.n0 ||
        gains.L.cols != 1)
        throw ValidationError("simulate: gain dimensions do not match n0");
    if (!cfg.ic) throw ValidationError("simulate: initial state is required");
    if (!cfg.zhat0.empty() && static_cast<int>(cfg.zhat0.size()) != n_obs)
        throw ValidationError("simulate: estimator start has wrong length");
    if (cfg.zhat0.empty() && cfg.observer_init == ObserverInit::compatibility && n_obs > m_modes)
        throw ValidationError("simulate: compatibility start needs N <= M");
    if (cfg.prehistory_samples < 4)
        throw ValidationError("simulate: history needs at least 4 samples");
    if (!(cfg.t_final > 0.0) || !(cfg.dt > 0.0))
        throw ValidationError("simulate: horizon and step must be positive");

    const auto& basis = mp.basis;
    const int n0 = gains.n0;
    const int dim = m_modes + n_obs;
    const double h = mp.h;
    const double c = mp.c;

    // Plant history rows by modal projection of the initial data.
    detail::TauTable table;
    table.h = h;
    table.cols = m_modes;
    {
        // Enough rows that cubic interpolation in tau is far below the step
        // error; when the step grid is coarser than the cap, sample it
        // exactly so lookups reduce to row copies.
        const double dt0 = std::min(cfg.dt, 2.0 / basis.lambda(m_modes));
        const long long hs = std::max<long long>(10, std::llround(h / dt0));
        const int want = static_cast<int>(std::min<long long>(cfg.prehistory_samples, hs + 1));
        const int s = cfg.ic_static ? 1 : want;
        table.rows.assign(static_cast<std::size_t>(s) * m_modes, 0.0);
        std::vector<double> f(basis.grid_points);
        for (int r = 0; r < s; ++r) {
            const double tau = s == 1 ? 0.0 : -h + h * static_cast<double>(r) / (s - 1);
            for (int i = 0; i < basis.grid_points; ++i) f[i] = cfg.ic(basis.xs[i], tau);
            for (int n = 1; n <= m_modes; ++n)
                table.rows[static_cast<std::size_t>(r) * m_modes + n - 1] =
                    spectral::project(f, basis, n);
        }
    }

    std::vector<double> drift(dim), beta(dim), bmod(dim), cmeas(std::max(m_modes, n_obs));
    for (int n = 0; n < static_cast<int>(cmeas.size()); ++n) cmeas[n] = mp.meas_coeff(n + 1);
    for (int n = 0; n < m_modes; ++n) {
        drift[n] = mp.drift(n + 1);
        beta[n] = mp.beta[n];
        bmod[n] = mp.b_mod[n];
    }
    for (int n = 0; n < n_obs; ++n) {
        drift[m_modes + n] = mp.drift(n + 1);
        beta[m_modes + n] = mp.beta[n];
        bmod[m_modes + n] = mp.b_mod[n];
    }
    std::vector<double> kr(n0), lc(n0);
    for (int j = 0; j < n0; ++j) {
        kr[j] = gains.K(0, j);
        lc[j] = gains.L(j, 0);
    }

    auto prehistory = [&](double tau, double* x) {
        table.gather(tau, x);
        double* xh = x + m_modes;
        if (!cfg.zhat0.empty()) {
            std::copy(cfg.zhat0.begin(), cfg.zhat0.end(), xh);
        } else if (cfg.observer_init == ObserverInit::compatibility) {
            std::copy(x, x + n_obs, xh);
        } else {
            std::fill(xh, xh + n_obs, 0.0);
        }
    };

    auto rhs = [&](double, const double* x, const double* xd, double* dx) {
        const double* xh = x + m_modes;
        const double* xhd = xd + m_modes;
        double u = 0.0;
        for (int j = 0; j < n0; ++j) u += kr[j] * xh[j];
        double innov = 0.0;
        for (int n = 0; n < m_modes; ++n) innov += cmeas[n] * (x[n] + bmod[n] * u);
        for (int n = 0; n < n_obs; ++n) innov -= cmeas[n] * (xh[n] + bmod[n] * u);
        for (int n = 0; n < m_modes; ++n)
            dx[n] = drift[n] * x[n] + c * xd[n] + beta[n] * u;
        for (int n = 0; n < n_obs; ++n) {
            double v = drift[m_modes + n] * xh[n] + c * xhd[n] + beta[m_modes + n] * u;
            if (n < n0) v += lc[n] * innov;
            dx[m_modes + n] = v;
        }
    };

    DdeOptions opt;
    opt.t_final = cfg.t_final;
    opt.dt = std::min(cfg.dt, 2.0 / basis.lambda(m_modes));
    opt.store_stride = cfg.store_stride;
    opt.overflow_limit = cfg.overflow_limit;
    auto raw = integrate_dde(dim, h, rhs, prehistory, opt);

    SimResult out;
    out.dt = raw.dt;
    out.steps = raw.steps;
    out.delay_steps = raw.delay_steps;
    out.plant_modes = m_modes;
    out.observer_modes = n_obs;
    out.early_stop_reason = std::move(raw.early_stop_reason);
    out.times = std::move(raw.times);

    const int shared = std::min(m_modes, n_obs);
    const std::size_t samples = out.times.size();
    out.u.reserve(samples);
    out.y.reserve(samples);
    out.h1_sq.reserve(samples);
    out.l2_sq.reserve(samples);
    out.err_sq.reserve(samples);
    out.z.reserve(samples);
    out.zhat.reserve(samples);
    for (auto& row : raw.states) {
        const double* x = row.data();
        const double* xh = x + m_modes;
        double u = 0.0;
        for (int j = 0; j < n0; ++j) u += kr[j] * xh[j];
        double y = 0.0, h1 = u * u, l2 = 0.0, err = 0.0;
        for (int n = 0; n < m_modes; ++n) {
            const double w = x[n] + bmod[n] * u;
            y += cmeas[n] * w;
            h1 += mp.lambda(n + 1) * w * w;
            l2 += x[n] * x[n];
        }
        for (int n = 0; n < shared; ++n) {
            const double e = x[n] - xh[n];
            err += e * e;
        }
        out.u.push_back(u);
        out.y.push_back(y);
        out.h1_sq.push_back(h1);
        out.l2_sq.push_back(l2);
        out.err_sq.push_back(err);
        out.z.emplace_back(x, x + m_modes);
        out.zhat.emplace_back(xh, xh + n_obs);
    }

    // Actuated-end compatibility of the initial data against the starting
    // control value, with a one-sided second-order edge derivative.
    {
        const int g = basis.grid_points;
        std::vector<double> f(g);
        for (int i = 0; i < g; ++i) f[i] = cfg.ic(basis.xs[i], 0.0);
        const double dz1 =
            (3.0 * f[g - 1] - 4.0 * f[g - 2] + f[g - 3]) / (2.0 * basis.delta);
        const double combo =
            std::cos(basis.theta2) * f[g - 1] + std::sin(basis.theta2) * dz1;
        out.ic_boundary_mismatch = std::abs(combo - (out.u.empty() ? 0.0 : out.u.front()));
    }
    return out;
}

/// Field samples on the basis grid from modal coefficients and the current
/// control value: sum (z_n + b_n u) phi_n - b u.
inline std::vector<double> reconstruct_field(const model::ModalPlant& mp,
                                             const std::vector<double>& z, double u) {
    const int nm = static_cast<int>(z.size());
    if (nm < 1 || nm > mp.count())
        throw ValidationError("reconstruct_field: coefficient count out of range");
    const auto& basis = mp.basis;
    std::vector<double> field(basis.grid_points, 0.0);
    for (int n = 1; n <= nm; ++n) {
        const double w = z[n - 1] + mp.b_mod[n - 1] * u;
        const double* phi = basis.mode(n);
        for (int i = 0; i < basis.grid_points; ++i) field[i] += w * phi[i];
    }
    for (int i = 0; i < basis.grid_points; ++i) field[i] -= mp.b_grid[i] * u;
    return field;
}

struct DecayFit {
    double rate = 0.0;         ///< decay of the underlying amplitude; negative = growth
    double rms_residual = 0.0; ///< fit residual in the log domain
    double rate_stderr = 0.0;  ///< least-squares standard error of the rate itself
    int points = 0;
};

/// Least-squares slope of log(series)/2 over [t_start, t_end]; the window is
/// truncated at the first non-positive sample.  The series is assumed
/// quadratic in the state (an energy), hence the half.
inline DecayFit estimate_decay_rate(const std::vector<double>& times,
                                    const std::vector<double>& series, double t_start,
                                    double t_end) {
    if (times.size() != series.size())
        throw ValidationError("estimate_decay_rate: length mismatch");
    if (!(t_start < t_end)) throw ValidationError("estimate_decay_rate: empty window");
    std::vector<double> ts, ls;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < t_start || times[i] > t_end) continue;
        if (!(series[i] > 0.0)) break;
        ts.push_back(times[i]);
        ls.push_back(0.5 * std::log(series[i]));
    }
    if (ts.size() < 10)
        throw ValidationError("estimate_decay_rate: fewer than 10 usable samples");

    const double n = static_cast<double>(ts.size());
    double st = 0.0, sl = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        st += ts[i];
        sl += ls[i];
    }
    const double mt = st / n, ml = sl / n;
    double stt = 0.0, stl = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        stt += (ts[i] - mt) * (ts[i] - mt);
        stl += (ts[i] - mt) * (ls[i] - ml);
    }
    if (!(stt > 0.0)) throw ValidationError("estimate_decay_rate: degenerate time window");
    const double slope = stl / stt;

    DecayFit fit;
    fit.rate = -slope;
    fit.points = static_cast<int>(ts.size());
    double rss = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double r = ls[i] - (ml + slope * (ts[i] - mt));
        rss += r * r;
    }
    fit.rms_residual = std::sqrt(rss / n);
    fit.rate_stderr = fit.rms_residual / std::sqrt(stt);
    return fit;
}

} // namespace sim
} // namespace delaypde
