#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "delaypde/certify.hpp"
#include "delaypde/errors.hpp"
#include "delaypde/model.hpp"
#include "delaypde/sim.hpp"
#include "delaypde/spectral.hpp"

namespace delaypde::output {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw ValidationError("output: cannot write '" + path + "'");
    return out;
}

inline void write_text(const std::string& path, const std::string& content) {
    auto out = open_out(path);
    out << content;
}

/// Header: t,u,y,h1_sq,l2_sq,z_1..z_k,zhat_1..zhat_N with k capped at the
/// stored plant truncation.
inline void write_trajectory_csv(const std::string& path, const sim::SimResult& res, int k_modes) {
    const int k = std::min<int>(k_modes, res.plant_modes);
    auto out = open_out(path);
    out << "t,u,y,h1_sq,l2_sq";
    for (int n = 1; n <= k; ++n) out << ",z_" << n;
    for (int n = 1; n <= res.observer_modes; ++n) out << ",zhat_" << n;
    out << "\n";
    for (std::size_t i = 0; i < res.times.size(); ++i) {
        out << fmt(res.times[i]) << ',' << fmt(res.u[i]) << ',' << fmt(res.y[i]) << ','
            << fmt(res.h1_sq[i]) << ',' << fmt(res.l2_sq[i]);
        for (int n = 0; n < k; ++n) out << ',' << fmt(res.z[i][n]);
        for (int n = 0; n < res.observer_modes; ++n) out << ',' << fmt(res.zhat[i][n]);
        out << "\n";
    }
}

/// Long-format space-time table `t,x,value`, one row per grid point per
/// sampled time.  `error_field` reconstructs the estimation error over the
/// observed modes instead of the state.
inline void write_field_csv(const std::string& path, const model::ModalPlant& mp,
                            const sim::SimResult& res, int time_stride, bool error_field = false) {
    if (time_stride < 1) throw ValidationError("output: field time stride must be positive");
    auto out = open_out(path);
    out << "t,x,value\n";
    std::vector<double> coeff(mp.count(), 0.0);
    for (std::size_t i = 0; i < res.times.size();
         i += static_cast<std::size_t>(time_stride)) {
        std::fill(coeff.begin(), coeff.end(), 0.0);
        double u = 0.0;
        if (error_field) {
            for (int n = 0; n < res.observer_modes && n < res.plant_modes; ++n)
                coeff[n] = res.z[i][n] - res.zhat[i][n];
        } else {
            for (int n = 0; n < res.plant_modes; ++n) coeff[n] = res.z[i][n];
            u = res.u[i];
        }
        const auto field = sim::reconstruct_field(mp, coeff, u);
        for (int g = 0; g < mp.basis.grid_points; ++g)
            out << fmt(res.times[i]) << ',' << fmt(mp.basis.xs[g]) << ',' << fmt(field[g])
                << "\n";
    }
}

/// Mode table with the two-sided growth bound columns and boundary traces.
inline void write_eigen_csv(const std::string& path, const spectral::EigenBasis& basis,
                            const spectral::WeylReport& weyl) {
    auto out = open_out(path);
    out << "n,lambda,bound_lower,bound_upper,margin,phi0,dphi0,phi1,dphi1\n";
    for (int n = 1; n <= basis.count(); ++n) {
        out << n << ',' << fmt(basis.lambda(n)) << ',' << fmt(weyl.lower[n - 1]) << ','
            << fmt(weyl.upper[n - 1]) << ',' << fmt(weyl.margin[n - 1]) << ','
            << fmt(basis.phi0(n)) << ',' << fmt(basis.dphi0(n)) << ',' << fmt(basis.phi1(n))
            << ',' << fmt(basis.dphi1(n)) << "\n";
    }
}

inline nlohmann::json gains_json(const model::Gains& gains,
                                 const std::vector<std::complex<double>>& spectrum,
                                 double required_abscissa) {
    nlohmann::json j;
    j["n0"] = gains.n0;
    std::vector<double> k(gains.n0), l(gains.n0);
    for (int i = 0; i < gains.n0; ++i) {
        k[i] = gains.K(0, i);
        l[i] = gains.L(i, 0);
    }
    j["K"] = k;
    j["L"] = l;
    double abscissa = -1e300;
    nlohmann::json eigs = nlohmann::json::array();
    for (const auto& z : spectrum) {
        eigs.push_back({{"re", z.real()}, {"im", z.imag()}});
        abscissa = std::max(abscissa, z.real());
    }
    j["closed_loop_spectrum"] = eigs;
    j["spectral_abscissa"] = abscissa;
    j["required_abscissa"] = required_abscissa;
    j["abscissa_ok"] = abscissa < required_abscissa;
    return j;
}

inline nlohmann::json matrix_json(const DenseMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols; ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json certificate_json(const certify::SearchResult& sr) {
    nlohmann::json j;
    j["feasible"] = sr.feasible;
    j["observer_modes"] = sr.n_ret;
    j["controlled_modes"] = sr.n0;
    j["trials"] = sr.trials;
    j["best_excess"] = sr.best_excess;
    if (!sr.note.empty()) j["note"] = sr.note;
    j["multipliers"] = {{"alpha1", sr.mult.alpha1},
                        {"alpha2", sr.mult.alpha2},
                        {"alpha3", sr.mult.alpha3},
                        {"alpha4", sr.mult.alpha4},
                        {"contraction", sr.mult.contraction(sr.loop.abs_c)}};
    if (sr.feasible) {
        j["certificate"] = {{"beta", sr.cert.beta},   {"gamma", sr.cert.gamma},
                            {"r1", sr.cert.r1},       {"r2", sr.cert.r2},
                            {"P", matrix_json(sr.cert.P)}, {"Q1", matrix_json(sr.cert.Q1)},
                            {"Q2", matrix_json(sr.cert.Q2)}};
        nlohmann::json margins = nlohmann::json::array();
        for (const auto& m : sr.report.margins)
            margins.push_back({{"name", m.name},
                               {"value", m.value},
                               {"allowed", m.allowed},
                               {"ok", m.ok}});
        j["margins"] = margins;
        j["worst_excess"] = sr.report.worst_excess;
    }
    return j;
}

/// Human-readable dump of the truncated closed-loop blocks.
inline std::string model_dump(const model::ClosedLoop& cl) {
    std::ostringstream out;
    auto block = [&](const char* name, const DenseMatrix& m) {
        out << name << " (" << m.rows << "x" << m.cols << ")\n";
        for (int i = 0; i < m.rows; ++i) {
            for (int j = 0; j < m.cols; ++j) out << (j ? " " : "  ") << fmt(m(i, j));
            out << "\n";
        }
    };
    out << "truncated closed-loop model\n";
    out << "controlled modes: " << cl.n0 << "\n";
    out << "retained modes:   " << cl.n_ret << "\n";
    out << "measurement:      "
        << (cl.measurement == model::Measurement::dirichlet ? "dirichlet" : "neumann") << "\n";
    out << "|c| = " << fmt(cl.abs_c) << ", q_c = " << fmt(cl.q_c)
        << ", lambda_next = " << fmt(cl.lambda_next) << "\n";
    out << "tail remainders: |R a|^2 = " << fmt(cl.r_a_sq) << ", |R b|^2 = " << fmt(cl.r_b_sq)
        << ", trace constant = " << fmt(cl.m_phi) << "\n";
    block("F1", cl.F1);
    block("F2", cl.F2);
    block("F3", cl.F3);
    block("L", cl.Lcol);
    block("Ktilde", cl.Ktilde);
    block("E", cl.Erow);
    return out.str();
}

/// Minimal dependency-free line chart on a log10 vertical axis.  Series with
/// nonpositive samples have those points dropped.
inline void write_svg_decay(const std::string& path,
                            const std::vector<double>& times,
                            const std::vector<std::pair<std::string, const std::vector<double>*>>& series,
                            const std::string& title) {
    const int W = 860, H = 520, ML = 70, MR = 180, MT = 48, MB = 52;
    const double x0 = ML, x1 = W - MR, y0 = H - MB, y1 = MT;
    if (times.size() < 2) throw ValidationError("output: need at least two samples to plot");

    double tmin = times.front(), tmax = times.back();
    double vmin = 1e300, vmax = -1e300;
    for (const auto& [name, data] : series) {
        if (data->size() != times.size())
            throw ValidationError("output: series '" + name + "' length mismatch");
        for (double v : *data)
            if (v > 0.0) {
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
    }
    if (!(vmax > 0.0)) throw ValidationError("output: nothing positive to plot");
    double lo = std::floor(std::log10(vmin)), hi = std::ceil(std::log10(vmax));
    if (hi - lo < 1.0) hi = lo + 1.0;
    // Cap the span so one deep tail does not flatten everything else.
    if (hi - lo > 24.0) lo = hi - 24.0;

    auto xmap = [&](double t) { return x0 + (t - tmin) / (tmax - tmin) * (x1 - x0); };
    auto ymap = [&](double v) {
        const double l = std::max(lo, std::min(hi, std::log10(v)));
        return y0 - (l - lo) / (hi - lo) * (y0 - y1);
    };

    static const char* palette[] = {"#1f6fb2", "#c0392b", "#1e8449", "#8e44ad", "#b9770e",
                                    "#148f9f"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << (W - MR + ML) / 2 << "\" y=\"28\" font-family=\"sans-serif\" "
        << "font-size=\"17\" text-anchor=\"middle\">" << title << "</text>\n";

    for (int d = 0; d <= static_cast<int>(hi - lo); ++d) {
        const double v = std::pow(10.0, lo + d);
        const double y = ymap(v);
        svg << "<line x1=\"" << x0 << "\" y1=\"" << y << "\" x2=\"" << x1 << "\" y2=\"" << y
            << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << x0 - 8 << "\" y=\"" << y + 4
            << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">1e"
            << static_cast<int>(lo) + d << "</text>\n";
    }
    const int xticks = 5;
    for (int i = 0; i <= xticks; ++i) {
        const double t = tmin + (tmax - tmin) * i / xticks;
        const double x = xmap(t);
        svg << "<line x1=\"" << x << "\" y1=\"" << y0 << "\" x2=\"" << x << "\" y2=\"" << y0 + 5
            << "\" stroke=\"#333333\"/>\n";
        char label[32];
        std::snprintf(label, sizeof label, "%g", t);
        svg << "<text x=\"" << x << "\" y=\"" << y0 + 20
            << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << label
            << "</text>\n";
    }
    svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << H - 14
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">t</text>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"#333333\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
        << "\" stroke=\"#333333\"/>\n";

    int si = 0;
    for (const auto& [name, data] : series) {
        const char* color = palette[si % 6];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (!((*data)[i] > 0.0)) continue;
            svg << xmap(times[i]) << ',' << ymap((*data)[i]) << ' ';
        }
        svg << "\"/>\n";
        const double ly = MT + 18 + 22 * si;
        svg << "<line x1=\"" << x1 + 14 << "\" y1=\"" << ly - 4 << "\" x2=\"" << x1 + 44
            << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << x1 + 50 << "\" y=\"" << ly
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << name << "</text>\n";
        ++si;
    }
    svg << "</svg>\n";
    write_text(path, svg.str());
}

/// Single linear-axes series, markers plus line.
inline void write_svg_xy(const std::string& path, const std::vector<double>& xs,
                         const std::vector<double>& ys, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel) {
    if (xs.size() != ys.size() || xs.empty())
        throw ValidationError("output: mismatched or empty xy series");
    const int W = 640, H = 460, ML = 80, MR = 30, MT = 48, MB = 56;
    const double x0 = ML, x1 = W - MR, y0 = H - MB, y1 = MT;
    double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xmin = std::min(xmin, xs[i]);
        xmax = std::max(xmax, xs[i]);
        ymin = std::min(ymin, ys[i]);
        ymax = std::max(ymax, ys[i]);
    }
    if (xmax - xmin <= 0.0) xmax = xmin + 1.0;
    if (ymax - ymin <= 0.0) ymax = ymin + 1.0;
    const double ypad = 0.08 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto xmap = [&](double v) { return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0); };
    auto ymap = [&](double v) { return y0 - (v - ymin) / (ymax - ymin) * (y0 - y1); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << W / 2 << "\" y=\"28\" font-family=\"sans-serif\" font-size=\"17\" "
        << "text-anchor=\"middle\">" << title << "</text>\n";
    const int ticks = 4;
    for (int i = 0; i <= ticks; ++i) {
        const double xv = xmin + (xmax - xmin) * i / ticks;
        const double yv = ymin + (ymax - ymin) * i / ticks;
        char lx[32], lyb[32];
        std::snprintf(lx, sizeof lx, "%g", xv);
        std::snprintf(lyb, sizeof lyb, "%.3g", yv);
        svg << "<line x1=\"" << xmap(xv) << "\" y1=\"" << y0 << "\" x2=\"" << xmap(xv)
            << "\" y2=\"" << y0 + 5 << "\" stroke=\"#333333\"/>\n";
        svg << "<text x=\"" << xmap(xv) << "\" y=\"" << y0 + 20
            << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << lx
            << "</text>\n";
        svg << "<line x1=\"" << x0 << "\" y1=\"" << ymap(yv) << "\" x2=\"" << x1 << "\" y2=\""
            << ymap(yv) << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << x0 - 8 << "\" y=\"" << ymap(yv) + 4
            << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" << lyb
            << "</text>\n";
    }
    svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << H - 14
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" << xlabel
        << "</text>\n";
    svg << "<text x=\"20\" y=\"" << (y0 + y1) / 2 << "\" font-family=\"sans-serif\" "
        << "font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
        << (y0 + y1) / 2 << ")\">" << ylabel << "</text>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"#333333\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
        << "\" stroke=\"#333333\"/>\n";
    svg << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) svg << xmap(xs[i]) << ',' << ymap(ys[i]) << ' ';
    svg << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i)
        svg << "<circle cx=\"" << xmap(xs[i]) << "\" cy=\"" << ymap(ys[i])
            << "\" r=\"3.5\" fill=\"#1f6fb2\"/>\n";
    svg << "</svg>\n";
    write_text(path, svg.str());
}

} // namespace delaypde::output
