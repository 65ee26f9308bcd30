#pragma once

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "delaypde/certify.hpp"
#include "delaypde/config.hpp"
#include "delaypde/model.hpp"
#include "delaypde/output.hpp"
#include "delaypde/sdpa.hpp"
#include "delaypde/sim.hpp"
#include "delaypde/spectral.hpp"

namespace delaypde::cli {

constexpr int exit_ok = 0;
constexpr int exit_validation = 1;
constexpr int exit_numerical = 2;
constexpr int exit_infeasible = 3;

struct CommandOptions {
    std::string out_override; ///< --out, takes precedence over [output] directory
    int export_sdpa = 0;      ///< certify: also dump the feasibility problem at this order
};

namespace detail {

inline std::filesystem::path prepare_out(const config::RunConfig& cfg,
                                         const CommandOptions& opt) {
    std::filesystem::path dir =
        opt.out_override.empty() ? cfg.directory : opt.out_override;
    std::filesystem::create_directories(dir);
    config::RunConfig echoed = cfg;
    echoed.directory = dir.string();
    output::write_text((dir / "effective_config.ini").string(), config::render(echoed));
    return dir;
}

/// Gains either taken verbatim from the config or synthesized by placement.
inline model::Gains resolve_gains(const config::RunConfig& cfg, const model::ModalPlant& mp) {
    if (cfg.gain_mode == config::GainMode::given) {
        model::Gains g;
        g.n0 = static_cast<int>(cfg.k_row.size());
        g.K = DenseMatrix(1, g.n0);
        g.L = DenseMatrix(g.n0, 1);
        for (int i = 0; i < g.n0; ++i) {
            g.K(0, i) = cfg.k_row[i];
            g.L(i, 0) = cfg.l_col[i];
        }
        return g;
    }
    const int n0 = cfg.n0 > 0 ? cfg.n0 : std::max(1, model::minimal_controlled_modes(mp));
    return model::synthesize_gains(mp, n0, cfg.rho, cfg.sigma);
}

inline int parallel_jobs(int jobs) {
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    if (const char* env = std::getenv("DELAYPDE_THREADS")) {
        try {
            std::size_t used = 0;
            cap = std::stoi(env, &used);
            if (used != std::string(env).size() || cap < 1)
                throw ValidationError("");
        } catch (const std::exception&) {
            throw ValidationError("DELAYPDE_THREADS must be a positive integer");
        }
    }
    return std::min(cap, jobs);
}

struct FitOutcome {
    bool ok = false;
    sim::DecayFit fit;
};

/// Decay fit over the late three quarters of the run; reports failure instead
/// of throwing when the series has no usable positive window.
inline FitOutcome guarded_fit(const sim::SimResult& res, const std::vector<double>& series) {
    FitOutcome out;
    const double t1 = res.times.back();
    try {
        out.fit = sim::estimate_decay_rate(res.times, series, 0.25 * t1, 0.95 * t1);
        out.ok = true;
    } catch (const ValidationError&) {
    }
    return out;
}

inline std::string measurement_name(model::Measurement m) {
    return m == model::Measurement::dirichlet ? "dirichlet" : "neumann";
}

} // namespace detail

/// Eigenbasis report: mode table with two-sided growth bounds and traces.
inline int run_eigs(const config::RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
    const auto dir = detail::prepare_out(cfg, opt);
    auto sl = cfg.plant().sl;
    sl.grid_points = std::max(sl.grid_points, spectral::suggested_grid_for_modes(cfg.n_modes));
    const auto basis = spectral::compute_eigenbasis(sl, cfg.n_modes);
    const auto weyl = spectral::validate_weyl_bounds(basis, sl);

    if (cfg.formats.count("csv"))
        output::write_eigen_csv((dir / "modes.csv").string(), basis, weyl);
    std::ostringstream rep;
    rep << "modes computed: " << basis.count() << "\n";
    rep << "grid points:    " << sl.grid_points << "\n";
    rep << "lambda_1 = " << output::fmt(basis.lambda(1)) << "\n";
    rep << "lambda_" << basis.count() << " = " << output::fmt(basis.lambda(basis.count()))
        << "\n";
    rep << "two-sided growth bounds: " << (weyl.pass ? "pass" : "FAIL") << "\n";
    if (!weyl.pass) rep << "first violating mode: " << weyl.first_violation << "\n";
    output::write_text((dir / "eigs_report.txt").string(), rep.str());

    log << "eigs: " << basis.count() << " modes, lambda_1 = " << basis.lambda(1)
        << ", bounds " << (weyl.pass ? "pass" : "FAIL") << "\n";
    return weyl.pass ? exit_ok : exit_numerical;
}

/// Gain synthesis (or verification of given gains) with a spectrum check of
/// the controlled block against the delay-robust margin -|c|.
inline int run_synth(const config::RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
    const auto dir = detail::prepare_out(cfg, opt);
    const auto plant = cfg.plant();
    const auto mp = model::build_modal_plant(plant, cfg.n_modes);
    const auto gains = detail::resolve_gains(cfg, mp);

    const auto f1 = model::controlled_block(mp, gains);
    const auto spectrum = eig_general(f1);
    double abscissa = -1e300;
    for (const auto& z : spectrum) abscissa = std::max(abscissa, z.real());
    const double required = -std::abs(cfg.c);

    if (cfg.formats.count("json"))
        output::write_text((dir / "gains.json").string(),
                           output::gains_json(gains, spectrum, required).dump(2) + "\n");
    std::ostringstream rep;
    rep << "mode: "
        << (cfg.gain_mode == config::GainMode::given ? "verification of given gains"
                                                     : "pole placement")
        << "\n";
    rep << "controlled modes: " << gains.n0 << "\n";
    rep << "K =";
    for (int i = 0; i < gains.n0; ++i) rep << ' ' << output::fmt(gains.K(0, i));
    rep << "\nL =";
    for (int i = 0; i < gains.n0; ++i) rep << ' ' << output::fmt(gains.L(i, 0));
    rep << "\nspectral abscissa of the controlled block: " << output::fmt(abscissa) << "\n";
    rep << "required strict bound: " << output::fmt(required) << "\n";
    rep << "margin check: " << (abscissa < required ? "pass" : "FAIL") << "\n";
    output::write_text((dir / "synth_report.txt").string(), rep.str());

    log << "synth: n0 = " << gains.n0 << ", abscissa = " << abscissa << " (needs < " << required
        << ")\n";
    if (!(abscissa < required))
        throw ValidationError("controlled block spectrum does not clear the delay margin -|c|; "
                              "deepen the placement or adjust the gains");
    return exit_ok;
}

/// Structured certificate search, report emission, and the optional export of
/// the raw feasibility problem for an external semidefinite solver.
inline int run_certify(const config::RunConfig& cfg, const CommandOptions& opt,
                       std::ostream& log) {
    const auto dir = detail::prepare_out(cfg, opt);
    const auto plant = cfg.plant();
    const int depth = std::max(cfg.n_modes, cfg.n_max + 2);
    const auto mp = model::build_modal_plant(plant, depth);
    const auto gains = detail::resolve_gains(cfg, mp);

    certify::SearchOptions sopt;
    sopt.max_n = cfg.n_max;
    sopt.eps_neumann = cfg.epsilon;
    sopt.alpha1 = cfg.alpha1;
    sopt.alpha2 = cfg.alpha2;
    sopt.alpha3 = cfg.alpha3;
    sopt.alpha4 = cfg.alpha4;
    auto sr = certify::search_certificate(plant, mp, gains, sopt);

    auto j = output::certificate_json(sr);
    j["measurement"] = detail::measurement_name(cfg.measurement);
    if (sr.feasible) {
        const auto dom = certify::check_tail_domination(sr.loop, sr.cert, sr.mult);
        j["tail_domination"] = {{"holds", dom.holds}, {"worst_slack", dom.worst_slack}};
    }
    if (cfg.formats.count("json"))
        output::write_text((dir / "certificate.json").string(), j.dump(2) + "\n");
    if (sr.n_ret > 0)
        output::write_text((dir / "model_dump.txt").string(), output::model_dump(sr.loop));

    if (opt.export_sdpa > 0) {
        const int n = opt.export_sdpa;
        if (n <= gains.n0 || n + 1 > mp.count())
            throw ValidationError("certify: --export-sdpa order must exceed n0 and leave the "
                                  "next eigenvalue computable");
        const auto tail = model::compute_tail_data(plant, n, cfg.epsilon);
        const auto cl = model::build_closed_loop(mp, gains, n, tail);
        const auto problem = sdpa::build_problem(cl, certify::Multipliers::defaults(cl.abs_c));
        const auto path = dir / ("problem_" + std::to_string(n) + ".dat-s");
        sdpa::write_sparse(problem, path.string());
        log << "certify: exported feasibility problem at N = " << n << " to " << path.string()
            << "\n";
    }

    if (sr.feasible) {
        log << "certify: feasible at N = " << sr.n_ret << " after " << sr.trials
            << " trials, worst margin excess = " << sr.report.worst_excess << "\n";
        return exit_ok;
    }
    log << "certify: infeasible up to N = " << cfg.n_max << " (" << sr.trials
        << " trials, best excess = " << sr.best_excess << ")\n";
    if (!sr.note.empty()) log << "certify: " << sr.note << "\n";
    return exit_infeasible;
}

/// Closed-loop simulation with trajectory, field, and decay-chart emission.
inline int run_simulate(const config::RunConfig& cfg, const CommandOptions& opt,
                        std::ostream& log) {
    const auto dir = detail::prepare_out(cfg, opt);
    if (!cfg.has_ic())
        throw ValidationError("simulate: the ic section must provide expr or table");
    auto plant = cfg.plant();
    plant.sl.grid_points =
        std::max(plant.sl.grid_points, spectral::suggested_grid_for_modes(cfg.m_modes));
    const auto mp = model::build_modal_plant(plant, cfg.m_modes);
    const auto gains = detail::resolve_gains(cfg, mp);
    const int n_obs =
        cfg.observer_modes > 0 ? cfg.observer_modes : std::min(gains.n0 + 1, mp.count());

    const auto res = sim::simulate_closed_loop(mp, gains, n_obs, cfg.sim_config());
    if (res.ic_boundary_mismatch > 1e-6)
        log << "simulate: note, initial data misses the actuated-end condition by "
            << res.ic_boundary_mismatch << " (classical-solution caveat only)\n";

    if (cfg.formats.count("csv")) {
        output::write_trajectory_csv((dir / "trajectory.csv").string(), res,
                                     cfg.trajectory_modes);
        if (cfg.field) {
            output::write_field_csv((dir / "field.csv").string(), mp, res, cfg.field_stride,
                                    false);
            output::write_field_csv((dir / "error_field.csv").string(), mp, res,
                                    cfg.field_stride, true);
        }
    }
    if (cfg.formats.count("svg"))
        output::write_svg_decay((dir / "decay.svg").string(), res.times,
                                {{"state energy", &res.h1_sq},
                                 {"squared norm", &res.l2_sq},
                                 {"estimation error", &res.err_sq}},
                                "closed-loop energy decay");

    const double peak = *std::max_element(res.h1_sq.begin(), res.h1_sq.end());
    const auto fit = detail::guarded_fit(res, res.h1_sq);
    std::ostringstream rep;
    rep << "plant modes: " << res.plant_modes << ", observer modes: " << res.observer_modes
        << "\n";
    rep << "dt = " << output::fmt(res.dt) << ", steps = " << res.steps << "\n";
    rep << "peak energy = " << output::fmt(peak) << "\n";
    rep << "final energy = " << output::fmt(res.h1_sq.back()) << "\n";
    rep << "final / peak = " << output::fmt(res.h1_sq.back() / peak) << "\n";
    if (fit.ok)
        rep << "fitted decay rate = " << output::fmt(fit.fit.rate)
            << " (rms residual = " << output::fmt(fit.fit.rms_residual) << ", "
            << fit.fit.points << " points)\n";
    else
        rep << "fitted decay rate = not available (no positive window)\n";
    rep << "start-time boundary mismatch = " << output::fmt(res.ic_boundary_mismatch) << "\n";
    if (!res.early_stop_reason.empty()) rep << "early stop: " << res.early_stop_reason << "\n";
    output::write_text((dir / "simulate_report.txt").string(), rep.str());

    if (!res.early_stop_reason.empty()) {
        log << "simulate: stopped early, " << res.early_stop_reason << "\n";
        return exit_numerical;
    }
    log << "simulate: final/peak energy = " << res.h1_sq.back() / peak;
    if (fit.ok) log << ", decay rate = " << fit.fit.rate;
    log << "\n";
    return exit_ok;
}

/// Delay sweep: one simulation per h with a shared controller, in parallel.
inline int run_sweep(const config::RunConfig& cfg, const CommandOptions& opt,
                     std::ostream& log) {
    const auto dir = detail::prepare_out(cfg, opt);
    if (cfg.h_list.empty())
        throw ValidationError("sweep: numerics.h_list must name at least one delay");
    if (!cfg.has_ic()) throw ValidationError("sweep: the ic section must provide expr or table");

    auto plant = cfg.plant();
    plant.sl.grid_points =
        std::max(plant.sl.grid_points, spectral::suggested_grid_for_modes(cfg.m_modes));
    const auto mp = model::build_modal_plant(plant, cfg.m_modes);
    const auto gains = detail::resolve_gains(cfg, mp);
    const int n_obs =
        cfg.observer_modes > 0 ? cfg.observer_modes : std::min(gains.n0 + 1, mp.count());
    const auto scfg = cfg.sim_config();

    struct Row {
        double h = 0.0;
        bool fit_ok = false;
        sim::DecayFit fit;
        std::string early;
    };
    std::vector<Row> rows(cfg.h_list.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(cfg.h_list.size());

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.h_list.size()) return;
            try {
                model::ModalPlant mph = mp;
                mph.h = cfg.h_list[i];
                const auto res = sim::simulate_closed_loop(mph, gains, n_obs, scfg);
                Row row;
                row.h = cfg.h_list[i];
                row.early = res.early_stop_reason;
                const auto fit = detail::guarded_fit(res, res.h1_sq);
                row.fit_ok = fit.ok;
                row.fit = fit.fit;
                rows[i] = row;
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int workers = detail::parallel_jobs(static_cast<int>(cfg.h_list.size()));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);

    std::ostringstream csv, rep;
    csv << "h,delta_hat,rate_stderr,rms_residual,points\n";
    rep << "delay sweep over " << rows.size() << " values, M = " << cfg.m_modes
        << " modes, t_final = " << output::fmt(cfg.t_final) << "\n";
    bool any_early = false, all_fits = true;
    for (const auto& row : rows) {
        csv << output::fmt(row.h) << ',';
        if (row.fit_ok)
            csv << output::fmt(row.fit.rate) << ',' << output::fmt(row.fit.rate_stderr) << ','
                << output::fmt(row.fit.rms_residual) << ',' << row.fit.points << "\n";
        else
            csv << "nan,nan,nan,0\n";
        rep << "h = " << output::fmt(row.h) << ": ";
        if (row.fit_ok)
            rep << "delta_hat = " << output::fmt(row.fit.rate) << " +/- "
                << output::fmt(row.fit.rate_stderr)
                << " (log rms = " << output::fmt(row.fit.rms_residual) << ")\n";
        else
            rep << "no usable decay window\n";
        if (!row.early.empty()) {
            rep << "  early stop: " << row.early << "\n";
            any_early = true;
        }
        all_fits = all_fits && row.fit_ok;
    }
    if (all_fits && rows.size() > 1) {
        bool ordered = true;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const double gap = rows[i - 1].fit.rate - rows[i].fit.rate;
            const double noise = rows[i - 1].fit.rate_stderr + rows[i].fit.rate_stderr;
            rep << "gap(" << output::fmt(rows[i - 1].h) << " -> " << output::fmt(rows[i].h)
                << ") = " << output::fmt(gap) << " vs stderr sum " << output::fmt(noise)
                << "\n";
            ordered = ordered && gap > noise;
        }
        rep << "monotone decay ordering: " << (ordered ? "pass" : "FAIL") << "\n";
    }
    if (cfg.formats.count("csv")) output::write_text((dir / "sweep.csv").string(), csv.str());
    output::write_text((dir / "sweep_report.txt").string(), rep.str());
    if (cfg.formats.count("svg") && all_fits) {
        std::vector<double> hs, rates;
        for (const auto& row : rows) {
            hs.push_back(row.h);
            rates.push_back(row.fit.rate);
        }
        output::write_svg_xy((dir / "sweep.svg").string(), hs, rates, "decay rate vs delay",
                             "h", "delta_hat");
    }

    log << "sweep: " << rows.size() << " delays done";
    if (any_early) log << " (with early stops)";
    log << "\n";
    return any_early ? exit_numerical : exit_ok;
}

inline int dispatch(const std::string& command, const config::RunConfig& cfg,
                    const CommandOptions& opt, std::ostream& log) {
    if (command == "eigs") return run_eigs(cfg, opt, log);
    if (command == "synth") return run_synth(cfg, opt, log);
    if (command == "certify") return run_certify(cfg, opt, log);
    if (command == "simulate") return run_simulate(cfg, opt, log);
    if (command == "sweep") return run_sweep(cfg, opt, log);
    throw ValidationError("unknown command '" + command + "'");
}

} // namespace delaypde::cli
