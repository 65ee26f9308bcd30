#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "delaypde/certify.hpp"
#include "delaypde/model.hpp"
#include "delaypde/sdpa.hpp"
#include "reference_assembly.hpp"

using namespace delaypde;
using namespace delaypde::model;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

DelayPlant reference_plant(Measurement meas, int grid = 2001) {
    DelayPlant plant;
    plant.sl.p = Coefficient::constant(1.0);
    plant.sl.q = Coefficient::constant(1.0);
    plant.sl.q_c = 2.0;
    plant.sl.theta1 = kPi / 3.0;
    plant.sl.theta2 = 0.0;
    plant.sl.grid_points = grid;
    plant.c = 3.0;
    plant.h = 1.0;
    plant.measurement = meas;
    return plant;
}

const ModalPlant& modal(Measurement meas) {
    static const ModalPlant dir = build_modal_plant(reference_plant(Measurement::dirichlet), 66);
    static const ModalPlant neu = build_modal_plant(reference_plant(Measurement::neumann), 66);
    return meas == Measurement::dirichlet ? dir : neu;
}

Gains reference_gains(Measurement meas) {
    const auto& mp = modal(meas);
    return synthesize_gains(mp, minimal_controlled_modes(mp));
}

const certify::SearchResult& reference_search(Measurement meas) {
    static const certify::SearchResult dir = certify::search_certificate(
        reference_plant(Measurement::dirichlet), modal(Measurement::dirichlet),
        reference_gains(Measurement::dirichlet));
    static const certify::SearchResult neu = certify::search_certificate(
        reference_plant(Measurement::neumann), modal(Measurement::neumann),
        reference_gains(Measurement::neumann));
    return meas == Measurement::dirichlet ? dir : neu;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double w = 0.0;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) w = std::max(w, std::abs(a(i, j) - b(i, j)));
    return w;
}

double entry_tol(const DenseMatrix& m) { return 1e-12 * (1.0 + m.norm_max()); }

double scalar_tol(double v) { return 1e-12 * (1.0 + std::abs(v)); }

certify::Certificate scaled(const certify::Certificate& ct, double s) {
    certify::Certificate out = ct;
    out.P = s * out.P;
    out.Q1 = s * out.Q1;
    out.Q2 = s * out.Q2;
    out.r1 *= s;
    out.r2 *= s;
    out.beta *= s;
    out.gamma *= s;
    return out;
}

} // namespace

TEST_CASE("Assembled blocks match an independent reconstruction on randomized data") {
    std::mt19937 rng(20240817u);
    for (int trial = 0; trial < 20; ++trial) {
        const int n0 = 1 + trial % 3;
        const int mid = trial % 5 == 0 ? 0 : 1 + trial % 4;
        const auto meas = trial % 2 ? Measurement::neumann : Measurement::dirichlet;
        auto inst = refcheck::random_instance(rng, n0, mid, meas);

        auto lib = certify::assemble(inst.cl, inst.ct, inst.mult);
        auto ref = refcheck::assemble(inst.cl, inst.ct, inst.mult);

        REQUIRE(lib.has_mid == ref.has_mid);
        REQUIRE(lib.has_theta5 == ref.has_theta5);
        REQUIRE(max_abs_diff(lib.Psi, ref.Psi) <= entry_tol(ref.Psi));
        REQUIRE(max_abs_diff(lib.Theta1, ref.Theta1) <= entry_tol(ref.Theta1));
        if (ref.has_mid) REQUIRE(max_abs_diff(lib.Theta2, ref.Theta2) <= entry_tol(ref.Theta2));
        REQUIRE(lib.Theta3 == Catch::Approx(ref.Theta3).margin(scalar_tol(ref.Theta3)));
        REQUIRE(lib.Theta4 == Catch::Approx(ref.Theta4).margin(scalar_tol(ref.Theta4)));
        if (ref.has_theta5)
            REQUIRE(lib.Theta5 == Catch::Approx(ref.Theta5).margin(scalar_tol(ref.Theta5)));
    }
}

TEST_CASE("Constraint assembly is homogeneous of degree one in the certificate") {
    std::mt19937 rng(77u);
    auto inst = refcheck::random_instance(rng, 2, 3, Measurement::neumann);
    const double s = 3.7;

    auto base = certify::assemble(inst.cl, inst.ct, inst.mult);
    auto bumped = certify::assemble(inst.cl, scaled(inst.ct, s), inst.mult);

    REQUIRE(max_abs_diff(bumped.Psi, s * base.Psi) <= entry_tol(bumped.Psi));
    REQUIRE(max_abs_diff(bumped.Theta1, s * base.Theta1) <= entry_tol(bumped.Theta1));
    REQUIRE(max_abs_diff(bumped.Theta2, s * base.Theta2) <= entry_tol(bumped.Theta2));
    REQUIRE(bumped.Theta3 == Catch::Approx(s * base.Theta3).margin(scalar_tol(bumped.Theta3)));
    REQUIRE(bumped.Theta4 == Catch::Approx(s * base.Theta4).margin(scalar_tol(bumped.Theta4)));
    REQUIRE(bumped.Theta5 == Catch::Approx(s * base.Theta5).margin(scalar_tol(bumped.Theta5)));
}

TEST_CASE("Constructive candidate satisfies its closed-form identities") {
    struct Case {
        Measurement meas;
        int n_ret;
    };
    const Case cases[] = {{Measurement::dirichlet, 2}, {Measurement::dirichlet, 6},
                          {Measurement::dirichlet, 12}, {Measurement::neumann, 4},
                          {Measurement::neumann, 10}};
    for (const auto& c : cases) {
        CAPTURE(static_cast<int>(c.meas), c.n_ret);
        auto plant = reference_plant(c.meas);
        const auto& mp = modal(c.meas);
        auto gains = reference_gains(c.meas);
        auto tail = compute_tail_data(plant, c.n_ret);
        auto cl = build_closed_loop(mp, gains, c.n_ret, tail);
        auto mult = certify::Multipliers::defaults(cl.abs_c);
        auto ct = certify::constructive_candidate(cl, mult);

        // P comes from a Lyapunov solve of the shifted finite block.
        REQUIRE(cholesky_spd(ct.P));

        auto cs = certify::assemble(cl, ct, mult);
        const int mid = cl.n_ret - cl.n0;

        // Theta2 = -beta I by the choice of Q2.
        for (int i = 0; i < mid; ++i)
            for (int j = 0; j < mid; ++j) {
                const double want = i == j ? -ct.beta : 0.0;
                REQUIRE(cs.Theta2(i, j) == Catch::Approx(want).margin(1e-12 * ct.beta));
            }

        // The uncoupled middle block of Psi sits at or below -beta I, touching
        // it on the slowest retained tail mode.
        DenseMatrix psi2(mid, mid);
        for (int i = 0; i < mid; ++i)
            for (int j = 0; j < mid; ++j) {
                psi2(i, j) = ct.Q2(i, j);
                if (i == j) psi2(i, i) += ct.r1 * (2.0 * cl.F3(i, i) + cl.abs_c);
            }
        auto ev = symmetric_eigenvalues(psi2);
        REQUIRE(ev.back() <= -ct.beta * (1.0 - 1e-10));
        REQUIRE(psi2(0, 0) == Catch::Approx(-ct.beta).epsilon(1e-12));

        // r2 = (1 + tau_r) gamma alpha1 |c| leaves Theta3 = -tau_r gamma alpha1 |c|.
        const double theta3_want = -0.1 * ct.gamma * mult.alpha1 * cl.abs_c;
        REQUIRE(cs.Theta3 == Catch::Approx(theta3_want).epsilon(1e-10));
    }
}

TEST_CASE("Certificate search closes the reference loop, both measurements") {
    for (auto meas : {Measurement::dirichlet, Measurement::neumann}) {
        CAPTURE(static_cast<int>(meas));
        const auto& res = reference_search(meas);

        REQUIRE(res.feasible);
        REQUIRE(res.n0 == 1);
        REQUIRE(res.n_ret == 4);
        REQUIRE(res.report.feasible);
        REQUIRE(res.report.worst_excess < -0.01);
        REQUIRE(res.trials <= 200);
        REQUIRE(res.cert.beta > 0.0);
        REQUIRE(res.cert.gamma > 0.0);

        // Re-verification from the stored loop and certificate reproduces the
        // margins; the check is a pure function of its inputs.
        auto again = certify::check_certificate(res.loop, res.cert, res.mult);
        REQUIRE(again.feasible);
        REQUIRE(std::abs(again.worst_excess - res.report.worst_excess) <=
                1e-10 * (1.0 + std::abs(res.report.worst_excess)));

        // The certificate cone is scale-free but the strictness floors are
        // not: growing the point keeps it feasible, collapsing it to rounding
        // scale must not pass the absolute margins.
        REQUIRE(certify::check_certificate(res.loop, scaled(res.cert, 10.0), res.mult).feasible);
        REQUIRE_FALSE(
            certify::check_certificate(res.loop, scaled(res.cert, 1e-20), res.mult).feasible);

        auto td = certify::check_tail_domination(res.loop, res.cert, res.mult);
        REQUIRE(td.holds);
        const double theta4 = res.report.find("Theta4")->value;
        REQUIRE(std::abs(td.worst_slack) <= 1e-9 * (1.0 + std::abs(theta4)));
    }
}

TEST_CASE("Flux-side certificate needs the positive tail gap") {
    const auto& res = reference_search(Measurement::neumann);
    REQUIRE(res.report.find("Theta5") != nullptr);
    REQUIRE(res.report.find("Theta5")->ok);

    // Inflating beta flips the tail gap negative and the monotone-chain
    // argument must refuse to certify the tail.
    auto bad = res.cert;
    bad.beta *= 1e6;
    auto td = certify::check_tail_domination(res.loop, bad, res.mult);
    REQUIRE_FALSE(td.holds);
}

TEST_CASE("Search reports the nearest miss when restricted to a losing tuning") {
    certify::SearchOptions opts;
    opts.ladder = {4};
    opts.beta_mults = {1.0};
    opts.gamma_mults = {1.0};
    opts.r2_mults = {1.0};
    auto res = certify::search_certificate(reference_plant(Measurement::dirichlet),
                                           modal(Measurement::dirichlet),
                                           reference_gains(Measurement::dirichlet), opts);
    REQUIRE_FALSE(res.feasible);
    REQUIRE(res.trials == 1);
    REQUIRE(res.n_ret == 4);
    REQUIRE(res.best_excess > 0.0);
    REQUIRE_FALSE(res.report.feasible);
    REQUIRE_FALSE(res.report.margins.empty());

    SECTION("a ladder with no admissible rung records nothing") {
        certify::SearchOptions none;
        none.max_n = 2;
        auto empty = certify::search_certificate(reference_plant(Measurement::dirichlet),
                                                 modal(Measurement::dirichlet),
                                                 reference_gains(Measurement::dirichlet), none);
        REQUIRE_FALSE(empty.feasible);
        REQUIRE(empty.trials == 0);
    }

    SECTION("an unstabilized finite block aborts the candidate with a note") {
        Gains zero;
        zero.n0 = 1;
        zero.K = DenseMatrix(1, 1);
        zero.L = DenseMatrix(1, 1);
        certify::SearchOptions one;
        one.ladder = {4};
        auto res0 = certify::search_certificate(reference_plant(Measurement::dirichlet),
                                                modal(Measurement::dirichlet), zero, one);
        REQUIRE_FALSE(res0.feasible);
        REQUIRE(res0.trials == 0);
        REQUIRE(res0.note.find("candidate construction failed") != std::string::npos);
    }
}

TEST_CASE("Certificate checks reject malformed inputs") {
    std::mt19937 rng(5u);
    auto inst = refcheck::random_instance(rng, 1, 2, Measurement::dirichlet);

    SECTION("asymmetric P") {
        auto ct = inst.ct;
        ct.P(0, 1) += 0.5;
        REQUIRE_THROWS_AS(certify::assemble(inst.cl, ct, inst.mult), ValidationError);
    }
    SECTION("wrong block size") {
        auto ct = inst.ct;
        ct.P = DenseMatrix::identity(3);
        REQUIRE_THROWS_AS(certify::assemble(inst.cl, ct, inst.mult), ValidationError);
    }
    SECTION("multipliers must keep tail contraction") {
        certify::Multipliers m;
        m.alpha1 = 0.05; // |c| / alpha1 alone exceeds 2
        REQUIRE_THROWS_AS(certify::assemble(inst.cl, inst.ct, m), ValidationError);
    }
    SECTION("non-positive multipliers") {
        certify::Multipliers m = inst.mult;
        m.alpha3 = 0.0;
        REQUIRE_THROWS_AS(m.validate(inst.cl.abs_c), ValidationError);
    }
    SECTION("candidate needs a delay coupling") {
        auto cl = inst.cl;
        cl.abs_c = 0.0;
        REQUIRE_THROWS_AS(certify::constructive_candidate(cl, certify::Multipliers::defaults(0.0)),
                          ValidationError);
    }
    SECTION("candidate needs a Hurwitz shifted block") {
        auto cl = inst.cl;
        cl.F1 = DenseMatrix::identity(2 * cl.n0);
        REQUIRE_THROWS_AS(certify::constructive_candidate(cl, inst.mult), NumericalError);
    }
}

TEST_CASE("Multipliers bookkeeping") {
    auto m = certify::Multipliers::defaults(3.0);
    REQUIRE(m.alpha1 == 12.0);
    REQUIRE(m.alpha4 == 12.0);
    REQUIRE(m.contraction(3.0) == 0.5);

    auto m0 = certify::Multipliers::defaults(0.0);
    REQUIRE(m0.alpha1 == 1.0);
    REQUIRE(m0.contraction(0.0) == 0.75);
}

TEST_CASE("Decision-vector packing round-trips") {
    const auto& res = reference_search(Measurement::dirichlet);
    sdpa::VarLayout lay(res.loop);
    REQUIRE(lay.d == 2);
    REQUIRE(lay.mid == 3);
    REQUIRE(lay.total == 3 + 3 + 6 + 4);

    auto y = sdpa::vech_point(res.cert, lay);
    REQUIRE(static_cast<int>(y.size()) == lay.total);
    auto ct = sdpa::unvech(y, lay);
    REQUIRE(max_abs_diff(ct.P, res.cert.P) == 0.0);
    REQUIRE(max_abs_diff(ct.Q1, res.cert.Q1) == 0.0);
    REQUIRE(max_abs_diff(ct.Q2, res.cert.Q2) == 0.0);
    REQUIRE(ct.r1 == res.cert.r1);
    REQUIRE(ct.r2 == res.cert.r2);
    REQUIRE(ct.beta == res.cert.beta);
    REQUIRE(ct.gamma == res.cert.gamma);

    SECTION("vech averages a stray asymmetric pair") {
        auto skew = res.cert;
        skew.P(0, 1) = 1.0;
        skew.P(1, 0) = 3.0;
        auto z = sdpa::vech_point(skew, lay);
        REQUIRE(z[1] == 2.0);
    }

    SECTION("length mismatch is rejected") {
        std::vector<double> short_y(lay.total - 1, 0.0);
        REQUIRE_THROWS_AS(sdpa::unvech(short_y, lay), ValidationError);
    }
}

TEST_CASE("Sparse export reproduces the assembled blocks at the certified point") {
    const auto& res = reference_search(Measurement::dirichlet);
    auto pb = sdpa::build_problem(res.loop, res.mult);
    sdpa::VarLayout lay(res.loop);

    const auto path =
        (std::filesystem::temp_directory_path() / "delaypde_export_check.dat-s").string();
    sdpa::write_sparse(pb, path);
    auto pf = sdpa::read_sparse(path);
    std::filesystem::remove(path);

    REQUIRE(pf.m == lay.total);
    REQUIRE(pf.block_sizes == pb.blocks.sizes);
    REQUIRE(static_cast<int>(pf.objective.size()) == pf.m);
    for (double v : pf.objective) REQUIRE(v == 0.0);
    REQUIRE(pf.entries.size() == pb.entries.size());

    auto y = sdpa::vech_point(res.cert, lay);
    auto xs = sdpa::evaluate(pf, y);
    auto cs = certify::assemble(res.loop, res.cert, res.mult);
    const double eps = pb.eps;
    const auto& bl = pb.blocks;

    auto match = [&](const DenseMatrix& x, const DenseMatrix& want, double shift) {
        REQUIRE(x.rows == want.rows);
        double tol = 1e-10 * (1.0 + want.norm_max());
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) {
                const double target = want(i, j) - (i == j ? shift : 0.0);
                REQUIRE(x(i, j) == Catch::Approx(target).margin(tol));
            }
    };
    match(xs[bl.psi], -1.0 * cs.Psi, eps);
    match(xs[bl.theta1], -1.0 * cs.Theta1, eps);
    match(xs[bl.theta2], -1.0 * cs.Theta2, eps);
    match(xs[bl.p], res.cert.P, eps);
    match(xs[bl.q1], res.cert.Q1, 0.0);
    match(xs[bl.q2], res.cert.Q2, 0.0);

    const auto& sc = xs[bl.scalars];
    REQUIRE(sc.rows == 6);
    REQUIRE(sc(0, 0) == Catch::Approx(-cs.Theta3 - eps).margin(1e-10));
    REQUIRE(sc(1, 1) == Catch::Approx(-cs.Theta4 - eps).margin(1e-10 * (1.0 + std::abs(cs.Theta4))));
    REQUIRE(sc(2, 2) == Catch::Approx(res.cert.r1 - eps).margin(1e-10));
    REQUIRE(sc(3, 3) == Catch::Approx(res.cert.r2 - eps).margin(1e-10));
    REQUIRE(sc(4, 4) == Catch::Approx(res.cert.beta - eps).margin(1e-10 * (1.0 + res.cert.beta)));
    REQUIRE(sc(5, 5) == Catch::Approx(res.cert.gamma - eps).margin(1e-10));

    // The verified certificate is a strictly feasible point of the export.
    for (const auto& x : xs) REQUIRE(symmetric_eigenvalues(x).front() > 0.0);

    SECTION("export is deterministic") {
        auto again = sdpa::build_problem(res.loop, res.mult);
        REQUIRE(again.entries.size() == pb.entries.size());
        for (std::size_t k = 0; k < pb.entries.size(); ++k) {
            REQUIRE(again.entries[k].mat == pb.entries[k].mat);
            REQUIRE(again.entries[k].block == pb.entries[k].block);
            REQUIRE(again.entries[k].i == pb.entries[k].i);
            REQUIRE(again.entries[k].j == pb.entries[k].j);
            REQUIRE(again.entries[k].value == pb.entries[k].value);
        }
    }
}
