#include <doctest.h>

#include <cmath>

#include "mmqss/errors.hpp"
#include "mmqss/reductions.hpp"
#include "oracles.hpp"

using namespace mmqss;

namespace {

std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
    return g;
}

}  // namespace

TEST_CASE("reduced_rhs examples") {
    const auto p = oracle::fig_final();
    const double lambda = oracle::complex_root_bisect(p);
    CHECK(reduced_rhs(ReducedModelKind::TQSSA, 0.0, p) == doctest::Approx(p.k_cat * lambda).epsilon(1e-13));
    CHECK(reduced_rhs(ReducedModelKind::TQSSA, 0.0, p) == doctest::Approx(99.899).epsilon(1e-5));
    CHECK(reduced_rhs(ReducedModelKind::SQSSA_S, 1.0, p) == doctest::Approx(-50.0));
    CHECK(reduced_rhs(ReducedModelKind::RQSSA, p.s0, p) == 0.0);
    const RateParameters wide{1.0, 1.0, 1.0, 1.0, 1e12};
    CHECK(reduced_rhs(ReducedModelKind::EXTENDED, 1e12, wide) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK_THROWS_AS(reduced_rhs(ReducedModelKind::SQSSA_P, -0.1, p), DomainError);
    CHECK_THROWS_AS(reduced_rhs(ReducedModelKind::SQSSA_S, 1001.0, p), DomainError);

    CHECK(parse_reduced_kind("tqssa-practice") == ReducedModelKind::TQSSA_PRACTICE);
    CHECK_THROWS_AS(parse_reduced_kind("nope"), InvalidParameters);
    CHECK(historical_refuted(ReducedModelKind::EQSSA_SEGEL));
    CHECK(reduced_initial_state(ReducedModelKind::EQSSA_SEGEL, p) ==
          doctest::Approx((std::sqrt(2.0) - 1.0) * p.s0));
}

TEST_CASE("reduced trajectories stay in [0, s0] and are monotone") {
    oracle::ParamSampler sampler(31);
    for (int n = 0; n < 20; ++n) {
        const auto p = sampler.next();
        const auto ts = timescales(p);
        const double horizon = std::min(3.0 * std::max(ts.t_D, ts.t_P), 1e6);
        for (ReducedModelKind kind : all_reduced_kinds()) {
            const auto tr = simulate_reduced(kind, p, horizon);
            const std::size_t idx = integrates_substrate(kind) ? 0 : 2;
            double prev = tr.states.front()[static_cast<Eigen::Index>(idx)];
            // Overshoot of the equilibrium is bounded by the integration tolerance.
            const double tol = 10 * (1e-8 * p.s0 + 1e-10);
            bool monotone = true, inside = true;
            for (const auto& y : tr.states) {
                const double x = y[static_cast<Eigen::Index>(idx)];
                inside = inside && x >= -tol && x <= p.s0 + tol;
                monotone = monotone && (integrates_substrate(kind) ? x <= prev + tol : x >= prev - tol);
                prev = x;
            }
            CHECK(inside);
            CHECK(monotone);
            CHECK(std::abs(tr.states.back().sum() - p.s0) <= 1e-12 * p.s0 + 1e-12);
        }
    }
}

TEST_CASE("closed forms") {
    const auto p = oracle::rqssa_instance();
    CHECK(closed_form(ClosedFormKind::RQSSA_P, 0.0, p) == 0.0);
    CHECK(closed_form(ClosedFormKind::INNER_LAYER, 0.0, p) == 0.0);
    const auto g = dimensionless_groups(p);
    const double tc = timescales(p).t_C;
    CHECK(closed_form(ClosedFormKind::INNER_LAYER, tc, p) ==
          doctest::Approx(g.eps_SS * p.s0 * (1 - std::exp(-1.0))).epsilon(1e-14));

    const auto tr = simulate_mass_action(p, 400.0);
    const double pma = tr.states.back()[2];
    CHECK(std::abs(pma - closed_form(ClosedFormKind::RQSSA_P, 400.0, p)) <= 0.6);
    CHECK_THROWS_AS(closed_form(ClosedFormKind::RQSSA_P, -1.0, p), DomainError);
}

TEST_CASE("reduced RQSSA integration matches its closed form") {
    const auto p = oracle::rqssa_instance();
    const auto tr = simulate_reduced(ReducedModelKind::RQSSA, p, 500.0);
    for (std::size_t i = 0; i < tr.size(); i += 7)
        CHECK(std::abs(tr.states[i][2] - closed_form(ClosedFormKind::RQSSA_P, tr.times[i], p)) < 1e-6);
}

TEST_CASE("Riccati base point") {
    const auto half = riccati_base_point(0.5);
    CHECK(half.c_bar == doctest::Approx(2.0 - std::sqrt(2.0)).epsilon(1e-14));
    CHECK(half.s_bar == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-14));
    CHECK(riccati_base_point(0.0).c_bar == 0.5);
    CHECK(riccati_base_point(0.9).c_bar == doctest::Approx(0.75975).epsilon(1e-5));

    for (double mu : {0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99}) {
        const auto bp = riccati_base_point(mu);
        CHECK(std::abs(1 - 2 * bp.c_bar + mu * bp.c_bar * bp.c_bar) <= 1e-12);
        const double ref = oracle::bisect([mu](double c) { return 1 - 2 * c + mu * c * c; }, 0.0, 1.0);
        CHECK(std::abs(bp.c_bar - ref) <= 1e-12);
    }

    const RateParameters fig21r{1.0, 1.0, 0.01, 2.02, 1.01};
    const auto bp = riccati_base_point(fig21r);
    CHECK(bp.mu == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(bp.s == doctest::Approx((std::sqrt(2.0) - 1.0) * 1.01).epsilon(1e-12));
    CHECK(bp.c == doctest::Approx((2.0 - std::sqrt(2.0)) * 1.01).epsilon(1e-12));
}

TEST_CASE("invariance residual structural identities") {
    const RateParameters frozen{1.0, 2.0, 0.0, 3.0, 5.0};
    const auto grid = linear_grid(0.05, 5.0, 50);
    const auto r = invariance_residual(s_nullcline_graph(frozen), frozen, grid);
    CHECK(r.sup() <= 1e-12);

    const auto p = oracle::small_eta();
    const auto h = c_nullcline_graph(p);
    const auto rc = invariance_residual(h, p, linear_grid(0.01, p.s0, 100));
    for (std::size_t i = 0; i < rc.s.size(); ++i) {
        const double s = rc.s[i];
        const auto d = mass_action_rhs({s, h.h(s), 0.0}, p);
        CHECK(rc.residual[i] == doctest::Approx(-h.dh(s) * d.ds).epsilon(1e-9));
    }

    // Numeric derivative path matches the analytic one.
    const auto rn = invariance_residual({h.h, {}}, p, rc.s);
    for (std::size_t i = 0; i < rc.s.size(); ++i)
        CHECK(rn.residual[i] == doctest::Approx(rc.residual[i]).epsilon(1e-7));
    CHECK_THROWS_AS(invariance_residual(h, p, {0.0, 1.0}), DomainError);
}

TEST_CASE("c-nullcline residual doubles with e0 in the scaled chart") {
    const auto p = oracle::small_eta();
    auto p2 = p;
    p2.e0 *= 2;
    const auto grid = linear_grid(1e-3, p.s0, 400);
    const double r1 = invariance_residual(c_nullcline_graph(p), p, grid).sup_scaled();
    const double r2 = invariance_residual(c_nullcline_graph(p2), p2, grid).sup_scaled();
    CHECK(r2 / r1 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("Fraser refinement") {
    const RateParameters frozen{1.0, 2.0, 0.0, 3.0, 5.0};
    const auto grid = linear_grid(0.05, 5.0, 200);
    const auto fixed = refine_manifold(s_nullcline_graph(frozen), frozen, 1, grid);
    REQUIRE(fixed.iterates.size() == 2);
    for (std::size_t i = 0; i < grid.size(); ++i)
        CHECK(std::abs(fixed.iterates[1][i] - fixed.iterates[0][i]) <= 1e-12);

    const auto p = oracle::small_eta();
    const auto g2 = linear_grid(1e-3, p.s0, 2001);
    const auto one = refine_manifold(c_nullcline_graph(p), p, 1, g2);
    CHECK(one.sup_residuals[1] * 5 <= one.sup_residuals[0]);
    CHECK_FALSE(one.diverged);

    const auto fig = oracle::fig_final();
    const auto gf = linear_grid(1e-2, fig.s0, 500);
    const auto many = refine_manifold(c_nullcline_graph(fig), fig, 6, gf);
    CHECK(many.sup_residuals.size() == many.iterates.size());
    CHECK_THROWS_AS(refine_manifold(c_nullcline_graph(p), p, 0, g2), InvalidParameters);
}

TEST_CASE("critical set, KOFF_AND_KCAT") {
    const RateParameters equal{3.0, 1.0, 1.0, 7.0, 7.0};
    const auto cs = critical_set(equal, Tfp::KOFF_AND_KCAT);
    CHECK(cs.components.size() == 2);
    REQUIRE(cs.singular_points.size() == 1);
    CHECK(cs.singular_points[0].x == 0.0);
    CHECK(cs.singular_points[0].y == 1.0);
    CHECK(std::abs(cs.singular_points[0].margin) <= 1e-12);

    const RateParameters sub{3.0, 1.0, 1.0, 7.0, 2.0};
    const auto cs2 = critical_set(sub, Tfp::KOFF_AND_KCAT);
    CHECK(cs2.components.size() == 1);
    CHECK(cs2.singular_points.empty());
    for (const auto& v : cs2.components[0].vertices) CHECK(v.margin < 0.0);

    const RateParameters super{3.0, 1.0, 1.0, 2.0, 8.0};
    const auto cs3 = critical_set(super, Tfp::KOFF_AND_KCAT);
    REQUIRE(cs3.singular_points.size() == 1);
    CHECK(cs3.singular_points[0].x == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(std::abs(cs3.singular_points[0].margin) <= 1e-12);

    const auto k1 = critical_set(equal, Tfp::K1);
    REQUIRE(k1.components.size() == 1);
    for (const auto& v : k1.components[0].vertices) {
        CHECK(v.y == 0.0);
        CHECK(v.margin < 0.0);
    }
    const auto kc = critical_set(equal, Tfp::KCAT);
    for (const auto& v : kc.components[0].vertices) CHECK(v.margin < 0.0);
}

TEST_CASE("hyperbolicity margin and exchange of stability") {
    const RateParameters p{3.0, 1.0, 1.0, 7.0, 7.0};
    CHECK(std::abs(hyperbolicity_margin(0.0, 1.0, p)) <= 1e-12);
    CHECK(hyperbolicity_margin(0.5, 1.0, p) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(hyperbolicity_margin(0.5, 0.5, p) == doctest::Approx(-0.5).epsilon(1e-14));
    // Sign flips across the singular point along each branch (p_bar = -0.25 and +0.25).
    CHECK(hyperbolicity_margin(-0.25, 1.0, p) * hyperbolicity_margin(0.25, 1.0, p) < 0.0);
    CHECK(hyperbolicity_margin(-0.25, 1.25, p) * hyperbolicity_margin(0.25, 0.75, p) < 0.0);
}

TEST_CASE("transcritical normal form") {
    for (double k1 : {0.1, 1.0, 42.0}) {
        const auto nf = normal_form_coefficients({k1, 1.0, 1.0, 7.0, 7.0});
        CHECK(nf.a == 1.0);
        CHECK(nf.b == -1.0);
        CHECK(std::abs(nf.taylor_a - 1.0) <= 1e-12);
        CHECK(std::abs(nf.taylor_b + 1.0) <= 1e-12);
    }
    // Independent finite-difference oracle on the fast field in (p_bar, c_hat).
    auto G = [](double pb, double c) { return (1 - c) * (1 - c - pb); };
    const double h = 1e-3;
    const double a_fd = -(G(h, 1 - h) - G(h, 1 + h) - G(-h, 1 - h) + G(-h, 1 + h)) / (4 * h * h);
    const double b_fd = -0.5 * (G(0, 1 - h) - 2 * G(0, 1) + G(0, 1 + h)) / (h * h);
    CHECK(a_fd == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(b_fd == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK_THROWS_AS(normal_form_coefficients({1.0, 1.0, 1.0, 1.0, 2.0}), NoTranscriticalPoint);
}

TEST_CASE("extended reduction beats the Segel-Slemrod initial value problem") {
    const RateParameters p{10.0, 10.0, 0.01, 2.001, 1.0};
    const auto ts = timescales(p);
    const auto ma = simulate_mass_action(p, 5 * ts.t_D);
    const double t_star = detect_transient_end(ma);
    double err_ext = 0.0, err_segel = 0.0;
    const auto ext = simulate_reduced(ReducedModelKind::EXTENDED, p, 5 * ts.t_D, {}, {t_star, {}});
    const auto seg = simulate_reduced(ReducedModelKind::EQSSA_SEGEL, p, 5 * ts.t_D, {}, {t_star, {}});
    for (std::size_t i = 0; i < ma.size(); ++i) {
        const double t = ma.times[i];
        if (t < t_star) continue;
        err_ext = std::max(err_ext, std::abs(ma.states[i][0] - ext.interpolate(t)[0]));
        err_segel = std::max(err_segel, std::abs(ma.states[i][0] - seg.interpolate(t)[0]));
    }
    MESSAGE("extended " << err_ext << " segel " << err_segel);
    CHECK(2 * err_ext <= err_segel);
}
