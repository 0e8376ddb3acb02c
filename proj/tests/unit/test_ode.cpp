#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mmqss/errors.hpp"
#include "mmqss/ode.hpp"
#include "oracles.hpp"

using namespace mmqss;

namespace {

OdeSystem scalar(std::function<double(double, double)> f) {
    OdeSystem sys;
    sys.dim = 1;
    sys.rhs = [f](double t, const Vector& y, Vector& dy) { dy[0] = f(t, y[0]); };
    return sys;
}

Vector vec1(double x) {
    Vector v(1);
    v << x;
    return v;
}

double sup_conservation_error(const Trajectory& tr, double s0) {
    double worst = 0.0;
    for (const auto& y : tr.states) worst = std::max(worst, std::abs(y.sum() - s0));
    return worst;
}

}  // namespace

TEST_CASE("mass_action_rhs examples") {
    const auto p = oracle::fig_final();
    const auto d0 = mass_action_rhs({p.s0, 0.0, 0.0}, p);
    CHECK(d0.ds == -2e5);
    CHECK(d0.dc == 2e5);
    CHECK(d0.dp == 0.0);
    const auto deq = mass_action_rhs({0.0, 0.0, p.s0}, p);
    CHECK(deq.ds == 0.0);
    CHECK(deq.dc == 0.0);
    CHECK(deq.dp == 0.0);
    const double s = 3.7, km = p.michaelis_constant();
    const auto dn = mass_action_rhs({s, p.e0 * s / (km + s), 0.0}, p);
    CHECK(std::abs(dn.dc) < 1e-12);
}

TEST_CASE("scalar decay with each method") {
    for (Method m : {Method::Auto, Method::ExplicitAdaptive, Method::ImplicitAdaptive}) {
        IntegratorConfig cfg;
        cfg.method = m;
        const auto tr = integrate(scalar([](double, double x) { return -x; }), vec1(1.0), 0.0, 1.0, cfg);
        CHECK(tr.times.back() == 1.0);
        CHECK(std::abs(tr.states.back()[0] - std::exp(-1.0)) < 1e-8);
    }
}

TEST_CASE("product relaxation has the exact exponential solution") {
    const double k2 = 0.37, s0 = 4.0;
    for (Method m : {Method::ExplicitAdaptive, Method::ImplicitAdaptive}) {
        IntegratorConfig cfg;
        cfg.method = m;
        const auto tr =
            integrate(scalar([&](double, double x) { return k2 * (s0 - x); }), vec1(0.0), 0.0, 1.0 / k2, cfg);
        CHECK(std::abs(tr.states.back()[0] - s0 * (1.0 - std::exp(-1.0))) < 1e-8);
    }
}

TEST_CASE("time-dependent right-hand side against RK4") {
    // x' = -2 t x + cos t, nonautonomous.
    auto f = [](double t, double x) { return -2.0 * t * x + std::cos(t); };
    const double ref = oracle::rk4_fixed([&](double t, double x) { return f(t, x); }, 0.5, 0.0, 3.0, 200000);
    for (Method m : {Method::ExplicitAdaptive, Method::ImplicitAdaptive}) {
        IntegratorConfig cfg;
        cfg.method = m;
        cfg.rtol = 1e-10;
        cfg.atol = 1e-12;
        const auto tr = integrate(scalar(f), vec1(0.5), 0.0, 3.0, cfg);
        CHECK(std::abs(tr.states.back()[0] - ref) < 1e-8);
    }
}

TEST_CASE("output grid is hit exactly and dense_output=false records only the grid") {
    IntegratorConfig cfg;
    cfg.output_times = {0.25, 0.5, 0.75, 1.0};
    cfg.dense_output = false;
    const auto tr = integrate(scalar([](double, double x) { return -x; }), vec1(1.0), 0.0, 1.0, cfg);
    REQUIRE(tr.size() == 4);
    for (std::size_t i = 0; i < tr.size(); ++i) {
        CHECK(tr.times[i] == cfg.output_times[i]);
        CHECK(std::abs(tr.states[i][0] - std::exp(-tr.times[i])) < 1e-8);
    }
}

TEST_CASE("Hermite interpolation between accepted steps") {
    const auto tr = integrate(scalar([](double, double x) { return -x; }), vec1(1.0), 0.0, 5.0, {});
    for (double t : {0.013, 0.5, 1.7, 4.99})
        CHECK(std::abs(tr.interpolate(t)[0] - std::exp(-t)) < 1e-6);
    CHECK_THROWS_AS(tr.interpolate(6.0), DomainError);
}

TEST_CASE("config validation and span errors") {
    IntegratorConfig bad;
    bad.rtol = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidParameters);
    CHECK_THROWS_AS(integrate(scalar([](double, double x) { return -x; }), vec1(1.0), 1.0, 0.0, {}),
                    DomainError);
    CHECK(parse_method("IMPLICIT_ADAPTIVE") == Method::ImplicitAdaptive);
    CHECK(parse_method("auto") == Method::Auto);
    CHECK_THROWS_AS(parse_method("rk45"), InvalidParameters);
}

TEST_CASE("finite-time blow-up ends in StepUnderflow") {
    IntegratorConfig cfg;
    cfg.method = Method::ExplicitAdaptive;
    CHECK_THROWS_AS(integrate(scalar([](double, double x) { return x * x; }), vec1(1.0), 0.0, 2.0, cfg),
                    StepUnderflow);
}

TEST_CASE("fig-final mass action: conservation, sup bound, equilibrium, stiffness switch") {
    const auto p = oracle::fig_final();
    const auto tr = simulate_mass_action(p, 600.0);
    CHECK(sup_conservation_error(tr, p.s0) <= 1e-8 * p.s0);
    const double lambda = oracle::complex_root_bisect(p);
    double cmax = 0.0, pprev = 0.0, worst_drop = 0.0;
    for (const auto& y : tr.states) {
        cmax = std::max(cmax, y[1]);
        worst_drop = std::max(worst_drop, pprev - y[2]);
        pprev = y[2];
        CHECK(y.minCoeff() >= -tr.meta.atol);
    }
    CHECK(cmax <= lambda * (1 + 1e-8));
    CHECK(worst_drop <= 1e-10);
    CHECK(std::abs(tr.states.back()[2] - p.s0) <= 1e-6 * p.s0);
    CHECK(tr.meta.implicit_steps > 0);
    CHECK(std::isfinite(tr.meta.stiffness_switch_time));

    // Reference run at 10x finer tolerance.
    IntegratorConfig fine;
    fine.rtol = 1e-9;
    fine.atol = 1e-11;
    fine.method = Method::ImplicitAdaptive;
    const auto ref = simulate_mass_action(p, 600.0, fine);
    CHECK((ref.states.back() - tr.states.back()).cwiseAbs().maxCoeff() <= 1e-6 * p.s0);
}

TEST_CASE("explicit and implicit agree on a mildly stiff instance") {
    const RateParameters p{1.0, 1.0, 1.0, 0.5, 2.0};
    IntegratorConfig ex, im;
    ex.method = Method::ExplicitAdaptive;
    im.method = Method::ImplicitAdaptive;
    const auto a = simulate_mass_action(p, 10.0, ex);
    const auto b = simulate_mass_action(p, 10.0, im);
    CHECK((a.states.back() - b.states.back()).cwiseAbs().maxCoeff() < 1e-7);
    const Vector ref = oracle::rk4_fixed(
        [&](double, const Vector& y) {
            const auto d = mass_action_rhs({y[0], y[1], y[2]}, p);
            Vector out(3);
            out << d.ds, d.dc, d.dp;
            return out;
        },
        Vector((Vector(3) << p.s0, 0.0, 0.0).finished()), 0.0, 10.0, 100000);
    CHECK((a.states.back() - ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("halving tolerances changes endpoints by less than the coarse error scale") {
    const RateParameters p{2.0, 0.3, 1.5, 1.0, 5.0};
    IntegratorConfig coarse;
    coarse.rtol = 1e-6;
    coarse.atol = 1e-8;
    IntegratorConfig fine = coarse;
    fine.rtol *= 0.5;
    fine.atol *= 0.5;
    const auto a = simulate_mass_action(p, 20.0, coarse);
    const auto b = simulate_mass_action(p, 20.0, fine);
    for (Eigen::Index i = 0; i < 3; ++i) {
        const double scale = coarse.atol + coarse.rtol * std::abs(a.states.back()[i]);
        CHECK(std::abs(a.states.back()[i] - b.states.back()[i]) <= 10 * scale);
    }
}

TEST_CASE("conservation and sup bound on 100 random instances") {
    oracle::ParamSampler sampler(77);
    for (int n = 0; n < 100; ++n) {
        const auto p = sampler.next();
        const auto ts = timescales(p);
        const double horizon = std::min(5.0 * std::min(ts.t_slow, ts.t_D + ts.t_Cstar), 1e4);
        const auto tr = simulate_mass_action(p, horizon);
        const double lambda = oracle::complex_root_bisect(p);
        double cmax = 0.0;
        for (const auto& y : tr.states) cmax = std::max(cmax, y[1]);
        CHECK(sup_conservation_error(tr, p.s0) <= 1e-8 * p.s0);
        CHECK(cmax <= lambda * (1 + 1e-8));
    }
}

TEST_CASE("detect_transient_end: fig-21-right recovers the Segel-Slemrod substrate") {
    const RateParameters p{1.0, 1.0, 0.01, 2.02, 1.01};
    const auto tr = simulate_mass_action(p, 50.0);
    const double ts = detect_transient_end(tr);
    const double s_at = tr.interpolate(ts)[0];
    CHECK(s_at / p.s0 == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(0.05));
}

TEST_CASE("detect_transient_end: small eta is within the inner layer") {
    const auto p = oracle::small_eta();
    const auto tr = simulate_mass_action(p, 50.0);
    const double t_star = detect_transient_end(tr);
    const double tc = timescales(p).t_C;
    CHECK(t_star >= tc);
    CHECK(t_star <= 20 * tc);
}

TEST_CASE("detect_transient_end: monotone rule for k_cat = 0") {
    const RateParameters p{1.0, 1.0, 0.0, 1.0, 2.0};
    const auto tr = simulate_mass_action(p, 60.0);
    const double t_star = detect_transient_end(tr);
    // Equilibrium complex: root of k1 (e0 - c)(s0 - c) = k_off c.
    const double c_eq = oracle::complex_root_bisect(p);
    CHECK(std::abs(tr.interpolate(t_star)[1] - c_eq) <= 1e-6 * p.e0);

    Trajectory empty;
    empty.meta.labels = {"s", "c", "p"};
    empty.times = {0.0, 1.0};
    empty.states = {Vector::Zero(3), Vector::Zero(3)};
    empty.derivatives = {Vector::Zero(3), Vector::Zero(3)};
    CHECK_THROWS_AS(detect_transient_end(empty), NoTransient);
}

TEST_CASE("trajectory CSV has 17 significant digits") {
    const auto p = oracle::small_eta();
    IntegratorConfig cfg;
    cfg.output_times = {0.0, 0.5, 1.0};
    cfg.dense_output = false;
    const auto tr = simulate_mass_action(p, 1.0, cfg);
    std::ostringstream os;
    write_trajectory_csv(os, tr, p.e0);
    const std::string text = os.str();
    CHECK(text.rfind("t,s,c,p,e\n", 0) == 0);
    std::istringstream lines(text);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 4);
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
}
