#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "mmqss/bounds.hpp"
#include "mmqss/errors.hpp"
#include "mmqss/estimation.hpp"
#include "mmqss/ode.hpp"
#include "mmqss/reductions.hpp"

namespace mmqss::cli {

const std::vector<Preset>& presets() {
    static const std::vector<Preset> all{
        {"fig-final", {20.0, 10.0, 10.0, 10.0, 1000.0}, 600.0, "tQSSA accurate to about one digit while eps_T is tiny"},
        {"fig-21-left", {0.1, 10.0, 10.0, 1.0, 20.0}, std::nullopt, "sQSSA comparison"},
        {"fig-21-right", {1.0, 1.0, 0.01, 2.02, 1.01}, std::nullopt,
         "eps_SS = sigma = 1; completed with s0 = K_M sigma = 1.01, e0 = K_M + s0 = 2.02"},
        {"fig-eqssa", {10.0, 10.0, 0.01, 2.001, 1.0}, std::nullopt,
         "k1, k_off, k_cat and eps_SS = 1 fixed; completed with s0 = 1, e0 = K_M + s0 = 2.001"},
    };
    return all;
}

const Preset& preset(const std::string& name) {
    for (const auto& p : presets())
        if (p.name == name) return p;
    throw InvalidParameters("unknown preset '" + name + "'");
}

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string lower(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

// ---------------------------------------------------------------------------
// Output helpers. Numbers always go through format_double (17 digits, and
// the strings "inf"/"-inf"/"nan" where JSON has no literal).

std::string json_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(ch) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", ch);
                    out += buf;
                } else {
                    out += ch;
                }
        }
    }
    return out;
}

class FlatJson {
public:
    FlatJson& num(const std::string& key, double v) {
        items_.emplace_back(key, std::isfinite(v) ? format_double(v) : "\"" + format_double(v) + "\"");
        return *this;
    }
    FlatJson& integer(const std::string& key, long long v) {
        items_.emplace_back(key, std::to_string(v));
        return *this;
    }
    FlatJson& str(const std::string& key, const std::string& v) {
        items_.emplace_back(key, "\"" + json_escape(v) + "\"");
        return *this;
    }
    FlatJson& boolean(const std::string& key, bool v) {
        items_.emplace_back(key, v ? "true" : "false");
        return *this;
    }
    FlatJson& null(const std::string& key) {
        items_.emplace_back(key, "null");
        return *this;
    }

    std::string dump(int indent = 0) const {
        const std::string pad(static_cast<std::size_t>(indent), ' ');
        std::string s = "{\n";
        for (std::size_t i = 0; i < items_.size(); ++i) {
            s += pad + "  \"" + json_escape(items_[i].first) + "\": " + items_[i].second;
            s += i + 1 < items_.size() ? ",\n" : "\n";
        }
        return s + pad + "}";
    }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

std::string json_array(const std::vector<FlatJson>& objs) {
    std::string s = "[\n";
    for (std::size_t i = 0; i < objs.size(); ++i) {
        s += "  " + objs[i].dump(2);
        s += i + 1 < objs.size() ? ",\n" : "\n";
    }
    return s + "]\n";
}

// CSV view of a flat object: one `name,value` row per key.
std::string json_as_csv(const FlatJson& j) {
    std::string s = "name,value\n";
    for (const auto& [k, v] : j.items()) {
        std::string val = v;
        if (val.size() >= 2 && val.front() == '"') val = val.substr(1, val.size() - 2);
        s += k + "," + val + "\n";
    }
    return s;
}

void write_file(const std::string& dir, const std::string& name, const std::string& content) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
    const auto path = std::filesystem::path(dir) / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << content;
    if (!f) throw IoError("write failed for " + path.string());
}

std::string trajectory_csv(const Trajectory& tr, double e0) {
    std::ostringstream os;
    write_trajectory_csv(os, tr, e0);
    return os.str();
}

// ---------------------------------------------------------------------------
// Shared option block.

struct Common {
    std::string preset;
    std::optional<double> k1, koff, kcat, e0, s0, t_end, rtol, atol;
    std::string out;
    std::uint64_t seed = 0;
    std::string format;
    std::string method = "auto";
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--preset", c.preset, "start from a figure preset")
        ->check(CLI::IsMember({"fig-final", "fig-21-left", "fig-21-right", "fig-eqssa"}));
    app->add_option("--k1", c.k1, "association rate k1");
    app->add_option("--koff", c.koff, "dissociation rate k_-1");
    app->add_option("--kcat", c.kcat, "catalytic rate k2");
    app->add_option("--e0", c.e0, "total enzyme");
    app->add_option("--s0", c.s0, "initial substrate");
    app->add_option("--t-end", c.t_end, "integration horizon");
    app->add_option("--rtol", c.rtol, "relative tolerance");
    app->add_option("--atol", c.atol, "absolute tolerance");
    app->add_option("--out", c.out, "output directory");
    app->add_option("--seed", c.seed, "random seed");
    app->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    app->add_option("--method", c.method, "auto, explicit or implicit")
        ->check(CLI::IsMember({"auto", "explicit", "implicit", "AUTO", "EXPLICIT_ADAPTIVE", "IMPLICIT_ADAPTIVE"}));
}

RateParameters params_of(const Common& c) {
    RateParameters p;
    const bool have_base = !c.preset.empty();
    if (have_base) p = preset(c.preset).params;
    auto take = [&](const std::optional<double>& v, double& field, const char* flag) {
        if (v)
            field = *v;
        else if (!have_base)
            throw UsageError(std::string("missing ") + flag + " (or give --preset)");
    };
    take(c.k1, p.k1, "--k1");
    take(c.koff, p.k_off, "--koff");
    take(c.kcat, p.k_cat, "--kcat");
    take(c.e0, p.e0, "--e0");
    take(c.s0, p.s0, "--s0");
    p.validate();
    return p;
}

IntegratorConfig config_of(const Common& c, double rtol = 1e-8, double atol = 1e-10) {
    IntegratorConfig cfg;
    cfg.rtol = c.rtol.value_or(rtol);
    cfg.atol = c.atol.value_or(atol);
    const std::string m = lower(c.method);
    cfg.method = m == "explicit" ? Method::ExplicitAdaptive
               : m == "implicit" ? Method::ImplicitAdaptive
                                 : parse_method(c.method == "auto" ? "AUTO" : c.method);
    cfg.validate();
    return cfg;
}

double default_horizon(const RateParameters& p) {
    const auto ts = timescales(p);
    double t = 5.0 * ts.t_P;
    if (!std::isfinite(t)) t = 5.0 * ts.t_D;
    if (!std::isfinite(t)) t = 50.0 * ts.t_C;
    return t;
}

double horizon_of(const Common& c, const RateParameters& p) {
    if (c.t_end) {
        if (!(*c.t_end > 0.0)) throw InvalidParameters("--t-end must be positive");
        return *c.t_end;
    }
    if (!c.preset.empty()) {
        const auto& pr = preset(c.preset);
        if (pr.t_end && !c.k1 && !c.koff && !c.kcat && !c.e0 && !c.s0) return *pr.t_end;
    }
    return default_horizon(p);
}

void emit(std::ostream& out, const Common& c, const FlatJson& j) {
    out << (c.format == "csv" ? json_as_csv(j) : j.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Named scalar quantities shared by `constants` and `sweep`.

void add_constants(FlatJson& j, const RateParameters& p) {
    const auto dc = derive_constants(p);
    const auto g = dimensionless_groups(p);
    const auto ts = timescales(p);
    j.num("k1", p.k1).num("k_off", p.k_off).num("k_cat", p.k_cat).num("e0", p.e0).num("s0", p.s0);
    j.num("K_M", dc.K_M).num("K_S", dc.K_S).num("V", dc.V).num("lambda", dc.lambda);
    j.num("eps_SS", g.eps_SS).num("eta", g.eta).num("eps_star", g.eps_star).num("eps_SM", g.eps_SM);
    j.num("sigma", g.sigma).num("kappa", g.kappa).num("nu", g.nu).num("nu_tilde", g.nu_tilde);
    j.num("beta", g.beta).num("mu", g.mu).num("alpha", g.alpha).num("ell", g.ell);
    j.num("eps_ratio", g.eps_ratio).num("eps_under", g.eps_under).num("eps_tilde", g.eps_tilde);
    j.num("eps_T", g.eps_T).num("eps_D", g.eps_D).num("eps_L", g.eps_L).num("eps_LT", g.eps_LT);
    j.num("theta_ext", g.theta_ext).boolean("degenerate", g.degenerate);
    j.num("t_C", ts.t_C).num("t_D", ts.t_D).num("t_Cstar", ts.t_Cstar).num("t_P", ts.t_P);
    j.num("t_ell", ts.t_ell).num("t_slow", ts.t_slow);
    const auto rep = classify_regime(g);
    for (const auto& e : rep.entries) {
        const std::string k = "regime_" + lower(e.approximation);
        j.str(k + "_qualifier", e.qualifier).num(k + "_value", e.value).str(k + "_verdict", std::string(to_string(e.verdict)));
    }
}

// Comparison of a reduction with mass action on a shared output grid.
struct Comparison {
    std::vector<double> t;
    std::vector<MMState> truth, reduced;
    double sup_abs_s = 0, sup_abs_c = 0, sup_abs_p = 0, sup_rel_c = 0, sup_rel_p = 0;
};

constexpr double kRelFloor = 1e-6;

double rel_err(double truth, double approx) {
    const double d = std::abs(truth - approx);
    if (truth == 0.0) return d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return d / std::abs(truth);
}

std::vector<double> comparison_grid(double t0, double t1, std::size_t n) {
    std::vector<double> g;
    const std::size_t half = std::max<std::size_t>(n / 2, 2);
    const double span = t1 - t0;
    for (std::size_t i = 0; i < half; ++i) {
        g.push_back(t0 + span * static_cast<double>(i + 1) / static_cast<double>(half));
        const double lo = std::log(span * 1e-6), hi = std::log(span);
        g.push_back(t0 + std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(half - 1)));
    }
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end(), [&](double a, double b) { return b - a <= 1e-12 * span; }), g.end());
    g.erase(std::remove_if(g.begin(), g.end(), [&](double t) { return !(t > t0) || t > t1; }), g.end());
    if (g.empty() || g.back() != t1) g.push_back(t1);
    return g;
}

MMState state_at(const Trajectory& tr, std::size_t i) {
    return {tr.states[i][0], tr.states[i][1], tr.states[i][2]};
}

Comparison compare(ReducedModelKind kind, const RateParameters& p, double t0, double t_end, std::size_t samples,
                   const IntegratorConfig& base) {
    Comparison cmp;
    cmp.t = comparison_grid(t0, t_end, samples);
    IntegratorConfig cfg = base;
    cfg.output_times = cmp.t;
    cfg.dense_output = false;
    const auto ma = simulate_mass_action(p, t_end, cfg);
    ReducedStart start;
    start.t0 = t0;
    const auto red = simulate_reduced(kind, p, t_end, cfg, start);
    if (ma.size() != cmp.t.size() || red.size() != cmp.t.size())
        throw DomainError("comparison grid was not reproduced by the integrator");
    double c_scale = 0.0, p_scale = 0.0;
    for (std::size_t i = 0; i < cmp.t.size(); ++i) {
        const MMState a = state_at(ma, i), b = state_at(red, i);
        cmp.truth.push_back(a);
        cmp.reduced.push_back(b);
        cmp.sup_abs_s = std::max(cmp.sup_abs_s, std::abs(a.s - b.s));
        cmp.sup_abs_c = std::max(cmp.sup_abs_c, std::abs(a.c - b.c));
        cmp.sup_abs_p = std::max(cmp.sup_abs_p, std::abs(a.p - b.p));
        c_scale = std::max(c_scale, std::abs(a.c));
        p_scale = std::max(p_scale, std::abs(a.p));
    }
    // Summary relative errors skip samples where the true value has decayed
    // below kRelFloor of its peak; there the ratio only measures roundoff.
    // relerr.csv still carries every sample.
    for (std::size_t i = 0; i < cmp.t.size(); ++i) {
        const auto& a = cmp.truth[i];
        const auto& b = cmp.reduced[i];
        if (std::abs(a.c) > kRelFloor * c_scale) cmp.sup_rel_c = std::max(cmp.sup_rel_c, rel_err(a.c, b.c));
        if (std::abs(a.p) > kRelFloor * p_scale) cmp.sup_rel_p = std::max(cmp.sup_rel_p, rel_err(a.p, b.p));
    }
    return cmp;
}

std::string relerr_csv(const Comparison& cmp) {
    std::string s = "t,c_true,c_reduced,relerr_c,p_true,p_reduced,relerr_p\n";
    for (std::size_t i = 0; i < cmp.t.size(); ++i) {
        const auto& a = cmp.truth[i];
        const auto& b = cmp.reduced[i];
        s += format_double(cmp.t[i]) + "," + format_double(a.c) + "," + format_double(b.c) + "," +
             format_double(rel_err(a.c, b.c)) + "," + format_double(a.p) + "," + format_double(b.p) + "," +
             format_double(rel_err(a.p, b.p)) + "\n";
    }
    return s;
}

std::string comparison_trajectory_csv(const Comparison& cmp, bool reduced, double e0) {
    std::string s = "t,s,c,p,e\n";
    for (std::size_t i = 0; i < cmp.t.size(); ++i) {
        const auto& x = reduced ? cmp.reduced[i] : cmp.truth[i];
        s += format_double(cmp.t[i]) + "," + format_double(x.s) + "," + format_double(x.c) + "," +
             format_double(x.p) + "," + format_double(e0 - x.c) + "\n";
    }
    return s;
}

void add_comparison(FlatJson& j, const Comparison& cmp, const std::string& prefix) {
    j.num(prefix + "sup_abs_err_s", cmp.sup_abs_s);
    j.num(prefix + "sup_abs_err_c", cmp.sup_abs_c);
    j.num(prefix + "sup_abs_err_p", cmp.sup_abs_p);
    j.num(prefix + "sup_relerr_c", cmp.sup_rel_c);
    j.num(prefix + "sup_relerr_p", cmp.sup_rel_p);
}

// Horizon that resolves every non-vacuous envelope's limsup window.
double bounds_horizon(const RateParameters& p) {
    double need = 0.0;
    for (EnvelopeKind k : named_envelope_kinds()) {
        Envelope env;
        try {
            env = envelope(k, p);
        } catch (const DegenerateBound&) {
            continue;
        }
        if (env.vacuous || !(env.r > 0.0)) continue;
        const double decay = env.B > 0.0 ? std::log(std::max(env.A / (1e-3 * env.B), 1.0)) : 30.0;
        need = std::max(need, std::max(6.5, decay / 0.8) / env.r);
    }
    return std::max(need, default_horizon(p));
}

IntegratorConfig reference_config(const Common& c, const RateParameters& p) {
    return config_of(c, 1e-10, 1e-12 * std::min(p.e0, p.s0));
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_constants(const Common& c, std::ostream& out) {
    const auto p = params_of(c);
    FlatJson j;
    add_constants(j, p);
    if (!c.out.empty()) write_file(c.out, c.format == "csv" ? "constants.csv" : "constants.json",
                                   c.format == "csv" ? json_as_csv(j) : j.dump() + "\n");
    emit(out, c, j);
    return 0;
}

struct SimulateOpts {
    std::size_t samples = 0;
};

int cmd_simulate(const Common& c, const SimulateOpts& o, std::ostream& out) {
    const auto p = params_of(c);
    const double t_end = horizon_of(c, p);
    auto cfg = config_of(c);
    if (o.samples > 0) {
        for (std::size_t i = 1; i <= o.samples; ++i)
            cfg.output_times.push_back(t_end * static_cast<double>(i) / static_cast<double>(o.samples));
        cfg.dense_output = false;
    }
    const auto tr = simulate_mass_action(p, t_end, cfg);
    double cons = 0.0, sup_c = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i) {
        cons = std::max(cons, std::abs(tr.states[i].sum() - p.s0));
        sup_c = std::max(sup_c, tr.states[i][1]);
    }
    FlatJson j;
    j.str("model", "mass_action").num("t_end", t_end).integer("samples", static_cast<long long>(tr.size()));
    j.str("method_used", tr.meta.method_used).integer("steps", static_cast<long long>(tr.meta.steps));
    j.integer("rejected", static_cast<long long>(tr.meta.rejected));
    j.num("stiffness_switch_time", tr.meta.stiffness_switch_time);
    j.num("max_conservation_error", cons).num("sup_c", sup_c).num("lambda", derive_constants(p).lambda);
    const std::string csv = trajectory_csv(tr, p.e0);
    if (!c.out.empty()) {
        write_file(c.out, "trajectory.csv", csv);
        write_file(c.out, "summary.json", j.dump() + "\n");
    }
    if (c.format == "csv")
        out << csv;
    else
        out << j.dump() << "\n";
    return 0;
}

struct ReduceOpts {
    std::string kind;
    std::size_t samples = 400;
    bool from_transient = false;
};

int cmd_reduce(const Common& c, const ReduceOpts& o, std::ostream& out) {
    const auto p = params_of(c);
    const double t_end = horizon_of(c, p);
    const auto cfg = config_of(c);
    std::vector<ReducedModelKind> kinds;
    if (lower(o.kind) == "all")
        kinds = all_reduced_kinds();
    else
        kinds = {parse_reduced_kind(o.kind)};

    double t0 = 0.0;
    if (o.from_transient) t0 = detect_transient_end(simulate_mass_action(p, t_end, cfg));

    FlatJson j;
    j.num("t_start", t0).num("t_end", t_end);
    std::string last_relerr;
    for (auto kind : kinds) {
        const std::string name = lower(std::string(to_string(kind)));
        const auto cmp = compare(kind, p, t0, t_end, o.samples, cfg);
        add_comparison(j, cmp, kinds.size() == 1 ? "" : name + "_");
        last_relerr = relerr_csv(cmp);
        if (!c.out.empty()) {
            write_file(c.out, "reduced_" + name + ".csv", comparison_trajectory_csv(cmp, true, p.e0));
            write_file(c.out, "relerr_" + name + ".csv", last_relerr);
            write_file(c.out, "mass_action.csv", comparison_trajectory_csv(cmp, false, p.e0));
        }
    }
    if (kinds.size() == 1) j.str("kind", std::string(to_string(kinds.front())));
    if (!c.out.empty()) write_file(c.out, "summary.json", j.dump() + "\n");
    if (c.format == "csv" && kinds.size() == 1)
        out << last_relerr;
    else
        out << j.dump() << "\n";
    return 0;
}

struct PhaseOpts {
    std::string tfp = "KOFF_AND_KCAT";
    std::size_t samples = 101;
};

int cmd_phase(const Common& c, const PhaseOpts& o, std::ostream& out) {
    const auto p = params_of(c);
    const Tfp tfp = parse_tfp(o.tfp);
    const auto cs = critical_set(p, tfp, o.samples);
    FlatJson j;
    j.str("tfp", std::string(to_string(tfp))).str("x_name", cs.x_name).str("y_name", cs.y_name).num("ell", cs.ell);
    j.integer("n_components", static_cast<long long>(cs.components.size()));
    j.integer("n_singular_points", static_cast<long long>(cs.singular_points.size()));
    for (std::size_t i = 0; i < cs.singular_points.size(); ++i) {
        const std::string k = "singular_" + std::to_string(i) + "_";
        j.num(k + "x", cs.singular_points[i].x).num(k + "y", cs.singular_points[i].y);
    }
    const auto rb = riccati_base_point(p);
    j.num("riccati_mu", rb.mu).num("riccati_s_bar", rb.s_bar).num("riccati_c_bar", rb.c_bar);
    j.num("riccati_s", rb.s).num("riccati_c", rb.c);
    if (tfp == Tfp::KOFF_AND_KCAT) {
        try {
            const auto nf = normal_form_coefficients(p);
            j.num("normal_form_a", nf.a).num("normal_form_b", nf.b);
            j.num("normal_form_taylor_a", nf.taylor_a).num("normal_form_taylor_b", nf.taylor_b);
        } catch (const NoTranscriticalPoint&) {
            j.null("normal_form_a").null("normal_form_b");
        }
    }

    std::string crit = "component,x,y,margin\n";
    for (const auto& comp : cs.components)
        for (const auto& v : comp.vertices)
            crit += comp.label + "," + format_double(v.x) + "," + format_double(v.y) + "," + format_double(v.margin) + "\n";
    if (!c.out.empty()) {
        write_file(c.out, "critical_set.csv", crit);
        std::string nl = "s,c_nullcline,s_nullcline\n";
        const Nullclines n(p);
        for (std::size_t i = 0; i <= 200; ++i) {
            const double s = p.s0 * static_cast<double>(i) / 200.0;
            nl += format_double(s) + "," + format_double(n.c_nullcline(s)) + "," + format_double(n.s_nullcline(s)) + "\n";
        }
        write_file(c.out, "nullclines.csv", nl);
        const auto tr = simulate_mass_action(p, horizon_of(c, p), config_of(c));
        write_file(c.out, "phase.csv", trajectory_csv(tr, p.e0));
        write_file(c.out, "summary.json", j.dump() + "\n");
    }
    if (c.format == "csv")
        out << crit;
    else
        out << j.dump() << "\n";
    return 0;
}

struct BoundsOpts {
    std::string kind = "all";
    double slack = 1e-6;
};

FlatJson bound_json(const Envelope& env, const BoundReport& rep, double t_end) {
    FlatJson j;
    j.str("kind", std::string(to_string(env.kind))).str("quantity", env.quantity);
    j.num("A", env.A).num("r", env.r).num("B", env.B).num("range", env.range).boolean("vacuous", env.vacuous);
    j.boolean("holds", rep.holds).num("max_violation", rep.max_violation).num("slack", rep.slack).num("floor", rep.floor);
    if (rep.limsup_estimate)
        j.num("limsup_estimate", *rep.limsup_estimate).num("tail_start", rep.tail_start);
    else
        j.null("limsup_estimate").null("tail_start");
    j.num("eps_D", env.eps_D).num("eps_L", env.eps_L).num("eps_LT", env.eps_LT).num("t_end", t_end);
    for (const auto& [k, v] : env.extras) j.num(k, v);
    return j;
}

std::string margin_csv(const Envelope& env, const BoundReport& rep) {
    std::string s = "t,quantity,envelope,margin\n";
    for (std::size_t i = 0; i < rep.times.size(); ++i)
        s += format_double(rep.times[i]) + "," + format_double(rep.quantity[i]) + "," +
             format_double(env(rep.times[i])) + "," + format_double(rep.margin[i]) + "\n";
    return s;
}

int cmd_bounds(const Common& c, const BoundsOpts& o, std::ostream& out) {
    const auto p = params_of(c);
    std::vector<EnvelopeKind> kinds;
    if (lower(o.kind) == "all")
        kinds = named_envelope_kinds();
    else
        kinds = {parse_envelope_kind(o.kind)};
    const double t_end = c.t_end ? horizon_of(c, p) : bounds_horizon(p);
    const auto tr = simulate_mass_action(p, t_end, reference_config(c, p));

    std::vector<FlatJson> reports;
    std::string last_margins;
    for (auto k : kinds) {
        const auto env = envelope(k, p);
        const auto rep = verify(tr, env, o.slack);
        reports.push_back(bound_json(env, rep, t_end));
        last_margins = margin_csv(env, rep);
        if (!c.out.empty()) write_file(c.out, "margins_" + lower(std::string(to_string(k))) + ".csv", last_margins);
    }
    const std::string json = kinds.size() == 1 ? reports.front().dump() + "\n" : json_array(reports);
    if (!c.out.empty()) write_file(c.out, "bounds.json", json);
    if (c.format == "csv" && kinds.size() == 1)
        out << last_margins;
    else
        out << json;
    return 0;
}

int cmd_figure(const Common& c, std::ostream& out) {
    if (c.preset.empty()) throw UsageError("figure requires --preset");
    const auto& pr = preset(c.preset);
    const auto p = params_of(c);
    const std::string dir = c.out.empty() ? "." : c.out;
    const auto cfg = reference_config(c, p);
    const auto ts = timescales(p);
    const auto g = dimensionless_groups(p);

    FlatJson j;
    j.str("preset", pr.name).str("notes", pr.notes);
    add_constants(j, p);

    if (pr.name == "fig-final") {
        const double t_end = horizon_of(c, p);
        const auto cmp = compare(ReducedModelKind::TQSSA, p, 0.0, t_end, 800, cfg);
        write_file(dir, "mass_action.csv", comparison_trajectory_csv(cmp, false, p.e0));
        write_file(dir, "tqssa.csv", comparison_trajectory_csv(cmp, true, p.e0));
        write_file(dir, "relerr.csv", relerr_csv(cmp));
        j.num("t_end", t_end);
        add_comparison(j, cmp, "");
        j.num("max_relerr_c", cmp.sup_rel_c);
    } else if (pr.name == "fig-eqssa") {
        const double t_end = c.t_end ? *c.t_end : 5.0 * ts.t_D;
        const double t_star = detect_transient_end(simulate_mass_action(p, t_end, cfg));
        j.num("t_end", t_end).num("t_star", t_star);
        double sup_ext = 0.0, sup_seg = 0.0;
        for (auto kind : {ReducedModelKind::EXTENDED, ReducedModelKind::EQSSA_SEGEL}) {
            const std::string name = lower(std::string(to_string(kind)));
            const auto cmp = compare(kind, p, t_star, t_end, 800, cfg);
            write_file(dir, name + ".csv", comparison_trajectory_csv(cmp, true, p.e0));
            write_file(dir, "relerr_" + name + ".csv", relerr_csv(cmp));
            write_file(dir, "mass_action.csv", comparison_trajectory_csv(cmp, false, p.e0));
            add_comparison(j, cmp, name + "_");
            (kind == ReducedModelKind::EXTENDED ? sup_ext : sup_seg) = cmp.sup_abs_s;
        }
        j.num("segel_over_extended_sup_s_error", sup_seg / sup_ext);
        j.num("segel_slemrod_s0e", (std::sqrt(2.0) - 1.0) * p.s0);
    } else {
        // fig-21 panels: mass action against the sQSSA, with the end of
        // the initial layer and the Riccati base point.
        const double t_end = horizon_of(c, p);
        IntegratorConfig dense = cfg;
        const auto ma = simulate_mass_action(p, t_end, dense);
        const double t_star = detect_transient_end(ma);
        const MMState at = [&] {
            const Vector y = ma.interpolate(t_star);
            return MMState{y[0], y[1], y[2]};
        }();
        const auto rb = riccati_base_point(p);
        j.num("t_end", t_end).num("t_star", t_star).num("s_star", at.s).num("c_star", at.c);
        j.num("s_star_over_s0", at.s / p.s0).num("riccati_s", rb.s).num("riccati_s_bar", rb.s_bar);
        j.num("riccati_c", rb.c).num("eps_SS_value", g.eps_SS);
        const auto cmp = compare(ReducedModelKind::SQSSA_S, p, 0.0, t_end, 800, cfg);
        write_file(dir, "mass_action.csv", comparison_trajectory_csv(cmp, false, p.e0));
        write_file(dir, "sqssa_s.csv", comparison_trajectory_csv(cmp, true, p.e0));
        write_file(dir, "relerr.csv", relerr_csv(cmp));
        add_comparison(j, cmp, "");
    }
    write_file(dir, "summary.json", j.dump() + "\n");
    emit(out, c, j);
    return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitOpts {
    std::string data;
    std::string model = "RQSSA";
    std::vector<std::string> free, fixed;
    std::size_t samples = 50;
    double noise = 0.0;
    int max_iter = 200;
};

std::pair<std::string, std::string> split_eq(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("expected name=value, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

double to_number(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw UsageError("cannot parse '" + s + "' as a number");
    return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(item);
    return parts;
}

int cmd_fit(const Common& c, const FitOpts& o, std::ostream& out) {
    ProgressCurve curve;
    if (!o.data.empty()) {
        curve = read_progress_curve(o.data);
        if (c.e0) curve.e0 = *c.e0;
        if (c.s0) curve.s0 = *c.s0;
        curve.noise_sd = o.noise;
    } else {
        const auto p = params_of(c);
        const double t_end = horizon_of(c, p);
        std::vector<double> times;
        for (std::size_t i = 1; i <= o.samples; ++i)
            times.push_back(t_end * static_cast<double>(i) / static_cast<double>(o.samples));
        curve = synthesize(p, times, o.noise, c.seed);
    }

    FitSpec spec;
    spec.model = parse_reduced_kind(o.model);
    spec.max_iterations = o.max_iter;
    if (o.free.empty()) throw UsageError("fit needs at least one --free name=guess[:lower:upper]");
    for (const auto& f : o.free) {
        const auto [name, rest] = split_eq(f);
        const auto parts = split(rest, ':');
        if (parts.empty() || parts.size() == 2 || parts.size() > 3) throw UsageError("bad --free value '" + f + "'");
        FreeParameter fp{name, to_number(parts[0])};
        if (parts.size() == 3) {
            fp.lower = to_number(parts[1]);
            fp.upper = to_number(parts[2]);
        }
        spec.free.push_back(fp);
    }
    for (const auto& f : o.fixed) {
        const auto [name, value] = split_eq(f);
        spec.fixed[name] = to_number(value);
    }

    const auto res = fit(curve, spec);
    FlatJson j;
    j.str("model", std::string(to_string(res.model))).boolean("converged", res.converged);
    j.str("termination", res.termination).integer("iterations", res.iterations);
    j.num("ssr", res.ssr).num("condition_number", res.condition_number);
    j.boolean("ill_conditioned", res.condition_number > 1e8);
    j.integer("n_samples", static_cast<long long>(curve.times.size())).num("noise_sd", curve.noise_sd);
    for (const auto& [k, v] : res.estimates) j.num("estimate_" + k, v);
    for (const auto& [k, v] : res.resolved) j.num("resolved_" + k, v);
    if (res.regime) {
        for (const auto& e : res.regime->entries) {
            const std::string k = "regime_" + lower(e.approximation);
            j.str(k + "_qualifier", e.qualifier).num(k + "_value", e.value);
            j.str(k + "_verdict", std::string(to_string(e.verdict)));
        }
    }
    std::string warnings;
    for (const auto& w : res.warnings) warnings += (warnings.empty() ? "" : "; ") + w;
    j.str("warnings", warnings);

    const auto model = evaluate_model(res.model, res.resolved, curve.times, spec.ode_tol);
    std::string csv = "t,p_data,p_model\n";
    for (std::size_t i = 0; i < curve.times.size(); ++i)
        csv += format_double(curve.times[i]) + "," + format_double(curve.p[i]) + "," + format_double(model[i]) + "\n";
    if (!c.out.empty()) {
        write_file(c.out, "fit.json", j.dump() + "\n");
        write_file(c.out, "fitted_curve.csv", csv);
        if (o.data.empty()) {
            std::ostringstream os;
            write_progress_curve(os, curve);
            write_file(c.out, "data.csv", os.str());
        }
    }
    emit(out, c, j);
    return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOpts {
    std::vector<std::string> grid;
    std::vector<std::string> quantities;
    double max_points = 1e6;
    unsigned threads = 0;
    bool ratios = false;
};

struct Axis {
    std::string name;
    std::vector<double> values;
};

Axis parse_axis(const std::string& spec) {
    const auto [name, rest] = split_eq(spec);
    static const std::vector<std::string> names{"k1", "koff", "kcat", "e0", "s0", "km"};
    if (std::find(names.begin(), names.end(), lower(name)) == names.end())
        throw UsageError("unknown sweep parameter '" + name + "' (k1, koff, kcat, e0, s0, km)");
    Axis ax{lower(name), {}};
    const auto parts = split(rest, ':');
    if (parts.size() == 4 && (parts[0] == "log" || parts[0] == "lin")) {
        const double lo = to_number(parts[1]), hi = to_number(parts[2]);
        const double n = to_number(parts[3]);
        if (!(n >= 1.0) || n != std::floor(n)) throw UsageError("grid count must be a positive integer");
        if (n > 1e9) throw GridTooLarge("axis " + name + " has " + parts[3] + " points");
        const auto count = static_cast<std::size_t>(n);
        if (parts[0] == "log" && !(lo > 0.0 && hi > 0.0)) throw UsageError("log axis needs positive bounds");
        for (std::size_t i = 0; i < count; ++i) {
            const double f = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
            ax.values.push_back(parts[0] == "log" ? std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo)))
                                                  : lo + f * (hi - lo));
        }
        if (count > 1) ax.values.back() = hi;
    } else {
        for (const auto& v : split(rest, ',')) ax.values.push_back(to_number(v));
    }
    if (ax.values.empty()) throw UsageError("empty grid axis '" + spec + "'");
    return ax;
}

RateParameters apply_point(RateParameters base, const std::vector<Axis>& axes, const std::vector<double>& point) {
    std::optional<double> km;
    for (std::size_t a = 0; a < axes.size(); ++a) {
        const auto& n = axes[a].name;
        const double v = point[a];
        if (n == "k1") base.k1 = v;
        else if (n == "koff") base.k_off = v;
        else if (n == "kcat") base.k_cat = v;
        else if (n == "e0") base.e0 = v;
        else if (n == "s0") base.s0 = v;
        else km = v;
    }
    base.validate();
    return km ? base.with_michaelis_constant(*km) : base;
}

// Value of one named quantity at one parameter point. Quantities that need a
// reference integration share a lazily computed trajectory.
class PointEvaluator {
public:
    PointEvaluator(const RateParameters& p, std::optional<double> t_end) : p_(p), t_end_(t_end) {
        FlatJson j;
        add_constants(j, p);
        for (const auto& [k, v] : j.items())
            if (!v.empty() && v.front() != '"' && v != "true" && v != "false") scalars_[lower(k)] = std::stod(v);
            else if (v == "\"inf\"") scalars_[lower(k)] = std::numeric_limits<double>::infinity();
    }

    double operator()(const std::string& q) {
        const std::string n = lower(q);
        if (auto it = scalars_.find(n); it != scalars_.end()) return it->second;
        if (n.rfind("b_", 0) == 0) return envelope(parse_envelope_kind(n.substr(2)), p_).B;
        if (n.rfind("r_", 0) == 0) return envelope(parse_envelope_kind(n.substr(2)), p_).r;
        if (n.rfind("limsup_", 0) == 0) {
            const auto env = envelope(parse_envelope_kind(n.substr(7)), p_);
            return estimate_limsup(bounds_trajectory(), env);
        }
        // rQSSA product error against the closed form s0 (1 - exp(-k_cat t)).
        if (n == "sup_p_err_rqssa") {
            const auto& tr = reference();
            double sup = 0.0;
            for (std::size_t i = 0; i < tr.size(); ++i)
                sup = std::max(sup, std::abs(tr.states[i][2] - closed_form(ClosedFormKind::RQSSA_P, tr.times[i], p_)));
            return sup / p_.s0;
        }
        // Distance of the state from the critical set c = s0 - p after the layer.
        if (n == "sup_s_after_transient") {
            const auto& tr = reference();
            const double t_star = detect_transient_end(tr);
            double sup = 0.0;
            for (std::size_t i = 0; i < tr.size(); ++i)
                if (tr.times[i] >= t_star) sup = std::max(sup, tr.states[i][0]);
            return sup / p_.s0;
        }
        for (const char* stem : {"sup_p_err_", "sup_s_err_", "sup_c_err_", "sup_c_relerr_"}) {
            const std::string st(stem);
            if (n.rfind(st, 0) == 0) {
                const auto kind = parse_reduced_kind(n.substr(st.size()));
                const auto cmp = compare(kind, p_, 0.0, horizon(), 400, ref_cfg());
                if (st == "sup_p_err_") return cmp.sup_abs_p / p_.s0;
                if (st == "sup_s_err_") return cmp.sup_abs_s / p_.s0;
                if (st == "sup_c_err_") return cmp.sup_abs_c / derive_constants(p_).lambda;
                return cmp.sup_rel_c;
            }
        }
        if (n == "sup_invariance_residual" || n == "sup_invariance_residual_dim") {
            std::vector<double> grid;
            for (int i = 1; i <= 400; ++i) grid.push_back(p_.s0 * i / 400.0);
            const auto res = invariance_residual(c_nullcline_graph(p_), p_, grid);
            return n == "sup_invariance_residual" ? res.sup_scaled() : res.sup();
        }
        throw UsageError("unknown sweep quantity '" + q + "'");
    }

private:
    IntegratorConfig ref_cfg() const {
        IntegratorConfig cfg;
        cfg.rtol = 1e-10;
        cfg.atol = 1e-12 * std::min(p_.e0, p_.s0);
        return cfg;
    }
    double horizon() const { return t_end_ ? *t_end_ : default_horizon(p_); }
    const Trajectory& reference() {
        if (!ref_) ref_ = simulate_mass_action(p_, horizon(), ref_cfg());
        return *ref_;
    }
    const Trajectory& bounds_trajectory() {
        if (!bref_) bref_ = simulate_mass_action(p_, t_end_ ? *t_end_ : bounds_horizon(p_), ref_cfg());
        return *bref_;
    }

    RateParameters p_;
    std::optional<double> t_end_;
    std::map<std::string, double> scalars_;
    std::optional<Trajectory> ref_, bref_;
};

int cmd_sweep(const Common& c, const SweepOpts& o, std::ostream& out) {
    if (o.grid.empty()) throw UsageError("sweep needs at least one --grid name=spec");
    if (o.quantities.empty()) throw UsageError("sweep needs at least one --quantity");
    RateParameters base;
    if (c.preset.empty() && !(c.k1 && c.koff && c.kcat && c.e0 && c.s0)) {
        // Swept parameters may stand in for missing flags.
        Common filled = c;
        filled.k1 = c.k1.value_or(1.0);
        filled.koff = c.koff.value_or(1.0);
        filled.kcat = c.kcat.value_or(1.0);
        filled.e0 = c.e0.value_or(1.0);
        filled.s0 = c.s0.value_or(1.0);
        base = params_of(filled);
    } else {
        base = params_of(c);
    }

    std::vector<Axis> axes;
    double total = 1.0;
    for (const auto& g : o.grid) {
        axes.push_back(parse_axis(g));
        total *= static_cast<double>(axes.back().values.size());
    }
    if (total > o.max_points) {
        std::ostringstream msg;
        msg << "grid has " << total << " points, cap is " << o.max_points;
        throw GridTooLarge(msg.str());
    }
    const auto n = static_cast<std::size_t>(total);

    // Validate quantity names once, on the base point, before any work.
    {
        PointEvaluator probe(base, c.t_end);
        for (const auto& q : o.quantities) {
            try {
                (void)probe(q);
            } catch (const UsageError&) {
                throw;
            } catch (const Error&) {
            }
        }
    }

    std::vector<std::vector<double>> points(n), values(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        std::size_t rem = idx;
        std::vector<double> pt(axes.size());
        for (std::size_t a = axes.size(); a-- > 0;) {
            pt[a] = axes[a].values[rem % axes[a].values.size()];
            rem /= axes[a].values.size();
        }
        points[idx] = std::move(pt);
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t idx = next++; idx < n; idx = next++) {
            std::vector<double> row(o.quantities.size(), std::numeric_limits<double>::quiet_NaN());
            try {
                PointEvaluator eval(apply_point(base, axes, points[idx]), c.t_end);
                for (std::size_t q = 0; q < o.quantities.size(); ++q) {
                    try {
                        row[q] = eval(o.quantities[q]);
                    } catch (const Error&) {
                    }
                }
            } catch (const Error&) {
            }
            values[idx] = std::move(row);
        }
    };
    unsigned nthreads = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());
    nthreads = static_cast<unsigned>(std::min<std::size_t>(nthreads, n));
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < nthreads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<std::string> cols;
    for (const auto& a : axes) cols.push_back(a.name);
    for (const auto& q : o.quantities) cols.push_back(q);
    if (o.ratios)
        for (const auto& q : o.quantities) cols.push_back("ratio_" + q);

    std::vector<std::vector<double>> rows(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        rows[idx] = points[idx];
        rows[idx].insert(rows[idx].end(), values[idx].begin(), values[idx].end());
        if (o.ratios)
            for (std::size_t q = 0; q < o.quantities.size(); ++q)
                rows[idx].push_back(idx == 0 ? std::numeric_limits<double>::quiet_NaN() : values[idx][q] / values[idx - 1][q]);
    }

    std::string text;
    if (c.format == "json") {
        std::vector<FlatJson> objs;
        for (const auto& r : rows) {
            FlatJson j;
            for (std::size_t k = 0; k < cols.size(); ++k) j.num(cols[k], r[k]);
            objs.push_back(j);
        }
        text = json_array(objs);
    } else {
        for (std::size_t k = 0; k < cols.size(); ++k) text += (k ? "," : "") + cols[k];
        text += "\n";
        for (const auto& r : rows) {
            for (std::size_t k = 0; k < r.size(); ++k) text += (k ? "," : "") + format_double(r[k]);
            text += "\n";
        }
    }
    if (!c.out.empty()) write_file(c.out, c.format == "json" ? "sweep.json" : "sweep.csv", text);
    out << text;
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Michaelis-Menten quasi-steady-state toolkit", "mmqss"};
    app.require_subcommand(1);

    Common common;
    SimulateOpts sim;
    ReduceOpts red;
    PhaseOpts ph;
    BoundsOpts bo;
    FitOpts fo;
    SweepOpts so;
    std::map<CLI::App*, std::string> default_format;

    auto* constants = app.add_subcommand("constants", "derived constants, groups, timescales and regime verdicts");
    add_common(constants, common);
    default_format[constants] = "json";

    auto* simulate = app.add_subcommand("simulate", "integrate the mass-action system");
    add_common(simulate, common);
    default_format[simulate] = "csv";
    simulate->add_option("--samples", sim.samples, "uniform output samples (0: every accepted step)");

    auto* reduce = app.add_subcommand("reduce", "compare a reduced model with mass action");
    add_common(reduce, common);
    default_format[reduce] = "json";
    reduce->add_option("--kind", red.kind, "reduced model or 'all'")->required();
    reduce->add_option("--samples", red.samples, "comparison grid size");
    reduce->add_flag("--from-transient", red.from_transient, "start the reduction at the end of the initial layer");

    auto* phase = app.add_subcommand("phase", "critical set, nullclines and phase trajectory");
    add_common(phase, common);
    default_format[phase] = "json";
    phase->add_option("--tfp", ph.tfp, "KOFF_AND_KCAT, K1, E0 or KCAT");
    phase->add_option("--samples", ph.samples, "vertices per critical branch");

    auto* bounds = app.add_subcommand("bounds", "verify error envelopes along a reference trajectory");
    add_common(bounds, common);
    default_format[bounds] = "json";
    bounds->add_option("--kind", bo.kind, "envelope kind or 'all'");
    bounds->add_option("--slack", bo.slack, "relative slack");

    auto* figure = app.add_subcommand("figure", "reproduce a figure preset");
    add_common(figure, common);
    default_format[figure] = "json";

    auto* fitc = app.add_subcommand("fit", "fit a reduced model to a progress curve");
    add_common(fitc, common);
    default_format[fitc] = "json";
    fitc->add_option("--data", fo.data, "t,p CSV; synthesized from the parameters when absent");
    fitc->add_option("--model", fo.model, "RQSSA, SQSSA_P, TQSSA or TQSSA_PRACTICE");
    fitc->add_option("--free", fo.free, "name=guess[:lower:upper], repeatable");
    fitc->add_option("--fix", fo.fixed, "name=value, repeatable");
    fitc->add_option("--samples", fo.samples, "synthetic sample count");
    fitc->add_option("--noise", fo.noise, "noise standard deviation");
    fitc->add_option("--max-iter", fo.max_iter, "iteration cap");

    auto* sweep = app.add_subcommand("sweep", "evaluate quantities over a parameter grid");
    add_common(sweep, common);
    default_format[sweep] = "csv";
    sweep->add_option("--grid", so.grid, "name=log:lo:hi:n | lin:lo:hi:n | v1,v2,...; repeatable")->required();
    sweep->add_option("--quantity", so.quantities, "quantity name, repeatable")->required();
    sweep->add_option("--max-points", so.max_points, "grid size cap");
    sweep->add_option("--threads", so.threads, "worker threads (0: hardware)");
    sweep->add_flag("--ratios", so.ratios, "append row-to-row ratio columns");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    for (const auto& [sub, fmt] : default_format)
        if (sub->parsed() && common.format.empty()) common.format = fmt;

    try {
        if (constants->parsed()) return cmd_constants(common, out);
        if (simulate->parsed()) return cmd_simulate(common, sim, out);
        if (reduce->parsed()) return cmd_reduce(common, red, out);
        if (phase->parsed()) return cmd_phase(common, ph, out);
        if (bounds->parsed()) return cmd_bounds(common, bo, out);
        if (figure->parsed()) return cmd_figure(common, out);
        if (fitc->parsed()) return cmd_fit(common, fo, out);
        if (sweep->parsed()) return cmd_sweep(common, so, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.code() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace mmqss::cli
