#include "mmqss/bounds.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "mmqss/errors.hpp"

namespace mmqss {

namespace {

struct KindName {
    EnvelopeKind kind;
    const char* name;
};

constexpr KindName kNames[] = {
    {EnvelopeKind::SUBSTRATE_CONSERVATION, "SUBSTRATE_CONSERVATION"},
    {EnvelopeKind::SQSSA_ENSLAVEMENT, "SQSSA_ENSLAVEMENT"},
    {EnvelopeKind::RQSSA_DISSIPATION, "RQSSA_DISSIPATION"},
    {EnvelopeKind::TQSSA_NULLCLINE, "TQSSA_NULLCLINE"},
    {EnvelopeKind::TQSSA_LIMSUP_TIGHT, "TQSSA_LIMSUP_TIGHT"},
    {EnvelopeKind::TQSSA_PRACTICE, "TQSSA_PRACTICE"},
    {EnvelopeKind::GENERIC, "GENERIC"},
};

void require_positive(double value, const char* what, EnvelopeKind kind) {
    if (!(value > 0.0)) {
        std::ostringstream os;
        os << to_string(kind) << " needs " << what << " > 0; got " << value;
        throw DegenerateBound(os.str());
    }
}

}  // namespace

std::string_view to_string(EnvelopeKind kind) {
    for (const auto& kn : kNames)
        if (kn.kind == kind) return kn.name;
    return "GENERIC";
}

EnvelopeKind parse_envelope_kind(std::string_view name) {
    std::string key(name);
    for (auto& ch : key) {
        if (ch == '-') ch = '_';
        ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    for (const auto& kn : kNames)
        if (key == kn.name) return kn.kind;
    throw InvalidParameters("unknown envelope kind: " + std::string(name));
}

const std::vector<EnvelopeKind>& named_envelope_kinds() {
    static const std::vector<EnvelopeKind> kinds = {
        EnvelopeKind::SUBSTRATE_CONSERVATION, EnvelopeKind::SQSSA_ENSLAVEMENT,
        EnvelopeKind::RQSSA_DISSIPATION,      EnvelopeKind::TQSSA_NULLCLINE,
        EnvelopeKind::TQSSA_LIMSUP_TIGHT,     EnvelopeKind::TQSSA_PRACTICE,
    };
    return kinds;
}

double Envelope::operator()(double t) const {
    if (A == 0.0) return B;
    return A * std::exp(-r * t) + B;
}

double envelope_quantity(EnvelopeKind kind, const MMState& x, const RateParameters& p) {
    const double km = p.michaelis_constant();
    const double q = p.s0 - x.p;
    switch (kind) {
        case EnvelopeKind::SUBSTRATE_CONSERVATION:
            return p.s0 - x.s - x.p;
        case EnvelopeKind::SQSSA_ENSLAVEMENT:
            return x.c / p.e0 - (km + q == 0.0 ? 0.0 : q / (km + q));
        case EnvelopeKind::RQSSA_DISSIPATION:
            return x.s;
        case EnvelopeKind::TQSSA_NULLCLINE:
        case EnvelopeKind::TQSSA_LIMSUP_TIGHT: {
            const Nullclines nc(p);
            // Products a hair above s0 come from integration error.
            return x.c - nc.h_minus_unchecked(std::min(x.p, p.s0));
        }
        case EnvelopeKind::TQSSA_PRACTICE:
            return x.c - p.e0 * q / (p.e0 + km + q);
        case EnvelopeKind::GENERIC:
            break;
    }
    throw QuantityUnavailable("GENERIC envelopes need an explicit quantity function");
}

Envelope envelope(EnvelopeKind kind, const RateParameters& params) {
    const DerivedConstants dc = derive_constants(params);
    const DimensionlessGroups g = dimensionless_groups(params);
    const double k1 = params.k1, e0 = params.e0, s0 = params.s0;
    const double km = dc.K_M, lambda = dc.lambda;
    const double eta_frac = std::isinf(g.eta) ? 1.0 : g.eta / (1.0 + g.eta);

    Envelope env;
    env.kind = kind;
    env.params = params;
    env.eps_D = g.eps_D;
    env.eps_L = g.eps_L;
    env.eps_LT = g.eps_LT;

    switch (kind) {
        case EnvelopeKind::SUBSTRATE_CONSERVATION:
            require_positive(km, "K_M", kind);
            env.quantity = "s0 - s - p";
            env.A = 0.0;
            env.r = k1 * km / 2.0;
            env.B = s0 * g.eta;
            env.range = s0;
            break;
        case EnvelopeKind::SQSSA_ENSLAVEMENT:
            require_positive(km, "K_M", kind);
            env.quantity = "c/e0 - (s0 - p)/(K_M + s0 - p)";
            env.A = g.mu;
            env.r = k1 * km / 2.0;
            env.B = g.eta / 4.0 + g.nu * lambda / km;
            env.range = 1.0;
            // The two case-split offsets: lambda <= s0 and lambda <= e0.
            env.extras["offset_case_s0_lt_e0"] = g.eta / 4.0 + g.nu * g.sigma;
            env.extras["offset_case_e0_lt_s0"] = 1.25 * g.eta;
            break;
        case EnvelopeKind::RQSSA_DISSIPATION:
            require_positive(e0 - lambda, "e0 - lambda", kind);
            env.quantity = "s";
            env.A = s0;
            env.r = k1 * (e0 - lambda) / 2.0;
            env.B = dc.K_S * lambda / (e0 - lambda);
            env.range = s0;
            env.extras["eps_under"] = g.eps_under;
            env.extras["eps_tilde"] = g.eps_tilde;
            break;
        case EnvelopeKind::TQSSA_NULLCLINE: {
            const double gap = e0 - lambda + km;
            require_positive(gap, "e0 - lambda + K_M", kind);
            const double zeta = k1 * gap;
            env.quantity = "c - h_minus(p)";
            env.A = lambda;
            env.r = zeta / 2.0;
            env.B = eta_frac * g.nu * lambda * km / gap;
            env.range = lambda;
            env.extras["zeta_T"] = zeta;
            env.eps_L = lambda > 0.0 ? env.B / lambda : 0.0;
            break;
        }
        case EnvelopeKind::TQSSA_LIMSUP_TIGHT: {
            const double theta = theta_fn(lambda, params);
            require_positive(std::abs(theta), "|theta(lambda)|", kind);
            env.quantity = "c - h_minus(p)";
            env.A = lambda;
            env.r = k1 * std::abs(theta) / 2.0;
            env.B = lambda * g.eps_LT;
            env.range = lambda;
            env.extras["theta_lambda"] = theta;
            env.extras["theta_e0"] = -0.5 * (km + std::sqrt(km * km + 4.0 * e0 * km));
            break;
        }
        case EnvelopeKind::TQSSA_PRACTICE: {
            const double ek = e0 + km;
            env.quantity = "c - e0 (s0 - p)/(e0 + K_M + s0 - p)";
            env.A = e0 * s0 / (ek + s0);
            env.r = k1 * ek / 2.0;
            env.B = lambda * (lambda / ek + g.nu * e0 * km / (ek * ek));
            env.range = std::max(lambda, env.A);
            break;
        }
        case EnvelopeKind::GENERIC:
            throw InvalidParameters("GENERIC envelopes come from generic_gronwall");
    }
    env.vacuous = env.B > env.range;
    return env;
}

void GronwallSpec::validate() const {
    if (!(zeta > 0.0) || !std::isfinite(zeta)) throw InvalidParameters("GronwallSpec: zeta must be > 0");
    if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidParameters("GronwallSpec: eps must be > 0");
    if (!(sup_dh >= 0.0) || !(sup_xdot >= 0.0) || !(z0 >= 0.0))
        throw InvalidParameters("GronwallSpec: sup_dh, sup_xdot and z0 must be >= 0");
}

Envelope generic_gronwall(const GronwallSpec& spec) {
    spec.validate();
    Envelope env;
    env.kind = EnvelopeKind::GENERIC;
    env.quantity = "|y - h0(x)|";
    env.A = spec.z0;
    env.r = spec.zeta / (2.0 * spec.eps);
    env.B = spec.eps * spec.sup_dh * spec.sup_xdot / spec.zeta;
    env.extras["zeta"] = spec.zeta;
    env.extras["eps"] = spec.eps;
    return env;
}

GronwallSpec tqssa_gronwall_spec(const RateParameters& params) {
    const DerivedConstants dc = derive_constants(params);
    GronwallSpec spec;
    spec.zeta = params.k1 * (params.e0 - dc.lambda + dc.K_M);
    spec.sup_dh = params.e0 / (dc.K_M + params.e0);
    spec.sup_xdot = params.k_cat * dc.lambda;
    spec.eps = 1.0;
    spec.z0 = dc.lambda;
    return spec;
}

namespace {

QuantityFn named_quantity(const Envelope& env) {
    if (env.kind == EnvelopeKind::GENERIC || !env.params)
        throw QuantityUnavailable("envelope has no built-in quantity; pass one explicitly");
    const EnvelopeKind kind = env.kind;
    const RateParameters params = *env.params;
    return [kind, params](const MMState& x) { return envelope_quantity(kind, x, params); };
}

struct StateIndex {
    Eigen::Index s, c, p;
};

StateIndex state_index(const Trajectory& traj) {
    const auto s = traj.index_of("s"), c = traj.index_of("c"), p = traj.index_of("p");
    if (!s || !c || !p) throw QuantityUnavailable("trajectory lacks one of the s, c, p components");
    return {static_cast<Eigen::Index>(*s), static_cast<Eigen::Index>(*c), static_cast<Eigen::Index>(*p)};
}

MMState to_state(const Vector& y, const StateIndex& ix) { return {y[ix.s], y[ix.c], y[ix.p]}; }

}  // namespace

BoundReport verify(const Trajectory& traj, const Envelope& env, double slack, std::size_t log_samples) {
    return verify(traj, env, named_quantity(env), slack, log_samples);
}

namespace {

// Hermite interpolation across a long stiff step can miss the slow manifold by
// more than the tightest offsets, so mass-action runs are re-integrated from
// the preceding accepted step instead.
Vector sample_state(const Trajectory& traj, double t) {
    if (traj.meta.model != "mass_action" || !traj.meta.params || traj.meta.rtol <= 0.0)
        return traj.interpolate(t);
    const auto it = std::upper_bound(traj.times.begin(), traj.times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - traj.times.begin()) - 1;
    if (traj.times[i] == t) return traj.states[i];
    IntegratorConfig cfg;
    cfg.rtol = traj.meta.rtol;
    cfg.atol = traj.meta.atol;
    cfg.output_times = {t};
    cfg.dense_output = false;
    const auto local = integrate(mass_action_system(*traj.meta.params), traj.states[i], traj.times[i], t, cfg);
    return local.states.back();
}

}  // namespace

BoundReport verify(const Trajectory& traj, const Envelope& env, const QuantityFn& quantity, double slack,
                   std::size_t log_samples) {
    if (traj.size() == 0) throw QuantityUnavailable("empty trajectory");
    const StateIndex ix = state_index(traj);

    // Recorded steps, then log-spaced interpolated times merged in order.
    std::vector<std::pair<double, Vector>> samples;
    samples.reserve(traj.size() + log_samples);
    for (std::size_t i = 0; i < traj.size(); ++i) samples.emplace_back(traj.times[i], traj.states[i]);
    const double t0 = traj.times.front(), t1 = traj.times.back();
    if (log_samples > 1 && t1 > t0) {
        const double span = t1 - t0;
        const double lo = std::log(span * 1e-9), hi = std::log(span);
        for (std::size_t k = 0; k < log_samples; ++k) {
            const double t = t0 + std::exp(lo + (hi - lo) * static_cast<double>(k) /
                                                    static_cast<double>(log_samples - 1));
            if (t > t0 && t < t1) samples.emplace_back(t, sample_state(traj, t));
        }
    }
    std::stable_sort(samples.begin(), samples.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    BoundReport rep;
    rep.slack = slack;
    // Offsets can sit far below what a reference integration resolves on the
    // quantity's own scale, so the slack also applies to the range.
    rep.floor = std::isfinite(env.range) ? slack * env.range : 0.0;
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& [t, y] : samples) {
        const double qv = quantity(to_state(y, ix));
        const double bound = env(t);
        const double margin = bound * (1.0 + slack) + rep.floor - std::abs(qv);
        rep.times.push_back(t);
        rep.quantity.push_back(qv);
        rep.bound.push_back(bound);
        rep.margin.push_back(margin);
        worst = std::min(worst, margin);
    }
    rep.holds = worst >= 0.0;
    rep.max_violation = worst < 0.0 ? -worst : 0.0;
    try {
        rep.limsup_estimate = estimate_limsup(traj, env, quantity);
        rep.tail_start = t0 + 0.8 * (t1 - t0);
    } catch (const WindowTooShort&) {
        rep.limsup_estimate.reset();
    }
    return rep;
}

double estimate_limsup(const Trajectory& traj, const Envelope& env, double tail_fraction) {
    return estimate_limsup(traj, env, named_quantity(env), tail_fraction);
}

double estimate_limsup(const Trajectory& traj, const Envelope& env, const QuantityFn& quantity,
                       double tail_fraction) {
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
        throw InvalidParameters("tail_fraction must lie in (0, 1]");
    if (traj.size() < 2) throw WindowTooShort("trajectory has fewer than two samples");
    const StateIndex ix = state_index(traj);
    const double t0 = traj.times.front(), t1 = traj.times.back();
    const double start = t1 - tail_fraction * (t1 - t0);
    if (env.r > 0.0 && start < 5.0 / env.r) {
        std::ostringstream os;
        os << "tail window starts at t = " << start << " but needs t >= 5/r = " << 5.0 / env.r;
        throw WindowTooShort(os.str());
    }
    double best = std::abs(quantity(to_state(traj.interpolate(start), ix)));
    for (std::size_t i = 0; i < traj.size(); ++i)
        if (traj.times[i] >= start) best = std::max(best, std::abs(quantity(to_state(traj.states[i], ix))));
    return best;
}

}  // namespace mmqss
