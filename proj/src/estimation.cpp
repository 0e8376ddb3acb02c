#include "mmqss/estimation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "mmqss/errors.hpp"
#include "mmqss/ode.hpp"

namespace mmqss {

void ProgressCurve::validate() const {
    if (times.size() != p.size()) throw InvalidParameters("progress curve: times and p differ in length");
    if (times.empty()) throw InvalidParameters("progress curve is empty");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i]) || !std::isfinite(p[i]))
            throw InvalidParameters("progress curve contains a non-finite value");
        if (i > 0 && !(times[i] > times[i - 1]))
            throw InvalidParameters("progress curve times must be strictly increasing");
    }
    if (!(noise_sd >= 0.0)) throw InvalidParameters("noise_sd must be >= 0");
}

ProgressCurve synthesize(const RateParameters& params, const std::vector<double>& sample_times,
                         double noise_sd, std::uint64_t seed) {
    params.validate();
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw InvalidParameters("noise_sd must be finite and >= 0");
    if (sample_times.empty()) throw InvalidParameters("synthesize needs at least one sample time");
    for (std::size_t i = 0; i < sample_times.size(); ++i) {
        if (!std::isfinite(sample_times[i]) || sample_times[i] < 0.0)
            throw InvalidParameters("sample times must be finite and >= 0");
        if (i > 0 && !(sample_times[i] > sample_times[i - 1]))
            throw InvalidParameters("sample times must be strictly increasing");
    }

    ProgressCurve curve;
    curve.times = sample_times;
    curve.e0 = params.e0;
    curve.s0 = params.s0;
    curve.noise_sd = noise_sd;
    curve.seed = seed;
    curve.p.assign(sample_times.size(), 0.0);

    std::vector<double> inner;
    for (double t : sample_times)
        if (t > 0.0) inner.push_back(t);
    if (!inner.empty()) {
        IntegratorConfig cfg;
        cfg.rtol = 1e-10;
        cfg.atol = 1e-12 * std::min(params.e0, params.s0);
        cfg.output_times = inner;
        cfg.dense_output = false;
        const Trajectory tr = simulate_mass_action(params, inner.back(), cfg);
        const std::size_t off = sample_times.size() - inner.size();
        for (std::size_t k = 0; k < inner.size(); ++k) curve.p[off + k] = tr.states[k][2];
    }

    if (noise_sd > 0.0) {
        for (std::size_t i = 0; i < curve.p.size(); ++i) {
            // One engine per index: the draw for sample i never depends on
            // how many other samples exist or in which order they are made.
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
            std::mt19937_64 rng(seq);
            std::normal_distribution<double> noise(0.0, noise_sd);
            curve.p[i] += noise(rng);
        }
    }
    return curve;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, std::size_t line) {
    const std::string f = trim(field);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(f, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != f.size())
        throw InvalidParameters("line " + std::to_string(line) + ": cannot parse '" + f + "' as a number");
    return v;
}

}  // namespace

ProgressCurve read_progress_curve(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InvalidParameters("progress curve CSV is empty");
    {
        std::stringstream hs(line);
        std::string a, b, extra;
        std::getline(hs, a, ',');
        std::getline(hs, b, ',');
        if (trim(a) != "t" || trim(b) != "p" || std::getline(hs, extra, ','))
            throw InvalidParameters("progress curve CSV must start with the header 't,p'");
    }
    ProgressCurve curve;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw InvalidParameters("line " + std::to_string(lineno) + ": expected two fields");
        curve.times.push_back(parse_number(line.substr(0, comma), lineno));
        curve.p.push_back(parse_number(line.substr(comma + 1), lineno));
    }
    curve.validate();
    return curve;
}

ProgressCurve read_progress_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return read_progress_curve(in);
}

void write_progress_curve(std::ostream& out, const ProgressCurve& curve) {
    char buf[64];
    out << "t,p\n";
    for (std::size_t i = 0; i < curve.times.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", curve.times[i], curve.p[i]);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// Parameter resolution.

namespace {

const std::set<std::string>& known_names() {
    static const std::set<std::string> names{"k1", "koff", "kcat", "e0", "s0", "KM", "V"};
    return names;
}

std::vector<std::string> required_names(ReducedModelKind model) {
    switch (model) {
        case ReducedModelKind::RQSSA:
            return {"kcat", "s0"};
        case ReducedModelKind::SQSSA_P:
            return {"V", "KM", "s0"};
        case ReducedModelKind::TQSSA:
        case ReducedModelKind::TQSSA_PRACTICE:
            return {"kcat", "KM", "e0", "s0"};
        default:
            throw InvalidParameters("fit supports RQSSA, SQSSA_P, TQSSA and TQSSA_PRACTICE, not " +
                                    std::string(to_string(model)));
    }
}

using Values = std::map<std::string, double>;

std::optional<double> get(const Values& v, const char* name) {
    const auto it = v.find(name);
    if (it == v.end()) return std::nullopt;
    return it->second;
}

// Fills kcat, V and KM from whatever combination of names is present.
Values resolve(const Values& given) {
    Values out = given;
    const auto k1 = get(given, "k1"), koff = get(given, "koff"), e0 = get(given, "e0");
    auto kcat = get(given, "kcat");
    auto V = get(given, "V");
    if (kcat && V && e0 && std::abs(*V - *kcat * *e0) > 1e-12 * std::abs(*V))
        throw InvalidParameters("kcat, V and e0 are inconsistent (V != kcat e0)");
    if (get(given, "KM") && k1 && koff) throw InvalidParameters("KM cannot be given together with k1 and koff");
    if (!kcat && V && e0) kcat = *V / *e0;
    if (!V && kcat && e0) V = *kcat * *e0;
    if (kcat) out["kcat"] = *kcat;
    if (V) out["V"] = *V;
    if (!get(given, "KM") && k1 && koff && kcat) out["KM"] = (*koff + *kcat) / *k1;
    return out;
}

std::vector<double> model_values(ReducedModelKind model, const Values& v, const std::vector<double>& times,
                                 double ode_tol) {
    for (const auto& name : required_names(model))
        if (!v.count(name)) throw InvalidParameters("model " + std::string(to_string(model)) + " needs " + name);
    const double s0 = v.at("s0");
    std::vector<double> out(times.size(), 0.0);

    if (model == ReducedModelKind::RQSSA) {
        const double kcat = v.at("kcat");
        for (std::size_t i = 0; i < times.size(); ++i) out[i] = -s0 * std::expm1(-kcat * times[i]);
        return out;
    }

    OdeSystem sys;
    sys.dim = 1;
    if (model == ReducedModelKind::SQSSA_P) {
        const double V = v.at("V"), km = v.at("KM");
        sys.rhs = [=](double, const Vector& y, Vector& dy) {
            const double q = s0 - y[0];
            dy[0] = V * q / (km + q);
        };
    } else if (model == ReducedModelKind::TQSSA) {
        const double kcat = v.at("kcat"), km = v.at("KM"), e0 = v.at("e0");
        sys.rhs = [=](double, const Vector& y, Vector& dy) {
            const double q = s0 - y[0];
            // Smaller root of c^2 - (e0+K_M+q) c + e0 q, rationalized.
            const double a = e0 + km + q;
            dy[0] = kcat * 2.0 * e0 * q / (a + std::sqrt(std::max(complex_discriminant(e0, km, q), 0.0)));
        };
    } else {
        const double kcat = v.at("kcat"), km = v.at("KM"), e0 = v.at("e0");
        sys.rhs = [=](double, const Vector& y, Vector& dy) {
            const double q = s0 - y[0];
            dy[0] = kcat * e0 * q / (e0 + km + q);
        };
    }

    std::vector<double> inner;
    for (double t : times)
        if (t > 0.0) inner.push_back(t);
    if (inner.empty()) return out;
    IntegratorConfig cfg;
    cfg.rtol = ode_tol;
    cfg.atol = ode_tol * s0;
    cfg.output_times = inner;
    cfg.dense_output = false;
    const Trajectory tr = integrate(sys, Vector::Zero(1), 0.0, inner.back(), cfg);
    const std::size_t off = times.size() - inner.size();
    for (std::size_t k = 0; k < inner.size(); ++k) out[off + k] = tr.states[k][0];
    return out;
}

}  // namespace

std::vector<double> evaluate_model(ReducedModelKind model, const std::map<std::string, double>& values,
                                   const std::vector<double>& times, double ode_tol) {
    for (const auto& [name, value] : values) {
        if (!known_names().count(name)) throw InvalidParameters("unknown parameter '" + name + "'");
        if (!std::isfinite(value) || !(value >= 0.0))
            throw InvalidParameters("parameter " + name + " must be finite and >= 0");
    }
    return model_values(model, resolve(values), times, ode_tol);
}

void FitSpec::validate() const {
    required_names(model);
    if (free.empty()) throw InvalidParameters("fit needs at least one free parameter");
    std::set<std::string> seen;
    for (const auto& f : free) {
        if (!known_names().count(f.name)) throw InvalidParameters("unknown parameter '" + f.name + "'");
        if (!seen.insert(f.name).second) throw InvalidParameters("parameter " + f.name + " listed twice");
        if (fixed.count(f.name)) throw InvalidParameters("parameter " + f.name + " is both free and fixed");
        if (!(f.lower >= 0.0) || !(f.upper > f.lower))
            throw InvalidParameters("parameter " + f.name + " has an empty or negative box");
        const bool inside = f.initial <= f.upper && (f.lower == 0.0 ? f.initial > 0.0 : f.initial >= f.lower);
        if (!std::isfinite(f.initial) || !inside)
            throw InvalidParameters("initial guess for " + f.name + " lies outside its box");
    }
    for (const auto& [name, value] : fixed) {
        if (!known_names().count(name)) throw InvalidParameters("unknown parameter '" + name + "'");
        if (!std::isfinite(value) || !(value >= 0.0))
            throw InvalidParameters("fixed parameter " + name + " must be finite and >= 0");
    }
    if (!(step_tol > 0.0) || !(grad_tol > 0.0) || max_iterations < 1 || !(ode_tol > 0.0))
        throw InvalidParameters("fit tolerances must be positive");
}

// ---------------------------------------------------------------------------
// Levenberg--Marquardt.

namespace {

struct Problem {
    const ProgressCurve& curve;
    const FitSpec& spec;
    Values base;  // fixed values plus curve-known e0, s0
    std::vector<double> sqrt_w;

    Values values_at(const Eigen::VectorXd& theta) const {
        Values v = base;
        for (std::size_t j = 0; j < spec.free.size(); ++j) v[spec.free[j].name] = theta[static_cast<Eigen::Index>(j)];
        return resolve(v);
    }

    // Residuals, or nullopt when the model cannot be evaluated there.
    std::optional<Eigen::VectorXd> residuals(const Eigen::VectorXd& theta) const {
        std::vector<double> m;
        try {
            m = model_values(spec.model, values_at(theta), curve.times, spec.ode_tol);
        } catch (const StepUnderflow&) {
            return std::nullopt;
        } catch (const DomainError&) {
            return std::nullopt;
        }
        Eigen::VectorXd r(static_cast<Eigen::Index>(m.size()));
        for (std::size_t i = 0; i < m.size(); ++i) {
            r[static_cast<Eigen::Index>(i)] = sqrt_w[i] * (curve.p[i] - m[i]);
            if (!std::isfinite(r[static_cast<Eigen::Index>(i)])) return std::nullopt;
        }
        return r;
    }
};

// Moves toward a bound by at most half the remaining distance, so open lower
// bounds at zero are never reached and the rule is unit-free.
double project(double proposed, double current, const FreeParameter& f) {
    if (proposed <= f.lower && (f.lower == 0.0 || proposed < f.lower)) return 0.5 * (current + f.lower);
    if (proposed > f.upper) return std::isinf(f.upper) ? proposed : 0.5 * (current + f.upper);
    return proposed;
}

}  // namespace

FitResult fit(const ProgressCurve& curve, const FitSpec& spec) {
    curve.validate();
    spec.validate();
    const std::size_t n = curve.times.size();
    const std::size_t m = spec.free.size();
    if (n < 2 * m)
        throw InvalidParameters("fit needs at least " + std::to_string(2 * m) + " samples, got " + std::to_string(n));
    if (!spec.weights.empty()) {
        if (spec.weights.size() != n) throw InvalidParameters("weights must match the number of samples");
        for (double w : spec.weights)
            if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidParameters("weights must be finite and >= 0");
    }

    const auto [lo, hi] = std::minmax_element(curve.p.begin(), curve.p.end());
    const double range = *hi - *lo;
    const double scale = std::max({std::abs(*hi), std::abs(*lo), curve.s0.value_or(0.0)});
    const double atol = spec.ode_tol * std::max(scale, 1.0);
    if (!(range > 10.0 * curve.noise_sd) || !(range > atol)) {
        std::ostringstream msg;
        msg << "dynamic range " << range << " is below max(10 * noise_sd, atol) = "
            << std::max(10.0 * curve.noise_sd, atol);
        throw InsufficientSignal(msg.str());
    }

    Problem prob{curve, spec, spec.fixed, std::vector<double>(n, 1.0)};
    if (curve.e0 && !prob.base.count("e0")) prob.base["e0"] = *curve.e0;
    if (curve.s0 && !prob.base.count("s0")) prob.base["s0"] = *curve.s0;
    for (const auto& f : spec.free) prob.base.erase(f.name);
    if (!spec.weights.empty())
        for (std::size_t i = 0; i < n; ++i) prob.sqrt_w[i] = std::sqrt(spec.weights[i]);

    Eigen::VectorXd theta(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) theta[static_cast<Eigen::Index>(j)] = spec.free[j].initial;
    {
        const Values probe = prob.values_at(theta);
        for (const auto& name : required_names(spec.model))
            if (!probe.count(name))
                throw InvalidParameters("model " + std::string(to_string(spec.model)) + " needs " + name +
                                        " as a free or fixed parameter");
    }

    FitResult res;
    res.model = spec.model;
    auto r0 = prob.residuals(theta);
    if (!r0) throw DomainError("model cannot be evaluated at the initial guess");
    Eigen::VectorXd r = *r0;
    double ssr = r.squaredNorm();
    res.ssr_history.push_back(ssr);

    const double h_rel = std::sqrt(std::numeric_limits<double>::epsilon());
    Eigen::MatrixXd J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    auto jacobian = [&]() {
        for (std::size_t j = 0; j < m; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            double h = h_rel * std::max(std::abs(theta[jj]), std::numeric_limits<double>::min());
            if (theta[jj] + h > spec.free[j].upper) h = -h;
            Eigen::VectorXd tp = theta;
            tp[jj] += h;
            h = tp[jj] - theta[jj];
            const auto rp = prob.residuals(tp);
            if (!rp) throw DomainError("model cannot be evaluated next to " + spec.free[j].name);
            // d(model)/d(theta) = -d(residual)/d(theta)
            J.col(jj) = -(*rp - r) / h;
        }
    };

    double mu = 1e-3;
    bool done = false;
    int iter = 0;
    while (!done && iter < spec.max_iterations) {
        ++iter;
        jacobian();
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;  // minus half the gradient of ssr

        // First-order optimality in relative (unit-free) form.
        const double scaled_grad = (g.array() * theta.array()).abs().maxCoeff();
        if (scaled_grad <= spec.grad_tol * std::max(ssr, std::numeric_limits<double>::min())) {
            res.termination = "gradient below tolerance";
            res.converged = true;
            break;
        }

        Eigen::VectorXd diag = JtJ.diagonal();
        for (Eigen::Index j = 0; j < diag.size(); ++j)
            if (!(diag[j] > 0.0)) diag[j] = 1.0;

        while (true) {
            Eigen::MatrixXd A = JtJ;
            A.diagonal() += mu * diag;
            const Eigen::VectorXd delta = A.ldlt().solve(g);
            Eigen::VectorXd trial = theta;
            double rel_step = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                trial[jj] = project(theta[jj] + delta[jj], theta[jj], spec.free[j]);
                rel_step = std::max(rel_step, std::abs(trial[jj] - theta[jj]) / std::abs(theta[jj]));
            }
            if (!(rel_step > spec.step_tol)) {
                res.termination = "step below tolerance";
                res.converged = true;
                done = true;
                break;
            }
            const auto rt = prob.residuals(trial);
            const double ssr_t = rt ? rt->squaredNorm() : std::numeric_limits<double>::infinity();
            if (ssr_t <= ssr) {
                theta = trial;
                r = *rt;
                ssr = ssr_t;
                res.ssr_history.push_back(ssr);
                mu = std::max(mu / 3.0, 1e-12);
                if (rel_step <= 10.0 * spec.step_tol) {
                    res.termination = "step below tolerance";
                    res.converged = true;
                    done = true;
                }
                break;
            }
            mu *= 4.0;
            if (mu > 1e20) {
                res.termination = "no decrease possible";
                res.converged = true;
                done = true;
                break;
            }
        }
    }
    if (!res.converged) {
        res.termination = "iteration cap reached";
        res.warnings.push_back("NotConverged: iteration cap of " + std::to_string(spec.max_iterations) +
                               " reached; estimates are partial");
    }

    res.iterations = iter;
    res.ssr = ssr;
    res.residuals.assign(r.data(), r.data() + r.size());
    for (std::size_t j = 0; j < m; ++j) res.estimates[spec.free[j].name] = theta[static_cast<Eigen::Index>(j)];
    res.resolved = prob.values_at(theta);

    // Conditioning of the relative-sensitivity Jacobian (columns times theta).
    // Forward differences resolve column directions only to about sqrt(eps),
    // which caps the measurable condition number near 1e8; central
    // differences in log(theta) push that cap well past the threshold.
    Eigen::MatrixXd Js(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    bool central_ok = true;
    const double hc = std::cbrt(std::numeric_limits<double>::epsilon());
    for (Eigen::Index j = 0; j < Js.cols() && central_ok; ++j) {
        Eigen::VectorXd tp = theta, tm = theta;
        tp[j] *= std::exp(hc);
        tm[j] *= std::exp(-hc);
        const auto rp = prob.residuals(tp);
        const auto rm = prob.residuals(tm);
        if (!rp || !rm) {
            central_ok = false;
            break;
        }
        Js.col(j) = -(*rp - *rm) / (2.0 * hc);
    }
    if (!central_ok) {
        jacobian();
        Js = J;
        for (Eigen::Index j = 0; j < Js.cols(); ++j) Js.col(j) *= theta[j];
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Js);
    const auto& sv = svd.singularValues();
    res.condition_number = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1]
                                                   : std::numeric_limits<double>::infinity();
    if (res.condition_number > 1e8) {
        std::ostringstream msg;
        msg << "ill-conditioned Jacobian (condition number " << res.condition_number
            << "); free parameters are nearly collinear";
        res.warnings.push_back(msg.str());
    }

    // Regime gate at the fitted constants.
    const Values& v = res.resolved;
    if (v.count("kcat") && v.count("KM") && v.count("e0") && v.count("s0") && v.at("KM") > 0.0) {
        RateParameters rp;
        rp.k_cat = v.at("kcat");
        rp.e0 = v.at("e0");
        rp.s0 = v.at("s0");
        const double km = v.at("KM");
        if (v.count("k1")) {
            rp.k1 = v.at("k1");
            rp.k_off = std::max(0.0, rp.k1 * km - rp.k_cat);
        } else if (v.count("koff")) {
            rp.k_off = v.at("koff");
            rp.k1 = (rp.k_off + rp.k_cat) / km;
        } else {
            // The k_off / k_cat split is not identifiable from p(t); k_off = 0
            // maximizes nu and so is the conservative choice.
            rp.k_off = 0.0;
            rp.k1 = rp.k_cat / km;
            res.warnings.push_back("regime report assumes k_off = 0 (nu = 1); the split of K_M is unknown");
        }
        try {
            rp.validate();
            res.regime = classify_regime(dimensionless_groups(rp), spec.thresholds);
            res.regime_params = rp;
        } catch (const InvalidParameters& e) {
            res.warnings.push_back(std::string("no regime report: ") + e.what());
        }
    } else {
        res.warnings.push_back("no regime report: kcat, KM, e0 and s0 are not all known");
    }
    return res;
}

}  // namespace mmqss
