#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmqss/bounds.hpp"
#include "mmqss/core.hpp"
#include "mmqss/errors.hpp"
#include "mmqss/estimation.hpp"
#include "mmqss/ode.hpp"
#include "mmqss/reductions.hpp"

namespace py = pybind11;
using namespace mmqss;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

py::dict groups_dict(const DimensionlessGroups& g) {
    py::dict d;
    d["eps_SS"] = g.eps_SS;
    d["eta"] = g.eta;
    d["eps_star"] = g.eps_star;
    d["eps_SM"] = g.eps_SM;
    d["sigma"] = g.sigma;
    d["kappa"] = g.kappa;
    d["nu"] = g.nu;
    d["nu_tilde"] = g.nu_tilde;
    d["beta"] = g.beta;
    d["mu"] = g.mu;
    d["alpha"] = g.alpha;
    d["ell"] = g.ell;
    d["eps_ratio"] = g.eps_ratio;
    d["eps_under"] = g.eps_under;
    d["eps_tilde"] = g.eps_tilde;
    d["eps_T"] = g.eps_T;
    d["eps_D"] = g.eps_D;
    d["eps_L"] = g.eps_L;
    d["eps_LT"] = g.eps_LT;
    d["theta_ext"] = g.theta_ext;
    d["degenerate"] = g.degenerate;
    return d;
}

py::dict regime_dict(const RegimeReport& rep) {
    py::dict d;
    for (const auto& e : rep.entries) {
        py::dict x;
        x["qualifier"] = e.qualifier;
        x["value"] = e.value;
        x["threshold"] = e.threshold;
        x["verdict"] = std::string(to_string(e.verdict));
        x["note"] = e.note;
        d[py::str(e.approximation)] = x;
    }
    return d;
}

py::dict envelope_dict(const Envelope& env) {
    py::dict d;
    d["kind"] = std::string(to_string(env.kind));
    d["quantity"] = env.quantity;
    d["A"] = env.A;
    d["r"] = env.r;
    d["B"] = env.B;
    d["range"] = env.range;
    d["vacuous"] = env.vacuous;
    d["eps_D"] = env.eps_D;
    d["eps_L"] = env.eps_L;
    d["eps_LT"] = env.eps_LT;
    for (const auto& [k, v] : env.extras) d[py::str(k)] = v;
    return d;
}

py::array_t<double> named_component(const Trajectory& tr, const std::string& label) {
    const auto ix = tr.index_of(label);
    if (!ix) throw QuantityUnavailable("trajectory has no component '" + label + "'");
    return to_array(tr.component(*ix));
}

IntegratorConfig make_config(double rtol, double atol, const std::string& method,
                             std::optional<std::vector<double>> output_times) {
    IntegratorConfig cfg;
    cfg.rtol = rtol;
    cfg.atol = atol;
    cfg.method = parse_method(method);
    if (output_times) {
        cfg.output_times = *output_times;
        cfg.dense_output = false;
    }
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Michaelis-Menten quasi-steady-state toolkit (compiled core)";

    static py::exception<Error> error(m, "Error", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object cls = py::reinterpret_borrow<py::object>(error.ptr());
            py::object inst = cls(py::str(e.code() + ": " + e.what()));
            inst.attr("code") = e.code();
            PyErr_SetObject(error.ptr(), inst.ptr());
        }
    });

    py::class_<RateParameters>(m, "RateParameters")
        .def(py::init([](double k1, double k_off, double k_cat, double e0, double s0) {
                 RateParameters p{k1, k_off, k_cat, e0, s0};
                 p.validate();
                 return p;
             }),
             py::arg("k1"), py::arg("k_off"), py::arg("k_cat"), py::arg("e0"), py::arg("s0"))
        .def_readwrite("k1", &RateParameters::k1)
        .def_readwrite("k_off", &RateParameters::k_off)
        .def_readwrite("k_cat", &RateParameters::k_cat)
        .def_readwrite("e0", &RateParameters::e0)
        .def_readwrite("s0", &RateParameters::s0)
        .def("validate", &RateParameters::validate)
        .def_property_readonly("K_M", &RateParameters::michaelis_constant)
        .def_property_readonly("K_S", &RateParameters::dissociation_constant)
        .def("with_michaelis_constant", &RateParameters::with_michaelis_constant, py::arg("km"))
        .def("__repr__", [](const RateParameters& p) {
            return "RateParameters(k1=" + format_double(p.k1) + ", k_off=" + format_double(p.k_off) +
                   ", k_cat=" + format_double(p.k_cat) + ", e0=" + format_double(p.e0) +
                   ", s0=" + format_double(p.s0) + ")";
        });

    m.def("derive_constants", [](const RateParameters& p) {
        const auto dc = derive_constants(p);
        py::dict d;
        d["K_M"] = dc.K_M;
        d["K_S"] = dc.K_S;
        d["V"] = dc.V;
        d["lambda"] = dc.lambda;
        return d;
    });
    m.def("dimensionless_groups", [](const RateParameters& p) { return groups_dict(dimensionless_groups(p)); });
    m.def("timescales", [](const RateParameters& p) {
        const auto ts = timescales(p);
        py::dict d;
        d["t_C"] = ts.t_C;
        d["t_D"] = ts.t_D;
        d["t_Cstar"] = ts.t_Cstar;
        d["t_P"] = ts.t_P;
        d["t_ell"] = ts.t_ell;
        d["t_slow"] = ts.t_slow;
        return d;
    });
    m.def(
        "classify_regime",
        [](const RateParameters& p, double valid, double marginal) {
            return regime_dict(classify_regime(dimensionless_groups(p), {valid, marginal}));
        },
        py::arg("params"), py::arg("valid") = 0.1, py::arg("marginal") = 0.3);
    m.def("h_minus", [](const RateParameters& p, double prod) { return Nullclines(p).h_minus(prod); });
    m.def("h_plus", [](const RateParameters& p, double prod) { return Nullclines(p).h_plus(prod); });

    py::class_<Trajectory>(m, "Trajectory")
        .def_property_readonly("t", [](const Trajectory& tr) { return to_array(tr.times); })
        .def_property_readonly("states",
                               [](const Trajectory& tr) {
                                   py::array_t<double> a({tr.size(), tr.dim()});
                                   auto v = a.mutable_unchecked<2>();
                                   for (std::size_t i = 0; i < tr.size(); ++i)
                                       for (std::size_t j = 0; j < tr.dim(); ++j) v(i, j) = tr.states[i][j];
                                   return a;
                               })
        .def("component",
             [](const Trajectory& tr, const std::string& label) {
                 return named_component(tr, label);
             })
        .def_property_readonly("s", [](const Trajectory& tr) { return named_component(tr, "s"); })
        .def_property_readonly("c", [](const Trajectory& tr) { return named_component(tr, "c"); })
        .def_property_readonly("p", [](const Trajectory& tr) { return named_component(tr, "p"); })
        .def("interpolate",
             [](const Trajectory& tr, double t) {
                 const Vector y = tr.interpolate(t);
                 return std::vector<double>(y.data(), y.data() + y.size());
             })
        .def_property_readonly("labels", [](const Trajectory& tr) { return tr.meta.labels; })
        .def_property_readonly("method_used", [](const Trajectory& tr) { return tr.meta.method_used; })
        .def_property_readonly("steps", [](const Trajectory& tr) { return tr.meta.steps; })
        .def_property_readonly("stiffness_switch_time",
                               [](const Trajectory& tr) { return tr.meta.stiffness_switch_time; })
        .def("__len__", &Trajectory::size);

    m.def(
        "simulate",
        [](const RateParameters& p, double t_end, double rtol, double atol, const std::string& method,
           std::optional<std::vector<double>> output_times) {
            return simulate_mass_action(p, t_end, make_config(rtol, atol, method, output_times));
        },
        py::arg("params"), py::arg("t_end"), py::arg("rtol") = 1e-8, py::arg("atol") = 1e-10,
        py::arg("method") = "AUTO", py::arg("output_times") = py::none());
    m.def(
        "simulate_reduced",
        [](const std::string& kind, const RateParameters& p, double t_end, double t0, std::optional<double> x0,
           double rtol, double atol, std::optional<std::vector<double>> output_times) {
            return simulate_reduced(parse_reduced_kind(kind), p, t_end,
                                    make_config(rtol, atol, "AUTO", output_times), ReducedStart{t0, x0});
        },
        py::arg("kind"), py::arg("params"), py::arg("t_end"), py::arg("t0") = 0.0, py::arg("x0") = py::none(),
        py::arg("rtol") = 1e-8, py::arg("atol") = 1e-10, py::arg("output_times") = py::none());
    m.def("detect_transient_end", [](const Trajectory& tr) { return detect_transient_end(tr); });
    m.def("reduced_rhs", [](const std::string& kind, double x, const RateParameters& p) {
        return reduced_rhs(parse_reduced_kind(kind), x, p);
    });
    m.def("reduced_kinds", [] {
        std::vector<std::string> names;
        for (auto k : all_reduced_kinds()) names.emplace_back(to_string(k));
        return names;
    });
    m.def("closed_form_rqssa", [](double t, const RateParameters& p) {
        return closed_form(ClosedFormKind::RQSSA_P, t, p);
    });

    m.def("riccati_base_point", [](const RateParameters& p) {
        const auto rb = riccati_base_point(p);
        py::dict d;
        d["mu"] = rb.mu;
        d["s_bar"] = rb.s_bar;
        d["c_bar"] = rb.c_bar;
        d["s"] = rb.s;
        d["c"] = rb.c;
        return d;
    });
    m.def("hyperbolicity_margin", &hyperbolicity_margin, py::arg("p_bar"), py::arg("c_hat"), py::arg("params"));
    m.def("normal_form_coefficients", [](const RateParameters& p) {
        const auto nf = normal_form_coefficients(p);
        py::dict d;
        d["a"] = nf.a;
        d["b"] = nf.b;
        d["taylor_a"] = nf.taylor_a;
        d["taylor_b"] = nf.taylor_b;
        return d;
    });
    m.def("invariance_residual", [](const RateParameters& p, const std::vector<double>& s_grid) {
        const auto r = invariance_residual(c_nullcline_graph(p), p, s_grid);
        py::dict d;
        d["residual"] = to_array(r.residual);
        d["scaled"] = to_array(r.scaled);
        d["sup"] = r.sup();
        d["sup_scaled"] = r.sup_scaled();
        return d;
    });
    m.def(
        "refine_manifold",
        [](const RateParameters& p, int n_iter, const std::vector<double>& s_grid) {
            const auto r = refine_manifold(c_nullcline_graph(p), p, n_iter, s_grid);
            py::dict d;
            d["sup_residuals"] = r.sup_residuals;
            d["diverged"] = r.diverged;
            py::list its;
            for (const auto& it : r.iterates) its.append(to_array(it));
            d["iterates"] = its;
            return d;
        },
        py::arg("params"), py::arg("n_iter"), py::arg("s_grid"));

    m.def("envelope_kinds", [] {
        std::vector<std::string> names;
        for (auto k : named_envelope_kinds()) names.emplace_back(to_string(k));
        return names;
    });
    m.def("envelope", [](const std::string& kind, const RateParameters& p) {
        return envelope_dict(envelope(parse_envelope_kind(kind), p));
    });
    m.def(
        "generic_gronwall",
        [](double zeta, double sup_dh, double sup_xdot, double eps, double z0) {
            return envelope_dict(generic_gronwall({zeta, sup_dh, sup_xdot, eps, z0}));
        },
        py::arg("zeta"), py::arg("sup_dh"), py::arg("sup_xdot"), py::arg("eps") = 1.0, py::arg("z0") = 0.0);
    m.def(
        "verify",
        [](const Trajectory& tr, const std::string& kind, double slack) {
            const auto p = tr.meta.params;
            if (!p) throw QuantityUnavailable("trajectory carries no rate parameters");
            const auto env = envelope(parse_envelope_kind(kind), *p);
            const auto rep = verify(tr, env, slack);
            py::dict d = envelope_dict(env);
            d["holds"] = rep.holds;
            d["max_violation"] = rep.max_violation;
            d["slack"] = rep.slack;
            d["floor"] = rep.floor;
            d["limsup_estimate"] = rep.limsup_estimate ? py::cast(*rep.limsup_estimate) : py::none();
            d["t"] = to_array(rep.times);
            d["margin"] = to_array(rep.margin);
            return d;
        },
        py::arg("trajectory"), py::arg("kind"), py::arg("slack") = 1e-6);

    m.def(
        "synthesize",
        [](const RateParameters& p, const std::vector<double>& times, double noise_sd, std::uint64_t seed) {
            const auto c = synthesize(p, times, noise_sd, seed);
            return py::make_tuple(to_array(c.times), to_array(c.p));
        },
        py::arg("params"), py::arg("times"), py::arg("noise_sd") = 0.0, py::arg("seed") = 0);
    m.def(
        "fit",
        [](const std::vector<double>& times, const std::vector<double>& p, const std::string& model,
           const std::map<std::string, double>& free, const std::map<std::string, double>& fixed,
           std::optional<double> e0, std::optional<double> s0, double noise_sd, int max_iterations) {
            ProgressCurve curve;
            curve.times = times;
            curve.p = p;
            curve.e0 = e0;
            curve.s0 = s0;
            curve.noise_sd = noise_sd;
            FitSpec spec;
            spec.model = parse_reduced_kind(model);
            for (const auto& [name, guess] : free) spec.free.push_back({name, guess});
            spec.fixed = fixed;
            spec.max_iterations = max_iterations;
            const auto r = fit(curve, spec);
            py::dict d;
            d["model"] = std::string(to_string(r.model));
            d["estimates"] = r.estimates;
            d["resolved"] = r.resolved;
            d["residuals"] = to_array(r.residuals);
            d["ssr"] = r.ssr;
            d["iterations"] = r.iterations;
            d["converged"] = r.converged;
            d["termination"] = r.termination;
            d["ssr_history"] = r.ssr_history;
            d["condition_number"] = r.condition_number;
            d["warnings"] = r.warnings;
            d["regime"] = r.regime ? py::object(regime_dict(*r.regime)) : py::none();
            return d;
        },
        py::arg("times"), py::arg("p"), py::arg("model"), py::arg("free"),
        py::arg("fixed") = std::map<std::string, double>{}, py::arg("e0") = py::none(), py::arg("s0") = py::none(),
        py::arg("noise_sd") = 0.0, py::arg("max_iterations") = 200);
}
