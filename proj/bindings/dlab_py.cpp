// Python bindings for the dlab core: targets, schedules, samplers, metrics,
// and the config harness.  Matrices cross the boundary as lists of rows.
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dlab/harness.hpp"
#include "dlab/metrics.hpp"
#include "dlab/samplers.hpp"
#include "dlab/schedules.hpp"
#include "dlab/targets.hpp"
#include "dlab/version.hpp"

namespace py = pybind11;
using namespace dlab;

namespace {

using Rows = std::vector<std::vector<double>>;

Matrix to_matrix(const Rows& rows) {
    std::vector<Vec> r(rows.begin(), rows.end());
    return matrix_from_rows(r);
}

Rows from_matrix(const Matrix& m) {
    Rows out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        auto row = m.row(i);
        out[i].assign(row.begin(), row.end());
    }
    return out;
}

GuidanceAttachment make_attachment(const std::string& kind, std::size_t label, double scale,
                                   std::uint64_t seed) {
    GuidanceAttachment a;
    if (kind == "null") a.kind = ClassifierKind::Null;
    else if (kind == "exact") a.kind = ClassifierKind::Exact;
    else if (kind == "untrained") a.kind = ClassifierKind::Untrained;
    else throw std::invalid_argument("guidance kind must be null, exact or untrained");
    a.label = label;
    a.scale = scale;
    a.seed = seed;
    return a;
}

OdeSolver solver_from(const std::string& s) {
    if (s == "euler") return OdeSolver::Euler;
    if (s == "heun") return OdeSolver::Heun;
    throw std::invalid_argument("solver must be euler or heun");
}

}  // namespace

PYBIND11_MODULE(_dlab, m) {
    m.doc() = R"pbdoc(Gaussian-mixture diffusion laboratory (C++ core).)pbdoc";
    m.attr("__version__") = kVersion;

    py::class_<RngStream>(m, "RngStream")
        .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("master_seed"),
             py::arg("stream_id") = 0)
        .def("uniform", &RngStream::uniform)
        .def("normal", &RngStream::normal)
        .def("substream", &RngStream::substream, py::arg("child_id"));

    py::class_<GaussianMixture>(m, "GaussianMixture")
        .def(py::init([](const std::vector<double>& w, const Rows& means, const Rows& vars) {
                 return GaussianMixture(w, to_matrix(means), to_matrix(vars));
             }),
             py::arg("weights"), py::arg("means"), py::arg("variances"))
        .def_property_readonly("dim", &GaussianMixture::dim)
        .def_property_readonly("components", &GaussianMixture::components)
        .def("log_density",
             [](const GaussianMixture& g, const std::vector<double>& x) {
                 return g.log_density(x);
             })
        .def("score",
             [](const GaussianMixture& g, const std::vector<double>& x) { return g.score(x); })
        .def("posterior",
             [](const GaussianMixture& g, const std::vector<double>& x) { return g.posterior(x); })
        .def("marginal_mean", &GaussianMixture::marginal_mean)
        .def("marginal_variance", &GaussianMixture::marginal_variance);

    m.def(
        "perturb",
        [](const GaussianMixture& g, double scale, double noise_var) {
            return perturb(g, {scale, noise_var});
        },
        py::arg("target"), py::arg("scale"), py::arg("noise_var"),
        R"pbdoc(Mixture after x -> scale*x + sqrt(noise_var)*z.)pbdoc");
    m.def(
        "eps_oracle",
        [](const GaussianMixture& g, double scale, double noise_var,
           const std::vector<double>& x_t) { return eps_oracle(g, {scale, noise_var}, x_t); },
        py::arg("target"), py::arg("scale"), py::arg("noise_var"), py::arg("x_t"));
    m.def(
        "class_posterior",
        [](const GaussianMixture& g, double scale, double noise_var,
           const std::vector<double>& x_t) { return class_posterior(g, {scale, noise_var}, x_t); },
        py::arg("target"), py::arg("scale"), py::arg("noise_var"), py::arg("x_t"));
    m.def(
        "sample_exact",
        [](const GaussianMixture& g, std::size_t n, std::uint64_t seed) {
            RngStream rng(seed);
            SampleSet s = sample_exact(g, n, rng);
            return py::make_tuple(from_matrix(s.x), s.labels);
        },
        py::arg("target"), py::arg("n"), py::arg("seed") = 0,
        R"pbdoc(Exact mixture draws; returns (samples, component labels).)pbdoc");

    py::class_<DiscreteSchedule>(m, "DiscreteSchedule")
        .def_readonly("betas", &DiscreteSchedule::betas)
        .def_readonly("alphas", &DiscreteSchedule::alphas)
        .def_readonly("alpha_bars", &DiscreteSchedule::alpha_bars)
        .def("steps", &DiscreteSchedule::steps)
        .def("alpha_bar", &DiscreteSchedule::alpha_bar, py::arg("t"));
    m.def("make_linear_schedule", &make_linear_schedule, py::arg("factor"), py::arg("steps"));
    m.def("make_cosine_schedule", &make_cosine_schedule, py::arg("steps"),
          py::arg("s_offset") = 0.008);
    m.def("make_sigmoid_schedule", &make_sigmoid_schedule, py::arg("steps"),
          py::arg("gamma_min") = -6.0, py::arg("gamma_max") = 6.0);

    py::class_<SigmaLadder>(m, "SigmaLadder")
        .def_readonly("sigmas", &SigmaLadder::sigmas)
        .def("levels", &SigmaLadder::levels);
    m.def("make_geometric_ladder", &make_geometric_ladder, py::arg("sigma_max"),
          py::arg("sigma_min"), py::arg("levels"));

    py::class_<ContinuousSchedule>(m, "ContinuousSchedule")
        .def_readonly("t_min", &ContinuousSchedule::t_min)
        .def_readonly("t_max", &ContinuousSchedule::t_max)
        .def("sigma", &ContinuousSchedule::sigma, py::arg("t"))
        .def("scale", &ContinuousSchedule::scale, py::arg("t"))
        .def("sigma_inverse", &ContinuousSchedule::sigma_inverse, py::arg("sigma"));
    m.def("make_ve_schedule", &make_ve_schedule, py::arg("sigma_min"), py::arg("sigma_max"));
    m.def("make_vp_schedule", &make_vp_schedule, py::arg("beta_min") = 0.1,
          py::arg("beta_d") = 19.9, py::arg("eps_s") = 1e-3);
    m.def("make_karras_schedule", &make_karras_schedule, py::arg("sigma_min"),
          py::arg("sigma_max"));
    m.def(
        "karras_steps",
        [](double smin, double smax, double rho, std::size_t n) {
            return karras_steps(smin, smax, rho, n).values;
        },
        py::arg("sigma_min"), py::arg("sigma_max"), py::arg("rho"), py::arg("n"),
        R"pbdoc(Karras sigma ladder, n active levels plus a terminal zero.)pbdoc");
    m.def("ode_time_grid", &ode_time_grid, py::arg("schedule"), py::arg("n"),
          py::arg("rho") = 7.0);

    m.def(
        "sample_ancestral",
        [](const GaussianMixture& target, const DiscreteSchedule& sched, std::size_t n,
           std::uint64_t seed, const std::string& guidance, std::size_t label, double scale,
           std::uint64_t guidance_seed) {
            auto out = sample_ancestral(target, sched,
                                        make_attachment(guidance, label, scale, guidance_seed), n,
                                        RngStream(seed));
            return py::make_tuple(from_matrix(out.samples), out.nfe);
        },
        py::arg("target"), py::arg("schedule"), py::arg("n"), py::arg("seed") = 0,
        py::arg("guidance") = "null", py::arg("label") = 0, py::arg("scale") = 1.0,
        py::arg("guidance_seed") = 0);
    m.def(
        "sample_ddim",
        [](const GaussianMixture& target, const DiscreteSchedule& sched, std::size_t n,
           std::size_t stride, std::uint64_t seed, const std::string& guidance, std::size_t label,
           double scale, std::uint64_t guidance_seed) {
            auto out = sample_ddim(target, sched,
                                   make_attachment(guidance, label, scale, guidance_seed), n,
                                   RngStream(seed), stride);
            return py::make_tuple(from_matrix(out.samples), out.nfe);
        },
        py::arg("target"), py::arg("schedule"), py::arg("n"), py::arg("stride") = 1,
        py::arg("seed") = 0, py::arg("guidance") = "null", py::arg("label") = 0,
        py::arg("scale") = 1.0, py::arg("guidance_seed") = 0);
    m.def(
        "sample_langevin",
        [](const GaussianMixture& target, const SigmaLadder& ladder, double eps_scale,
           std::size_t inner_steps, std::size_t n, std::uint64_t seed) {
            auto out =
                sample_langevin_annealed(target, ladder, eps_scale, inner_steps, n, RngStream(seed));
            return py::make_tuple(from_matrix(out.samples), out.nfe);
        },
        py::arg("target"), py::arg("ladder"), py::arg("eps_scale"), py::arg("inner_steps"),
        py::arg("n"), py::arg("seed") = 0);
    m.def(
        "sample_euler_maruyama",
        [](const GaussianMixture& target, const ContinuousSchedule& cs, std::size_t steps,
           std::size_t n, std::uint64_t seed) {
            auto out = sample_euler_maruyama(target, cs, steps, n, RngStream(seed));
            return py::make_tuple(from_matrix(out.samples), out.nfe);
        },
        py::arg("target"), py::arg("schedule"), py::arg("steps"), py::arg("n"),
        py::arg("seed") = 0);
    m.def(
        "sample_ode",
        [](const GaussianMixture& target, const ContinuousSchedule& cs,
           const std::vector<double>& grid, const std::string& solver, std::size_t n,
           std::uint64_t seed) {
            auto out = sample_ode(target, cs, grid, solver_from(solver), n, RngStream(seed));
            return py::make_tuple(from_matrix(out.samples), out.nfe);
        },
        py::arg("target"), py::arg("schedule"), py::arg("time_grid"), py::arg("solver"),
        py::arg("n"), py::arg("seed") = 0);
    m.def(
        "sample_stochastic_churn",
        [](const GaussianMixture& target, const ContinuousSchedule& cs, std::size_t steps,
           double rho, double s_churn, double s_tmin, double s_tmax, double s_noise, std::size_t n,
           std::uint64_t seed) {
            KarrasSteps ks = karras_steps(cs.sigma_min(), cs.sigma_max(), rho, steps);
            ChurnParams cp{s_churn, s_tmin, s_tmax, s_noise};
            auto out = sample_stochastic_churn(target, cs, ks, cp, n, RngStream(seed));
            return py::make_tuple(from_matrix(out.samples), out.nfe);
        },
        py::arg("target"), py::arg("schedule"), py::arg("steps"), py::arg("rho") = 7.0,
        py::arg("s_churn") = 0.0, py::arg("s_tmin") = 0.0,
        py::arg("s_tmax") = std::numeric_limits<double>::infinity(), py::arg("s_noise") = 1.0,
        py::arg("n") = 1, py::arg("seed") = 0);

    m.def(
        "fit_gaussian",
        [](const Rows& samples) {
            GaussianStats st = fit_gaussian(to_matrix(samples));
            return py::make_tuple(st.mean, st.variance);
        },
        py::arg("samples"), R"pbdoc(Per-dimension mean and unbiased variance.)pbdoc");
    m.def(
        "frechet_gaussian",
        [](const std::vector<double>& mean_a, const std::vector<double>& var_a,
           const std::vector<double>& mean_b, const std::vector<double>& var_b) {
            return frechet_gaussian({mean_a, var_a, 0}, {mean_b, var_b, 0});
        },
        py::arg("mean_a"), py::arg("var_a"), py::arg("mean_b"), py::arg("var_b"));
    m.def(
        "frechet_to_target",
        [](const GaussianMixture& g, const Rows& samples) {
            return frechet_gaussian(fit_gaussian(to_matrix(samples)), target_stats(g));
        },
        py::arg("target"), py::arg("samples"));
    m.def(
        "surrogate_score",
        [](const GaussianMixture& g, const Rows& samples) {
            return surrogate_score(g, to_matrix(samples));
        },
        py::arg("target"), py::arg("samples"));
    m.def(
        "estimate_order",
        [](const std::string& solver, const std::vector<std::size_t>& step_counts, double mean,
           double variance, double sigma_min, double sigma_max, double x_init) {
            OrderCase oc{mean, variance, sigma_min, sigma_max, x_init};
            return estimate_order(solver_from(solver), oc, step_counts);
        },
        py::arg("solver"), py::arg("step_counts"), py::arg("mean") = 0.4,
        py::arg("variance") = 1.3, py::arg("sigma_min") = 0.05, py::arg("sigma_max") = 20.0,
        py::arg("x_init") = 2.5);

    m.def("config_hash",
          [](const std::string& text) { return config_hash(parse_config(text)); },
          py::arg("config_json"), R"pbdoc(Canonical FNV-1a hash of a run config.)pbdoc");
    m.def(
        "run_grid",
        [](const std::string& config_json, std::size_t threads) {
            RunConfig cfg = parse_config(config_json);
            GridResult res = run_grid(cfg, threads);
            py::list records;
            for (const auto& r : res.records) {
                py::dict d;
                d["schedule"] = r.schedule;
                d["sampler"] = r.sampler;
                d["guidance"] = r.guidance;
                d["seed"] = r.seed;
                d["nfe"] = r.nfe;
                d["wall_clock_ms"] = r.wall_clock_ms;
                py::dict metrics;
                for (const auto& [k, v] : r.metrics) metrics[py::str(k)] = v;
                d["metrics"] = metrics;
                records.append(d);
            }
            py::dict out;
            out["records"] = records;
            out["skipped"] = res.skipped;
            out["failures"] = res.failures;
            return out;
        },
        py::arg("config_json"), py::arg("threads") = 1,
        R"pbdoc(Run the full grid from a JSON config string.)pbdoc");
}
