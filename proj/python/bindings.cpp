#include "covmon/analysis.hpp"
#include "covmon/beta.hpp"
#include "covmon/bootstrap.hpp"
#include "covmon/cli.hpp"
#include "covmon/data.hpp"
#include "covmon/errors.hpp"
#include "covmon/kalman.hpp"
#include "covmon/model.hpp"
#include "covmon/priors.hpp"
#include "covmon/sampler.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace covmon;

namespace {

std::vector<std::string> date_strings(const std::vector<Date>& dates)
{
    std::vector<std::string> out;
    out.reserve(dates.size());
    for (const Date d : dates) {
        out.push_back(d.to_string());
    }
    return out;
}

ObservationSeries make_series(const std::string& region, const std::string& start, const std::vector<double>& h,
                              const std::vector<double>& w, const std::vector<double>& d, double population)
{
    if (h.size() != w.size() || h.size() != d.size()) {
        throw InputError("hospital, icu and dead must have the same length");
    }
    ObservationSeries s;
    s.region_id = region;
    s.population = population;
    const Date first = Date::parse(start);
    for (std::size_t k = 0; k < h.size(); ++k) {
        s.push_back(first + static_cast<int>(k), h[k], w[k], d[k]);
    }
    return s;
}

py::dict summary_dict(const std::vector<DimensionSummary>& summary)
{
    py::dict out;
    for (const auto& s : summary) {
        py::dict d;
        d["mean"] = s.mean;
        d["sd"] = s.sd;
        d["median"] = s.median;
        d["lo68"] = s.lo68;
        d["hi68"] = s.hi68;
        d["lo95"] = s.lo95;
        d["hi95"] = s.hi95;
        out[py::str(s.name)] = d;
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_covmon, m)
{
    m.doc() = "Kalman filter likelihoods and adaptive Metropolis sampling for a compartment epidemic model";
    m.attr("__version__") = "0.1.0";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<InfeasibleParameters>(m, "InfeasibleParameters", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.attr("COMPARTMENTS") = std::vector<std::string>(kCompartmentNames.begin(), kCompartmentNames.end());

    py::class_<ParameterVector>(m, "ParameterVector")
        .def(py::init<>())
        .def_readwrite("sigma", &ParameterVector::sigma)
        .def_readwrite("gamma_i", &ParameterVector::gamma_i)
        .def_readwrite("gamma_h", &ParameterVector::gamma_h)
        .def_readwrite("gamma_w", &ParameterVector::gamma_w)
        .def_readwrite("e2i", &ParameterVector::e2i)
        .def_readwrite("ic_hosp", &ParameterVector::ic_hosp)
        .def_readwrite("hosp", &ParameterVector::hosp)
        .def_readwrite("theta_e_star", &ParameterVector::theta_e_star)
        .def_readwrite("theta_a_star", &ParameterVector::theta_a_star)
        .def_readwrite("tau_half", &ParameterVector::tau_half)
        .def_readwrite("hosp_mort", &ParameterVector::hosp_mort)
        .def_readwrite("sir_mort", &ParameterVector::sir_mort)
        .def("validate", &ParameterVector::validate)
        .def("inferred", &ParameterVector::inferred)
        .def_static("from_inferred", &ParameterVector::from_inferred);

    py::class_<FractionSet>(m, "FractionSet")
        .def(py::init<>())
        .def_readwrite("f0", &FractionSet::f0)
        .def_readwrite("f1", &FractionSet::f1)
        .def_readwrite("f2", &FractionSet::f2)
        .def_readwrite("f2d", &FractionSet::f2d)
        .def_readwrite("f3", &FractionSet::f3)
        .def_readwrite("f3d", &FractionSet::f3d)
        .def_readwrite("f4", &FractionSet::f4);

    m.def("derive_fractions", &derive_fractions, py::arg("params"), py::arg("ifr"));
    m.def("transition_matrix", &build_transition_matrix, py::arg("params"), py::arg("fractions"), py::arg("beta"));
    m.def("r0_from_beta", &r0_from_beta, py::arg("params"), py::arg("fractions"), py::arg("beta"));
    m.def("beta_from_r0", &beta_from_r0, py::arg("params"), py::arg("fractions"), py::arg("r0"));
    m.def(
        "cfr",
        [](const FractionSet& f, const std::string& compartment) {
            if (compartment == "I") {
                return cfr(f, kI);
            }
            if (compartment == "H") {
                return cfr(f, kH);
            }
            if (compartment == "W") {
                return cfr(f, kW);
            }
            throw InputError("cfr is defined for I, H and W");
        },
        py::arg("fractions"), py::arg("compartment"));

    py::class_<DynamicSchedule>(m, "DynamicSchedule")
        .def(py::init([](std::vector<double> r_t, std::vector<double> ifr, int window_days) {
                 if (r_t.size() != ifr.size()) {
                     throw InputError("r_t and ifr must have one value per window");
                 }
                 DynamicSchedule s;
                 s.r_t = std::move(r_t);
                 s.ifr = std::move(ifr);
                 s.window_days = window_days;
                 return s;
             }),
             py::arg("r_t"), py::arg("ifr"), py::arg("window_days") = 28)
        .def_readwrite("r_t", &DynamicSchedule::r_t)
        .def_readwrite("ifr", &DynamicSchedule::ifr)
        .def_readwrite("window_days", &DynamicSchedule::window_days)
        .def("num_windows", &DynamicSchedule::num_windows);

    py::class_<PriorSet>(m, "PriorSet")
        .def_static("defaults", &PriorSet::defaults)
        .def_static("load", &PriorSet::load, py::arg("path"))
        .def("to_json", [](const PriorSet& p) { return p.to_json().dump(); })
        .def("mean", [](const PriorSet& p, const std::string& name) { return p.at(name).mean(); })
        .def("logpdf", [](const PriorSet& p, const std::string& name, double x) { return p.at(name).logpdf(x); });

    py::class_<PriorDraw>(m, "PriorDraw")
        .def_readwrite("params", &PriorDraw::params)
        .def_readwrite("schedule", &PriorDraw::schedule);
    m.def("prior_sample", &prior_sample, py::arg("priors"), py::arg("num_windows"), py::arg("seed"),
          py::arg("window_days") = 28);

    py::class_<ObservationSeries>(m, "ObservationSeries")
        .def(py::init(&make_series), py::arg("region"), py::arg("start"), py::arg("hospital"), py::arg("icu"),
             py::arg("dead"), py::arg("population") = 0.0)
        .def_readwrite("region_id", &ObservationSeries::region_id)
        .def_readwrite("population", &ObservationSeries::population)
        .def_readonly("hospital", &ObservationSeries::hospital)
        .def_readonly("icu", &ObservationSeries::icu)
        .def_readonly("dead", &ObservationSeries::dead)
        .def_property_readonly("dates", [](const ObservationSeries& s) { return date_strings(s.dates); })
        .def("slice", &ObservationSeries::slice, py::arg("first"), py::arg("last"))
        .def("__len__", &ObservationSeries::size);

    m.def(
        "read_regional_csv", [](const std::string& path) { return parse_regional_csv(path).series; },
        py::arg("path"));
    m.def("write_regional_csv", &write_regional_csv, py::arg("path"), py::arg("series"),
          py::arg("provenance") = std::vector<std::vector<std::string>>{});
    m.def(
        "clean_series",
        [](const ObservationSeries& s, int kernel_width, int max_gap) {
            CleanResult r = clean_series(s, kernel_width, max_gap);
            return py::make_tuple(r.series, r.report.to_json().dump());
        },
        py::arg("series"), py::arg("kernel_width") = 7, py::arg("max_gap") = 3);
    m.def(
        "smooth_series", [](const ObservationSeries& s) { return smooth_series(s).series; }, py::arg("series"));

    py::class_<NoiseConfig>(m, "NoiseConfig")
        .def(py::init<>())
        .def_readwrite("epsilon", &NoiseConfig::epsilon)
        .def_readwrite("q_diag", &NoiseConfig::q_diag)
        .def_readwrite("r0", &NoiseConfig::r0)
        .def_readwrite("rd", &NoiseConfig::rd)
        .def_readwrite("state_dependent", &NoiseConfig::state_dependent);

    m.def("marginal_loglik",
          py::overload_cast<const ParameterVector&, const DynamicSchedule&, const ObservationSeries&,
                            const NoiseConfig&>(&marginal_loglik),
          py::arg("params"), py::arg("schedule"), py::arg("series"), py::arg("noise") = NoiseConfig{});
    m.def(
        "filtered_states",
        [](const ParameterVector& p, const DynamicSchedule& dyn, const ObservationSeries& s, const NoiseConfig& n) {
            const FilterRun run = filter_series(p, dyn, s, n);
            Eigen::MatrixXd means(run.states.size(), kStateDim);
            for (std::size_t k = 0; k < run.states.size(); ++k) {
                means.row(static_cast<Eigen::Index>(k)) = run.states[k].mean.transpose();
            }
            return py::make_tuple(run.first_day, means, run.loglik);
        },
        py::arg("params"), py::arg("schedule"), py::arg("series"), py::arg("noise") = NoiseConfig{});

    py::enum_<ExitScheme>(m, "ExitScheme")
        .value("Exponential", ExitScheme::Exponential)
        .value("Linear", ExitScheme::Linear);

    m.def(
        "simulate",
        [](const ParameterVector& p, const DynamicSchedule& dyn, int days, const StateVector& init,
           std::uint64_t seed, double population, ExitScheme scheme) {
            std::vector<double> beta, ifr;
            schedule_to_daily(p, dyn, days - 1, beta, ifr);
            SimulationOptions opt;
            opt.population = population;
            opt.scheme = scheme;
            SyntheticDataset ds = simulate_synthetic(p, beta, ifr, days, init, seed, opt);
            Eigen::MatrixXd states(ds.states.size(), kStateDim);
            for (std::size_t k = 0; k < ds.states.size(); ++k) {
                states.row(static_cast<Eigen::Index>(k)) = ds.states[k].transpose();
            }
            return py::make_tuple(ds.series, states);
        },
        py::arg("params"), py::arg("schedule"), py::arg("days"), py::arg("init"), py::arg("seed"),
        py::arg("population") = 0.0, py::arg("scheme") = ExitScheme::Exponential);

    py::class_<AmConfig>(m, "AmConfig")
        .def(py::init<>())
        .def_readwrite("n_chains", &AmConfig::n_chains)
        .def_readwrite("n_samples", &AmConfig::n_samples)
        .def_readwrite("burn_in", &AmConfig::burn_in)
        .def_readwrite("thin", &AmConfig::thin)
        .def_readwrite("s", &AmConfig::s)
        .def_readwrite("t0", &AmConfig::t0)
        .def_readwrite("c0_scale", &AmConfig::c0_scale)
        .def_readwrite("epsilon_reg", &AmConfig::epsilon_reg)
        .def_readwrite("standardize", &AmConfig::standardize)
        .def_readwrite("jobs", &AmConfig::jobs)
        .def_readwrite("window_days", &AmConfig::window_days)
        .def_readwrite("init_draws", &AmConfig::init_draws)
        .def_readwrite("init_sweeps", &AmConfig::init_sweeps);

    py::class_<PosteriorChain>(m, "PosteriorChain")
        .def_readonly("names", &PosteriorChain::names)
        .def_readonly("samples", &PosteriorChain::samples)
        .def_readonly("log_posterior", &PosteriorChain::log_posterior)
        .def_readonly("seed", &PosteriorChain::seed)
        .def_readonly("num_windows", &PosteriorChain::num_windows)
        .def("acceptance_rate", &PosteriorChain::acceptance_rate)
        .def("point", &PosteriorChain::point, py::arg("index"))
        .def("__len__", &PosteriorChain::size);

    m.def(
        "fit",
        [](const ObservationSeries& s, const AmConfig& am, std::uint64_t seed, const PriorSet& priors,
           const NoiseConfig& noise) {
            py::gil_scoped_release release;
            return am_run(priors, s, am, noise, seed);
        },
        py::arg("series"), py::arg("am"), py::arg("seed"), py::arg("priors") = PriorSet::defaults(),
        py::arg("noise") = NoiseConfig{});
    m.def(
        "gelman_rubin", [](const std::vector<PosteriorChain>& c, int dim) { return gelman_rubin(c, dim); },
        py::arg("chains"), py::arg("dim"));
    m.def(
        "posterior_summary",
        [](const std::vector<PosteriorChain>& c) { return summary_dict(posterior_summary(c)); },
        py::arg("chains"));
    m.def(
        "summary_dimensions",
        [](const std::vector<PosteriorChain>& c) {
            std::vector<Eigen::MatrixXd> s;
            for (const auto& chain : c) {
                s.push_back(summary_dimensions(chain));
            }
            return summary_dict(posterior_summary(s, summary_dimension_names()));
        },
        py::arg("chains"));

    py::class_<HorizonConfig>(m, "HorizonConfig")
        .def(py::init<>())
        .def_readwrite("prediction_horizon", &HorizonConfig::prediction_horizon)
        .def_readwrite("step", &HorizonConfig::step)
        .def_readwrite("c", &HorizonConfig::c)
        .def_readwrite("max_iterations", &HorizonConfig::max_iterations)
        .def_readwrite("optimize_x0", &HorizonConfig::optimize_x0);

    py::class_<BetaTrajectory>(m, "BetaTrajectory")
        .def_readonly("beta", &BetaTrajectory::beta)
        .def_readonly("r_t", &BetaTrajectory::r_t)
        .def_readonly("objective", &BetaTrajectory::objective)
        .def_readonly("c", &BetaTrajectory::c)
        .def_readonly("converged", &BetaTrajectory::converged)
        .def_property_readonly("dates", [](const BetaTrajectory& t) { return date_strings(t.dates); });
    m.def("optimize_receding", &optimize_receding, py::arg("params"), py::arg("schedule"), py::arg("series"),
          py::arg("noise") = NoiseConfig{}, py::arg("horizon") = HorizonConfig{});

    m.def(
        "forecast",
        [](const std::vector<PosteriorChain>& chains, const ObservationSeries& s, int horizon, int n_samples,
           std::uint64_t seed, const NoiseConfig& noise) {
            const auto draws = thin_posterior(chains, n_samples);
            const auto points = posterior_forecast(draws, s, s.size() - 1, horizon, noise, seed);
            py::list out;
            for (const auto& p : points) {
                py::dict d;
                d["date"] = p.date.to_string();
                d["mean"] = p.mean;
                d["lo68"] = p.lo68;
                d["hi68"] = p.hi68;
                d["lo95"] = p.lo95;
                d["hi95"] = p.hi95;
                out.append(d);
            }
            return out;
        },
        py::arg("chains"), py::arg("series"), py::arg("horizon") = 7, py::arg("n_samples") = 100,
        py::arg("seed") = 0, py::arg("noise") = NoiseConfig{});

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"covmon"};
            for (const auto& a : args) {
                argv.push_back(a.c_str());
            }
            std::ostringstream out, err;
            const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line interface; returns (exit code, stdout, stderr).");
}
